"""Fit surrogate constants from pilot rate runs, then plan with them.

The pilot runs use the shipped rate configurations with fewer seeds.
The fitted constants are the largest ratios error/dt and error*N seen;
they replace the default value 1 in the planner input.
"""

import argparse
import warnings
from pathlib import Path

from emcbo import experiments as ex
from emcbo.config import load

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def main():
    ap = argparse.ArgumentParser(description="calibrate c_na and c_mfa")
    ap.add_argument("--seeds", type=int, default=8)
    ap.add_argument("--threads", type=int, default=4)
    ap.add_argument("--eps", type=float, default=0.01)
    args = ap.parse_args()

    dt_conf = load(CONFIGS / "rate_dt.yaml")
    cfg = dt_conf.cbo_config()
    obj = dt_conf.objective_fn(cfg.dim)
    dt_rep = ex.rate_dt_experiment(cfg, obj, 5, args.seeds, args.threads)

    n_conf = load(CONFIGS / "rate_n.yaml")
    ncfg = n_conf.cbo_config()
    n_rep = ex.rate_n_experiment(ncfg, obj, n_conf.experiment["n_values"], args.seeds,
                                 n_conf.experiment["n_ref"], threads=args.threads)

    c_na, c_mfa = ex.calibrate_constants(dt_rep, n_rep)
    print(f"dt slope {dt_rep.slope:.3f}, N slope {n_rep.slope:.3f}")
    print(f"c_na = {c_na:.4g}, c_mfa = {c_mfa:.4g}")

    inp = ex.PlannerInput(eps_total=args.eps, lam=cfg.lam, sigma=cfg.sigma, alpha=cfg.alpha,
                          diffusion=cfg.diffusion, dim=cfg.dim, v_rho0=1.0, c_na=c_na, c_mfa=c_mfa)
    with warnings.catch_warnings():
        warnings.simplefilter("default")
        out = ex.plan(inp)
    print(f"plan: T = {out.T:.4f}, N = {out.N}, dt = {out.dt:.4g}, K = {out.K}")


if __name__ == "__main__":
    main()
