"""Command-line entry point: ``emcbo <command> --config FILE``.

Exit status is 0 on success, 2 for usage or configuration errors and 1 for
failures while running.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from . import experiments as ex
from .config import ConfigError, ExperimentConfig, load
from .dynamics import StepError, run
from .objectives import IcpGrid, check_growth, check_icp, check_local_lipschitz


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        return float(v)
    return v


class Writer:
    """Writes provenance-stamped CSV and JSON files into ``out_dir``."""

    def __init__(self, out_dir, conf: ExperimentConfig):
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.conf = conf
        self.stamp = {"tool": "emcbo", "version": __version__, "config_hash": conf.hash()}

    def csv(self, name: str, columns: dict) -> Path:
        path = self.out / name
        keys = list(columns)
        n = len(next(iter(columns.values()))) if columns else 0
        lines = [f"# emcbo {__version__} config_hash={self.stamp['config_hash']}", ",".join(keys)]
        for i in range(n):
            lines.append(",".join(fmt(columns[k][i]) for k in keys))
        path.write_text("\n".join(lines) + "\n")
        return path

    def json(self, name: str, payload: dict) -> Path:
        path = self.out / name
        doc = dict(self.stamp, config=self.conf.to_dict(), **payload)
        path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")
        return path


def _setup(args):
    conf = load(args.config)
    for item in args.set or []:
        conf.override(item)
    if args.seed is not None:
        conf.run["seed"] = args.seed
    elif conf.run and "seed" not in conf.run and "CBO_SEED" in os.environ:
        conf.run["seed"] = int(os.environ["CBO_SEED"])
    return conf


def _exp(conf, key, default=None):
    val = conf.experiment.get(key, default)
    if val is None:
        raise ConfigError(f"[experiment] needs {key!r}")
    return val


def cmd_run(args, conf, w):
    cfg = conf.cbo_config()
    obj = conf.objective_fn(cfg.dim)
    tr = run(cfg, obj)
    w.csv("trace.csv", tr.columns())
    summary = {
        "command": "run",
        "final_consensus": tr.consensus_points[-1],
        "final_second_moment": tr.second_moment[-1],
        "evaluations": int(tr.evaluations[-1]),
        "moment_cap_breached": tr.moment_cap_breached,
        "note": "variance_functional is computed on the empirical measure",
    }
    if tr.variance_functional is not None:
        summary["final_variance_functional"] = tr.variance_functional[-1]
        summary["final_mean_error"] = tr.mean_error[-1]
    w.json("summary.json", summary)
    print(f"final consensus point: {' '.join(fmt(v) for v in tr.consensus_points[-1])}")


def cmd_plan(args, conf, w):
    cfg = conf.cbo_config()
    obj = conf.objective_fn(cfg.dim) if conf.objective else None
    inp = conf.planner_input(cfg, obj)
    out = ex.plan(inp)
    w.json("plan.json", {"command": "plan", "T": out.T, "N": out.N, "dt": out.dt, "K": out.K, "clamped": out.clamped})
    print(f"T = {out.T:.6f}\nN = {out.N}\ndt = {out.dt:.6g}\nK = {out.K}")


def _rate_outputs(w, name, rep: ex.RateReport, extra=None):
    rows = {"level": [], "x_value": [], "error": [], "seed": []}
    for r in range(rep.n_seeds):
        for j, x in enumerate(rep.x_values):
            rows["level"].append(j)
            rows["x_value"].append(x)
            rows["error"].append(rep.per_seed[r, j])
            rows["seed"].append(r)
    w.csv(f"{name}.csv", rows)
    w.json(f"{name}.json", {
        "command": name, "label": rep.label, "x_values": rep.x_values, "errors": rep.errors,
        "slope": rep.slope, "slope_ci": rep.slope_ci, "n_seeds": rep.n_seeds,
        "fit_mask": rep.fit_mask, **rep.extra, **(extra or {}),
    })
    print(f"slope = {rep.slope:.4f}  95% CI [{rep.slope_ci[0]:.4f}, {rep.slope_ci[1]:.4f}]")


def cmd_decay(args, conf, w):
    cfg = conf.cbo_config()
    obj = conf.objective_fn(cfg.dim)
    theta = float(conf.planner.get("theta", ex.DEFAULT_THETA))
    try:
        res = ex.decay_experiment(cfg, obj, int(_exp(conf, "n_seeds", 10)), theta, args.threads)
    except ex.NotWellPosed as exc:
        raise ConfigError(str(exc)) from None
    rows = {"step": [], "time": [], "variance_functional": [], "seed": []}
    for r, vs in enumerate(res.per_seed):
        for k, v in enumerate(vs):
            rows["step"].append(k)
            rows["time"].append(res.times[k])
            rows["variance_functional"].append(v)
            rows["seed"].append(r)
    w.csv("decay.csv", rows)
    w.json("decay.json", {
        "command": "decay", "fitted_rate": res.fitted_rate, "predicted_rate": res.predicted_rate,
        "theta_rate": res.theta_rate, "window": res.window, "mean_trace": res.trace,
    })
    print(f"fitted rate = {res.fitted_rate:.4f}  predicted 2*lambda - kappa*sigma^2 = {res.predicted_rate:.4f}")


def cmd_rate_dt(args, conf, w):
    levels = int(_exp(conf, "levels", 5))
    if levels < 3:
        raise ConfigError("rate-dt needs levels >= 3")
    cfg = conf.cbo_config()
    obj = conf.objective_fn(cfg.dim)
    rep = ex.rate_dt_experiment(cfg, obj, levels, int(_exp(conf, "n_seeds", 8)), args.threads)
    _rate_outputs(w, "rate_dt", rep)


def cmd_rate_n(args, conf, w):
    cfg = conf.cbo_config()
    obj = conf.objective_fn(cfg.dim)
    n_values = list(_exp(conf, "n_values"))
    if len(n_values) < 3:
        raise ConfigError("rate-n needs at least 3 particle counts")
    n_ref = int(_exp(conf, "n_ref", 16 * max(n_values)))
    rep = ex.rate_n_experiment(
        cfg, obj, n_values, int(_exp(conf, "n_seeds", 8)), n_ref, conf.experiment.get("dt_ref"), args.threads
    )
    _rate_outputs(w, "rate_n", rep)


def cmd_budget(args, conf, w):
    cfg = conf.cbo_config()
    obj = conf.objective_fn(cfg.dim)
    inp = conf.planner_input(cfg, obj)
    rep = ex.error_budget(cfg, obj, inp, int(_exp(conf, "n_seeds", 20)), threads=args.threads)
    w.csv("budget.csv", {
        "seed": list(range(len(rep.measured))), "error": rep.measured, "mean_error": rep.measured_mean,
    })
    p = rep.planned
    w.json("budget.json", {
        "command": "budget", "T": p.T, "N": p.N, "dt": p.dt, "K": p.K,
        "term_dt": rep.term_dt, "term_n": rep.term_n, "term_decay": rep.term_decay, "bound": rep.bound,
        "eps_total": rep.eps_total, "fraction_within": rep.fraction_within,
        "measured_mean_over_seeds": float(np.mean(rep.measured)),
    })
    print(f"bound terms: dt {rep.term_dt:.3g}  N {rep.term_n:.3g}  decay {rep.term_decay:.3g}")
    print(f"measured error <= eps_total in {100 * rep.fraction_within:.0f}% of seeds")


def cmd_check(args, conf, w):
    cfg_dim = int(conf.run.get("dim", 0)) if conf.run else 0
    if not cfg_dim:
        raise ConfigError("[run] must give dim")
    obj = conf.objective_fn(cfg_dim)
    seed = int(conf.run.get("seed", 0))
    radius = float(conf.experiment.get("radius", 10.0))
    samples = int(conf.experiment.get("samples", 4000))
    lip = check_local_lipschitz(obj, radius, samples, seed)
    gro = check_growth(obj, radius, samples, seed)
    r0 = float(conf.objective.get("r0", obj.metadata.get("R0", 1.0)))
    norm = "max" if conf.run.get("diffusion") == "anisotropic" else "euclidean"
    icp = check_icp(obj, norm, r0, IcpGrid(seed=seed))
    result = {
        "A2": {"passed": lip.passed, "fitted_L": lip.fitted_L},
        "A3": {"upper_ok": gro.upper_ok, "lower_ok": gro.lower_ok, "bounded": gro.bounded,
               "quadratic": gro.quadratic, "c_u": gro.c_u, "c_l": gro.c_l, "c_l_radius": gro.c_l_radius},
        "ICP": {"passed": icp.passed, "norm": norm, "R0": r0, "eta": icp.eta, "nu": icp.nu, "E_inf": icp.e_inf},
        "note": "sample-based falsification: passed means no violation found",
    }
    w.json("check.json", {"command": "check", **result})
    for name, ok in (("A2", lip.passed), ("A3", gro.passed), ("ICP", icp.passed)):
        print(f"{name}: {'pass' if ok else 'FAIL'}")
    return 0 if (lip.passed and gro.passed and icp.passed) else 1


COMMANDS = {
    "run": cmd_run,
    "plan": cmd_plan,
    "decay": cmd_decay,
    "rate-dt": cmd_rate_dt,
    "rate-n": cmd_rate_n,
    "budget": cmd_budget,
    "check": cmd_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emcbo", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"emcbo {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", "-c", required=True, help="YAML experiment configuration")
        p.add_argument("--seed", type=int, default=None, help="overrides run.seed (fallback: $CBO_SEED)")
        p.add_argument("--out-dir", "-o", default=".", help="directory for CSV/JSON outputs")
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config entry")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        conf = _setup(args)
        w = Writer(args.out_dir, conf)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            code = COMMANDS[args.command](args, conf, w)
        return int(code or 0)
    except ConfigError as exc:
        print(f"emcbo: configuration error: {exc}", file=sys.stderr)
        return 2
    except (StepError, RuntimeError, ValueError, ArithmeticError) as exc:
        print(f"emcbo: {args.command} failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
