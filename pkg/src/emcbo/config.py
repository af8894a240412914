"""Experiment configuration files.

A YAML document with up to four top-level sections::

    run:        {dim, n_particles, lambda, sigma, alpha, dt, n_steps,
                 diffusion, seed, init: {kind, ...}, moment_cap}
    objective:  {name, offset, command, x_star, e_min, r0}
    planner:    {eps_total, theta, v_rho0, q, c_na, c_mfa}
    experiment: {n_seeds, levels, n_values, n_ref, dt_ref, radius,
                 samples, gap_dts}

Unknown keys are rejected.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Optional

import yaml

from .core import CboConfig, InitDistribution
from .experiments import PlannerInput
from .objectives import ExternalObjective, Objective, builtin


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


RUN_KEYS = {"dim", "n_particles", "lambda", "sigma", "alpha", "dt", "n_steps", "diffusion", "seed", "init", "moment_cap"}
OBJECTIVE_KEYS = {"name", "offset", "command", "x_star", "e_min", "r0"}
PLANNER_KEYS = {"eps_total", "theta", "v_rho0", "q", "c_na", "c_mfa"}
EXPERIMENT_KEYS = {"n_seeds", "levels", "n_values", "n_ref", "dt_ref", "radius", "samples", "gap_dts"}
SECTIONS = {"run": RUN_KEYS, "objective": OBJECTIVE_KEYS, "planner": PLANNER_KEYS, "experiment": EXPERIMENT_KEYS}


@dataclass
class ExperimentConfig:
    run: dict = field(default_factory=dict)
    objective: dict = field(default_factory=dict)
    planner: dict = field(default_factory=dict)
    experiment: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("configuration must be a mapping of sections")
        unknown = set(doc) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown sections: {sorted(unknown)}")
        out = {}
        for name, keys in SECTIONS.items():
            sec = doc.get(name) or {}
            if not isinstance(sec, dict):
                raise ConfigError(f"section [{name}] must be a mapping")
            bad = set(sec) - keys
            if bad:
                raise ConfigError(f"unknown keys in [{name}]: {sorted(bad)}")
            out[name] = copy.deepcopy(sec)
        return cls(**out)

    def to_dict(self) -> dict:
        return {name: copy.deepcopy(getattr(self, name)) for name in SECTIONS if getattr(self, name)}

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def override(self, assignment: str) -> None:
        """Apply ``section.key=value`` (value parsed as YAML)."""
        try:
            path, raw = assignment.split("=", 1)
            section, key = path.split(".", 1)
        except ValueError:
            raise ConfigError(f"override must look like section.key=value, got {assignment!r}") from None
        if section not in SECTIONS or key not in SECTIONS[section]:
            raise ConfigError(f"unknown override target {path!r}")
        getattr(self, section)[key] = yaml.safe_load(raw)

    # --- typed views -------------------------------------------------------

    def cbo_config(self) -> CboConfig:
        if not self.run:
            raise ConfigError("missing [run] section")
        r = dict(self.run)
        try:
            dim = int(r["dim"])
            init = r.get("init")
            init = InitDistribution.from_dict(init) if init is not None else None
            seed = r.get("seed")
            if seed is None:
                seed = int(os.environ.get("CBO_SEED", 0))
            return CboConfig(
                dim=dim,
                n_particles=int(r["n_particles"]),
                lam=float(r["lambda"]),
                sigma=float(r["sigma"]),
                alpha=float(r["alpha"]),
                dt=float(r["dt"]),
                n_steps=int(r["n_steps"]),
                diffusion=r.get("diffusion", "isotropic"),
                seed=int(seed),
                init=init,
                moment_cap=r.get("moment_cap"),
            )
        except KeyError as exc:
            raise ConfigError(f"missing key {exc.args[0]!r} in [run]") from None
        except (TypeError, ValueError) as exc:
            if "dt must satisfy" in str(exc):
                raise ConfigError(f"{exc}; the step size must satisfy 0 < dt <= 1") from None
            raise ConfigError(f"invalid [run] section: {exc}") from None

    def objective_fn(self, dim: int) -> Objective:
        if not self.objective:
            raise ConfigError("missing [objective] section")
        o = self.objective
        name = o.get("name")
        meta = {"R0": o["r0"]} if "r0" in o else {}
        try:
            if name == "external":
                if "command" not in o:
                    raise ConfigError("external objective needs a command")
                ext = ExternalObjective(o["command"], dim)
                return Objective(ext, dim, o.get("x_star"), o.get("e_min"), "external", meta)
            obj = builtin(name, dim, o.get("offset"))
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if meta:
            obj.metadata.update(meta)
        return obj

    def planner_input(self, cfg: CboConfig, obj: Optional[Objective] = None) -> PlannerInput:
        if not self.planner:
            raise ConfigError("missing [planner] section")
        p = dict(self.planner)
        v = p.get("v_rho0")
        if v is None:
            if obj is None or obj.x_star is None:
                raise ConfigError("v_rho0 needed when the minimizer is unknown")
            v = 0.5 * cfg.init.second_moment_about(obj.x_star)
        try:
            kw = {k: float(p[k]) for k in ("theta", "q", "c_na", "c_mfa") if k in p}
            return PlannerInput(
                eps_total=float(p["eps_total"]), lam=cfg.lam, sigma=cfg.sigma, alpha=cfg.alpha,
                diffusion=cfg.diffusion, dim=cfg.dim, v_rho0=float(v), **kw,
            )
        except KeyError as exc:
            raise ConfigError(f"missing key {exc.args[0]!r} in [planner]") from None
        except ValueError as exc:
            raise ConfigError(f"invalid [planner] section: {exc}") from None


def load(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return ExperimentConfig.from_dict(doc or {})


def loads(text: str) -> ExperimentConfig:
    try:
        return ExperimentConfig.from_dict(yaml.safe_load(text) or {})
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse configuration: {exc}") from None
