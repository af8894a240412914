"""Time-discrete consensus-based optimization (EM-CBO) and a convergence harness."""

__version__ = "0.1.0"

from .core import (
    CboConfig,
    DiffusionKind,
    Ensemble,
    InitDistribution,
    RunTrace,
    kappa,
    variance_functional,
)
from .consensus import ConsensusResult, consensus_point
from .dynamics import StepReport, em_step, interpolate, run
from .objectives import Objective, builtin
from .rng import NoiseTable

__all__ = [
    "CboConfig",
    "ConsensusResult",
    "DiffusionKind",
    "Ensemble",
    "InitDistribution",
    "NoiseTable",
    "Objective",
    "RunTrace",
    "StepReport",
    "builtin",
    "consensus_point",
    "em_step",
    "interpolate",
    "kappa",
    "run",
    "variance_functional",
]
