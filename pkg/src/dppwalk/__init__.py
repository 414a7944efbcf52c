"""Random walks on discrete point processes: environments, walk engines,
exact heat-kernel diagnostics, electrical networks, isoperimetry,
corrector construction, and ensemble statistics."""

from .env import Environment, LatticeWindow, ProcessSpec, full_lattice, sample
from .walk import TransitionRule, WalkEnsemble, run_annealed, run_ensemble_quenched, run_quenched

__all__ = [
    "Environment", "LatticeWindow", "ProcessSpec", "full_lattice", "sample",
    "TransitionRule", "WalkEnsemble", "run_annealed",
    "run_ensemble_quenched", "run_quenched",
]

__version__ = "0.1.0"
