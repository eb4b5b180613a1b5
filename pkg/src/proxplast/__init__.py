"""Proximal gradient solvers for incremental problems in perfect plasticity."""
from importlib import resources
from pathlib import Path

from .constitutive import CriterionSet, Elastic, TrussBox, VonMises
from .driver import LoadPath, PathRecord, run_path
from .fem import Model, ModelError, assemble_cst2d, assemble_truss
from .solver import ConvergenceReport, SolverConfig, solve
from .state import IterateState
from .verification import KktReport, brute_force_solve, kkt_check

BUNDLED = ("onebar", "onebar_collapse", "twobar", "tenbar", "vm_patch")


def bundled_path(name: str) -> Path:
    """Path of a bundled example model file."""
    if name not in BUNDLED:
        raise KeyError(f"no bundled instance {name!r}; choose from {', '.join(BUNDLED)}")
    return Path(str(resources.files(__package__) / "instances" / f"{name}.json"))


__all__ = [
    "BUNDLED", "ConvergenceReport", "CriterionSet", "Elastic", "IterateState", "KktReport",
    "LoadPath", "Model", "ModelError", "PathRecord", "SolverConfig", "TrussBox", "VonMises",
    "assemble_cst2d", "assemble_truss", "brute_force_solve", "bundled_path", "kkt_check",
    "run_path", "solve",
]
