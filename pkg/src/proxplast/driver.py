"""Quasi-static load stepping over a sequence of load levels."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .fem import Model, ModelError
from .solver import ConvergenceReport, SolverConfig, _fmt, solve
from .state import IterateState, zeros

logger = logging.getLogger(__name__)


@dataclass
class LoadPath:
    """Load factors on a reference pattern, or explicit load vectors.

    Step ``i`` applies ``factors[i] * q_ref`` unless ``loads`` is given, in
    which case ``loads[i]`` is used as is (``factors`` then only labels the
    steps).  ``overrides`` may hold per-step :class:`SolverConfig` field
    overrides.
    """

    factors: list
    q_ref: np.ndarray | None = None
    loads: list | None = None
    overrides: list | None = None

    def __post_init__(self):
        if len(self.factors) == 0:
            raise ValueError("load path needs at least one step")
        if self.loads is not None and len(self.loads) != len(self.factors):
            raise ValueError("explicit loads must match the number of steps")
        if self.overrides is not None and len(self.overrides) != len(self.factors):
            raise ValueError("per-step overrides must match the number of steps")

    def __len__(self):
        return len(self.factors)

    def load(self, i: int, model: Model) -> np.ndarray:
        if self.loads is not None:
            return np.asarray(self.loads[i], dtype=float)
        q_ref = model.load if self.q_ref is None else self.q_ref
        return self.factors[i] * np.asarray(q_ref, dtype=float)


@dataclass
class StepRecord:
    factor: float
    load: np.ndarray
    sigma0: np.ndarray
    converged: bool
    collapsed: bool
    du: np.ndarray
    u: np.ndarray
    eps_p: np.ndarray
    plastic_strain: np.ndarray
    sigma: np.ndarray
    iterations: int
    kkt_max: float
    kkt_passed: bool
    warm_start: str
    report: ConvergenceReport

    @property
    def committed(self) -> bool:
        return self.converged and self.kkt_passed


@dataclass
class PathRecord:
    steps: list = field(default_factory=list)
    truncated: bool = False
    failure: str | None = None
    failed_factor: float | None = None

    @property
    def completed(self) -> bool:
        return not self.truncated

    @property
    def collapsed(self) -> bool:
        return self.truncated and self.failure == "collapsed"

    @property
    def final(self) -> StepRecord:
        return self.steps[-1]

    def committed_steps(self) -> list[StepRecord]:
        return [s for s in self.steps if s.committed]

    def write_csv(self, path, model: Model, monitor=None):
        """One row per step; ``monitor`` lists ``(node, direction)`` pairs."""
        if monitor is None:
            monitor = [tuple(int(v) for v in nd) for nd in np.argwhere(model.dof_map >= 0)]
        header = ["step", "lambda"] + [f"u_{n}_{k}" for n, k in monitor] + [
            "iterations", "max_kkt", "converged", "collapsed"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i, step in enumerate(self.steps):
                full = model.full_displacement(step.u)
                writer.writerow([i, _fmt(float(step.factor))]
                                + [_fmt(float(full[n, k])) for n, k in monitor]
                                + [step.iterations, _fmt(step.kkt_max),
                                   int(step.converged), int(step.collapsed)])


def elastic_reference(model: Model, q=None) -> np.ndarray:
    """Direct solve of ``K u = q - sum_l rho_l B_l^* sigma0_l``."""
    q = model.load if q is None else np.asarray(q, dtype=float)
    rhs = q - model.internal_force(model.sigma0)
    K = model.stiffness().tocsc()
    try:
        u = spla.splu(K).solve(rhs)
    except RuntimeError as exc:
        raise ModelError(f"singular stiffness: {exc}") from None
    if not np.all(np.isfinite(u)) or np.linalg.norm(K @ u - rhs) > 1e-8 * (1 + np.linalg.norm(rhs)):
        raise ModelError("singular stiffness: direct solve is inaccurate")
    return u


def _warm_start(model, path, i, previous):
    if i == 0 or previous is None:
        return zeros(model), "zeros"
    # the path implicitly starts from factor 0
    prev_inc = path.factors[i - 1] - (path.factors[i - 2] if i >= 2 else 0.0)
    if prev_inc == 0.0 or path.loads is not None:
        return zeros(model), "zeros"
    ratio = (path.factors[i] - path.factors[i - 1]) / prev_inc
    return IterateState(ratio * previous.du, ratio * previous.eps_p), f"scaled previous x{ratio:.6g}"


def run_path(model: Model, path: LoadPath | list, config: SolverConfig | None = None,
             *, record_history: bool = True) -> PathRecord:
    """Solve the steps of ``path`` in order, committing stress between steps.

    A step's converged stress becomes the next step's initial stress only if
    the step converged and passed the KKT check; otherwise the path stops
    and is marked truncated.
    """
    if not isinstance(path, LoadPath):
        path = LoadPath(list(path))
    config = config or SolverConfig()
    q_ref = model.load
    if path.q_ref is None and path.loads is None:
        path = LoadPath(path.factors, q_ref=q_ref, overrides=path.overrides)
    # L does not depend on sigma0 or q
    base = config.resolve(model)
    record = PathRecord()
    sigma0 = model.sigma0.copy()
    u = np.zeros(model.d)
    plastic = np.zeros((model.m, model.ncomp))
    previous = None
    for i, factor in enumerate(path.factors):
        q = path.load(i, model)
        step_model = model.replace(sigma0=sigma0, load=q)
        cfg = base
        if path.overrides is not None and path.overrides[i]:
            fields = {**vars(config), "lipschitz": base.lipschitz, **path.overrides[i]}
            cfg = SolverConfig(**fields).resolve(step_model)
        elif config.tol_du is None or config.tol_eps is None:
            # default tolerances scale with ||q||, recompute per step
            cfg = SolverConfig(**{**vars(config), "lipschitz": base.lipschitz}).resolve(step_model)
        init, how = _warm_start(step_model, path, i, previous)
        state, report = solve(step_model, init, cfg, record_history=record_history)
        kkt = report.kkt
        step = StepRecord(
            factor=float(factor), load=q, sigma0=sigma0.copy(),
            converged=report.converged, collapsed=report.collapsed,
            du=state.du, u=u + state.du, eps_p=state.eps_p, plastic_strain=plastic + state.eps_p,
            sigma=state.sigma, iterations=report.iterations, kkt_max=kkt.max_residual,
            kkt_passed=kkt.passed, warm_start=how, report=report,
        )
        record.steps.append(step)
        logger.info("step %d lambda=%g: %s, kkt max %.3e", i, factor, report.message, kkt.max_residual)
        if not step.committed:
            record.truncated = True
            record.failure = report.status if not report.converged else "kkt"
            record.failed_factor = float(factor)
            break
        sigma0 = state.sigma.copy()
        u = step.u
        plastic = step.plastic_strain
        previous = state
    return record
