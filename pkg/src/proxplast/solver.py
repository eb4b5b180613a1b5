"""Proximal gradient iteration for one incremental step, plain or accelerated.

One iteration (:func:`pg_step`) reads the incumbent stress ``sigma`` and
updates both unknowns from it::

    du    <- du - alpha * (sum_l rho_l B_l^* sigma_l - q)
    eps_p <- prox_{beta_l * dissipation_l}(eps_p + beta_l * sigma_l),  beta_l = rho_l * alpha

The accelerated modes run the same step from a FISTA-extrapolated point;
``accelerated_restart`` resets the momentum whenever the objective goes up.
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor
from .fem import Model, lipschitz_upper_bound
from .state import IterateState, check_shapes, evaluate, stress, zeros
from .tensor import ElasticityTensor, apply_elasticity, ddot

logger = logging.getLogger(__name__)

MODES = ("plain", "accelerated", "accelerated_restart")
COLLAPSE_FLOOR = -1e18


@dataclass
class SolverConfig:
    """Step length, tolerances and iteration mode.

    Unset fields are filled in by :meth:`resolve`: ``alpha`` defaults to
    ``alpha_scale / L`` with ``L`` from :func:`lipschitz_upper_bound`, and
    both tolerances default to ``1e-8 * (||q|| * alpha + 1)``.
    """

    alpha: float | None = None
    alpha_scale: float = 1.0
    lipschitz: float | None = None
    tol_du: float | None = None
    tol_eps: float | None = None
    max_iters: int = 100_000
    mode: str = "accelerated_restart"
    threads: int = 1
    collapse_check_every: int = 10
    kkt_tol: float = 1e-6
    rate_window: int = 10

    def resolve(self, model: Model) -> SolverConfig:
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if not 0.0 < self.alpha_scale <= 1.0:
            raise ValueError("alpha_scale must lie in (0, 1]")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        lip = self.lipschitz if self.lipschitz is not None else lipschitz_upper_bound(model)
        alpha = self.alpha if self.alpha is not None else self.alpha_scale / lip
        if not 0.0 < alpha <= 1.0 / lip:
            raise ValueError(f"alpha={alpha:g} outside (0, 1/L] with L={lip:g}")
        scale = 1e-8 * (np.linalg.norm(model.load) * alpha + 1.0)
        return replace(
            self,
            alpha=alpha,
            lipschitz=lip,
            tol_du=self.tol_du if self.tol_du is not None else scale,
            tol_eps=self.tol_eps if self.tol_eps is not None else scale,
        )

    def beta(self, model: Model) -> np.ndarray:
        return model.rho * self.alpha


@dataclass
class AccelerationState:
    """FISTA momentum bookkeeping.

    ``omega`` is the extrapolation weight to apply after the latest step;
    ``point`` is the extrapolated iterate the next step starts from.
    """

    t: float = 1.0
    omega: float = 0.0
    restarts: int = 0
    restarted: bool = False
    point: IterateState | None = None


def objective_noise(*values: float) -> float:
    """Round-off resolution of objective differences near ``values``."""
    return 16.0 * np.finfo(float).eps * max(1.0, *(abs(v) for v in values))


def restart_check(prev_objective: float, new_objective: float, accel: AccelerationState,
                  restart: bool = True, momentum_opposes: bool = False) -> AccelerationState:
    """Advance the momentum schedule, or reset it if the objective increased.

    Increases below round-off are not trusted; in that band the restart
    decision falls back to ``momentum_opposes`` (the last momentum direction
    points against the latest prox-gradient step).
    """
    if restart:
        noise = objective_noise(prev_objective, new_objective)
        increase = new_objective - prev_objective
        if increase > noise or (abs(increase) <= noise and momentum_opposes):
            return AccelerationState(t=1.0, omega=0.0, restarts=accel.restarts + 1,
                                     restarted=True)
    t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * accel.t * accel.t))
    return AccelerationState(t=t_next, omega=(accel.t - 1.0) / t_next,
                             restarts=accel.restarts, restarted=False)


class _PointWorkers:
    """Runs the per-point stages (stress, prox) in row chunks.

    Each chunk writes its own rows of a preallocated output, so results are
    bitwise identical for every thread count.
    """

    def __init__(self, model: Model, threads: int = 1):
        self.model = model
        self.threads = min(threads, model.m)
        self.pool = None
        if self.threads > 1:
            E = np.broadcast_to(model.elasticity.E, (model.m,))
            nu = np.broadcast_to(model.elasticity.nu, (model.m,))
            self.chunks = []
            for idx in np.array_split(np.arange(model.m), self.threads):
                rows = slice(int(idx[0]), int(idx[-1]) + 1)
                self.chunks.append((rows, ElasticityTensor(E[rows], nu[rows]),
                                    model.criteria.subset(idx)))
            self.pool = ThreadPoolExecutor(self.threads)

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()

    def _run(self, fn, shape):
        out = np.empty(shape)
        list(self.pool.map(lambda chunk: fn(out, *chunk), self.chunks))
        return out

    def stress(self, eps_e):
        if self.pool is None:
            return stress(self.model, eps_e)
        sigma0 = self.model.sigma0

        def work(out, rows, elasticity, _):
            out[rows] = sigma0[rows] + apply_elasticity(elasticity, eps_e[rows])
        return self._run(work, eps_e.shape)

    def prox(self, x, beta):
        if self.pool is None:
            return self.model.criteria.prox(x, beta)

        def work(out, rows, _, criteria):
            out[rows] = criteria.prox(x[rows], beta[rows])
        return self._run(work, x.shape)


class StepMonitor:
    """Termination test on normalized step sizes.

    A step counts as small when both step norms are within tolerance.  On top
    of that, the distance still to travel is estimated from the observed
    contraction rate ``rho`` as ``step * rho / (1 - rho)`` and must also be
    within tolerance, because slowly contracting iterations take many small
    steps before reaching the fixed point.  ``window=0`` disables the
    estimate.

    Momentum iterations swing back and forth across the fixed point, so
    their step norms oscillate and a short window can sit in a trough.  With
    ``oscillatory=True`` the path length between consecutive minima of the
    step norm (one swing across the fixed point) is tracked too, and half of
    the largest recent swing, an estimate of the remaining amplitude, must
    also be within tolerance.
    """

    def __init__(self, window: int = 10, oscillatory: bool = False, swings_kept: int = 3):
        self.window = window
        self.oscillatory = oscillatory
        self.swings_kept = swings_kept
        self.steps: list[float] = []
        self.swings: list[float] = []
        self.path = 0.0
        self.rate = float("nan")

    def reset(self):
        self.steps.clear()
        self.swings.clear()
        self.path = 0.0

    def amplitude(self) -> float:
        if not self.swings:
            return 0.0
        return 0.5 * max(self.path, *self.swings[-self.swings_kept:])

    def _track_swings(self, step):
        s = self.steps
        if len(s) >= 3 and s[-2] < s[-3] and s[-2] <= step:
            # s[-2] is a local minimum: a swing ended there
            self.swings.append(self.path)
            self.path = 0.0
        self.path += step

    def update(self, step: float) -> bool:
        self.steps.append(step)
        if self.oscillatory:
            self._track_swings(step)
        if step > 1.0:
            return False
        if step == 0.0 or self.window == 0:
            return True
        if self.oscillatory and self.amplitude() > 1.0:
            return False
        w = min(self.window, len(self.steps) // 2)
        if w == 0:
            return False
        recent = max(self.steps[-w:])
        older = max(self.steps[-2 * w:-w])
        if older <= 0.0:
            return False
        self.rate = (recent / older) ** (1.0 / w)
        if self.rate >= 1.0:
            return False
        return recent * self.rate / (1.0 - self.rate) <= 1.0


def _evaluate(model, du, eps_p, workers):
    if workers is None:
        return evaluate(model, du, eps_p)
    return evaluate(model, du, eps_p, stress_fn=workers.stress)


def pg_step(model: Model, state: IterateState, config: SolverConfig,
            workers: _PointWorkers | None = None) -> IterateState:
    """One proximal gradient iteration; both updates read the incumbent stress."""
    if state.sigma is None or state.residual is None:
        state = _evaluate(model, state.du, state.eps_p, workers)
    alpha = config.alpha
    beta = config.beta(model)
    du = state.du - alpha * state.residual
    x = state.eps_p + beta[:, None] * state.sigma
    eps_p = workers.prox(x, beta) if workers is not None else model.criteria.prox(x, beta)
    return _evaluate(model, du, eps_p, workers)


def _extrapolate(new: IterateState, old: IterateState, omega: float) -> IterateState:
    if omega == 0.0:
        return new

    def mix(a, b):
        return a + omega * (a - b)

    # all caches are affine in the unknowns
    return IterateState(mix(new.du, old.du), mix(new.eps_p, old.eps_p), mix(new.eps_e, old.eps_e),
                        mix(new.sigma, old.sigma), mix(new.residual, old.residual))


def collapse_certificate(model: Model, state: IterateState, d_du, d_eps,
                         floor: float = COLLAPSE_FLOOR) -> bool:
    """True if the objective provably drops below ``floor`` along ``state + t d``.

    Along the ray the stored energy is an exact quadratic in ``t`` and the
    dissipation is bounded by ``t * dissipation(d_eps)`` (sublinearity), so
    ``f(t) <= f0 + g t + h t^2``; the minimum of that bound is checked.
    """
    f0 = state.objective
    if f0 is None or not np.isfinite(f0):
        return False
    el = model.strain(d_du) - d_eps
    s = apply_elasticity(model.elasticity, el)
    h = 0.5 * np.sum(model.rho * ddot(s, el))
    slope = np.sum(model.rho * model.criteria.dissipation(d_eps))
    if not np.isfinite(slope):
        return False
    g = np.sum(model.rho * ddot(state.sigma, el)) + slope - model.load @ d_du
    if g >= 0.0:
        return False
    if h <= 0.0:
        return True
    return f0 - g * g / (4.0 * h) < floor


@dataclass
class ConvergenceReport:
    status: str
    iterations: int
    mode: str
    alpha: float
    lipschitz: float
    tol_du: float
    tol_eps: float
    restarts: int = 0
    history: dict = field(default_factory=lambda: {k: [] for k in HISTORY_COLUMNS})
    kkt: object = None

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def collapsed(self) -> bool:
        return self.status == "collapsed"

    @property
    def message(self) -> str:
        if self.collapsed:
            return "unbounded (plastic collapse suspected)"
        if self.status == "max_iters":
            return f"not converged after {self.iterations} iterations"
        return f"converged in {self.iterations} iterations"

    def to_dict(self, with_history: bool = True) -> dict:
        out = {
            "status": self.status,
            "message": self.message,
            "converged": self.converged,
            "iterations": self.iterations,
            "mode": self.mode,
            "alpha": self.alpha,
            "lipschitz": self.lipschitz,
            "tol_du": self.tol_du,
            "tol_eps": self.tol_eps,
            "restarts": self.restarts,
            "kkt": self.kkt.to_dict() if self.kkt is not None else None,
        }
        if with_history:
            out["history"] = self.history
        return out

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(HISTORY_COLUMNS)
            for row in zip(*(self.history[k] for k in HISTORY_COLUMNS)):
                writer.writerow([_fmt(v) for v in row])


HISTORY_COLUMNS = ("iter", "objective", "residual_norm", "step_norm_du", "max_step_norm_eps",
                   "restarted")


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    return f"{v:.17g}"


def solve(model: Model, init: IterateState | None = None, config: SolverConfig | None = None,
          *, record_history: bool = True) -> tuple[IterateState, ConvergenceReport]:
    """Iterate until the steps, and the distance they extrapolate to, are within tolerance.

    Returns the final iterate on convergence or collapse, and the iterate
    with the lowest objective when ``max_iters`` runs out.
    """
    from .verification import kkt_check

    cfg = (config or SolverConfig()).resolve(model)
    init = init if init is not None else zeros(model)
    check_shapes(model, init.du, init.eps_p)
    report = ConvergenceReport("max_iters", 0, cfg.mode, cfg.alpha, cfg.lipschitz,
                               cfg.tol_du, cfg.tol_eps)
    workers = _PointWorkers(model, cfg.threads)
    accelerated = cfg.mode != "plain"
    restart = cfg.mode == "accelerated_restart"
    hist = report.history
    monitor = StepMonitor(cfg.rate_window, oscillatory=accelerated)
    try:
        x = _evaluate(model, init.du, init.eps_p, workers)
        v = x
        accel = AccelerationState()
        best = x
        for k in range(1, cfg.max_iters + 1):
            x_new = pg_step(model, v, cfg, workers)
            if v is not x:
                # momentum can make consecutive iterates close at a turning
                # point; also require the prox-gradient step itself to be small
                grad_du = float(np.linalg.norm(x_new.du - v.du))
                grad_eps = float(np.max(tensor.frobenius(x_new.eps_p - v.eps_p), initial=0.0))
            else:
                grad_du = grad_eps = 0.0
            d_du = x_new.du - x.du
            d_eps = x_new.eps_p - x.eps_p
            step_du = float(np.linalg.norm(d_du))
            step_eps = float(np.max(tensor.frobenius(d_eps), initial=0.0))
            restarted = False
            if accelerated:
                opposes = False
                if restart and v is not x:
                    # <v - x_new, x_new - x> > 0 in the joint metric
                    opposes = (np.dot(v.du - x_new.du, d_du)
                               + np.sum(tensor.ddot(v.eps_p - x_new.eps_p, d_eps))) > 0.0
                accel = restart_check(x.objective, x_new.objective, accel, restart, opposes)
                restarted = accel.restarted
                v = _extrapolate(x_new, x, accel.omega)
                accel.point = v
            else:
                v = x_new
            if record_history:
                hist["iter"].append(k)
                hist["objective"].append(x_new.objective)
                hist["residual_norm"].append(float(np.linalg.norm(x_new.residual)))
                hist["step_norm_du"].append(step_du)
                hist["max_step_norm_eps"].append(step_eps)
                hist["restarted"].append(restarted)
            report.iterations = k
            if k % 1000 == 0:
                logger.debug("iter %d objective %.12g step_du %.3e step_eps %.3e",
                             k, x_new.objective, step_du, step_eps)
            if x_new.objective < COLLAPSE_FLOOR or (
                    k % cfg.collapse_check_every == 0
                    and collapse_certificate(model, x_new, d_du, d_eps)):
                report.status = "collapsed"
                x = x_new
                break
            x = x_new
            scaled = max(max(step_du, grad_du) / cfg.tol_du, max(step_eps, grad_eps) / cfg.tol_eps)
            if restarted:
                # the step estimate restarts with the momentum
                monitor.reset()
            elif monitor.update(scaled):
                report.status = "converged"
                break
            if best.objective is None or not x.objective >= best.objective:
                best = x
        else:
            x = best
    finally:
        workers.close()
    report.restarts = accel.restarts if accelerated else 0
    report.kkt = kkt_check(model, x, cfg.kkt_tol)
    logger.info("%s: %s", cfg.mode, report.message)
    return x, report
