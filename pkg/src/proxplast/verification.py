"""Optimality checks and slow reference solvers.

A state solves the incremental problem iff the force residual vanishes and,
at every point, the stress is a subgradient of the dissipation at the
plastic strain increment.  Because the dissipation is a support function,
the subgradient inclusion is equivalent to two scalar conditions: the
stress is admissible and ``dissipation(eps_p) == sigma : eps_p``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor
from .constitutive import YieldCriterion
from .fem import Model, lipschitz_upper_bound
from .state import IterateState, evaluate, refresh

BRUTE_FORCE_MAX_SIZE = 30


@dataclass
class KktReport:
    force_residual_norm: float
    flow_feasibility: list
    complementarity_gap: list
    tol: float
    force_tol: float

    @property
    def max_feasibility(self) -> float:
        return max(self.flow_feasibility, default=0.0)

    @property
    def max_gap(self) -> float:
        # |gap|: Fenchel-Young makes it nonnegative for admissible stress
        return max((abs(g) for g in self.complementarity_gap), default=0.0)

    @property
    def min_gap(self) -> float:
        return min(self.complementarity_gap, default=0.0)

    @property
    def max_residual(self) -> float:
        return max(self.force_residual_norm, self.max_feasibility, self.max_gap)

    @property
    def passed(self) -> bool:
        return (self.force_residual_norm <= self.force_tol
                and self.max_feasibility <= self.tol
                and self.max_gap <= self.tol)

    def failures(self) -> list[str]:
        out = []
        if self.force_residual_norm > self.force_tol:
            out.append("force_residual_norm")
        if self.max_feasibility > self.tol:
            out.append("flow_feasibility")
        if self.max_gap > self.tol:
            out.append("complementarity_gap")
        return out

    def to_dict(self) -> dict:
        out = asdict(self)
        out.update(max_feasibility=self.max_feasibility, max_gap=self.max_gap,
                   passed=self.passed, failures=self.failures())
        return out


def kkt_check(model: Model, state: IterateState, tol: float = 1e-8,
              force_tol: float | None = None) -> KktReport:
    state = refresh(model, state)
    sigma = state.sigma
    feasibility = model.criteria.distance(sigma)
    with np.errstate(invalid="ignore"):
        gap = model.criteria.dissipation(state.eps_p) - tensor.ddot(sigma, state.eps_p)
    return KktReport(
        force_residual_norm=float(np.linalg.norm(state.residual)),
        flow_feasibility=[float(v) for v in feasibility],
        complementarity_gap=[float(v) for v in gap],
        tol=tol,
        force_tol=tol if force_tol is None else force_tol,
    )


def resolvent_equivalence_test(criterion: YieldCriterion, x, beta: float, *, zeta=None,
                               n_probes: int = 1000, tol: float = 1e-10, seed: int = 0) -> bool:
    """Check ``x - zeta in beta * subdiff(dissipation)(zeta)`` by sampling.

    ``zeta`` defaults to the prox of ``beta * dissipation`` at ``x``; pass a
    different candidate to test it instead.  The subgradient inequality is
    probed at 0, at 2 zeta, and at random tensors (projected to the
    dissipation domain where that is a proper subspace).
    """
    x = np.asarray(x, dtype=float)
    if zeta is None:
        zeta = criterion.prox_dissipation(x, beta)
    zeta = np.asarray(zeta, dtype=float)
    s = (x - zeta) / beta
    if not criterion.membership(s, tol):
        return False
    base = criterion.dissipation(zeta)
    if not np.isfinite(base):
        return False
    rng = np.random.default_rng(seed)
    scale = 1.0 + float(tensor.frobenius(x))
    probes = [np.zeros_like(zeta), 2.0 * zeta]
    raw = rng.standard_normal((n_probes, x.shape[-1])) * scale
    probes.extend(raw)
    if x.shape[-1] == tensor.NCOMP:
        probes.extend(tensor.dev(raw))
    probes = np.asarray(probes)
    lhs = criterion.dissipation(probes)
    rhs = base + tensor.ddot(s, probes - zeta)
    return bool(np.all(lhs >= rhs - tol * (1.0 + np.abs(rhs))))


def brute_force_solve(model: Model, *, iterations: int = 1_000_000, step_fraction: float = 0.1,
                      init: IterateState | None = None) -> IterateState:
    """Reference solution of a tiny instance by slow, plain proximal gradient.

    Dense matrices, step ``0.1 / L``, no acceleration and no restart.  Stops
    early only if an iteration reproduces the previous iterate bit for bit.
    """
    size = model.d + 6 * model.m
    if size > BRUTE_FORCE_MAX_SIZE:
        raise ValueError(f"instance too large for brute force (d + 6m = {size} > "
                         f"{BRUTE_FORCE_MAX_SIZE})")
    alpha = step_fraction / lipschitz_upper_bound(model)
    beta = (alpha * model.rho)[:, None]
    n = model.ncomp
    w = tensor.weights(n)
    B = model.B.toarray()
    # dense per-point stiffness, as component matrices
    E = np.broadcast_to(model.elasticity.E, (model.m,))
    nu = np.broadcast_to(model.elasticity.nu, (model.m,))
    C = np.stack([tensor.ElasticityTensor(E[l], nu[l]).matrix(n) for l in range(model.m)])
    BtW = (B * np.tile(w, model.m)[:, None]).T
    rho_rep = np.repeat(model.rho, n)
    sigma0 = model.sigma0.ravel()
    q = model.load
    crits = model.criteria

    if init is None:
        du, ep = np.zeros(model.d), np.zeros(model.m * n)
    else:
        du, ep = init.du.copy(), init.eps_p.ravel().copy()
    for _ in range(iterations):
        el = (B @ du - ep).reshape(model.m, n)
        sigma = sigma0 + np.einsum("lij,lj->li", C, el).ravel()
        r = BtW @ (rho_rep * sigma) - q
        du_next = du - alpha * r
        ep_next = crits.prox(ep.reshape(model.m, n) + beta * sigma.reshape(model.m, n),
                             alpha * model.rho).ravel()
        if np.array_equal(du_next, du) and np.array_equal(ep_next, ep):
            break
        du, ep = du_next, ep_next
    return evaluate(model, du, ep.reshape(model.m, n))
