"""Discrete instances: integration-point data, compatibility operator, loads.

A :class:`Model` stacks the per-point strain-displacement maps ``B_l`` into
one sparse matrix of shape ``(m * ncomp, d)``; row block ``l`` maps the
reduced displacement vector to the strain components of point ``l``.
Supports are eliminated from the numbering, so ``d`` counts free dofs only.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import tensor
from .constitutive import CriterionSet, TrussBox, VonMises, YieldCriterion
from .tensor import ElasticityTensor, apply_elasticity, ddot


class ModelError(ValueError):
    """Raised for geometrically or statically invalid input."""


@dataclass(frozen=True)
class IntegrationPoint:
    rho: float
    elasticity: ElasticityTensor
    b_op: sp.csr_matrix
    sigma0: np.ndarray
    criterion: YieldCriterion


@dataclass(frozen=True, eq=False)
class Model:
    """An assembled structure.

    Everything except ``sigma0`` and ``load`` is fixed at assembly; use
    :meth:`replace` to obtain a copy for another load step.
    """

    kind: str
    ncomp: int
    B: sp.csr_matrix
    rho: np.ndarray
    elasticity: ElasticityTensor
    criteria: CriterionSet
    sigma0: np.ndarray
    load: np.ndarray
    nodes: np.ndarray
    elements: list
    dof_map: np.ndarray  # (n_nodes, ndim) -> reduced index or -1
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        m, d = self.m, self.d
        if self.B.shape != (m * self.ncomp, d):
            raise ModelError("B has inconsistent shape")
        if self.rho.shape != (m,) or np.any(self.rho <= 0.0):
            raise ModelError("rho must be positive, one per point")
        if len(self.criteria) != m:
            raise ModelError("one yield criterion per point required")
        if self.sigma0.shape != (m, self.ncomp):
            raise ModelError(f"sigma0 must have shape {(m, self.ncomp)}")
        if self.load.shape != (d,):
            raise ModelError(f"load must have length {d}")

    @property
    def m(self) -> int:
        return len(self.rho)

    @property
    def d(self) -> int:
        return self.B.shape[1]

    def replace(self, **changes) -> Model:
        for key in ("sigma0", "load"):
            if key in changes:
                changes[key] = np.array(changes[key], dtype=float)
        return dataclasses.replace(self, **changes)

    def point(self, l: int) -> IntegrationPoint:
        self._check_index(l)
        rows = slice(l * self.ncomp, (l + 1) * self.ncomp)
        E = np.broadcast_to(self.elasticity.E, (self.m,))[l]
        nu = np.broadcast_to(self.elasticity.nu, (self.m,))[l]
        return IntegrationPoint(
            rho=float(self.rho[l]),
            elasticity=ElasticityTensor(float(E), float(nu)),
            b_op=self.B[rows],
            sigma0=self.sigma0[l].copy(),
            criterion=self.criteria[l],
        )

    def _check_index(self, l):
        if not 0 <= l < self.m:
            raise IndexError(f"point index {l} out of range [0, {self.m})")

    # whole-model operators

    def strain(self, du) -> np.ndarray:
        """``B_l du`` for every point, shape ``(m, ncomp)``."""
        return (self.B @ np.asarray(du, dtype=float)).reshape(self.m, self.ncomp)

    def adjoint(self, s) -> np.ndarray:
        """``sum_l B_l^* s_l`` for per-point tensors ``s`` of shape (m, ncomp)."""
        s = np.asarray(s, dtype=float)
        return self.B.T @ (s * tensor.weights(self.ncomp)).ravel()

    def internal_force(self, sigma) -> np.ndarray:
        return self.adjoint(self.rho[:, None] * sigma)

    def stiffness(self) -> sp.csr_matrix:
        """Elastic stiffness ``sum_l rho_l B_l^* C_l B_l``."""
        E = np.broadcast_to(self.elasticity.E, (self.m,))
        nu = np.broadcast_to(self.elasticity.nu, (self.m,))
        w = tensor.weights(self.ncomp)
        blocks = [
            self.rho[l] * (w[:, None] * ElasticityTensor(E[l], nu[l]).matrix(self.ncomp))
            for l in range(self.m)
        ]
        D = sp.block_diag(blocks, format="csr")
        return (self.B.T @ D @ self.B).tocsr()

    def dof(self, node: int, direction: int) -> int:
        return int(self.dof_map[node, direction])

    def full_displacement(self, du) -> np.ndarray:
        """Scatter reduced displacements to an (n_nodes, ndim) array."""
        out = np.zeros(self.dof_map.shape)
        mask = self.dof_map >= 0
        out[mask] = np.asarray(du)[self.dof_map[mask]]
        return out


def apply_b(model: Model, l: int, du) -> np.ndarray:
    model._check_index(l)
    du = np.asarray(du, dtype=float)
    if du.shape != (model.d,):
        raise ValueError(f"du must have length {model.d}")
    rows = slice(l * model.ncomp, (l + 1) * model.ncomp)
    return model.B[rows] @ du


def apply_b_adjoint(model: Model, l: int, s) -> np.ndarray:
    model._check_index(l)
    s = np.asarray(s, dtype=float)
    rows = slice(l * model.ncomp, (l + 1) * model.ncomp)
    return model.B[rows].T @ (s * tensor.weights(model.ncomp))


def _dof_numbering(n_nodes, ndim, supports):
    fixed = np.zeros((n_nodes, ndim), dtype=bool)
    for node, direction in supports:
        if not (0 <= node < n_nodes and 0 <= direction < ndim):
            raise ModelError(f"support ({node}, {direction}) out of range")
        fixed[node, direction] = True
    dof_map = -np.ones((n_nodes, ndim), dtype=np.intp)
    free = ~fixed
    dof_map[free] = np.arange(free.sum())
    return dof_map


def _load_vector(dof_map, loads):
    q = np.zeros(int((dof_map >= 0).sum()))
    for node, direction, value in loads:
        k = dof_map[node, direction]
        if k < 0:
            raise ModelError(f"load applied on supported dof ({node}, {direction})")
        q[k] += value
    return q


def _check_stable(model: Model):
    if model.d == 0:
        raise ModelError("model has no free degrees of freedom")
    touched = np.asarray(abs(model.B).sum(axis=0)).ravel() > 0
    if not touched.all():
        raise ModelError(f"free dofs {np.flatnonzero(~touched).tolist()} carry no stiffness")
    K = model.stiffness()
    if model.d <= 2000:
        ev = np.linalg.eigvalsh(K.toarray())
        singular = ev[0] <= 1e-10 * ev[-1]
    else:
        try:
            spla.splu(K.tocsc())
            singular = False
        except RuntimeError:
            singular = True
    if singular:
        raise ModelError("stiffness is singular: supports do not remove all rigid-body modes")


def assemble_truss(nodes, bars, supports, loads, *, criteria=None) -> Model:
    """Pin-jointed truss with one integration point per bar.

    ``bars`` holds dicts with ``nodes`` (pair of indices), ``E``, ``A`` and
    ``R``; ``supports`` is a list of ``(node, direction)`` and ``loads`` a
    list of ``(node, direction, value)``.  ``criteria`` optionally replaces
    the per-bar TrussBox(R).
    """
    nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
    n_nodes, ndim = nodes.shape
    if not bars:
        raise ModelError("truss needs at least one bar")
    if not supports:
        raise ModelError("truss has no supports; rigid-body modes are unrestrained")
    dof_map = _dof_numbering(n_nodes, ndim, supports)
    d = int((dof_map >= 0).sum())

    rows, cols, vals = [], [], []
    rho, E, crits = [], [], []
    for l, bar in enumerate(bars):
        a, b = bar["nodes"]
        delta = nodes[b] - nodes[a]
        length = float(np.linalg.norm(delta))
        if length <= 0.0:
            raise ModelError(f"bar {l} has zero length")
        cosines = delta / length
        for node, sign in ((a, -1.0), (b, 1.0)):
            for k in range(ndim):
                dof = dof_map[node, k]
                if dof >= 0 and cosines[k] != 0.0:
                    rows.append(l)
                    cols.append(dof)
                    vals.append(sign * cosines[k] / length)
        area = float(bar["A"])
        if area <= 0.0:
            raise ModelError(f"bar {l} has non-positive area")
        rho.append(area * length)
        E.append(float(bar["E"]))
        crits.append(criteria[l] if criteria is not None else TrussBox(float(bar["R"])))

    m = len(bars)
    B = sp.csr_matrix((vals, (rows, cols)), shape=(m, d))
    B.sum_duplicates()
    model = Model(
        kind="truss",
        ncomp=1,
        B=B,
        rho=np.array(rho),
        elasticity=ElasticityTensor(np.array(E)),
        criteria=CriterionSet(crits),
        sigma0=np.zeros((m, 1)),
        load=_load_vector(dof_map, loads),
        nodes=nodes,
        elements=[tuple(bar["nodes"]) for bar in bars],
        dof_map=dof_map,
    )
    _check_stable(model)
    return model


def cst_gradients(xy) -> tuple[np.ndarray, np.ndarray, float]:
    """Shape-function gradients of a linear triangle.

    Returns ``(dN/dx, dN/dy, area)``; the area is signed (negative for
    clockwise node order).
    """
    xy = np.asarray(xy, dtype=float)
    x, y = xy[:, 0], xy[:, 1]
    area = 0.5 * ((x[1] - x[0]) * (y[2] - y[0]) - (x[2] - x[0]) * (y[1] - y[0]))
    b = np.array([y[1] - y[2], y[2] - y[0], y[0] - y[1]])
    c = np.array([x[2] - x[1], x[0] - x[2], x[1] - x[0]])
    return b / (2.0 * area), c / (2.0 * area), area


def assemble_cst2d(nodes, triangles, thickness, supports, loads, plane_strain=True, *,
                   criteria=None) -> Model:
    """Plane-strain constant-strain triangles, one point per element.

    ``triangles`` holds dicts with ``nodes`` (three indices, counter-clockwise),
    ``E``, ``nu`` and ``kappa``; an optional per-element ``thickness`` overrides
    the global one.  Out-of-plane strain components are identically zero.
    """
    if not plane_strain:
        raise NotImplementedError("only plane-strain kinematics are supported")
    nodes = np.asarray(nodes, dtype=float)
    if nodes.ndim != 2 or nodes.shape[1] != 2:
        raise ModelError("CST nodes must be 2-D coordinates")
    if not triangles:
        raise ModelError("mesh needs at least one triangle")
    if not supports:
        raise ModelError("mesh has no supports; rigid-body modes are unrestrained")
    dof_map = _dof_numbering(len(nodes), 2, supports)
    d = int((dof_map >= 0).sum())

    rows, cols, vals = [], [], []
    rho, E, nu, crits = [], [], [], []
    for l, tri in enumerate(triangles):
        conn = list(tri["nodes"])
        dNdx, dNdy, area = cst_gradients(nodes[conn])
        if area <= 0.0:
            raise ModelError(f"triangle {l} is inverted or degenerate (area {area:g})")
        base = 6 * l
        for a, node in enumerate(conn):
            ux, uy = dof_map[node]
            # eps11 = dN/dx ux, eps22 = dN/dy uy, eps12 = (dN/dy ux + dN/dx uy) / 2
            if ux >= 0:
                rows += [base + 0, base + 5]
                cols += [ux, ux]
                vals += [dNdx[a], 0.5 * dNdy[a]]
            if uy >= 0:
                rows += [base + 1, base + 5]
                cols += [uy, uy]
                vals += [dNdy[a], 0.5 * dNdx[a]]
        t = float(tri.get("thickness", thickness))
        if t <= 0.0:
            raise ModelError(f"triangle {l} has non-positive thickness")
        rho.append(area * t)
        E.append(float(tri["E"]))
        nu.append(float(tri["nu"]))
        crits.append(criteria[l] if criteria is not None else VonMises(float(tri["kappa"])))

    m = len(triangles)
    B = sp.csr_matrix((vals, (rows, cols)), shape=(6 * m, d))
    B.sum_duplicates()
    B.eliminate_zeros()
    model = Model(
        kind="cst2d",
        ncomp=6,
        B=B,
        rho=np.array(rho),
        elasticity=ElasticityTensor(np.array(E), np.array(nu)),
        criteria=CriterionSet(crits),
        sigma0=np.zeros((m, 6)),
        load=_load_vector(dof_map, loads),
        nodes=nodes,
        elements=[tuple(tri["nodes"]) for tri in triangles],
        dof_map=dof_map,
    )
    _check_stable(model)
    return model


def strain_energy(model: Model, du, eps_p) -> np.ndarray:
    """Per-point stored-energy increments ``w_l``."""
    el = model.strain(du) - eps_p
    return model.rho * (0.5 * ddot(apply_elasticity(model.elasticity, el), el)
                        + ddot(model.sigma0, el))


def strain_energy_gradient(model: Model, du, eps_p) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of ``sum_l w_l`` in the joint (Euclidean, Frobenius) metric."""
    sigma = model.sigma0 + apply_elasticity(model.elasticity, model.strain(du) - eps_p)
    return model.internal_force(sigma), -model.rho[:, None] * sigma


def hessian_apply(model: Model, du, eps_p) -> tuple[np.ndarray, np.ndarray]:
    """Hessian of ``sum_l w_l`` applied to a joint direction ``(du, eps_p)``."""
    s = apply_elasticity(model.elasticity, model.strain(du) - eps_p)
    return model.internal_force(s), -model.rho[:, None] * s


def lipschitz_upper_bound(model: Model, *, rtol: float = 1e-6, max_iter: int = 10_000,
                          safety: float = 1.01, seed: int = 0) -> float:
    """Upper bound on the largest Hessian eigenvalue of the smooth energy.

    Power iteration on the joint space (displacements, per-point plastic
    strains) with the Frobenius metric on tensors.  Falls back to the trace
    of the Hessian if the Rayleigh quotient has not settled after
    ``max_iter`` steps.
    """
    rng = np.random.default_rng(seed)
    w = tensor.weights(model.ncomp)
    u = rng.standard_normal(model.d)
    e = rng.standard_normal((model.m, model.ncomp))

    def norm(u, e):
        return np.sqrt(u @ u + np.sum(e * e * w))

    n = norm(u, e)
    u, e = u / n, e / n
    previous = None
    for _ in range(max_iter):
        hu, he = hessian_apply(model, u, e)
        rayleigh = u @ hu + np.sum(e * he * w)
        if previous is not None and abs(rayleigh - previous) <= rtol * abs(rayleigh):
            return safety * float(rayleigh)
        previous = rayleigh
        n = norm(hu, he)
        if n == 0.0:
            break
        u, e = hu / n, he / n
    return _trace_bound(model)


def _trace_bound(model: Model) -> float:
    diag_u = model.stiffness().diagonal().sum()
    diag_e = np.sum(model.rho * np.broadcast_to(model.elasticity.trace_bound(model.ncomp), (model.m,)))
    return float(diag_u + diag_e)
