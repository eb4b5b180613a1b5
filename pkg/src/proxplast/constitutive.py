"""Yield criteria for perfect plasticity.

Each criterion describes a closed convex admissible stress set ``Y`` that
contains the origin.  The plastic dissipation is the support function of
``Y``, and its scaled proximal operator is evaluated through the Moreau
decomposition::

    prox_{beta * supp_Y}(x) = x - proj_{beta * Y}(x)

so a new criterion only needs a Euclidean projection (in the Frobenius
metric) onto its scaled admissible set.

All methods are vectorized over leading axes; criterion parameters may be
arrays aligned with those axes, which is how per-point data is batched in
:class:`CriterionSet`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor

# |tr e| <= DEVIATORIC_RTOL * ||e||_F counts as deviatoric
DEVIATORIC_RTOL = 1e-9


def _column(p) -> np.ndarray:
    return np.asarray(p, dtype=float)[..., None]


class YieldCriterion:
    """Base class; subclasses implement ``project_scaled`` and friends."""

    name = "abstract"

    def membership(self, s, tol: float = 0.0) -> np.ndarray:
        raise NotImplementedError

    def project_scaled(self, x, beta) -> np.ndarray:
        raise NotImplementedError

    def dissipation(self, e) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def distance(self, s) -> np.ndarray:
        """Frobenius distance from ``s`` to ``Y``."""
        s = np.asarray(s, dtype=float)
        return tensor.frobenius(s - self.project_scaled(s, 1.0))

    def prox_dissipation(self, x, beta) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x - self.project_scaled(x, beta)

    def batch(self, items: list[YieldCriterion]) -> YieldCriterion:
        """Stack same-type criteria into one array-parameterized instance."""
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Elastic(YieldCriterion):
    """No yielding: ``Y`` is the whole space, plastic strain is pinned to 0."""

    name = "elastic"

    def membership(self, s, tol=0.0):
        s = np.asarray(s, dtype=float)
        return np.ones(s.shape[:-1], dtype=bool)

    def project_scaled(self, x, beta):
        return np.array(x, dtype=float)

    def dissipation(self, e):
        e = np.asarray(e, dtype=float)
        return np.where(np.all(e == 0.0, axis=-1), 0.0, np.inf)

    def distance(self, s):
        s = np.asarray(s, dtype=float)
        return np.zeros(s.shape[:-1])

    def to_dict(self):
        return {"type": "elastic"}

    def batch(self, items):
        return self


@dataclass(frozen=True, eq=False)
class TrussBox(YieldCriterion):
    """Uniaxial yield ``|sigma_axial| <= R``.

    The axial value is component 0.  Any further components are left
    unconstrained, so their plastic part is driven to zero by the prox.
    """

    R: float | np.ndarray
    name = "truss_box"

    def __post_init__(self):
        if np.any(np.asarray(self.R) <= 0.0):
            raise ValueError("yield stress R must be positive")

    def membership(self, s, tol=0.0):
        s = np.asarray(s, dtype=float)
        return np.abs(s[..., 0]) <= np.asarray(self.R) + tol

    def project_scaled(self, x, beta):
        x = np.array(x, dtype=float)
        bound = np.asarray(beta, dtype=float) * np.asarray(self.R, dtype=float)
        x[..., 0] = np.clip(x[..., 0], -bound, bound)
        return x

    def dissipation(self, e):
        e = np.asarray(e, dtype=float)
        value = np.asarray(self.R) * np.abs(e[..., 0])
        if e.shape[-1] > 1:
            off_axis = np.any(e[..., 1:] != 0.0, axis=-1)
            value = np.where(off_axis, np.inf, value)
        return value

    def to_dict(self):
        return {"type": "truss_box", "R": float(self.R)}

    def batch(self, items):
        return TrussBox(np.array([c.R for c in items], dtype=float))


@dataclass(frozen=True, eq=False)
class VonMises(YieldCriterion):
    """Deviatoric ball ``||dev sigma||_F <= kappa``.

    ``kappa`` is the Frobenius radius, i.e. ``sqrt(2/3)`` times the uniaxial
    yield stress.
    """

    kappa: float | np.ndarray
    name = "von_mises"

    def __post_init__(self):
        if np.any(np.asarray(self.kappa) <= 0.0):
            raise ValueError("von Mises radius kappa must be positive")

    @staticmethod
    def _check(a):
        a = np.asarray(a, dtype=float)
        if a.shape[-1] != tensor.NCOMP:
            raise ValueError("von Mises criterion needs 6-component tensors")
        return a

    def membership(self, s, tol=0.0):
        s = self._check(s)
        return tensor.frobenius(tensor.dev(s)) <= np.asarray(self.kappa) + tol

    def project_scaled(self, x, beta):
        x = self._check(x)
        d = tensor.dev(x)
        norm = tensor.frobenius(d)
        radius = np.asarray(beta, dtype=float) * np.asarray(self.kappa, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            scale = np.where(norm > radius, radius / norm, 1.0)
        return x - d + _column(scale) * d

    def prox_dissipation(self, x, beta):
        # same as x - project_scaled(x, beta), written to return an exactly
        # deviatoric tensor
        x = self._check(x)
        d = tensor.dev(x)
        norm = tensor.frobenius(d)
        radius = np.asarray(beta, dtype=float) * np.asarray(self.kappa, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            shrink = np.where(norm > radius, 1.0 - radius / norm, 0.0)
        return _column(shrink) * d

    def dissipation(self, e):
        e = self._check(e)
        norm = tensor.frobenius(e)
        tr = np.abs(tensor.trace(e))
        value = np.asarray(self.kappa) * norm
        return np.where(tr <= DEVIATORIC_RTOL * norm, value, np.inf)

    def to_dict(self):
        return {"type": "von_mises", "kappa": float(self.kappa)}

    def batch(self, items):
        return VonMises(np.array([c.kappa for c in items], dtype=float))


def membership(c: YieldCriterion, s, tol: float = 0.0):
    if tol < 0.0:
        raise ValueError("tol must be nonnegative")
    return c.membership(s, tol)


def project_scaled(c: YieldCriterion, x, beta):
    if np.any(np.asarray(beta) <= 0.0):
        raise ValueError("beta must be positive")
    return c.project_scaled(x, beta)


def dissipation(c: YieldCriterion, e):
    return c.dissipation(e)


def prox_dissipation(c: YieldCriterion, x, beta):
    """Proximal map of ``beta * dissipation`` at ``x``."""
    if np.any(np.asarray(beta) <= 0.0):
        raise ValueError("beta must be positive")
    return c.prox_dissipation(x, beta)


def from_dict(entry: dict) -> YieldCriterion:
    kind = entry.get("type")
    if kind == "elastic":
        return Elastic()
    try:
        if kind == "truss_box":
            return TrussBox(float(entry["R"]))
        if kind == "von_mises":
            return VonMises(float(entry["kappa"]))
    except KeyError as exc:
        raise ValueError(f"{kind} criterion needs parameter {exc.args[0]!r}") from None
    raise ValueError(f"unknown yield criterion type {kind!r}")


class CriterionSet:
    """Per-point criteria grouped by type for vectorized evaluation.

    Points sharing a criterion class are evaluated in one batched call.
    Results are written back in point order, so the output does not depend
    on the grouping or on how the points are chunked across threads.
    """

    def __init__(self, criteria: list[YieldCriterion]):
        self.criteria = list(criteria)
        groups: dict[type, list[int]] = {}
        for i, c in enumerate(self.criteria):
            groups.setdefault(type(c), []).append(i)
        self.groups = []
        for cls, idx in groups.items():
            idx = np.asarray(idx, dtype=np.intp)
            batched = self.criteria[idx[0]].batch([self.criteria[i] for i in idx])
            self.groups.append((idx, batched))

    def __len__(self):
        return len(self.criteria)

    def __getitem__(self, l):
        return self.criteria[l]

    def subset(self, idx) -> CriterionSet:
        return CriterionSet([self.criteria[i] for i in idx])

    def _apply(self, method, x, *args, out_shape=None):
        x = np.asarray(x, dtype=float)
        out = np.empty(out_shape if out_shape is not None else x.shape)
        for idx, crit in self.groups:
            sliced = [a[idx] if np.ndim(a) else a for a in args]
            out[idx] = getattr(crit, method)(x[idx], *sliced)
        return out

    def prox(self, x, beta):
        return self._apply("prox_dissipation", x, np.broadcast_to(beta, x.shape[:1]))

    def project(self, x, beta):
        return self._apply("project_scaled", x, np.broadcast_to(beta, x.shape[:1]))

    def dissipation(self, e):
        e = np.asarray(e, dtype=float)
        return self._apply("dissipation", e, out_shape=e.shape[:1])

    def distance(self, s):
        s = np.asarray(s, dtype=float)
        return self._apply("distance", s, out_shape=s.shape[:1])

    def membership(self, s, tol=0.0):
        s = np.asarray(s, dtype=float)
        return self._apply("membership", s, tol, out_shape=s.shape[:1]).astype(bool)
