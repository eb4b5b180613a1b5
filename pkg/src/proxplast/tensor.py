"""Symmetric second-order tensors in 6-component storage.

Components are ordered (11, 22, 33, 23, 13, 12) and hold the *tensor*
values (no engineering-shear factor).  Inner products and norms therefore
count every off-diagonal entry twice, so that ``ddot`` and ``frobenius``
agree with the full 3x3 definitions.

One-dimensional (truss) points use a single axial component; all functions
here dispatch on the size of the last axis (1 or 6).  Arrays with leading
batch dimensions are supported throughout.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NCOMP = 6
VOIGT_ORDER = ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1))

_WEIGHTS = {
    1: np.array([1.0]),
    6: np.array([1.0, 1.0, 1.0, 2.0, 2.0, 2.0]),
}
_IDENTITY = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])


def weights(ncomp: int) -> np.ndarray:
    """Metric weights turning component products into full double-dots."""
    try:
        return _WEIGHTS[ncomp]
    except KeyError:
        raise ValueError(f"unsupported tensor size {ncomp}; expected 1 or 6") from None


def identity(ncomp: int = NCOMP) -> np.ndarray:
    if ncomp == 1:
        return np.array([1.0])
    return _IDENTITY.copy()


def from_matrix(a) -> np.ndarray:
    """Pack a (..., 3, 3) symmetric array into (..., 6) components."""
    a = np.asarray(a, dtype=float)
    return np.stack([a[..., i, j] for i, j in VOIGT_ORDER], axis=-1)


def to_matrix(v) -> np.ndarray:
    """Unpack (..., 6) components into a full (..., 3, 3) array."""
    v = np.asarray(v, dtype=float)
    out = np.empty(v.shape[:-1] + (3, 3))
    for k, (i, j) in enumerate(VOIGT_ORDER):
        out[..., i, j] = v[..., k]
        out[..., j, i] = v[..., k]
    return out


def ddot(a, b) -> np.ndarray:
    """Double-dot product ``a : b`` over the last axis."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.sum(a * b * weights(a.shape[-1]), axis=-1)


def frobenius(a) -> np.ndarray:
    """``sqrt(a : a)``, rescaled so tiny and huge entries neither underflow nor overflow."""
    a = np.asarray(a, dtype=float)
    scale = np.max(np.abs(a), axis=-1, keepdims=True)
    safe = np.where(scale > 0.0, scale, 1.0)
    return safe[..., 0] * np.sqrt(ddot(a / safe, a / safe))


def trace(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.shape[-1] == 1:
        return a[..., 0]
    return a[..., 0] + a[..., 1] + a[..., 2]


def dev(a) -> np.ndarray:
    """Deviatoric part ``a - (tr a / 3) I`` of 6-component tensors."""
    a = np.asarray(a, dtype=float)
    if a.shape[-1] != NCOMP:
        raise ValueError("deviatoric split needs 6-component tensors")
    return a - (trace(a) / 3.0)[..., None] * _IDENTITY


def vol(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return (trace(a) / 3.0)[..., None] * _IDENTITY


@dataclass(frozen=True, eq=False)
class ElasticityTensor:
    """Isotropic elasticity, parameterized by Young modulus and Poisson ratio.

    ``E`` and ``nu`` may be arrays (one entry per integration point); they
    broadcast against the leading axes of the strain passed to
    :func:`apply_elasticity`.  On one-component (axial) tensors only ``E``
    is used.
    """

    E: float | np.ndarray
    nu: float | np.ndarray = 0.0

    def __post_init__(self):
        E = np.asarray(self.E, dtype=float)
        nu = np.asarray(self.nu, dtype=float)
        if np.any(E <= 0.0):
            raise ValueError("Young modulus must be positive")
        if np.any(nu <= -1.0) or np.any(nu >= 0.5):
            raise ValueError("Poisson ratio must lie in (-1, 0.5)")

    @property
    def lame(self) -> tuple[np.ndarray, np.ndarray]:
        E = np.asarray(self.E, dtype=float)
        nu = np.asarray(self.nu, dtype=float)
        lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
        mu = E / (2.0 * (1.0 + nu))
        return lam, mu

    def matrix(self, ncomp: int = NCOMP) -> np.ndarray:
        """Component matrix ``M`` with ``apply_elasticity(c, e) == M @ e``.

        Only defined for scalar parameters.
        """
        if np.ndim(self.E) or np.ndim(self.nu):
            raise ValueError("matrix() needs scalar E and nu")
        if ncomp == 1:
            return np.array([[float(self.E)]])
        lam, mu = (float(x) for x in self.lame)
        m = 2.0 * mu * np.eye(NCOMP)
        m[:3, :3] += lam
        return m

    def trace_bound(self, ncomp: int = NCOMP) -> np.ndarray:
        """Trace of the operator on the (ncomp)-dimensional tensor space."""
        if ncomp == 1:
            return np.asarray(self.E, dtype=float)
        lam, mu = self.lame
        return 3.0 * lam + 12.0 * mu


def apply_elasticity(c: ElasticityTensor, e) -> np.ndarray:
    """Stress response ``C e``: ``lam tr(e) I + 2 mu e``, or ``E e`` axially."""
    e = np.asarray(e, dtype=float)
    if e.shape[-1] == 1:
        return np.asarray(c.E, dtype=float)[..., None] * e
    lam, mu = c.lame
    return (lam * trace(e))[..., None] * _IDENTITY + (2.0 * mu)[..., None] * e
