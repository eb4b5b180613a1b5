"""Solver unknowns and the incremental potential energy."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem import Model
from .tensor import apply_elasticity, ddot


@dataclass
class IterateState:
    """Incremental displacements and plastic strains, plus derived caches.

    When ``fresh`` is true the caches satisfy ``eps_e = B du - eps_p``,
    ``sigma = sigma0 + C eps_e`` and ``residual = sum rho B^* sigma - q``
    for the model they were evaluated on.
    """

    du: np.ndarray
    eps_p: np.ndarray
    eps_e: np.ndarray | None = None
    sigma: np.ndarray | None = None
    residual: np.ndarray | None = None
    objective: float | None = None

    @property
    def fresh(self) -> bool:
        return self.sigma is not None and self.residual is not None

    def unknowns(self) -> tuple[np.ndarray, np.ndarray]:
        return self.du, self.eps_p

    def to_dict(self) -> dict:
        out = {"du": self.du.tolist(), "eps_p": self.eps_p.tolist()}
        if self.sigma is not None:
            out["sigma"] = self.sigma.tolist()
        return out


def zeros(model: Model) -> IterateState:
    return IterateState(np.zeros(model.d), np.zeros((model.m, model.ncomp)))


def check_shapes(model: Model, du, eps_p):
    if np.shape(du) != (model.d,):
        raise ValueError(f"du has shape {np.shape(du)}, model expects ({model.d},)")
    if np.shape(eps_p) != (model.m, model.ncomp):
        raise ValueError(
            f"eps_p has shape {np.shape(eps_p)}, model expects ({model.m}, {model.ncomp})")


def stress(model: Model, eps_e) -> np.ndarray:
    return model.sigma0 + apply_elasticity(model.elasticity, eps_e)


def evaluate(model: Model, du, eps_p, *, stress_fn=None, with_objective=True) -> IterateState:
    """Build a state with fresh strain, stress and residual caches."""
    du = np.asarray(du, dtype=float)
    eps_p = np.asarray(eps_p, dtype=float)
    check_shapes(model, du, eps_p)
    eps_e = model.strain(du) - eps_p
    sigma = stress_fn(eps_e) if stress_fn is not None else stress(model, eps_e)
    residual = model.internal_force(sigma) - model.load
    state = IterateState(du, eps_p, eps_e, sigma, residual)
    if with_objective:
        state.objective = objective(model, state)
    return state


def refresh(model: Model, state: IterateState) -> IterateState:
    if state.fresh:
        return state
    return evaluate(model, state.du, state.eps_p)


def objective(model: Model, state: IterateState) -> float:
    """Total incremental potential: stored energy + dissipation - work of q.

    Returns ``inf`` when a plastic strain lies outside the domain of its
    dissipation function.
    """
    if state.fresh:
        el, sigma = state.eps_e, state.sigma
    else:
        el = model.strain(state.du) - state.eps_p
        sigma = stress(model, el)
    # w_l = rho (1/2 C el : el + sigma0 : el) = rho/2 (sigma + sigma0) : el
    stored = 0.5 * np.sum(model.rho * ddot(sigma + model.sigma0, el))
    dissipated = np.sum(model.rho * model.criteria.dissipation(state.eps_p))
    return float(stored + dissipated - model.load @ state.du)
