"""Joint log-likelihood of observed values and observation indicators.

For natural-parameter tensor X (from a CP model), observation mask D with
observed values Y, and logistic parameters theta = (b0, b1):

    L = sum over observed cells of (Y*X - psi(X)) / phi0
      + sum over observed cells of (b0 + b1*X)
      - sum over all cells of log(1 + exp(b0 + b1*X))

Carrier terms free of the parameters are dropped throughout.  An optional
boolean ``include`` tensor restricts every sum (both value and indicator
contributions) to a subset of the grid, which is what the sample-splitting
test uses to hold out cells.

Per-cell derivative identities used by every gradient here:

    dL/dX   = D * (Y - psi'(X)) / phi0 + (D - sigma) * b1
    d2L/dX2 = -(D * psi''(X) / phi0 + b1^2 * sigma * (1 - sigma))

with sigma = sigma(b0 + b1*X); the second line is nonpositive, so the
objective is concave in each factor coordinate and in each weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import DimensionError
from .families import Family
from .missingness import MissingnessParams
from .tensors import CPModel, MaskedData

__all__ = [
    "ModelState",
    "objective",
    "objective_arrays",
    "cell_score_curvature",
    "grad_u_entry",
    "grad_v_entry",
    "grad_w_entry",
    "grad_lambda",
    "grad_theta",
    "hess_u_entry",
    "hess_v_entry",
    "hess_w_entry",
    "hess_lambda",
    "hess_theta",
]


@dataclass(frozen=True)
class ModelState:
    """Complete parameter state: CP tensor model, logistic missingness, family."""

    cp: CPModel
    theta: MissingnessParams
    fam: Family


def _check_include(include, dims) -> np.ndarray | None:
    if include is None:
        return None
    inc = np.asarray(include)
    if inc.dtype != np.bool_:
        if not np.isin(inc, (0, 1)).all():
            raise ValueError("include entries must be 0 or 1")
        inc = inc.astype(bool)
    if inc.shape != tuple(dims):
        raise DimensionError(f"include shape {inc.shape} does not match dims {tuple(dims)}")
    return inc


def _reconstruct_arrays(lambdas, u, v, w) -> np.ndarray:
    return np.einsum("r,ir,jr,kr->ijk", lambdas, u, v, w)


def objective_arrays(lambdas, u, v, w, b0, b1, fam: Family, data: MaskedData, include=None) -> float:
    """Objective evaluated from raw parameter arrays.

    Skips the CPModel invariants (unit columns, positive weights), which
    makes it usable under perturbations, e.g. finite-difference checks.
    """
    lambdas = np.asarray(lambdas, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if data.dims != (u.shape[0], v.shape[0], w.shape[0]):
        raise DimensionError("factor dims do not match the data grid")
    inc = _check_include(include, data.dims)
    x = _reconstruct_arrays(lambdas, u, v, w)
    eta = b0 + b1 * x
    d = data.mask
    yx = data.y_obs * x[d]
    psi = fam.cumulant(x[d])
    data_terms = (yx - psi) / fam.phi0 + eta[d]
    soft = np.logaddexp(0.0, eta)
    if inc is None:
        return float(data_terms.sum() - soft.sum())
    inc_obs = inc[d]
    return float(data_terms[inc_obs].sum() - soft[inc].sum())


def objective(state: ModelState, data: MaskedData, include=None) -> float:
    """Joint log-likelihood of values and indicators at ``state``."""
    fam = state.fam
    fam.check_support(data.y_obs)
    return objective_arrays(
        state.cp.lambdas,
        state.cp.u,
        state.cp.v,
        state.cp.w,
        state.theta.b0,
        state.theta.b1,
        fam,
        data,
        include=include,
    )


def cell_score_curvature(state: ModelState, data: MaskedData, include=None):
    """Per-cell first and (negated) second derivative of the objective in X.

    Returns (score, curv) where score = dL/dX and curv = -d2L/dX2 >= 0,
    both dense tensors with excluded cells zeroed.
    """
    fam = state.fam
    b0, b1 = state.theta.b0, state.theta.b1
    x = _reconstruct_arrays(state.cp.lambdas, state.cp.u, state.cp.v, state.cp.w)
    inc = _check_include(include, data.dims)
    d = data.mask.astype(np.float64)
    yz = data.y_dense()
    sig = expit(b0 + b1 * x)
    score = d * (yz - fam.cumulant_d1(x)) / fam.phi0 + (d - sig) * b1
    curv = d * fam.cumulant_d2(x) / fam.phi0 + (b1 * b1) * sig * (1.0 - sig)
    if inc is not None:
        score = np.where(inc, score, 0.0)
        curv = np.where(inc, curv, 0.0)
    return score, curv


def _component_check(state: ModelState, r: int) -> None:
    if not (0 <= r < state.cp.rank):
        raise IndexError(f"component {r} out of range for rank {state.cp.rank}")


def _fiber_grad(state, data, mode, r, include):
    score, _ = cell_score_curvature(state, data, include)
    lam = state.cp.lambdas[r]
    if mode == 0:
        coef = lam * np.multiply.outer(state.cp.v[:, r], state.cp.w[:, r])
        return np.tensordot(score, coef, axes=([1, 2], [0, 1]))
    if mode == 1:
        coef = lam * np.multiply.outer(state.cp.u[:, r], state.cp.w[:, r])
        return np.tensordot(score, coef, axes=([0, 2], [0, 1]))
    coef = lam * np.multiply.outer(state.cp.u[:, r], state.cp.v[:, r])
    return np.tensordot(score, coef, axes=([0, 1], [0, 1]))


def _fiber_hess(state, data, mode, r, include):
    _, curv = cell_score_curvature(state, data, include)
    lam = state.cp.lambdas[r]
    if mode == 0:
        coef = lam * np.multiply.outer(state.cp.v[:, r], state.cp.w[:, r])
        return -np.tensordot(curv, coef * coef, axes=([1, 2], [0, 1]))
    if mode == 1:
        coef = lam * np.multiply.outer(state.cp.u[:, r], state.cp.w[:, r])
        return -np.tensordot(curv, coef * coef, axes=([0, 2], [0, 1]))
    coef = lam * np.multiply.outer(state.cp.u[:, r], state.cp.v[:, r])
    return -np.tensordot(curv, coef * coef, axes=([0, 1], [0, 1]))


def grad_u_entry(state: ModelState, data: MaskedData, r: int, i: int, include=None) -> float:
    """dL/du[i, r] with every other parameter held fixed."""
    _component_check(state, r)
    return float(_fiber_grad(state, data, 0, r, include)[i])


def grad_v_entry(state: ModelState, data: MaskedData, r: int, j: int, include=None) -> float:
    _component_check(state, r)
    return float(_fiber_grad(state, data, 1, r, include)[j])


def grad_w_entry(state: ModelState, data: MaskedData, r: int, k: int, include=None) -> float:
    _component_check(state, r)
    return float(_fiber_grad(state, data, 2, r, include)[k])


def hess_u_entry(state: ModelState, data: MaskedData, r: int, i: int, include=None) -> float:
    """d2L/du[i, r]^2; nonpositive everywhere (coordinate concavity)."""
    _component_check(state, r)
    return float(_fiber_hess(state, data, 0, r, include)[i])


def hess_v_entry(state: ModelState, data: MaskedData, r: int, j: int, include=None) -> float:
    _component_check(state, r)
    return float(_fiber_hess(state, data, 1, r, include)[j])


def hess_w_entry(state: ModelState, data: MaskedData, r: int, k: int, include=None) -> float:
    _component_check(state, r)
    return float(_fiber_hess(state, data, 2, r, include)[k])


def grad_lambda(state: ModelState, data: MaskedData, r: int, include=None) -> float:
    """dL/dlambda[r]."""
    _component_check(state, r)
    score, _ = cell_score_curvature(state, data, include)
    t = np.einsum("i,j,k->ijk", state.cp.u[:, r], state.cp.v[:, r], state.cp.w[:, r])
    return float((score * t).sum())


def hess_lambda(state: ModelState, data: MaskedData, r: int, include=None) -> float:
    """d2L/dlambda[r]^2; nonpositive everywhere."""
    _component_check(state, r)
    _, curv = cell_score_curvature(state, data, include)
    t = np.einsum("i,j,k->ijk", state.cp.u[:, r], state.cp.v[:, r], state.cp.w[:, r])
    return float(-(curv * t * t).sum())


def grad_theta(state: ModelState, data: MaskedData, include=None) -> np.ndarray:
    """Gradient in (b0, b1): sums of (D - sigma) and (D - sigma) * X."""
    x = _reconstruct_arrays(state.cp.lambdas, state.cp.u, state.cp.v, state.cp.w)
    inc = _check_include(include, data.dims)
    resid = data.mask.astype(np.float64) - expit(state.theta.b0 + state.theta.b1 * x)
    if inc is not None:
        resid = np.where(inc, resid, 0.0)
    return np.array([resid.sum(), (resid * x).sum()])


def hess_theta(state: ModelState, data: MaskedData, include=None) -> np.ndarray:
    """2x2 Hessian in (b0, b1); negative semidefinite."""
    x = _reconstruct_arrays(state.cp.lambdas, state.cp.u, state.cp.v, state.cp.w)
    inc = _check_include(include, data.dims)
    sig = expit(state.theta.b0 + state.theta.b1 * x)
    s = sig * (1.0 - sig)
    if inc is not None:
        s = np.where(inc, s, 0.0)
    s00 = s.sum()
    s01 = (s * x).sum()
    s11 = (s * x * x).sum()
    return -np.array([[s00, s01], [s01, s11]])
