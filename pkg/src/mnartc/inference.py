"""Sample-splitting test of missing-completely-at-random against
signal-dependent missingness.

The grid is split into a large part A1 and a small part A2.  The full model
is fitted on A1 alone (both value and indicator contributions of A2 cells
are excluded), the fitted natural-parameter tensor is evaluated at the A2
cells, and the observation indicators on A2 are regressed on those values
with a two-parameter logistic model.  The reported statistic is

    z = sqrt_matrix(info)[1, 1] * b1_hat,

where info is the observed information of the A2 logistic fit at its
maximizer; the two-sided p-value is 2 * (1 - Phi(|z|)), and the level-alpha
interval is b1_hat +/- z_{alpha/2} * invsqrt_matrix(info)[1, 1].  The plain
Wald ratio b1_hat / se(b1_hat) is reported alongside for comparison; the
two scalings agree when the information matrix is diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit
from scipy.stats import norm

from .errors import (
    CollinearDesignError,
    DegenerateResponseError,
    DimensionError,
    NumericalFailureError,
    SeparationError,
)
from .families import Family
from .fitting import FitOptions, fit
from .tensors import MaskedData, reconstruct_full

__all__ = ["SplitPlan", "TestResult", "split_indices", "logistic_fit_2param", "test_mnar"]

_MIN_A2 = 8
_DIVERGENCE_BOUND = 30.0
_GRAD_TOL = 1e-10


@dataclass(frozen=True)
class SplitPlan:
    """Disjoint index sets covering the grid; a2 is the held-out part."""

    a1: np.ndarray
    a2: np.ndarray
    seed: int

    def __post_init__(self):
        a1 = np.ascontiguousarray(np.asarray(self.a1, dtype=np.int64))
        a2 = np.ascontiguousarray(np.asarray(self.a2, dtype=np.int64))
        for name, arr in (("a1", a1), ("a2", a2)):
            if arr.ndim != 2 or arr.shape[1] != 3:
                raise DimensionError(f"{name} must have shape (n, 3)")
        if a2.shape[0] < _MIN_A2:
            raise ValueError(f"a2 must hold at least {_MIN_A2} cells")
        if a1.shape[0] < 1:
            raise ValueError("a1 must be non-empty")
        object.__setattr__(self, "a1", a1)
        object.__setattr__(self, "a2", a2)


@dataclass(frozen=True)
class TestResult:
    """Outcome of the missingness test on the held-out cells.

    ``z``/``p_value`` use the information-square-root scaling described in
    the module docstring; ``z_wald``/``p_value_wald`` use the plain
    standard-error ratio.
    """

    b0_hat: float
    b1_hat: float
    info: np.ndarray
    z: float
    p_value: float
    ci_lower: float
    ci_upper: float
    z_wald: float
    p_value_wald: float
    alpha: float


def split_indices(dims, a2_size: int, seed: int) -> SplitPlan:
    """Uniformly sample ``a2_size`` grid cells as A2; the rest form A1.

    Both listings come back in lexicographic order; deterministic in seed.
    """
    d1, d2, d3 = (int(d) for d in dims)
    total = d1 * d2 * d3
    a2_size = int(a2_size)
    if not (_MIN_A2 <= a2_size < total):
        raise ValueError(f"a2_size must lie in [{_MIN_A2}, {total})")
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(total, size=a2_size, replace=False))
    keep = np.ones(total, dtype=bool)
    keep[chosen] = False
    a1_flat = np.nonzero(keep)[0]
    a1 = np.stack(np.unravel_index(a1_flat, (d1, d2, d3)), axis=1)
    a2 = np.stack(np.unravel_index(chosen, (d1, d2, d3)), axis=1)
    return SplitPlan(a1=a1, a2=a2, seed=int(seed))


def logistic_fit_2param(x, d) -> tuple[np.ndarray, np.ndarray]:
    """Newton-Raphson MLE of P(D=1) = sigma(t0 + t1 * x).

    Returns (theta_hat, info) where info is the observed information
    sum_m w_m * (1, x_m)(1, x_m)^T with w_m = sigma_m * (1 - sigma_m),
    evaluated at the maximizer.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    d = np.asarray(d, dtype=np.float64).ravel()
    if x.shape != d.shape:
        raise DimensionError("x and d must have equal length")
    if x.size < _MIN_A2:
        raise ValueError(f"need at least {_MIN_A2} cells")
    if not np.all(np.isfinite(x)):
        raise ValueError("covariates must be finite")
    if not np.isin(d, (0.0, 1.0)).all():
        raise ValueError("indicators must be 0 or 1")
    rate = float(d.mean())
    if rate in (0.0, 1.0):
        raise DegenerateResponseError("indicators are all one class")
    if float(x.min()) == float(x.max()):
        raise CollinearDesignError("covariate is constant")

    theta = np.array([float(logit(rate)), 0.0])

    def loglik(t):
        eta = t[0] + t[1] * x
        return float((d * eta).sum() - np.logaddexp(0.0, eta).sum())

    def info_at(t):
        p = expit(t[0] + t[1] * x)
        s = p * (1.0 - p)
        return np.array([[s.sum(), (s * x).sum()], [(s * x).sum(), (s * x * x).sum()]])

    current = loglik(theta)
    for _ in range(100):
        p = expit(theta[0] + theta[1] * x)
        resid = d - p
        g = np.array([resid.sum(), (resid * x).sum()])
        if np.max(np.abs(g)) < _GRAD_TOL:
            return theta, info_at(theta)
        if np.max(np.abs(theta)) > _DIVERGENCE_BOUND:
            raise SeparationError("logistic fit diverged; classes appear separable")
        hess = info_at(theta)
        try:
            step = np.linalg.solve(hess, g)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailureError("singular information matrix") from exc
        t = 1.0
        cand = theta + step
        new = loglik(cand)
        halved = 0
        # near the optimum the per-step improvement drops below the float
        # resolution of the log-likelihood; rejecting such steps stalls the
        # iteration above the gradient tolerance, so allow roundoff-sized dips
        slack = 16.0 * np.finfo(np.float64).eps * (1.0 + abs(current))
        while new < current - slack and halved < 60:
            t *= 0.5
            cand = theta + t * step
            new = loglik(cand)
            halved += 1
        theta, current = cand, new
    if np.max(np.abs(theta)) > _DIVERGENCE_BOUND:
        raise SeparationError("logistic fit diverged; classes appear separable")
    raise NumericalFailureError("logistic fit did not converge in 100 iterations")


def _sym_sqrt_and_inv_sqrt(info: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    vals, vecs = np.linalg.eigh(info)
    if np.any(vals <= 0.0):
        raise NumericalFailureError("information matrix is not positive definite")
    root = vecs @ np.diag(np.sqrt(vals)) @ vecs.T
    inv_root = vecs @ np.diag(1.0 / np.sqrt(vals)) @ vecs.T
    return root, inv_root


def test_mnar(data: MaskedData, fam: Family, rank: int, opts: FitOptions | None = None,
              a2_size: int = 500, alpha: float = 0.05) -> TestResult:
    """Run the full split / fit / regress pipeline on one data set.

    The A1 fit sees neither values nor indicators of A2 cells; the second
    stage sees A2 only through the fitted natural parameters and the A2
    indicators.
    """
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must lie in (0, 1)")
    opts = FitOptions() if opts is None else opts
    plan = split_indices(data.dims, a2_size, opts.seed)
    include = np.zeros(data.dims, dtype=bool)
    include[plan.a1[:, 0], plan.a1[:, 1], plan.a1[:, 2]] = True
    report = fit(data, rank, fam, opts, include=include)
    x_hat = reconstruct_full(report.state.cp).data
    rows = (plan.a2[:, 0], plan.a2[:, 1], plan.a2[:, 2])
    x2 = x_hat[rows]
    d2 = data.mask[rows].astype(np.float64)
    theta2, info = logistic_fit_2param(x2, d2)
    root, inv_root = _sym_sqrt_and_inv_sqrt(info)
    b0_hat, b1_hat = float(theta2[0]), float(theta2[1])
    z = float(root[1, 1] * b1_hat)
    p_value = float(2.0 * norm.sf(abs(z)))
    zq = float(norm.ppf(1.0 - alpha / 2.0))
    half = zq * float(inv_root[1, 1])
    se = float(np.sqrt(np.linalg.inv(info)[1, 1]))
    z_wald = b1_hat / se
    return TestResult(
        b0_hat=b0_hat,
        b1_hat=b1_hat,
        info=info,
        z=z,
        p_value=p_value,
        ci_lower=b1_hat - half,
        ci_upper=b1_hat + half,
        z_wald=float(z_wald),
        p_value_wald=float(2.0 * norm.sf(abs(z_wald))),
        alpha=float(alpha),
    )
