"""Logistic observation-indicator model.

Each cell of the grid is observed independently with probability
sigma(b0 + b1 * x) where x is the cell's natural parameter and sigma is the
logistic function.  b1 = 0 recovers missing-completely-at-random; b1 != 0
ties missingness to the (partly unobserved) signal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import DimensionError, ProbabilityRangeError

__all__ = [
    "MissingnessParams",
    "SliceDiagnostics",
    "obs_prob",
    "mask_loglik",
    "mask_loglik_grad_theta",
    "slice_diagnostics",
]

# Clip bounds keeping probabilities inside the open interval (0, 1).
_P_LO = 1e-300
_P_HI = float(np.nextafter(1.0, 0.0))


@dataclass(frozen=True)
class MissingnessParams:
    """Intercept and slope of the logistic observation model."""

    b0: float
    b1: float

    def __post_init__(self):
        if not (np.isfinite(self.b0) and np.isfinite(self.b1)):
            raise ValueError("b0 and b1 must be finite")
        object.__setattr__(self, "b0", float(self.b0))
        object.__setattr__(self, "b1", float(self.b1))


@dataclass(frozen=True)
class SliceDiagnostics:
    """Worst-slice summaries of an observation-probability tensor.

    p_bar is the smallest mean observation probability over every slice of
    every mode; q_bar is the same minimum applied to p * (1 - p).  Small
    values flag slices that carry almost no (or almost deterministic)
    observation signal.
    """

    p_bar: float
    q_bar: float

    def __post_init__(self):
        if not (0.0 < self.p_bar <= 1.0):
            raise ProbabilityRangeError("p_bar must lie in (0, 1]")
        if not (0.0 < self.q_bar <= 0.25):
            raise ProbabilityRangeError("q_bar must lie in (0, 0.25]")


def obs_prob(theta: MissingnessParams, x):
    """Observation probability sigma(b0 + b1 * x), elementwise.

    Outputs are clipped into the open interval (0, 1) so downstream code
    can take logs of either p or 1 - p for finite inputs.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("natural parameters must be finite")
    p = expit(theta.b0 + theta.b1 * x)
    p = np.clip(p, _P_LO, _P_HI)
    if p.ndim == 0:
        return float(p)
    return p


def _check_pair(x, mask):
    x = np.asarray(x, dtype=np.float64)
    mask = np.asarray(mask)
    if mask.dtype != np.bool_:
        if not np.isin(mask, (0, 1)).all():
            raise ValueError("mask entries must be 0 or 1")
        mask = mask.astype(bool)
    if x.shape != mask.shape:
        raise DimensionError(f"shape mismatch: {x.shape} vs {mask.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("natural parameters must be finite")
    return x, mask


def mask_loglik(theta: MissingnessParams, x_full, mask) -> float:
    """Log-likelihood of the observation indicators.

    sum over observed cells of (b0 + b1*x) minus sum over all cells of
    log(1 + exp(b0 + b1*x)); evaluated via softplus so saturated
    probabilities stay finite.
    """
    x, mask = _check_pair(x_full, mask)
    eta = theta.b0 + theta.b1 * x
    return float(eta[mask].sum() - np.logaddexp(0.0, eta).sum())


def mask_loglik_grad_theta(theta: MissingnessParams, x_full, mask) -> np.ndarray:
    """Gradient of mask_loglik in (b0, b1): sums of (D - p) and (D - p) * x."""
    x, mask = _check_pair(x_full, mask)
    resid = mask.astype(np.float64) - expit(theta.b0 + theta.b1 * x)
    return np.array([resid.sum(), (resid * x).sum()])


def slice_diagnostics(p_full) -> SliceDiagnostics:
    """Minimum slice means of p and of p * (1 - p) across all three modes."""
    p = np.asarray(p_full, dtype=np.float64)
    if p.ndim != 3:
        raise DimensionError(f"expected 3 modes, got {p.ndim}")
    if np.any(p <= 0.0) or np.any(p >= 1.0) or not np.all(np.isfinite(p)):
        raise ProbabilityRangeError("probabilities must lie strictly inside (0, 1)")
    q = p * (1.0 - p)
    p_bar = min(
        float(p.mean(axis=(1, 2)).min()),
        float(p.mean(axis=(0, 2)).min()),
        float(p.mean(axis=(0, 1)).min()),
    )
    q_bar = min(
        float(q.mean(axis=(1, 2)).min()),
        float(q.mean(axis=(0, 2)).min()),
        float(q.mean(axis=(0, 1)).min()),
    )
    return SliceDiagnostics(p_bar=p_bar, q_bar=q_bar)
