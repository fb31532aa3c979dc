"""Exponential-family observation models with natural parameter x.

Per-cell log-likelihood, up to an additive term free of x:

    (y * x - psi(x)) / phi0

where psi is the family's cumulant.  Gaussian uses psi(x) = x^2 / 2 with a
known dispersion phi0 (the noise variance); Bernoulli uses
psi(x) = log(1 + e^x); Poisson uses psi(x) = e^x.  The first derivative of
psi is the mean function, the second its variance function.

Poisson natural parameters are capped (default |x| <= 50) to flag model
misuse loudly instead of silently saturating e^x.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import NaturalParameterOverflowError, SupportError

__all__ = ["Family", "GAUSSIAN", "BERNOULLI", "POISSON", "FAMILY_KINDS"]

GAUSSIAN = "gaussian"
BERNOULLI = "bernoulli"
POISSON = "poisson"
FAMILY_KINDS = (GAUSSIAN, BERNOULLI, POISSON)


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


@dataclass(frozen=True)
class Family:
    """One of the supported observation families.

    Parameters
    ----------
    kind : "gaussian", "bernoulli", or "poisson".
    phi0 : known dispersion; must be 1 except for the Gaussian family,
        where it is the noise variance.
    natural_param_cap : bound enforced on |x| for the Poisson family.
    """

    kind: str
    phi0: float = 1.0
    natural_param_cap: float = 50.0

    def __post_init__(self):
        if self.kind not in FAMILY_KINDS:
            raise ValueError(f"unknown family kind {self.kind!r}")
        if not (np.isfinite(self.phi0) and self.phi0 > 0):
            raise ValueError("phi0 must be positive and finite")
        if self.kind != GAUSSIAN and self.phi0 != 1.0:
            raise ValueError(f"phi0 is fixed to 1 for the {self.kind} family")
        if not (np.isfinite(self.natural_param_cap) and self.natural_param_cap > 0):
            raise ValueError("natural_param_cap must be positive and finite")

    def _check_cap(self, x: np.ndarray) -> None:
        if self.kind == POISSON and np.any(np.abs(x) > self.natural_param_cap):
            worst = float(np.max(np.abs(x)))
            raise NaturalParameterOverflowError(
                f"|x| = {worst:.6g} exceeds the Poisson cap {self.natural_param_cap:g}"
            )

    def cumulant(self, x):
        """psi(x), elementwise."""
        x = np.asarray(x, dtype=np.float64)
        self._check_cap(x)
        if self.kind == GAUSSIAN:
            return 0.5 * x * x
        if self.kind == BERNOULLI:
            return _softplus(x)
        return np.exp(x)

    def cumulant_d1(self, x):
        """psi'(x): the mean of Y at natural parameter x."""
        x = np.asarray(x, dtype=np.float64)
        self._check_cap(x)
        if self.kind == GAUSSIAN:
            return x.copy()
        if self.kind == BERNOULLI:
            return expit(x)
        return np.exp(x)

    def cumulant_d2(self, x):
        """psi''(x): the variance function; nonnegative everywhere."""
        x = np.asarray(x, dtype=np.float64)
        self._check_cap(x)
        if self.kind == GAUSSIAN:
            return np.ones_like(x)
        if self.kind == BERNOULLI:
            p = expit(x)
            return p * (1.0 - p)
        return np.exp(x)

    def check_support(self, y) -> None:
        """Raise SupportError if any value lies outside the family's support."""
        y = np.asarray(y, dtype=np.float64)
        if not np.all(np.isfinite(y)):
            raise SupportError("observed values must be finite")
        if self.kind == BERNOULLI:
            if not np.isin(y, (0.0, 1.0)).all():
                raise SupportError("bernoulli values must be 0 or 1")
        elif self.kind == POISSON:
            if np.any(y < 0) or np.any(y != np.floor(y)):
                raise SupportError("poisson values must be nonnegative integers")

    def loglik_entry(self, y, x):
        """(y*x - psi(x)) / phi0, elementwise; the carrier term is dropped."""
        y = np.asarray(y, dtype=np.float64)
        x = np.asarray(x, dtype=np.float64)
        self.check_support(y)
        val = (y * x - self.cumulant(x)) / self.phi0
        if val.ndim == 0:
            return float(val)
        return val

    def sample(self, x, rng: np.random.Generator):
        """Draw Y at natural parameter x (elementwise over arrays)."""
        x = np.asarray(x, dtype=np.float64)
        self._check_cap(x)
        if self.kind == GAUSSIAN:
            return x + np.sqrt(self.phi0) * rng.standard_normal(x.shape)
        if self.kind == BERNOULLI:
            return (rng.random(x.shape) < expit(x)).astype(np.float64)
        return rng.poisson(np.exp(x)).astype(np.float64)
