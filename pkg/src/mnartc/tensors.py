"""Dense order-3 tensors, rank-R CP models, and masked observations.

A CP model stores R components: positive weights ``lambdas`` and three
factor matrices ``u``, ``v``, ``w`` whose columns have unit Euclidean
length.  The represented tensor is

    X[i, j, k] = sum_r lambdas[r] * u[i, r] * v[j, r] * w[k, r].

The parametrization is identified only up to a permutation of components
and paired sign flips of two factor columns at a time, which is why
comparisons go through :func:`align_components`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFactorError, DimensionError

__all__ = [
    "DenseTensor3",
    "CPModel",
    "MaskedData",
    "normalize_column",
    "reconstruct_entry",
    "reconstruct_full",
    "align_components",
]

# Columns shorter than this are treated as collapsed rather than renormalized.
_ZERO_NORM = 1e-150
_UNIT_TOL = 1e-10


def _as_float_array(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


@dataclass(frozen=True)
class DenseTensor3:
    """A dense order-3 tensor of finite float64 values."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.data, dtype=np.float64))
        if arr.ndim != 3:
            raise DimensionError(f"expected 3 modes, got {arr.ndim}")
        if min(arr.shape) < 1:
            raise DimensionError(f"all dims must be >= 1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor entries must be finite")
        object.__setattr__(self, "data", arr)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.data
        return self.data.astype(dtype)


@dataclass(frozen=True)
class CPModel:
    """Rank-R CP decomposition with unit-norm factor columns and positive weights.

    Parameters
    ----------
    lambdas : (R,) array of strictly positive component weights.
    u, v, w : (d1, R), (d2, R), (d3, R) factor matrices; every column has
        Euclidean norm 1 within 1e-10.
    """

    lambdas: np.ndarray
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        lam = _as_float_array(self.lambdas, "lambdas")
        u = _as_float_array(self.u, "u")
        v = _as_float_array(self.v, "v")
        w = _as_float_array(self.w, "w")
        if lam.ndim != 1:
            raise DimensionError("lambdas must be a vector")
        r = lam.shape[0]
        if r < 1:
            raise DimensionError("rank must be at least 1")
        for name, mat in (("u", u), ("v", v), ("w", w)):
            if mat.ndim != 2 or mat.shape[1] != r:
                raise DimensionError(f"{name} must have shape (d, {r})")
        if r > min(u.shape[0], v.shape[0], w.shape[0]):
            raise DimensionError(
                f"rank {r} exceeds the smallest mode size "
                f"{min(u.shape[0], v.shape[0], w.shape[0])}"
            )
        if np.any(lam <= 0.0):
            raise ValueError("all lambdas must be strictly positive")
        for name, mat in (("u", u), ("v", v), ("w", w)):
            norms = np.linalg.norm(mat, axis=0)
            if np.any(np.abs(norms - 1.0) > _UNIT_TOL):
                raise ValueError(f"columns of {name} must have unit norm")
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "w", w)

    @property
    def rank(self) -> int:
        return self.lambdas.shape[0]

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.u.shape[0], self.v.shape[0], self.w.shape[0])


@dataclass(frozen=True)
class MaskedData:
    """Observation pattern and observed values on an order-3 grid.

    ``mask`` is a boolean tensor marking observed cells.  ``omega`` lists the
    observed index triples in lexicographic order and ``y_obs`` carries the
    matching values, so ``y_obs[t]`` belongs to cell ``tuple(omega[t])``.
    """

    mask: np.ndarray
    omega: np.ndarray
    y_obs: np.ndarray

    def __post_init__(self):
        mask = np.ascontiguousarray(self.mask)
        if mask.dtype != np.bool_:
            raw = np.asarray(mask)
            if not np.isin(raw, (0, 1)).all():
                raise ValueError("mask entries must be 0 or 1")
            mask = raw.astype(bool)
        if mask.ndim != 3:
            raise DimensionError(f"mask must have 3 modes, got {mask.ndim}")
        omega = np.ascontiguousarray(np.asarray(self.omega, dtype=np.int64))
        y_obs = _as_float_array(self.y_obs, "y_obs")
        if omega.ndim != 2 or omega.shape[1] != 3:
            raise DimensionError("omega must have shape (n, 3)")
        if y_obs.shape != (omega.shape[0],):
            raise DimensionError("y_obs length must equal the number of observed cells")
        expected = np.argwhere(mask)
        if expected.shape != omega.shape or not np.array_equal(expected, omega):
            raise ValueError("omega must list exactly the observed cells in lexicographic order")
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "y_obs", y_obs)

    @classmethod
    def from_dense(cls, mask, y_full) -> "MaskedData":
        """Build from a boolean mask and a dense value tensor (values off the
        mask are ignored)."""
        mask = np.asarray(mask)
        y = np.asarray(y_full, dtype=np.float64)
        if mask.shape != y.shape:
            raise DimensionError("mask and values must share a shape")
        if mask.dtype != np.bool_:
            if not np.isin(mask, (0, 1)).all():
                raise ValueError("mask entries must be 0 or 1")
            mask = mask.astype(bool)
        omega = np.argwhere(mask)
        return cls(mask=mask, omega=omega, y_obs=y[mask])

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.mask.shape

    @property
    def n_observed(self) -> int:
        return self.omega.shape[0]

    def y_dense(self) -> np.ndarray:
        """Dense value tensor with zeros in unobserved cells."""
        out = np.zeros(self.mask.shape, dtype=np.float64)
        out[self.mask] = self.y_obs
        return out


def normalize_column(vec) -> tuple[np.ndarray, float]:
    """Return (unit vector, norm).  A collapsed column raises
    DegenerateFactorError instead of silently dividing by ~0."""
    v = _as_float_array(vec, "vector")
    if v.ndim != 1:
        raise DimensionError("expected a vector")
    nrm = float(np.linalg.norm(v))
    if nrm < _ZERO_NORM:
        raise DegenerateFactorError("cannot normalize a zero-length column")
    return v / nrm, nrm


def reconstruct_entry(model: CPModel, idx: tuple[int, int, int]) -> float:
    """Single cell of the represented tensor."""
    i, j, k = idx
    d1, d2, d3 = model.dims
    if not (0 <= i < d1 and 0 <= j < d2 and 0 <= k < d3):
        raise IndexError(f"index {idx} out of bounds for dims {model.dims}")
    return float(np.sum(model.lambdas * model.u[i] * model.v[j] * model.w[k]))


def reconstruct_full(model: CPModel) -> DenseTensor3:
    """Dense tensor represented by the model."""
    data = np.einsum("r,ir,jr,kr->ijk", model.lambdas, model.u, model.v, model.w)
    return DenseTensor3(data)


def _signed_similarity(est: CPModel, truth: CPModel, re: int, rt: int) -> float:
    return (
        abs(float(est.u[:, re] @ truth.u[:, rt]))
        + abs(float(est.v[:, re] @ truth.v[:, rt]))
        + abs(float(est.w[:, re] @ truth.w[:, rt]))
    )


# Sign patterns with product +1: identity or a flip of exactly two modes,
# which leaves the reconstruction and the weights unchanged.
_SIGN_PATTERNS = ((1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1))


def align_components(est: CPModel, truth: CPModel) -> CPModel:
    """Permute and sign-flip the components of ``est`` to best match ``truth``.

    Components are matched greedily by total absolute cosine similarity
    across the three modes; within each matched pair the signs of exactly
    zero or two factor columns are flipped to maximize the signed
    similarity, so the represented tensor is unchanged.
    """
    if est.rank != truth.rank:
        raise DimensionError(f"rank mismatch: {est.rank} vs {truth.rank}")
    if est.dims != truth.dims:
        raise DimensionError(f"dims mismatch: {est.dims} vs {truth.dims}")
    r = est.rank
    sim = np.empty((r, r))
    for a in range(r):
        for b in range(r):
            sim[a, b] = _signed_similarity(est, truth, a, b)
    perm = np.full(r, -1, dtype=np.int64)  # perm[target slot] = source component
    free_e = set(range(r))
    free_t = set(range(r))
    for _ in range(r):
        best = None
        for a in free_e:
            for b in free_t:
                if best is None or sim[a, b] > sim[best]:
                    best = (a, b)
        a, b = best
        perm[b] = a
        free_e.discard(a)
        free_t.discard(b)

    lam = est.lambdas[perm].copy()
    u = est.u[:, perm].copy()
    v = est.v[:, perm].copy()
    w = est.w[:, perm].copy()
    for b in range(r):
        dots = (
            float(u[:, b] @ truth.u[:, b]),
            float(v[:, b] @ truth.v[:, b]),
            float(w[:, b] @ truth.w[:, b]),
        )
        scores = [su * dots[0] + sv * dots[1] + sw * dots[2] for su, sv, sw in _SIGN_PATTERNS]
        su, sv, sw = _SIGN_PATTERNS[int(np.argmax(scores))]
        u[:, b] *= su
        v[:, b] *= sv
        w[:, b] *= sw
    return CPModel(lambdas=lam, u=u, v=v, w=w)
