"""Joint maximum-likelihood fitting of the CP model and the missingness model.

The optimizer is blockwise alternating ascent.  One outer sweep visits each
component r in turn and updates its mode-1 fiber, mode-2 fiber, mode-3
fiber (each renormalized to unit length, with the norm absorbed into the
weight so the represented tensor is unchanged), then the weight lambda[r];
after all components it updates theta = (b0, b1).  Every block is solved by
damped Newton: the objective is concave in each factor coordinate, in each
weight, and in theta, so Newton directions are ascent directions.  A Newton
step that overshoots is replaced by the guaranteed-ascent step g/M, where M
bounds the coordinate curvature along the whole line (gaussian and
bernoulli have such bounds; poisson falls back to halving), which keeps the
objective non-decreasing at every accepted step.

The fiber subproblems split into independent one-dimensional problems
(coordinate i of a mode-1 fiber only touches cells with first index i),
which is why whole fibers can be updated with vectorized Newton steps under
coordinatewise step acceptance.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from .errors import (
    DegenerateFactorError,
    DimensionError,
    NoDataError,
    NumericalFailureError,
)
from .families import BERNOULLI, GAUSSIAN, POISSON, Family
from .likelihood import ModelState
from .missingness import MissingnessParams
from .tensors import CPModel, MaskedData

__all__ = ["FitOptions", "FitReport", "initialize", "fit", "select_rank"]

_ALS_SWEEPS = 20
_RIDGE = 1e-12
_STEP_CAP = 4.0
_MAX_HALVINGS = 60
_CAP_SLACK = 1e-6


@dataclass(frozen=True)
class FitOptions:
    """Knobs of the alternating-ascent fitter.

    fix_b0 / fix_b1 pin a missingness coordinate at the given value and
    drop it from the theta update (fix_b1=0.0 yields a pure
    missing-completely-at-random fit).
    """

    max_outer_iters: int = 500
    rel_tol: float = 1e-8
    newton_max_inner: int = 20
    backtrack_factor: float = 0.5
    seed: int = 0
    fix_b0: float | None = None
    fix_b1: float | None = None

    def __post_init__(self):
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be at least 1")
        if not (np.isfinite(self.rel_tol) and self.rel_tol > 0):
            raise ValueError("rel_tol must be positive")
        if self.newton_max_inner < 1:
            raise ValueError("newton_max_inner must be at least 1")
        if not (0.0 < self.backtrack_factor < 1.0):
            raise ValueError("backtrack_factor must lie in (0, 1)")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ValueError("seed must be a nonnegative integer")
        for name in ("fix_b0", "fix_b1"):
            val = getattr(self, name)
            if val is not None and not np.isfinite(val):
                raise ValueError(f"{name} must be finite when set")


@dataclass(frozen=True)
class FitReport:
    """Result of one fit: final state plus convergence diagnostics."""

    state: ModelState
    objective_trace: np.ndarray
    outer_iters: int
    converged: bool
    wallclock: float
    warnings: tuple[str, ...] = ()


# ---------------------------------------------------------------------------
# dense-problem workspace


class _Workspace:
    """Include-folded dense views of the data, plus mode-major layouts."""

    def __init__(self, data: MaskedData, fam: Family, include):
        self.dims = data.dims
        self.fam = fam
        self.kind = fam.kind
        self.phi0 = fam.phi0
        self.cap = fam.natural_param_cap
        d = data.mask.astype(np.float64)
        yz = data.y_dense()
        if include is not None:
            incf = include.astype(np.float64)
            d = d * incf
            yz = yz * incf
            self.inc = incf
            self.n_cells = int(include.sum())
            self.n_obs = int((data.mask & include).sum())
        else:
            self.inc = None
            self.n_cells = int(np.prod(self.dims))
            self.n_obs = data.n_observed
        if self.n_obs == 0:
            raise NoDataError("no observed cells available to fit")
        self.d = d
        self.yz = yz
        self.d_flat = d.ravel()
        self.yz_flat = yz.ravel()
        self.inc_flat = None if self.inc is None else self.inc.ravel()
        self.d_mode = [_mode_flat(d, m) for m in range(3)]
        self.yz_mode = [_mode_flat(yz, m) for m in range(3)]
        self.inc_mode = (
            [None, None, None] if self.inc is None else [_mode_flat(self.inc, m) for m in range(3)]
        )

    def observed_slice_warnings(self, mask: np.ndarray, include) -> tuple[str, ...]:
        obs = mask if include is None else (mask & include)
        notes = []
        for m, axes in enumerate(((1, 2), (0, 2), (0, 1))):
            counts = obs.sum(axis=axes)
            for idx in np.nonzero(counts == 0)[0]:
                notes.append(f"mode-{m + 1} slice {int(idx)} has no observed cells")
        return tuple(notes)


def _mode_flat(a: np.ndarray, mode: int) -> np.ndarray:
    if mode == 0:
        return np.ascontiguousarray(a.reshape(a.shape[0], -1))
    return np.ascontiguousarray(np.moveaxis(a, mode, 0).reshape(a.shape[mode], -1))


def _psi_and_feasible(x: np.ndarray, kind: str, cap: float):
    """(psi(x), feasibility mask or None).  Poisson marks |x| > cap infeasible.

    The box test carries a small absolute slack: block updates recompute the
    same cell value along different float paths, and a state accepted inside
    the fitter's tighter candidate box (half this slack) must never turn
    infeasible on re-evaluation.
    """
    if kind == GAUSSIAN:
        return 0.5 * x * x, None
    if kind == BERNOULLI:
        return np.logaddexp(0.0, x), None
    bad = np.abs(x) > cap + _CAP_SLACK
    psi = np.exp(np.clip(x, -cap, cap))
    return psi, (bad if bad.any() else None)


def _softplus_sigmoid(z: np.ndarray):
    """softplus(z) and sigmoid(z) from one shared exp(-|z|)."""
    e = np.exp(-np.abs(z))
    soft = np.log1p(e) + np.maximum(z, 0.0)
    sig = np.where(z >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))
    return soft, sig


def _rows_fused(x: np.ndarray, ym: np.ndarray, dm: np.ndarray, incm, ws: _Workspace,
                b0: float, b1: float, margin: float = _CAP_SLACK):
    """Per-row objective plus per-cell score and curvature in one pass.

    Operates on a (rows, K) block whose rows are independent coordinate
    problems.  Value, first and second derivatives share the expensive
    exponentials.  Poisson rows with any |x| beyond cap + margin get -inf
    value; callers scoring fresh candidates pass a tighter margin than the
    one used on already-accepted states (see _fiber_newton).
    Returns (f_rows, score, curv).
    """
    bad = None
    if ws.kind == GAUSSIAN:
        psi = 0.5 * x * x
        psi1 = x
        psi2 = None
    elif ws.kind == BERNOULLI:
        psi, psi1 = _softplus_sigmoid(x)
        psi2 = psi1 * (1.0 - psi1)
    else:
        over = np.abs(x) > ws.cap + margin
        bad = over if over.any() else None
        psi = np.exp(np.clip(x, -ws.cap, ws.cap))
        psi1 = psi
        psi2 = psi
    score = (ym - dm * psi1) / ws.phi0
    curv = dm / ws.phi0 if psi2 is None else dm * psi2 / ws.phi0
    vals = (ym * x - dm * psi) / ws.phi0
    if b1 != 0.0:
        eta = b0 + b1 * x
        soft, sig = _softplus_sigmoid(eta)
        s = sig * (1.0 - sig)
        if incm is None:
            vals = vals + dm * eta - soft
            score = score + (dm - sig) * b1
            curv = curv + (b1 * b1) * s
        else:
            vals = vals + dm * eta - incm * soft
            score = score + (dm - incm * sig) * b1
            curv = curv + (b1 * b1) * (incm * s)
    else:
        soft0 = math.log1p(math.exp(-abs(b0))) + max(b0, 0.0)
        if incm is None:
            vals = vals + dm * b0 - soft0
        else:
            vals = vals + (b0 * dm - soft0 * incm)
    f = vals.sum(axis=1)
    if bad is not None:
        f[bad.any(axis=1)] = -np.inf
    return f, score, curv


def _full_objective(x_flat: np.ndarray, ws: _Workspace, b0: float, b1: float) -> float:
    psi, bad = _psi_and_feasible(x_flat, ws.kind, ws.cap)
    if bad is not None:
        return -np.inf
    eta = b0 + b1 * x_flat
    soft = np.logaddexp(0.0, eta)
    val = ((ws.yz_flat * x_flat - ws.d_flat * psi) / ws.phi0 + ws.d_flat * eta).sum()
    if ws.inc_flat is None:
        return float(val - soft.sum())
    return float(val - (ws.inc_flat * soft).sum())


def _curvature_bound(coef2, dm, incm, ws: _Workspace, b1: float):
    """Per-coordinate upper bound on the curvature along the whole line.

    Finite for gaussian (psi'' = 1) and bernoulli (psi'' <= 1/4); the mask
    term contributes at most b1^2/4 per cell.  None for poisson, whose
    curvature e^x is unbounded.
    """
    if ws.kind == POISSON:
        return None
    c2max = 1.0 if ws.kind == GAUSSIAN else 0.25
    w = dm * (c2max / ws.phi0)
    if b1 != 0.0:
        mask_w = 0.25 * (b1 * b1)
        w = w + (mask_w if incm is None else mask_w * incm)
    return w @ coef2 + _RIDGE


def _fiber_newton(u0, rest_m, coef, ym, dm, incm, ws: _Workspace, b0, b1, opts: FitOptions):
    """Maximize the objective over one fiber, coordinates independent.

    Damped Newton on all coordinates at once.  A coordinate whose Newton
    step decreased its row objective is redone with the guaranteed-ascent
    step g/M, where M bounds the curvature along the line (the objective is
    concave per coordinate, so that step cannot decrease it).  Poisson lacks
    such a bound and falls back to stepwise halving instead.
    """
    u = np.asarray(u0, dtype=np.float64).copy()
    coef2 = coef * coef
    mbound = _curvature_bound(coef2, dm, incm, ws, b1)
    # The incoming state is scored with the full feasibility slack while
    # fresh candidates must clear a tighter box.  Block updates re-evaluate
    # the same cell along different float paths, so an accepted state has to
    # sit far enough inside the evaluation boundary that roundoff drift can
    # never re-score it as infeasible.
    tight = 0.5 * _CAP_SLACK
    f, score, curv = _rows_fused(rest_m + u[:, None] * coef, ym, dm, incm, ws, b0, b1)
    for _ in range(opts.newton_max_inner):
        g = score @ coef
        h = curv @ coef2
        delta = g / (h + _RIDGE)
        np.clip(delta, -_STEP_CAP, _STEP_CAP, out=delta)
        if np.max(np.abs(delta)) <= 1e-13 * (1.0 + np.max(np.abs(u))):
            break
        cand = u + delta
        f2, score2, curv2 = _rows_fused(
            rest_m + cand[:, None] * coef, ym, dm, incm, ws, b0, b1, margin=tight)
        # ~(f2 >= f) also catches NaN rows; a non-finite candidate value is
        # never an improvement even when the incoming row value is -inf
        worse = ~(f2 >= f) | ~np.isfinite(f2)
        if worse.any():
            if mbound is not None:
                safe = np.clip(g / mbound, -_STEP_CAP, _STEP_CAP)
                cand = np.where(worse, u + safe, cand)
                f2, score2, curv2 = _rows_fused(
                    rest_m + cand[:, None] * coef, ym, dm, incm, ws, b0, b1, margin=tight)
                still = ~(f2 >= f)
                if still.any():
                    # float roundoff at a near-stationary coordinate: keep
                    # the incoming coordinate and its already-computed scores
                    cand[still] = u[still]
                    f2[still] = f[still]
                    score2[still] = score[still]
                    curv2[still] = curv[still]
            else:
                t = np.ones_like(u)
                for _ in range(_MAX_HALVINGS):
                    t[worse] *= opts.backtrack_factor
                    if np.max(t[worse]) < 2.0 ** -52:
                        t[worse] = 0.0
                    cand = u + t * delta
                    f2, score2, curv2 = _rows_fused(
                        rest_m + cand[:, None] * coef, ym, dm, incm, ws, b0, b1,
                        margin=tight)
                    worse = ~(f2 >= f) | ~np.isfinite(f2)
                    if not worse.any():
                        break
                if worse.any():
                    # a row that cannot improve keeps its current value and
                    # its already-computed scores
                    cand[worse] = u[worse]
                    f2[worse] = f[worse]
                    score2[worse] = score[worse]
                    curv2[worse] = curv[worse]
        # restored rows have f2 identical to f by construction; summing only
        # over changed rows keeps the gain finite even if a pair of matching
        # -inf values were ever carried through
        chg = f2 != f
        gain = float((f2[chg] - f[chg]).sum()) if chg.any() else 0.0
        u, f, score, curv = cand, f2, score2, curv2
        if gain <= 1e-13 * (1.0 + abs(float(f.sum()))):
            break
    return u


def _lambda_newton(lam, rest_flat, t_flat, ws: _Workspace, b0, b1, opts: FitOptions):
    """One component weight, treated as a single-coordinate fiber whose
    coefficient pattern spans every cell (sign left free here)."""
    inc_row = None if ws.inc_flat is None else ws.inc_flat[None, :]
    out = _fiber_newton(
        np.array([float(lam)]), rest_flat[None, :], t_flat,
        ws.yz_flat[None, :], ws.d_flat[None, :], inc_row, ws, b0, b1, opts,
    )
    return float(out[0])


def _theta_newton(x_flat, ws: _Workspace, b0, b1, free0, free1, opts: FitOptions,
                  max_inner=None):
    """Damped Newton for the logistic block; only free coordinates move."""
    if not (free0 or free1):
        return b0, b1
    max_inner = opts.newton_max_inner if max_inner is None else max_inner
    sd = float(ws.d_flat.sum())
    sdx = float((ws.d_flat * x_flat).sum())
    inc = ws.inc_flat

    def value(t0, t1):
        soft = np.logaddexp(0.0, t0 + t1 * x_flat)
        total = soft.sum() if inc is None else (inc * soft).sum()
        return t0 * sd + t1 * sdx - float(total)

    f = value(b0, b1)
    for _ in range(max_inner):
        sig = expit(b0 + b1 * x_flat)
        s = sig * (1.0 - sig)
        if inc is not None:
            sig = inc * sig
            s = inc * s
        g = np.array([sd - float(sig.sum()), sdx - float((sig * x_flat).sum())])
        s00 = float(s.sum())
        s01 = float((s * x_flat).sum())
        s11 = float((s * x_flat * x_flat).sum())
        if free0 and free1:
            hess = np.array([[s00, s01], [s01, s11]])
            try:
                step = np.linalg.solve(hess + _RIDGE * np.eye(2), g)
            except np.linalg.LinAlgError:
                step = g / (max(s00, s11) + _RIDGE)
        elif free0:
            step = np.array([g[0] / (s00 + _RIDGE), 0.0])
        else:
            step = np.array([0.0, g[1] / (s11 + _RIDGE)])
        norm = np.max(np.abs(step))
        if norm > _STEP_CAP:
            step *= _STEP_CAP / norm
        if norm <= 1e-13 * (1.0 + max(abs(b0), abs(b1))):
            break
        t = 1.0
        f_new = value(b0 + t * step[0], b1 + t * step[1])
        halved = 0
        while f_new < f and halved < _MAX_HALVINGS:
            t *= opts.backtrack_factor
            f_new = value(b0 + t * step[0], b1 + t * step[1])
            halved += 1
        if f_new < f:
            break
        gain = f_new - f
        b0 += t * step[0]
        b1 += t * step[1]
        f = f_new
        if gain <= 1e-13 * (1.0 + abs(f)):
            break
    return b0, b1


# ---------------------------------------------------------------------------
# initialization


def _als_factors(t: np.ndarray, rank: int, rng: np.random.Generator, sweeps: int = _ALS_SWEEPS):
    """Unconstrained least-squares CP fit of a dense surrogate tensor."""
    d1, d2, d3 = t.shape
    a = rng.standard_normal((d1, rank))
    b = rng.standard_normal((d2, rank))
    c = rng.standard_normal((d3, rank))
    b /= np.linalg.norm(b, axis=0, keepdims=True)
    c /= np.linalg.norm(c, axis=0, keepdims=True)
    t1 = t.reshape(d1, d2 * d3)
    t2 = np.moveaxis(t, 1, 0).reshape(d2, d1 * d3)
    t3 = np.moveaxis(t, 2, 0).reshape(d3, d1 * d2)

    def solve_mode(unfold, left, right):
        kr = (left[:, None, :] * right[None, :, :]).reshape(-1, rank)
        gram = (left.T @ left) * (right.T @ right)
        gram = gram + _RIDGE * (np.trace(gram) / rank + 1.0) * np.eye(rank)
        rhs = unfold @ kr
        return np.linalg.solve(gram, rhs.T).T

    for _ in range(sweeps):
        a = solve_mode(t1, b, c)
        b = solve_mode(t2, a, c)
        c = solve_mode(t3, a, b)
    return a, b, c


def _surrogate_tensor(data: MaskedData, fam: Family, include) -> tuple[np.ndarray, float]:
    obs = data.mask if include is None else (data.mask & include)
    n_cells = int(np.prod(data.dims)) if include is None else int(include.sum())
    n_obs = int(obs.sum())
    if n_obs == 0:
        raise NoDataError("no observed cells available for initialization")
    p_hat = n_obs / n_cells
    y = data.y_dense()
    if fam.kind == GAUSSIAN:
        link = y
    elif fam.kind == BERNOULLI:
        # shrink single observations toward 1/2 before the logit
        link = logit((y + 0.5) / 2.0)
    else:
        # log1p keeps zero counts at the imputation value: with sparse
        # counts, a link that maps y = 0 below zero would rank observed
        # zero-count cells under the imputed missing cells and seed the
        # warm start with an inverted missingness slope
        link = np.log1p(y)
    t = np.where(obs, link, 0.0) / p_hat
    return t, p_hat


def initialize(data: MaskedData, rank: int, fam: Family, opts: FitOptions,
               include=None) -> ModelState:
    """Warm start: least-squares CP fit of a rescaled link-scale surrogate,
    then a logistic fit of the mask on the implied natural parameters.

    Deterministic given ``opts.seed``.
    """
    _validate_rank(rank, data.dims)
    fam.check_support(data.y_obs)
    include = _coerce_include(include, data.dims)
    rng = np.random.default_rng(opts.seed)
    t, p_hat = _surrogate_tensor(data, fam, include)
    a, b, c = _als_factors(t, rank, rng)
    norms = [np.linalg.norm(m, axis=0) for m in (a, b, c)]
    lam = norms[0] * norms[1] * norms[2]
    scale = max(float(lam.max()), 1.0)
    factors = []
    for m, nrm in zip((a, b, c), norms):
        m = m.copy()
        dead = nrm < 1e-12
        for r in np.nonzero(dead)[0]:
            # collapsed column: restart that component at a random direction
            col = rng.standard_normal(m.shape[0])
            m[:, r] = col
            nrm[r] = np.linalg.norm(col)
        factors.append(m / nrm)
    lam = norms[0] * norms[1] * norms[2]
    lam = np.maximum(lam, 1e-6 * scale)
    order = np.argsort(-lam)
    lam = lam[order]
    u, v, w = (m[:, order] for m in factors)

    x0 = np.einsum("r,ir,jr,kr->ijk", lam, u, v, w)
    if fam.kind == POISSON:
        # keep the warm start strictly inside the natural-parameter cap
        peak = float(np.max(np.abs(x0)))
        limit = 0.9 * fam.natural_param_cap
        if peak > limit:
            lam = lam * (limit / peak)
            x0 *= limit / peak

    ws = _Workspace(data, fam, include)
    n_free = ws.n_cells
    p_clip = min(max(p_hat, 1.0 / (n_free + 2.0)), 1.0 - 1.0 / (n_free + 2.0))
    b0 = float(logit(p_clip))
    b1 = 0.0
    free0 = opts.fix_b0 is None
    free1 = opts.fix_b1 is None
    if not free0:
        b0 = float(opts.fix_b0)
    if not free1:
        b1 = float(opts.fix_b1)
    b0, b1 = _theta_newton(x0.ravel(), ws, b0, b1, free0, free1, opts, max_inner=50)
    b0 = float(np.clip(b0, -30.0, 30.0))
    b1 = float(np.clip(b1, -30.0, 30.0))
    if not free0:
        b0 = float(opts.fix_b0)
    if not free1:
        b1 = float(opts.fix_b1)
    cp = CPModel(lambdas=lam, u=u, v=v, w=w)
    return ModelState(cp=cp, theta=MissingnessParams(b0=b0, b1=b1), fam=fam)


# ---------------------------------------------------------------------------
# main fit loop


def _validate_rank(rank: int, dims) -> None:
    if rank < 1:
        raise DimensionError("rank must be at least 1")
    if rank > min(dims):
        raise DimensionError(f"rank {rank} exceeds the smallest mode size {min(dims)}")


def _coerce_include(include, dims):
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


_MODE_COEF = (
    lambda u, v, w: np.multiply.outer(v, w).ravel(),
    lambda u, v, w: np.multiply.outer(u, w).ravel(),
    lambda u, v, w: np.multiply.outer(u, v).ravel(),
)


def fit(data: MaskedData, rank: int, fam: Family, opts: FitOptions | None = None,
        include=None, init: ModelState | None = None) -> FitReport:
    """Blockwise alternating maximum likelihood.

    Parameters
    ----------
    data : observations on the full grid.
    rank : number of CP components to fit.
    fam : observation family.
    opts : fitter options; defaults used when None.
    include : optional boolean tensor restricting every likelihood sum to a
        subset of the grid (used by the sample-splitting test).
    init : optional starting state; when omitted, :func:`initialize` runs.

    Returns a FitReport whose objective trace is non-decreasing and whose
    final state satisfies the CP invariants (unit columns, positive weights).
    """
    started = time.perf_counter()
    opts = FitOptions() if opts is None else opts
    _validate_rank(rank, data.dims)
    fam.check_support(data.y_obs)
    include = _coerce_include(include, data.dims)
    if init is None:
        state0 = initialize(data, rank, fam, opts, include=include)
    else:
        if init.cp.dims != data.dims or init.cp.rank != rank:
            raise DimensionError("init state does not match the data grid or rank")
        state0 = init
    ws = _Workspace(data, fam, include)
    warnings = ws.observed_slice_warnings(data.mask, include)

    lam = state0.cp.lambdas.copy()
    factors = [state0.cp.u.copy(), state0.cp.v.copy(), state0.cp.w.copy()]
    b0, b1 = state0.theta.b0, state0.theta.b1
    if opts.fix_b0 is not None:
        b0 = float(opts.fix_b0)
    if opts.fix_b1 is not None:
        b1 = float(opts.fix_b1)
    free0 = opts.fix_b0 is None
    free1 = opts.fix_b1 is None

    xhat = np.einsum("r,ir,jr,kr->ijk", lam, factors[0], factors[1], factors[2])
    current = _full_objective(xhat.ravel(), ws, b0, b1)
    if not np.isfinite(current):
        raise NumericalFailureError("objective is not finite at the starting state")
    trace = [current]
    converged = False
    outer_done = 0

    for _ in range(opts.max_outer_iters):
        for r in range(rank):
            contrib = lam[r] * np.einsum(
                "i,j,k->ijk", factors[0][:, r], factors[1][:, r], factors[2][:, r]
            )
            rest = xhat - contrib
            rest_mode = [_mode_flat(rest, m) for m in range(3)]
            for m in range(3):
                coef = lam[r] * _MODE_COEF[m](factors[0][:, r], factors[1][:, r], factors[2][:, r])
                fiber = _fiber_newton(
                    factors[m][:, r], rest_mode[m], coef,
                    ws.yz_mode[m], ws.d_mode[m], ws.inc_mode[m], ws, b0, b1, opts,
                )
                nrm = float(np.linalg.norm(fiber))
                if nrm < 1e-150:
                    raise DegenerateFactorError(f"component {r} collapsed in mode {m + 1}")
                factors[m][:, r] = fiber / nrm
                lam[r] *= nrm
            t_flat = np.einsum(
                "i,j,k->ijk", factors[0][:, r], factors[1][:, r], factors[2][:, r]
            ).ravel()
            lam_signed = _lambda_newton(lam[r], rest.ravel(), t_flat, ws, b0, b1, opts)
            if lam_signed < 0.0:
                # absorb the sign into a single factor mode: negating one
                # mode negates the outer product, so the accepted
                # contribution lam * (u o v o w) is preserved while the
                # stored weight stays positive
                factors[0][:, r] *= -1.0
                lam[r] = -lam_signed
            elif lam_signed == 0.0:
                lam[r] = np.finfo(np.float64).tiny
                lam_signed = lam[r]
            else:
                lam[r] = lam_signed
            # t_flat was built pre-flip; pairing it with the signed weight
            # reproduces the accepted contribution either way
            xhat = rest + (lam_signed * t_flat).reshape(data.dims)
        b0, b1 = _theta_newton(xhat.ravel(), ws, b0, b1, free0, free1, opts)
        current = _full_objective(xhat.ravel(), ws, b0, b1)
        if not np.isfinite(current):
            raise NumericalFailureError("objective became non-finite during fitting")
        trace.append(current)
        outer_done += 1
        if abs(current - trace[-2]) <= opts.rel_tol * (1.0 + abs(current)):
            converged = True
            break

    for m in range(3):
        norms = np.linalg.norm(factors[m], axis=0)
        if np.any(norms < 1e-150):
            raise DegenerateFactorError("a factor column collapsed to zero")
        factors[m] /= norms
        lam *= norms
    cp = CPModel(lambdas=lam, u=factors[0], v=factors[1], w=factors[2])
    state = ModelState(cp=cp, theta=MissingnessParams(b0=float(b0), b1=float(b1)), fam=fam)
    return FitReport(
        state=state,
        objective_trace=np.asarray(trace),
        outer_iters=outer_done,
        converged=converged,
        wallclock=time.perf_counter() - started,
        warnings=warnings,
    )


def bic_score(dims, rank: int, n_observed: int, loglik: float) -> float:
    """((d1 + d2 + d3) * R + R) * log(n_observed) - 2 * loglik."""
    d1, d2, d3 = dims
    n_params = (d1 + d2 + d3) * rank + rank
    return n_params * math.log(n_observed) - 2.0 * loglik


def _best_rank(table) -> int | None:
    """Smallest-BIC rank from (rank, bic) pairs; ties go to the smaller rank."""
    best_rank, best_bic = None, float("inf")
    for r, bic in sorted(table, key=lambda item: item[0]):
        if bic < best_bic:
            best_rank, best_bic = r, bic
    return best_rank


def select_rank(data: MaskedData, fam: Family, candidates, opts: FitOptions | None = None,
                include=None) -> tuple[int, list[tuple[int, float]]]:
    """Fit every candidate rank and pick the smallest BIC.

    BIC = ((d1 + d2 + d3) * R + R) * log(n_observed) - 2 * max-log-likelihood.
    Ties break toward the smaller rank; a candidate whose fit raises a
    library error is recorded with BIC = +inf.

    Returns (selected rank, [(rank, bic), ...] in the order given).
    """
    opts = FitOptions() if opts is None else opts
    cands = [int(r) for r in candidates]
    if not cands:
        raise ValueError("candidates must be non-empty")
    if len(set(cands)) != len(cands):
        raise ValueError("candidates must be distinct")
    include = _coerce_include(include, data.dims)
    if include is None:
        n_obs = data.n_observed
    else:
        n_obs = int((data.mask & include).sum())
    if n_obs == 0:
        raise NoDataError("no observed cells")
    d1, d2, d3 = data.dims
    table: list[tuple[int, float]] = []
    for r in cands:
        try:
            report = fit(data, r, fam, opts, include=include)
            ll = float(report.objective_trace[-1])
            bic = bic_score((d1, d2, d3), r, n_obs, ll)
        except (DimensionError, DegenerateFactorError, NumericalFailureError, NoDataError):
            bic = float("inf")
        table.append((r, float(bic)))
    best_rank = _best_rank(table)
    if best_rank is None:
        raise NumericalFailureError("every candidate rank failed to fit")
    return best_rank, table
