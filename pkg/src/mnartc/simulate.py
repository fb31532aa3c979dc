"""Simulation harness: data generators, error metrics, experiment driver.

Generators draw a ground-truth CP model with weights c * sqrt(d1*d2*d3)
(the classic c * d^(3/2) scaling on cubic grids), sample values from the
observation family at the implied natural parameters, and sample the mask
from the logistic missingness model.  Factor laws:

  * ``gaussian_shifted``: factor entries N(0.5, 1), columns normalized.
  * ``log_uniform``: factor entries log(Uniform(0, 1)), columns normalized.

Error metrics follow the evaluation used throughout: relative RMSE over
the missing cells, AUC over the missing cells for binary data, and a
worst-component parameter distance computed after alignment.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from .errors import DimensionError, MetricError, MnartcError
from .families import BERNOULLI, GAUSSIAN, Family
from .fitting import FitOptions, fit, select_rank
from .inference import TestResult, test_mnar
from .likelihood import ModelState
from .missingness import MissingnessParams
from .tensors import CPModel, DenseTensor3, MaskedData, align_components, reconstruct_full

__all__ = [
    "ScenarioSpec",
    "ReplicateResult",
    "generate",
    "rmse_missing",
    "auc_missing",
    "d_metric",
    "run_experiment",
    "PROTOCOLS",
]

FACTOR_LAWS = ("gaussian_shifted", "log_uniform")
PROTOCOLS = ("completion", "rank_tuning", "testing")
_REDRAW_NORM = 1e-8


@dataclass(frozen=True)
class ScenarioSpec:
    """One simulation scenario; ``seed`` controls every draw."""

    family: Family
    dims: tuple[int, int, int]
    rank: int
    c: float
    b0_star: float
    b1_star: float
    factor_law: str = "gaussian_shifted"
    replicates: int = 1
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.family, str):
            object.__setattr__(self, "family", Family(kind=self.family))
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise DimensionError("dims must be three positive sizes")
        if not (1 <= self.rank <= min(dims)):
            raise DimensionError("rank must lie in [1, min(dims)]")
        if not (np.isfinite(self.c) and self.c > 0):
            raise ValueError("c must be positive")
        if not (np.isfinite(self.b0_star) and np.isfinite(self.b1_star)):
            raise ValueError("b0_star and b1_star must be finite")
        if self.factor_law not in FACTOR_LAWS:
            raise ValueError(f"unknown factor law {self.factor_law!r}")
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ValueError("seed must be a nonnegative integer")
        object.__setattr__(self, "dims", dims)


@dataclass(frozen=True)
class ReplicateResult:
    """Metrics from one replicate; unused fields stay None."""

    seed: int
    rmse_missing: float | None = None
    auc_missing: float | None = None
    d_metric: float | None = None
    baseline_rmse: float | None = None
    selected_rank: int | None = None
    test: TestResult | None = None


def _draw_column(rng: np.random.Generator, size: int, law: str) -> np.ndarray:
    for _ in range(100):
        if law == "gaussian_shifted":
            col = 0.5 + rng.standard_normal(size)
        else:
            col = np.log(rng.uniform(0.0, 1.0, size))
        nrm = np.linalg.norm(col)
        if nrm >= _REDRAW_NORM:
            return col / nrm
    raise MetricError("factor column kept collapsing during generation")


def generate(spec: ScenarioSpec, return_full: bool = False):
    """Draw one data set from the scenario.

    Returns (truth, data); with ``return_full=True`` also returns the dense
    value tensor, which evaluation on the missing cells needs.  Draw order
    (per-component u, v, w columns, then values, then the mask) is fixed, so
    results are reproducible from ``spec.seed`` alone.
    """
    rng = np.random.default_rng(spec.seed)
    d1, d2, d3 = spec.dims
    u = np.empty((d1, spec.rank))
    v = np.empty((d2, spec.rank))
    w = np.empty((d3, spec.rank))
    for r in range(spec.rank):
        u[:, r] = _draw_column(rng, d1, spec.factor_law)
        v[:, r] = _draw_column(rng, d2, spec.factor_law)
        w[:, r] = _draw_column(rng, d3, spec.factor_law)
    lam = np.full(spec.rank, spec.c * math.sqrt(d1 * d2 * d3))
    cp = CPModel(lambdas=lam, u=u, v=v, w=w)
    truth = ModelState(
        cp=cp,
        theta=MissingnessParams(b0=spec.b0_star, b1=spec.b1_star),
        fam=spec.family,
    )
    x_star = np.einsum("r,ir,jr,kr->ijk", lam, u, v, w)
    y_full = spec.family.sample(x_star, rng)
    p_obs = expit(spec.b0_star + spec.b1_star * x_star)
    mask = rng.random(spec.dims) < p_obs
    data = MaskedData.from_dense(mask, y_full)
    if return_full:
        return truth, data, DenseTensor3(y_full)
    return truth, data


def rmse_missing(x_hat, x_star, mask) -> float:
    """Relative Frobenius error over the unobserved cells:
    ||(1-D)*(x_hat - x_star)|| / ||(1-D)*x_star||."""
    a = np.asarray(x_hat, dtype=np.float64)
    b = np.asarray(x_star, dtype=np.float64)
    m = np.asarray(mask).astype(bool)
    if a.shape != b.shape or a.shape != m.shape:
        raise DimensionError("tensors and mask must share a shape")
    hidden = ~m
    if not hidden.any():
        raise MetricError("no missing cells: the metric is undefined")
    denom = float(np.linalg.norm(b[hidden]))
    if denom == 0.0:
        raise MetricError("reference tensor is zero on the missing cells")
    return float(np.linalg.norm(a[hidden] - b[hidden]) / denom)


def auc_missing(scores, labels) -> float:
    """Rank-based AUC with midrank tie handling:
    P(score_pos > score_neg) + 0.5 * P(tie)."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise DimensionError("scores and labels must have equal length")
    if not np.isin(y, (0, 1)).all():
        raise MetricError("labels must be 0 or 1")
    y = y.astype(bool)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("labels contain a single class: AUC is undefined")
    ranks = rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _relative_or_absolute(est: float, ref: float) -> float:
    if ref == 0.0:
        return abs(est)
    return abs(est - ref) / abs(ref)


def d_metric(est: ModelState, truth: ModelState) -> float:
    """Worst-case parameter error between aligned states.

    Maximum over components of the factor-column l2 errors and the relative
    weight error, together with the relative (absolute, when the reference
    is zero) errors of b0 and b1.  Callers align ``est`` to ``truth`` with
    :func:`align_components` first; this function compares slot by slot.
    """
    if est.cp.rank != truth.cp.rank:
        raise DimensionError("ranks differ")
    if est.cp.dims != truth.cp.dims:
        raise DimensionError("dims differ")
    worst = 0.0
    for r in range(truth.cp.rank):
        worst = max(
            worst,
            float(np.linalg.norm(est.cp.u[:, r] - truth.cp.u[:, r])),
            float(np.linalg.norm(est.cp.v[:, r] - truth.cp.v[:, r])),
            float(np.linalg.norm(est.cp.w[:, r] - truth.cp.w[:, r])),
            abs(est.cp.lambdas[r] - truth.cp.lambdas[r]) / abs(truth.cp.lambdas[r]),
        )
    worst = max(worst, _relative_or_absolute(est.theta.b0, truth.theta.b0))
    worst = max(worst, _relative_or_absolute(est.theta.b1, truth.theta.b1))
    return worst


def _baseline_natural(data: MaskedData, fam: Family) -> float:
    """Constant prediction from the observed values, on the natural scale."""
    mean = float(data.y_obs.mean())
    if fam.kind == GAUSSIAN:
        return mean
    if fam.kind == BERNOULLI:
        mean = min(max(mean, 1e-6), 1.0 - 1e-6)
        return float(np.log(mean / (1.0 - mean)))
    return float(np.log(max(mean, 1e-6)))


def _replicate_options(spec: ScenarioSpec, fit_options: FitOptions | None) -> FitOptions:
    base = FitOptions() if fit_options is None else fit_options
    return replace(base, seed=spec.seed)


def _run_replicate(args) -> ReplicateResult:
    spec, protocol, candidates, a2_size, alpha, fit_options = args
    opts = _replicate_options(spec, fit_options)
    if protocol == "testing":
        _, data = generate(spec)
        result = test_mnar(data, spec.family, spec.rank, opts, a2_size=a2_size, alpha=alpha)
        return ReplicateResult(seed=spec.seed, test=result)
    if protocol == "rank_tuning":
        _, data = generate(spec)
        chosen, _ = select_rank(data, spec.family, candidates, opts)
        return ReplicateResult(seed=spec.seed, selected_rank=chosen)
    truth, data, y_full = generate(spec, return_full=True)
    report = fit(data, spec.rank, spec.family, opts)
    x_hat = reconstruct_full(report.state.cp).data
    x_star = reconstruct_full(truth.cp).data
    aligned = ModelState(
        cp=align_components(report.state.cp, truth.cp),
        theta=report.state.theta,
        fam=spec.family,
    )
    dist = d_metric(aligned, truth)
    hidden = ~data.mask
    rmse = auc = base_rmse = None
    if hidden.any() and spec.family.kind == BERNOULLI:
        labels = np.asarray(y_full)[hidden]
        if 0 < labels.sum() < labels.size:
            auc = auc_missing(expit(x_hat[hidden]), labels)
    if hidden.any() and float(np.linalg.norm(x_star[hidden])) > 0:
        rmse = rmse_missing(x_hat, x_star, data.mask)
        const = np.full(spec.dims, _baseline_natural(data, spec.family))
        base_rmse = rmse_missing(const, x_star, data.mask)
    return ReplicateResult(
        seed=spec.seed,
        rmse_missing=rmse,
        auc_missing=auc,
        d_metric=dist,
        baseline_rmse=base_rmse,
    )


def _mean_se_ci(values: list[float]) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    if arr.size > 1:
        se = float(arr.std(ddof=1) / math.sqrt(arr.size))
    else:
        se = 0.0
    return {
        "mean": mean,
        "se": se,
        "ci95": [mean - 1.96 * se, mean + 1.96 * se],
        "n": int(arr.size),
    }


def run_experiment(spec: ScenarioSpec, protocol: str, *, candidates=None,
                   a2_size: int = 500, alpha: float = 0.05,
                   fit_options: FitOptions | None = None,
                   jobs: int = 1) -> tuple[list[ReplicateResult], dict]:
    """Run ``spec.replicates`` independent replicates of one protocol.

    Replicate r uses seed ``spec.seed + r``.  Protocols:

      * ``completion``: fit at the true rank, report recovery metrics and
        the constant-prediction baseline.
      * ``rank_tuning``: BIC selection over ``candidates`` (default 2..10).
      * ``testing``: the sample-splitting missingness test.

    Returns (replicate results in order, aggregate summary).  A replicate
    that raises a library error is recorded under ``failures`` and excluded
    from the aggregates.
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}")
    if candidates is None:
        candidates = tuple(range(2, 11))
    if jobs < 1:
        raise ValueError("jobs must be at least 1")
    tasks = []
    for i in range(spec.replicates):
        sub = replace(spec, seed=spec.seed + i, replicates=1)
        tasks.append((sub, protocol, tuple(candidates), a2_size, alpha, fit_options))
    outcomes: list[ReplicateResult | MnartcError] = []
    if jobs == 1:
        for task in tasks:
            try:
                outcomes.append(_run_replicate(task))
            except MnartcError as exc:
                outcomes.append(exc)
        results = outcomes
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_replicate, task) for task in tasks]
            results = []
            for fut in futures:
                try:
                    results.append(fut.result())
                except MnartcError as exc:
                    results.append(exc)

    replicates: list[ReplicateResult] = []
    failures: list[dict] = []
    for i, out in enumerate(results):
        if isinstance(out, ReplicateResult):
            replicates.append(out)
        else:
            failures.append({"replicate": i, "seed": int(spec.seed + i), "error": str(out)})
    aggregate: dict = {
        "protocol": protocol,
        "replicates": spec.replicates,
        "completed": len(replicates),
        "failures": failures,
    }
    for field in ("rmse_missing", "auc_missing", "d_metric", "baseline_rmse"):
        vals = [getattr(r, field) for r in replicates if getattr(r, field) is not None]
        if vals:
            aggregate[field] = _mean_se_ci(vals)
    if protocol == "rank_tuning":
        counts: dict[int, int] = {}
        for r in replicates:
            counts[r.selected_rank] = counts.get(r.selected_rank, 0) + 1
        aggregate["rank_counts"] = {str(k): counts[k] for k in sorted(counts)}
    if protocol == "testing":
        tests = [r.test for r in replicates if r.test is not None]
        if tests:
            rejections = [t.p_value < alpha for t in tests]
            covered = [t.ci_lower <= spec.b1_star <= t.ci_upper for t in tests]
            aggregate["rejection_rate"] = float(np.mean(rejections))
            aggregate["ci_coverage"] = float(np.mean(covered))
            aggregate["b1_hat"] = _mean_se_ci([t.b1_hat for t in tests])
    return replicates, aggregate
