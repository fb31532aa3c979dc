"""Tests for the joint value-and-indicator log-likelihood and its derivatives.

The reference implementations here are deliberately naive: python-loop
summation, explicit stable softplus, and central finite differences of the
array-based objective.
"""

import math
from dataclasses import replace

import numpy as np
import pytest

from mnartc import (
    CPModel,
    DimensionError,
    Family,
    MaskedData,
    MissingnessParams,
    ModelState,
    grad_lambda,
    grad_theta,
    grad_u_entry,
    grad_v_entry,
    grad_w_entry,
    hess_lambda,
    hess_theta,
    hess_u_entry,
    hess_v_entry,
    hess_w_entry,
    mask_loglik,
    objective,
    objective_arrays,
    reconstruct_full,
)

FAMILIES = (Family("gaussian", phi0=2.0), Family("bernoulli"), Family("poisson"))


def softplus(eta: float) -> float:
    m = max(eta, 0.0)
    return m + math.log(math.exp(-m) + math.exp(eta - m))


def cumulant_scalar(kind: str, x: float) -> float:
    if kind == "gaussian":
        return 0.5 * x * x
    if kind == "bernoulli":
        return softplus(x)
    return math.exp(x)


def unit_columns(rng, d, rank):
    m = rng.normal(size=(d, rank))
    return m / np.linalg.norm(m, axis=0)


def random_state(rng, dims, rank, fam, b0, b1):
    cp = CPModel(
        lambdas=rng.uniform(0.5, 2.0, rank),
        u=unit_columns(rng, dims[0], rank),
        v=unit_columns(rng, dims[1], rank),
        w=unit_columns(rng, dims[2], rank),
    )
    return ModelState(cp=cp, theta=MissingnessParams(b0, b1), fam=fam)


def sample_values(rng, fam, x):
    """Draw y at natural parameters x without going through the library."""
    if fam.kind == "gaussian":
        return x + math.sqrt(fam.phi0) * rng.standard_normal(x.shape)
    if fam.kind == "bernoulli":
        return (rng.random(x.shape) < 1.0 / (1.0 + np.exp(-x))).astype(float)
    return rng.poisson(np.exp(x)).astype(float)


def random_instance(seed, fam, dims=(4, 4, 4), rank=2, b0=0.3, b1=-0.6):
    rng = np.random.default_rng(seed)
    state = random_state(rng, dims, rank, fam, b0, b1)
    x = reconstruct_full(state.cp).data
    y = sample_values(rng, fam, x)
    mask = rng.random(dims) < 0.55
    return state, MaskedData.from_dense(mask, y), x, y


def naive_objective(state, x, y, mask, include=None):
    fam = state.fam
    b0, b1 = state.theta.b0, state.theta.b1
    total = 0.0
    d1, d2, d3 = x.shape
    for i in range(d1):
        for j in range(d2):
            for k in range(d3):
                if include is not None and not include[i, j, k]:
                    continue
                eta = b0 + b1 * x[i, j, k]
                total -= softplus(eta)
                if mask[i, j, k]:
                    psi = cumulant_scalar(fam.kind, x[i, j, k])
                    total += (y[i, j, k] * x[i, j, k] - psi) / fam.phi0
                    total += eta
    return total


# ---------------------------------------------------------------------------
# objective values


def test_pinned_single_cell_bernoulli():
    """One observed bernoulli cell at x=0, theta=(0,0): both terms give
    -log 2, so the objective is -2 log 2."""
    data = MaskedData.from_dense(np.ones((1, 1, 1), dtype=bool), np.ones((1, 1, 1)))
    fam = Family("bernoulli")
    val = objective_arrays([0.0], [[1.0]], [[1.0]], [[1.0]], 0.0, 0.0, fam, data)
    assert abs(val + 2.0 * math.log(2.0)) < 1e-12
    cp = CPModel(lambdas=[1e-12], u=[[1.0]], v=[[1.0]], w=[[1.0]])
    state = ModelState(cp=cp, theta=MissingnessParams(0.0, 0.0), fam=fam)
    assert abs(objective(state, data) + 2.0 * math.log(2.0)) < 1e-11


def test_objective_with_nothing_observed_equals_mask_loglik():
    rng = np.random.default_rng(3)
    state = random_state(rng, (3, 4, 5), 2, Family("gaussian"), 0.5, 1.2)
    data = MaskedData.from_dense(np.zeros((3, 4, 5), dtype=bool), np.zeros((3, 4, 5)))
    x = reconstruct_full(state.cp).data
    expected = mask_loglik(state.theta, x, np.zeros((3, 4, 5), dtype=bool))
    assert abs(objective(state, data) - expected) < 1e-12


@pytest.mark.parametrize("fam", FAMILIES, ids=lambda f: f.kind)
def test_objective_matches_naive_sum(fam):
    state, data, x, y = random_instance(17, fam)
    expected = naive_objective(state, x, y, data.mask)
    got = objective(state, data)
    assert abs(got - expected) <= 1e-10 * max(1.0, abs(expected))


@pytest.mark.parametrize("fam", FAMILIES, ids=lambda f: f.kind)
def test_include_restricts_both_sums(fam):
    state, data, x, y = random_instance(29, fam)
    rng = np.random.default_rng(30)
    include = rng.random(x.shape) < 0.5
    expected = naive_objective(state, x, y, data.mask, include=include)
    got = objective(state, data, include=include)
    assert abs(got - expected) <= 1e-10 * max(1.0, abs(expected))
    full = objective(state, data, include=np.ones(x.shape, dtype=bool))
    assert full == objective(state, data)


def test_include_validation():
    state, data, x, _ = random_instance(31, Family("gaussian", phi0=2.0))
    with pytest.raises(DimensionError):
        objective(state, data, include=np.ones((2, 2, 2), dtype=bool))
    with pytest.raises(ValueError):
        objective(state, data, include=np.full(x.shape, 2))


# ---------------------------------------------------------------------------
# gradients


def fd_objective(state, data, setter, h=1e-6):
    """Central difference of the array objective along one coordinate."""
    cp, th = state.cp, state.theta

    def at(delta):
        lam, u, v, w, b0, b1 = setter(delta)
        return objective_arrays(lam, u, v, w, b0, b1, state.fam, data)

    return (at(h) - at(-h)) / (2 * h)


def coordinate_setters(state):
    """Perturbation closures for a representative coordinate of every block."""
    cp, th = state.cp, state.theta

    def base():
        return (cp.lambdas.copy(), cp.u.copy(), cp.v.copy(), cp.w.copy(), th.b0, th.b1)

    def set_u(delta, r=0, i=2):
        lam, u, v, w, b0, b1 = base()
        u[i, r] += delta
        return lam, u, v, w, b0, b1

    def set_v(delta, r=1, j=0):
        lam, u, v, w, b0, b1 = base()
        v[j, r] += delta
        return lam, u, v, w, b0, b1

    def set_w(delta, r=0, k=4):
        lam, u, v, w, b0, b1 = base()
        w[k, r] += delta
        return lam, u, v, w, b0, b1

    def set_lam(delta, r=1):
        lam, u, v, w, b0, b1 = base()
        lam[r] += delta
        return lam, u, v, w, b0, b1

    def set_b0(delta):
        lam, u, v, w, b0, b1 = base()
        return lam, u, v, w, b0 + delta, b1

    def set_b1(delta):
        lam, u, v, w, b0, b1 = base()
        return lam, u, v, w, b0, b1 + delta

    return set_u, set_v, set_w, set_lam, set_b0, set_b1


@pytest.mark.parametrize("fam", FAMILIES, ids=lambda f: f.kind)
def test_gradients_match_finite_difference(fam):
    state, data, _, _ = random_instance(41, fam, dims=(5, 5, 5), rank=2)
    set_u, set_v, set_w, set_lam, set_b0, set_b1 = coordinate_setters(state)
    gt = grad_theta(state, data)
    checks = [
        (grad_u_entry(state, data, 0, 2), set_u),
        (grad_v_entry(state, data, 1, 0), set_v),
        (grad_w_entry(state, data, 0, 4), set_w),
        (grad_lambda(state, data, 1), set_lam),
        (gt[0], set_b0),
        (gt[1], set_b1),
    ]
    for analytic, setter in checks:
        fd = fd_objective(state, data, setter)
        assert abs(analytic - fd) <= 1e-6 * max(1.0, abs(fd))


def test_pure_glm_gradient_when_slope_is_zero():
    """With b1 = 0 the indicator term drops out of the factor gradients."""
    fam = Family("gaussian", phi0=2.0)
    state, data, x, _ = random_instance(53, fam, b1=0.0)
    y_dense = data.y_dense()
    d = data.mask.astype(float)
    score = d * (y_dense - x) / fam.phi0
    for r in range(state.cp.rank):
        lam = state.cp.lambdas[r]
        coef = lam * np.einsum("j,k->jk", state.cp.v[:, r], state.cp.w[:, r])
        manual = np.tensordot(score, coef, axes=([1, 2], [0, 1]))
        for i in range(x.shape[0]):
            assert abs(grad_u_entry(state, data, r, i) - manual[i]) < 1e-12


def test_component_index_out_of_range():
    state, data, _, _ = random_instance(57, Family("gaussian", phi0=2.0))
    with pytest.raises(IndexError):
        grad_u_entry(state, data, 2, 0)
    with pytest.raises(IndexError):
        hess_lambda(state, data, -1)


# ---------------------------------------------------------------------------
# hessians


def test_pinned_hessian_fully_observed_gaussian():
    """Gaussian, everything observed, b1 = 0, rank 1, lambda = 2.5: the
    factor-entry curvature is -lambda^2 and the weight curvature is -1."""
    rng = np.random.default_rng(61)
    cp = CPModel(
        lambdas=[2.5],
        u=unit_columns(rng, 4, 1),
        v=unit_columns(rng, 5, 1),
        w=unit_columns(rng, 6, 1),
    )
    fam = Family("gaussian")
    state = ModelState(cp=cp, theta=MissingnessParams(0.3, 0.0), fam=fam)
    y = rng.normal(size=(4, 5, 6))
    data = MaskedData.from_dense(np.ones((4, 5, 6), dtype=bool), y)
    assert abs(hess_u_entry(state, data, 0, 1) + 6.25) < 1e-12
    assert abs(hess_v_entry(state, data, 0, 2) + 6.25) < 1e-12
    assert abs(hess_w_entry(state, data, 0, 3) + 6.25) < 1e-12
    assert abs(hess_lambda(state, data, 0) + 1.0) < 1e-12


@pytest.mark.parametrize("fam", FAMILIES, ids=lambda f: f.kind)
def test_factor_hessians_match_second_difference(fam):
    state, data, _, _ = random_instance(67, fam, dims=(5, 5, 5), rank=2)
    set_u, set_v, set_w, _, _, _ = coordinate_setters(state)
    cases = [
        (hess_u_entry(state, data, 0, 2), set_u),
        (hess_v_entry(state, data, 1, 0), set_v),
        (hess_w_entry(state, data, 0, 4), set_w),
    ]
    h = 1e-4
    for analytic, setter in cases:
        f0 = objective_arrays(*setter(0.0), state.fam, data)
        up = objective_arrays(*setter(h), state.fam, data)
        dn = objective_arrays(*setter(-h), state.fam, data)
        fd = (up - 2 * f0 + dn) / (h * h)
        assert abs(analytic - fd) <= 1e-4 * max(1.0, abs(fd))


@pytest.mark.parametrize("fam", FAMILIES, ids=lambda f: f.kind)
def test_weight_and_theta_hessians_match_gradient_differences(fam):
    state, data, _, _ = random_instance(71, fam, dims=(5, 5, 5), rank=2)
    h = 1e-6
    lam_up = replace(state.cp, lambdas=state.cp.lambdas + np.array([0.0, h]))
    lam_dn = replace(state.cp, lambdas=state.cp.lambdas - np.array([0.0, h]))
    fd_lam = (
        grad_lambda(replace(state, cp=lam_up), data, 1)
        - grad_lambda(replace(state, cp=lam_dn), data, 1)
    ) / (2 * h)
    assert abs(hess_lambda(state, data, 1) - fd_lam) <= 1e-5 * max(1.0, abs(fd_lam))

    H = hess_theta(state, data)
    assert H.shape == (2, 2)
    for idx in range(2):
        bump = np.zeros(2)
        bump[idx] = h
        up = replace(state, theta=MissingnessParams(state.theta.b0 + bump[0],
                                                    state.theta.b1 + bump[1]))
        dn = replace(state, theta=MissingnessParams(state.theta.b0 - bump[0],
                                                    state.theta.b1 - bump[1]))
        fd_col = (grad_theta(up, data) - grad_theta(dn, data)) / (2 * h)
        assert np.all(np.abs(H[:, idx] - fd_col) <= 1e-5 * np.maximum(1.0, np.abs(fd_col)))


@pytest.mark.parametrize("fam", FAMILIES, ids=lambda f: f.kind)
def test_coordinate_concavity(fam):
    state, data, x, _ = random_instance(83, fam, dims=(4, 5, 6), rank=2, b1=1.5)
    for r in range(2):
        assert hess_lambda(state, data, r) <= 0.0
        for i in range(4):
            assert hess_u_entry(state, data, r, i) <= 0.0
        for j in range(5):
            assert hess_v_entry(state, data, r, j) <= 0.0
        for k in range(6):
            assert hess_w_entry(state, data, r, k) <= 0.0
    eigs = np.linalg.eigvalsh(hess_theta(state, data))
    assert np.all(eigs <= 1e-12)


# ---------------------------------------------------------------------------
# invariances


def test_objective_invariant_under_permutation_and_paired_flips():
    fam = Family("gaussian")
    state, data, _, _ = random_instance(91, fam, dims=(4, 5, 6), rank=3, b1=1.0)
    cp = state.cp
    perm = [2, 0, 1]
    u = cp.u[:, perm].copy()
    v = cp.v[:, perm].copy()
    w = cp.w[:, perm].copy()
    u[:, 1] *= -1.0
    v[:, 1] *= -1.0
    other = CPModel(lambdas=cp.lambdas[perm], u=u, v=v, w=w)
    ref = objective(state, data)
    got = objective(replace(state, cp=other), data)
    assert abs(got - ref) <= 1e-12 * max(1.0, abs(ref))


def test_fully_observed_mcar_decomposition():
    """With everything observed and b1 = 0 the objective splits into the
    plain GLM log-likelihood plus n * (b0 - softplus(b0))."""
    fam = Family("poisson")
    rng = np.random.default_rng(97)
    state = random_state(rng, (3, 4, 5), 2, fam, 0.7, 0.0)
    x = reconstruct_full(state.cp).data
    y = sample_values(rng, fam, x)
    data = MaskedData.from_dense(np.ones((3, 4, 5), dtype=bool), y)
    n = x.size
    glm = float(np.sum(fam.loglik_entry(y, x)))
    expected = glm + n * (0.7 - softplus(0.7))
    got = objective(state, data)
    assert abs(got - expected) <= 1e-10 * max(1.0, abs(expected))
