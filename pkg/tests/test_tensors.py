"""Tensor container, CP model, reconstruction, and component alignment."""

import math

import numpy as np
import pytest

from mnartc import (
    CPModel,
    DegenerateFactorError,
    DenseTensor3,
    DimensionError,
    MaskedData,
    align_components,
    normalize_column,
    reconstruct_entry,
    reconstruct_full,
)


def unit_columns(rng, d, rank):
    m = rng.standard_normal((d, rank))
    return m / np.linalg.norm(m, axis=0, keepdims=True)


def random_model(rng, dims=(5, 5, 5), rank=3):
    return CPModel(
        lambdas=rng.uniform(0.5, 3.0, rank),
        u=unit_columns(rng, dims[0], rank),
        v=unit_columns(rng, dims[1], rank),
        w=unit_columns(rng, dims[2], rank),
    )


# ---------------------------------------------------------------------------
# reconstruct_entry


def test_single_component_entry():
    model = CPModel(lambdas=[6.0], u=[[1.0], [0.0]], v=[[0.0], [1.0]], w=[[1.0], [0.0]])
    assert reconstruct_entry(model, (0, 1, 0)) == 6.0
    assert reconstruct_entry(model, (1, 1, 0)) == 0.0


def test_duplicated_component_doubles_each_entry():
    rng = np.random.default_rng(0)
    u = unit_columns(rng, 3, 1)
    v = unit_columns(rng, 4, 1)
    w = unit_columns(rng, 5, 1)
    model = CPModel(
        lambdas=[1.0, 1.0],
        u=np.hstack([u, u]),
        v=np.hstack([v, v]),
        w=np.hstack([w, w]),
    )
    for idx in ((0, 0, 0), (2, 3, 4), (1, 2, 0)):
        i, j, k = idx
        expected = 2.0 * u[i, 0] * v[j, 0] * w[k, 0]
        assert reconstruct_entry(model, idx) == pytest.approx(expected, rel=1e-14)


def test_entry_matches_triple_loop_oracle():
    """Brute-force sum over components, one python float at a time."""
    rng = np.random.default_rng(1)
    model = random_model(rng, dims=(5, 5, 5), rank=3)
    for i in range(5):
        for j in range(5):
            for k in range(5):
                total = 0.0
                for r in range(3):
                    total += (
                        float(model.lambdas[r])
                        * float(model.u[i, r])
                        * float(model.v[j, r])
                        * float(model.w[k, r])
                    )
                got = reconstruct_entry(model, (i, j, k))
                assert got == pytest.approx(total, rel=1e-12, abs=1e-15)


def test_entry_out_of_range():
    rng = np.random.default_rng(2)
    model = random_model(rng)
    with pytest.raises(IndexError):
        reconstruct_entry(model, (5, 0, 0))
    with pytest.raises(IndexError):
        reconstruct_entry(model, (0, -1, 0))


# ---------------------------------------------------------------------------
# reconstruct_full


def test_rank1_uniform_factors_constant_tensor():
    s = 1.0 / math.sqrt(2.0)
    model = CPModel(lambdas=[3.0], u=[[s], [s]], v=[[s], [s]], w=[[s], [s]])
    full = reconstruct_full(model)
    expected = 3.0 / (2.0 * math.sqrt(2.0))
    assert np.allclose(np.asarray(full), expected, rtol=1e-14)
    assert full.dims == (2, 2, 2)


def test_full_equals_entrywise_reconstruction():
    rng = np.random.default_rng(3)
    model = random_model(rng, dims=(3, 4, 5), rank=2)
    full = np.asarray(reconstruct_full(model))
    for i in range(3):
        for j in range(4):
            for k in range(5):
                assert full[i, j, k] == pytest.approx(
                    reconstruct_entry(model, (i, j, k)), rel=1e-14, abs=1e-16
                )


def test_rank1_frobenius_norm_equals_weight():
    rng = np.random.default_rng(4)
    model = random_model(rng, dims=(6, 7, 8), rank=1)
    lam = float(model.lambdas[0])
    frob = float(np.linalg.norm(np.asarray(reconstruct_full(model))))
    assert frob == pytest.approx(lam, rel=1e-12)


def test_frobenius_bounded_by_weight_sum():
    rng = np.random.default_rng(5)
    for _ in range(10):
        model = random_model(rng, dims=(4, 5, 6), rank=3)
        frob = float(np.linalg.norm(np.asarray(reconstruct_full(model))))
        assert frob <= float(model.lambdas.sum()) + 1e-9


# ---------------------------------------------------------------------------
# normalize_column


def test_normalize_three_four_five():
    unit, norm = normalize_column([3.0, 4.0])
    assert norm == 5.0
    assert np.allclose(unit, [0.6, 0.8], rtol=1e-15)


def test_normalize_idempotent_on_unit_vector():
    unit, norm = normalize_column([0.6, 0.8])
    again, norm2 = normalize_column(unit)
    assert np.array_equal(unit, again)
    assert norm == pytest.approx(1.0, abs=1e-15)
    assert norm2 == pytest.approx(1.0, abs=1e-15)


def test_normalize_zero_vector_raises():
    with pytest.raises(DegenerateFactorError):
        normalize_column([0.0, 0.0])


def test_normalize_roundtrip():
    rng = np.random.default_rng(6)
    for _ in range(20):
        vec = rng.standard_normal(rng.integers(1, 12)) * 10.0 ** rng.integers(-3, 4)
        unit, norm = normalize_column(vec)
        assert np.allclose(unit * norm, vec, rtol=1e-14)


# ---------------------------------------------------------------------------
# align_components


def test_align_recovers_reversed_order():
    rng = np.random.default_rng(7)
    truth = random_model(rng, dims=(6, 6, 6), rank=3)
    est = CPModel(
        lambdas=truth.lambdas[::-1],
        u=truth.u[:, ::-1],
        v=truth.v[:, ::-1],
        w=truth.w[:, ::-1],
    )
    aligned = align_components(est, truth)
    assert np.array_equal(aligned.lambdas, truth.lambdas)
    assert np.array_equal(aligned.u, truth.u)
    assert np.array_equal(aligned.v, truth.v)
    assert np.array_equal(aligned.w, truth.w)


def test_align_undoes_paired_sign_flip():
    rng = np.random.default_rng(8)
    truth = random_model(rng, dims=(5, 5, 5), rank=2)
    u = truth.u.copy()
    v = truth.v.copy()
    u[:, 0] *= -1.0
    v[:, 0] *= -1.0
    est = CPModel(lambdas=truth.lambdas, u=u, v=v, w=truth.w)
    aligned = align_components(est, truth)
    assert np.array_equal(aligned.u, truth.u)
    assert np.array_equal(aligned.v, truth.v)
    assert np.array_equal(aligned.w, truth.w)


def test_align_preserves_reconstruction():
    rng = np.random.default_rng(9)
    for _ in range(5):
        est = random_model(rng, dims=(4, 5, 6), rank=3)
        truth = random_model(rng, dims=(4, 5, 6), rank=3)
        before = np.asarray(reconstruct_full(est))
        after = np.asarray(reconstruct_full(align_components(est, truth)))
        assert np.allclose(before, after, rtol=1e-12, atol=1e-12)


def test_align_rank_mismatch():
    rng = np.random.default_rng(10)
    est = random_model(rng, rank=2)
    truth = random_model(rng, rank=3)
    with pytest.raises(DimensionError):
        align_components(est, truth)


def test_reconstruction_invariant_under_permutation_and_flips():
    rng = np.random.default_rng(11)
    model = random_model(rng, dims=(4, 4, 4), rank=3)
    perm = rng.permutation(3)
    signs = [(1, -1, -1), (-1, 1, -1), (1, 1, 1)]
    u = model.u[:, perm].copy()
    v = model.v[:, perm].copy()
    w = model.w[:, perm].copy()
    for col, (su, sv, sw) in enumerate(signs):
        u[:, col] *= su
        v[:, col] *= sv
        w[:, col] *= sw
    other = CPModel(lambdas=model.lambdas[perm], u=u, v=v, w=w)
    assert np.allclose(
        np.asarray(reconstruct_full(model)),
        np.asarray(reconstruct_full(other)),
        rtol=1e-12,
        atol=1e-12,
    )


# ---------------------------------------------------------------------------
# type invariants


def test_cpmodel_rejects_bad_inputs():
    rng = np.random.default_rng(12)
    good_u = unit_columns(rng, 4, 2)
    good_v = unit_columns(rng, 4, 2)
    good_w = unit_columns(rng, 4, 2)
    with pytest.raises(ValueError):
        CPModel(lambdas=[1.0, -1.0], u=good_u, v=good_v, w=good_w)
    with pytest.raises(ValueError):
        CPModel(lambdas=[1.0, 0.0], u=good_u, v=good_v, w=good_w)
    with pytest.raises(ValueError):
        CPModel(lambdas=[1.0, 1.0], u=good_u * 2.0, v=good_v, w=good_w)
    with pytest.raises(DimensionError):
        CPModel(
            lambdas=np.ones(5),
            u=unit_columns(rng, 4, 5),
            v=unit_columns(rng, 4, 5),
            w=unit_columns(rng, 4, 5),
        )


def test_dense_tensor_validation():
    with pytest.raises(DimensionError):
        DenseTensor3(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        DenseTensor3(np.full((2, 2, 2), np.nan))
    t = DenseTensor3(np.arange(8.0).reshape(2, 2, 2))
    assert t.dims == (2, 2, 2)
    assert np.asarray(t)[1, 0, 1] == 5.0


def test_masked_data_omega_is_lexicographic():
    rng = np.random.default_rng(13)
    mask = rng.random((4, 3, 5)) < 0.4
    y = rng.standard_normal((4, 3, 5))
    data = MaskedData.from_dense(mask, y)
    assert np.array_equal(data.omega, np.argwhere(mask))
    assert np.array_equal(data.y_obs, y[mask])
    assert data.n_observed == int(mask.sum())
    dense = data.y_dense()
    assert np.array_equal(dense[mask], y[mask])
    assert np.all(dense[~mask] == 0.0)


def test_masked_data_rejects_wrong_omega():
    mask = np.zeros((2, 2, 2), dtype=bool)
    mask[0, 0, 0] = True
    mask[1, 1, 1] = True
    bad_order = np.array([[1, 1, 1], [0, 0, 0]])
    with pytest.raises(ValueError):
        MaskedData(mask=mask, omega=bad_order, y_obs=np.array([1.0, 2.0]))
