import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from oracles import cox_de_boor, equidistant_knots
from tvstergm.errors import ContractError
from tvstergm.fitter import pirls_fit
from tvstergm.splines import (DesignBlock, SplineBasis, apply_centering_constraint, bspline_basis,
                              difference_penalty, random_smooth_block, varying_coeff_block)


def test_degree_zero_is_bin_indicators():
    B = bspline_basis([0.1, 0.3, 0.6, 0.9, 1.0], 4, 0, 0.0, 1.0)
    np.testing.assert_array_equal(B.argmax(axis=1), [0, 1, 2, 3, 3])
    assert set(np.unique(B)) == {0.0, 1.0}


def test_matches_cox_de_boor():
    pts = [0.0, 0.37, 1.5, 2.25, 3.99]
    B = bspline_basis(pts, 7, 2, 0.0, 4.0)
    knots = equidistant_knots(0.0, 4.0, 7, 2)
    ref = np.array([[cox_de_boor(x, knots, k, 2) for k in range(7)] for x in pts])
    np.testing.assert_allclose(B, ref, atol=1e-14)


@given(st.integers(0, 4), st.integers(0, 20), st.floats(-50, 50), st.floats(0.1, 100))
def test_partition_of_unity_and_sparsity(degree, extra, lower, length):
    dim = degree + 1 + extra
    basis = SplineBasis(lower, lower + length, dim, degree)
    x = np.linspace(lower, lower + length, 37)
    B = basis.evaluate(x)
    np.testing.assert_allclose(B.sum(axis=1), 1.0, atol=1e-12)
    assert (np.count_nonzero(B, axis=1) <= degree + 1).all()
    assert B.min() >= -1e-15


def test_outside_coverage():
    basis = SplineBasis(0.0, 1.0, 5, 2)
    with pytest.raises(ContractError, match="outside"):
        basis.evaluate([1.5])
    np.testing.assert_allclose(basis.evaluate([1.5], clamp=True), basis.evaluate([1.0]))
    with pytest.raises(ContractError):
        SplineBasis(0.0, 1.0, 2, 2)


def test_difference_penalty_examples():
    np.testing.assert_array_equal(difference_penalty(3, 1), [[1, -1, 0], [-1, 2, -1], [0, -1, 1]])
    D1 = np.diff(np.eye(4), axis=0)
    D2 = np.diff(np.eye(3), axis=0) @ D1
    np.testing.assert_array_equal(difference_penalty(4, 2), D2.T @ D2)
    assert np.ones(5) @ difference_penalty(5, 1) @ np.ones(5) == 0
    with pytest.raises(ContractError):
        difference_penalty(2, 2)


@given(st.integers(1, 3), st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_penalty_null_space(order, extra, seed):
    dim = order + extra
    S = difference_penalty(dim, order)
    idx = np.arange(dim, dtype=float)
    for d in range(order):
        v = idx ** d
        assert abs(v @ S @ v) < 1e-8 * (1 + v @ v)
    assert np.linalg.matrix_rank(S) == dim - order
    r = np.random.default_rng(seed).normal(size=dim)
    # remove the null-space component; the remainder has positive energy
    N = np.vander(idx, order, increasing=True)
    r = r - N @ np.linalg.lstsq(N, r, rcond=None)[0]
    assert r @ S @ r > 0 or np.allclose(r, 0)


def test_varying_coeff_block_examples():
    basis = SplineBasis(0, 10, 6, 2)
    t = np.linspace(0, 10, 9)
    assert np.all(varying_coeff_block(np.zeros(9), t, basis).columns == 0)
    np.testing.assert_allclose(varying_coeff_block(np.ones(9), t, basis).columns, basis.evaluate(t))
    with pytest.raises(ContractError):
        varying_coeff_block(np.ones(3), t, basis)


def test_random_smooth_block_structure():
    basis = SplineBasis(0, 4, 5, 2)
    one = random_smooth_block(["a"] * 5, np.arange(5.0), basis)
    np.testing.assert_allclose(one.columns.toarray(), basis.evaluate(np.arange(5.0)))
    ids = ["a", "a", "b", "b"]
    blk = random_smooth_block(ids, np.array([0.0, 4.0, 1.0, 3.0]), basis)
    X = blk.columns.toarray()
    assert sp.issparse(blk.columns) and X.shape == (4, 10)
    assert np.all(X[:2, 5:] == 0) and np.all(X[2:, :5] == 0)
    # one shared pair of smoothing parameters for every actor of the role
    assert len(blk.penalties) == 2 and all(S.shape == (10, 10) for S in blk.penalties)
    with pytest.raises(ContractError, match="unknown actor"):
        random_smooth_block(["z"], [0.0], basis, actors=["a", "b"])


def test_centering_constraint():
    basis = SplineBasis(0, 9, 6, 2)
    t = np.repeat(np.arange(10.0), 3)
    blk = varying_coeff_block(np.ones(t.size), t, basis, "s")
    c = apply_centering_constraint(blk)
    assert c.n_columns == blk.n_columns - 1
    v = np.random.default_rng(1).normal(size=c.n_columns)
    assert abs((c.columns @ v).sum()) < 1e-10 * t.size
    with pytest.raises(ContractError):
        apply_centering_constraint(c)


def test_centering_keeps_fitted_space():
    rng = np.random.default_rng(4)
    t = np.repeat(np.arange(12.0), 40)
    y = (rng.random(t.size) < 1 / (1 + np.exp(-np.sin(t / 3)))).astype(float)
    basis = SplineBasis(0, 11, 6, 2)
    raw = varying_coeff_block(np.ones(t.size), t, basis, "s")
    icpt = DesignBlock("intercept", np.ones((t.size, 1)))
    a = pirls_fit(y, [icpt, raw], 0.0)
    b = pirls_fit(y, [icpt, apply_centering_constraint(raw)], 0.0)
    Xa = np.hstack([np.ones((t.size, 1)), raw.columns])
    Xb = np.hstack([np.ones((t.size, 1)), apply_centering_constraint(raw).columns])
    pa = 1 / (1 + np.exp(-Xa @ a.coefficients))
    pb = 1 / (1 + np.exp(-Xb @ b.coefficients))
    np.testing.assert_allclose(pa, pb, atol=1e-6)
