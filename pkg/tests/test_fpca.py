import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import svd_fpca
from tvstergm.errors import ContractError
from tvstergm.fitter import FittedModel, ModelSpec, fit_model
from tvstergm.fpca import CurveBundle, discretize_curves, fpca, perturbation_curves

GRID = np.linspace(0.0, 10.0, 100)


def _bundle(values, grid=GRID):
    values = np.asarray(values, dtype=float)
    return CurveBundle(tuple(f"a{i}" for i in range(values.shape[0])), grid, values)


def _offsets_and_trends():
    t = (GRID - GRID.mean()) / 5.0
    a = np.array([2.0, -1.0, 0.5, -2.5, 1.0])
    b = np.array([0.3, -0.4, 0.1, 0.2, -0.2])
    b = b - (a @ b) / (a @ a) * a  # uncorrelated offsets and slopes separate the components
    return a[:, None] + b[:, None] * t[None, :]


@pytest.fixture(scope="module")
def re_model(small_fixture):
    panel = small_fixture.panel()
    spec = ModelSpec.default("STERGM+RE", ("recip",), "constant", re_dimension=4)
    return panel, fit_model(panel, spec, lambdas=1.0)


# ------------------------------------------------------------------ bundle

def test_bundle_validation():
    with pytest.raises(ContractError, match="increasing"):
        _bundle(np.zeros((2, 3)), np.array([0.0, 2.0, 1.0]))
    with pytest.raises(ContractError, match="equidistant"):
        _bundle(np.zeros((2, 3)), np.array([0.0, 1.0, 3.0]))
    with pytest.raises(ContractError, match="finite"):
        _bundle(np.full((2, 100), np.nan))
    b = _bundle(np.zeros((2, 100)))
    assert b.length == 10.0 and b.weight == pytest.approx(0.1)


# ------------------------------------------------------------------ fpca

def test_identical_curves_have_no_variance():
    res = fpca(_bundle(np.tile(np.sin(GRID), (4, 1))))
    assert np.all(res.eigenvalues == 0) and np.all(res.scores == 0)
    assert np.all(res.variance_shares == 0)


def test_symmetric_pair_is_rank_one():
    f = np.cos(GRID / 3.0) + 0.2
    res = fpca(_bundle([f, -f]))
    assert res.eigenvalues[0] > 0
    assert np.all(res.eigenvalues[1:] < 1e-12 * res.eigenvalues[0])
    s = res.scores[:, 0]
    assert s[0] == pytest.approx(-s[1])
    assert s[0] ** 2 == pytest.approx(res.weight * f @ f, rel=1e-10)


def test_offsets_and_trends_match_oracle():
    values = _offsets_and_trends()
    res = fpca(_bundle(values))
    eig, xi = svd_fpca(values, GRID[-1] - GRID[0])
    np.testing.assert_allclose(res.eigenvalues, eig[:res.eigenvalues.size], atol=1e-8)
    for m in range(2):
        ref = xi[m] * np.sign(xi[m][np.argmax(np.abs(xi[m]))])
        np.testing.assert_allclose(res.eigenfunctions[m], ref, atol=1e-8)
        ref_scores = res.weight * (values - values.mean(axis=0)) @ ref
        np.testing.assert_allclose(res.scores[:, m], ref_scores, atol=1e-8)
    # first component is the level shift, second the trend
    assert np.ptp(res.eigenfunctions[0]) < 1e-8
    assert abs(np.corrcoef(res.eigenfunctions[1], GRID)[0, 1]) > 1 - 1e-8
    assert np.all(res.eigenvalues[2:] < 1e-10)


def test_sign_rule_and_component_count():
    res = fpca(_bundle(_offsets_and_trends()), 2)
    assert res.eigenfunctions.shape == (2, 100) and res.scores.shape == (5, 2)
    for xi in res.eigenfunctions:
        assert xi[np.argmax(np.abs(xi))] > 0
    with pytest.raises(ContractError):
        fpca(_bundle(_offsets_and_trends()), 6)
    with pytest.raises(ContractError, match="at least 2"):
        fpca(_bundle(np.zeros((1, 100))))


@given(st.integers(0, 2**32 - 1), st.integers(2, 12), st.integers(3, 40))
def test_fpca_properties(seed, n, t):
    rng = np.random.default_rng(seed)
    grid = np.linspace(-1.0, rng.uniform(0.5, 20.0), t)
    values = rng.normal(size=(n, t)).cumsum(axis=1)
    b = _bundle(values, grid)
    res = fpca(b)
    w = b.weight
    C = values - values.mean(axis=0)
    # orthonormal under the quadrature inner product
    G = w * res.eigenfunctions @ res.eigenfunctions.T
    keep = res.eigenvalues > 1e-9 * max(res.eigenvalues.max(), 1e-300)
    np.testing.assert_allclose(G[np.ix_(keep, keep)], np.eye(keep.sum()), atol=1e-8)
    assert np.all(np.diff(res.eigenvalues) <= 1e-12 * res.eigenvalues.max() + 1e-300)
    assert np.all(res.eigenvalues >= 0)
    assert abs(res.variance_shares.sum() - 1) < 1e-10
    np.testing.assert_allclose(res.scores.mean(axis=0), 0, atol=1e-9 * (1 + np.abs(res.scores).max()))
    # scores are quadrature inner products with the eigenfunctions
    np.testing.assert_allclose(res.scores, w * C @ res.eigenfunctions.T, atol=1e-10 * (1 + np.abs(C).max()))
    # full reconstruction
    np.testing.assert_allclose(res.scores @ res.eigenfunctions, C, atol=1e-8 * (1 + np.abs(C).max()))


def test_reconstruction_error_decreases():
    rng = np.random.default_rng(8)
    values = rng.normal(size=(8, 30)).cumsum(axis=1)
    b = _bundle(values, np.linspace(0, 1, 30))
    C = values - values.mean(axis=0)
    errs = []
    for m in range(1, 9):
        r = fpca(b, m)
        errs.append(np.linalg.norm(C - r.scores @ r.eigenfunctions))
    assert np.all(np.diff(errs) <= 1e-10) and errs[-1] < 1e-8


# ------------------------------------------------------------ perturbation

def test_perturbation_curves():
    res = fpca(_bundle(_offsets_and_trends()))
    plus, minus = perturbation_curves(res, 1, 0.0)
    np.testing.assert_array_equal(plus, res.mean)
    np.testing.assert_array_equal(minus, res.mean)
    plus, minus = perturbation_curves(res, 2)
    np.testing.assert_allclose((plus + minus) / 2, res.mean, atol=1e-12)
    np.testing.assert_allclose(plus - res.mean, 2 * np.sqrt(res.eigenvalues[1]) * res.eigenfunctions[1])
    with pytest.raises(ContractError):
        perturbation_curves(res, 0)
    with pytest.raises(ContractError):
        perturbation_curves(res, 6)


def test_write(tmp_path):
    res = fpca(_bundle(_offsets_and_trends()), 2)
    paths = res.write(tmp_path / "f")
    assert [p.rsplit("/", 1)[1] for p in paths] == ["scores.csv", "eigenfunctions.csv", "variance_shares.csv"]
    head = (tmp_path / "f" / "scores.csv").read_text().splitlines()[0]
    assert head == "actor,comp1,comp2"


# -------------------------------------------------------------- discretize

def test_discretize_default_grid_and_oracle(re_model):
    panel, model = re_model
    b = discretize_curves(model, "sender", "formation")
    assert b.grid.size == 100
    fit = model.fits["formation"]
    info = fit.blocks["re(sender)"]
    lay = info["layout"]
    Q = lay.basis.dimension
    A = fit.coefficients[info["slice"]].reshape(len(lay.actors), Q)
    B = lay.basis.evaluate(b.grid)
    np.testing.assert_allclose(b.values, A @ B.T, atol=1e-12)
    assert b.actors == tuple(lay.actors)


def test_discretize_errors(re_model, small_fixture):
    panel, model = re_model
    with pytest.raises(ContractError, match="role"):
        discretize_curves(model, "broker", "formation")
    with pytest.raises(ContractError, match="no .* fit"):
        discretize_curves(model, "sender", "pooled")
    plain = fit_model(panel, ModelSpec.default("STERGM", ("recip",), "constant"), lambdas=1.0)
    with pytest.raises(ContractError, match="random smooth"):
        discretize_curves(plain, "sender")


def test_zero_coefficients_give_zero_rows(re_model):
    _, model = re_model
    copy = FittedModel.from_dict(model.to_dict())
    fit = copy.fits["formation"]
    fit.coefficients[fit.blocks["re(sender)"]["slice"]] = 0.0
    assert np.all(discretize_curves(copy, "sender", "formation").values == 0)


def test_registry_masks_nonexistence(re_model):
    panel, model = re_model
    b = discretize_curves(model, "receiver", "formation", registry=panel.registry)
    for k, a in enumerate(b.actors):
        lo, hi = panel.registry.spans[a]
        dead = (b.grid < lo) | (b.grid > hi + model.width - 1)
        assert np.all(b.values[k, dead] == 0)
