import numpy as np
import pytest

from plastopt.filters import Parametrization, filter_matrix, heaviside
from plastopt.mesh import build_domain


@pytest.fixture(scope="module")
def param():
    mesh, _ = build_domain("l_bracket", 20, spread=2)
    return Parametrization(mesh, radius=0.12)


@pytest.mark.parametrize("beta", [1e-3, 1.0, 5.0, 10.0, 60.0])
@pytest.mark.parametrize("eta", [0.3, 0.5, 0.7])
def test_projection_fixed_points_are_exact(beta, eta):
    val, _ = heaviside(np.array([0.0, eta, 1.0]), beta, eta)
    assert val.tolist() == [0.0, eta, 1.0]


def test_projection_is_monotone_and_approaches_step():
    xt = np.linspace(0, 1, 101)
    for beta in (1.0, 10.0):
        v, d = heaviside(xt, beta)
        assert np.all(np.diff(v) > 0) and np.all(d > 0)
    v, _ = heaviside(np.array([0.2, 0.8]), 200.0)
    np.testing.assert_allclose(v, [0.0, 1.0], atol=1e-12)


def test_projection_derivative_matches_finite_differences(rng):
    xt = rng.uniform(0.01, 0.99, 200)
    xt = xt[np.abs(xt - 0.5) > 1e-3]
    for beta in (1.0, 4.0, 10.0):
        h = 1e-7
        fd = (heaviside(xt + h, beta)[0] - heaviside(xt - h, beta)[0]) / (2 * h)
        np.testing.assert_allclose(heaviside(xt, beta)[1], fd, rtol=1e-6)


def test_filter_reproduces_constants(param):
    for c in (0.0, 0.35, 1.0, 0.123456789):
        out = param.density_filter(np.full(param.mesh.n_elements, c))
        np.testing.assert_allclose(out, c, rtol=4e-16, atol=0)


def test_filter_weights_are_linear_hats(param):
    W = filter_matrix(param.mesh, 0.12)
    assert np.allclose(W.sum(axis=1), 1.0)
    row = W.getrow(0).toarray().ravel()
    c = param.mesh.centroids
    d = np.linalg.norm(c - c[0], axis=1)
    raw = np.maximum(0.0, 0.12 - d)
    np.testing.assert_allclose(row, raw / raw.sum(), rtol=1e-14)


@pytest.mark.parametrize("beta", [1.0, 3.0, 10.0])
def test_chain_rule_matches_finite_differences(param, rng, beta):
    n = param.mesh.n_elements
    x = rng.uniform(0.05, 0.95, n)
    weights = rng.normal(size=n)

    def J(xx):
        xbar = param.forward(xx, beta).xbar
        return float(weights @ xbar + 0.5 * np.sum(xbar ** 2))

    fld = param.forward(x, beta)
    grad = param.chain_rule(weights + fld.xbar, fld)
    h = 1e-6
    idx = rng.choice(n, 25, replace=False)
    for e in idx:
        xp, xm = x.copy(), x.copy()
        xp[e] += h
        xm[e] -= h
        fd = (J(xp) - J(xm)) / (2 * h)
        assert abs(grad[e] - fd) <= 1e-5 * abs(fd)


def test_eta_validation(param):
    with pytest.raises(ValueError):
        Parametrization(param.mesh, 0.1, eta=1.0)
