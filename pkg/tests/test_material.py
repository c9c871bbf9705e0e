import numpy as np
import pytest

from plastopt import material as mt
from plastopt.material import MaterialParams, PointMaterial
from plastopt.verification import oracle_return_map

MAT = MaterialParams()


def points(n, rng, xbar=None):
    xbar = rng.uniform(0.3, 1.0, n) if xbar is None else np.full(n, xbar)
    return PointMaterial.from_density(xbar, MAT)


def random_plastic_history(rng, n, steps=3, scale=4e-3):
    """States reached by a few random strain increments from the virgin state."""
    pm = points(n, rng)
    v = mt.virgin_state(n)
    for _ in range(steps):
        v, _ = mt.return_map(v, rng.normal(scale=scale, size=(n, 3)), pm)
    return v, pm


def test_parameter_validation():
    with pytest.raises(ValueError, match="E_max > E_min"):
        MaterialParams(E_min=2.0, E_max=1.0)
    with pytest.raises(ValueError) as exc:
        MaterialParams(nu=0.6, H=-1.0)
    assert "nu" in str(exc.value) and "H" in str(exc.value)
    MaterialParams(p_E=1.0, p_sy=0.0)


def test_interpolation_endpoints_and_derivatives():
    x = np.array([0.0, 0.25, 1.0])
    E, dE = mt.interp_E(x, MAT)
    assert E[0] == MAT.E_min and E[-1] == MAT.E_max
    assert dE[0] == 0.0
    h = 1e-7
    fd = (mt.interp_E(x[1:2] + h, MAT)[0] - mt.interp_E(x[1:2] - h, MAT)[0]) / (2 * h)
    assert fd == pytest.approx(dE[1], rel=1e-7)
    s, ds = mt.interp_sigma_y0(x, MAT.with_penalty(3.0, 0.0))
    assert np.all(s == MAT.sy0_max) and np.all(ds == 0.0)
    with pytest.raises(ValueError):
        mt.interp_E(np.array([1.2]), MAT)


def test_von_mises_uniaxial_and_shear():
    assert mt.von_mises(np.array([2.0, 0.0, 0.0])) == pytest.approx(2.0)
    assert mt.von_mises(np.array([0.0, 0.0, 1.0])) == pytest.approx(np.sqrt(3.0))
    assert mt.von_mises(np.array([1.0, 1.0, 0.0])) == pytest.approx(1.0)


def test_elastic_step_is_exact(rng):
    pm = points(20, rng)
    de = rng.normal(scale=1e-5, size=(20, 3))
    v, plastic = mt.return_map(mt.virgin_state(20), de, pm)
    assert not plastic.any()
    np.testing.assert_allclose(v[:, mt.SIG], np.einsum("n,ij,nj->ni", pm.E, pm.D0, de))
    assert np.all(v[:, mt.KAPPA] == 0) and np.all(v[:, mt.LAM] == 0)


def test_converged_states_satisfy_residual_and_yield(rng):
    v, pm = random_plastic_history(rng, 300)
    de = rng.normal(scale=4e-3, size=(300, 3))
    vn, plastic = mt.return_map(v, de, pm)
    assert plastic.sum() > 100
    r = mt.local_residual(vn, v, de, pm, plastic)
    sy = pm.yield_stress(vn[:, mt.KAPPA])
    assert np.abs(r[:, mt.SIG]).max() <= 1e-10 * np.abs(vn[:, mt.SIG]).max()
    f = mt.von_mises(vn[:, mt.SIG]) - sy
    assert np.all(f <= 1e-9 * MAT.sy0_max)
    assert np.all(np.abs(f[plastic]) <= 1e-9 * MAT.sy0_max)
    assert np.all(vn[:, mt.KAPPA] >= v[:, mt.KAPPA])
    assert np.all(vn[:, mt.LAM] >= v[:, mt.LAM])


def test_kappa_increment_follows_flow_rule(rng):
    v, pm = random_plastic_history(rng, 50, steps=1, scale=1e-2)
    a, m, _ = mt.flow_direction(v[:, mt.SIG])
    np.testing.assert_allclose(v[:, mt.KAPPA], m * v[:, mt.LAM], rtol=1e-12, atol=1e-16)
    np.testing.assert_allclose(v[:, mt.EPS], a * v[:, mt.LAM][:, None], rtol=1e-10, atol=1e-16)


def test_zero_yield_stress_points_flow_under_any_stress():
    mat = MaterialParams(sy0_min=0.0)
    pm = PointMaterial.from_density(np.zeros(2), mat)
    de = np.array([[1e-3, 0.0, 0.0], [0.0, 0.0, 0.0]])
    v, plastic = mt.return_map(mt.virgin_state(2), de, pm)
    assert plastic.tolist() == [True, False]
    assert v[0, mt.KAPPA] > 0


def _fd_jacobian(fun, x, h=1e-7):
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h * max(1.0, abs(x[k]))
        cols.append((fun(x + e) - fun(x - e)) / (2 * e[k]))
    return np.array(cols).T


@pytest.mark.parametrize("plastic_flag", [True, False])
def test_local_jacobians_against_finite_differences(rng, plastic_flag):
    v_prev, pm = random_plastic_history(rng, 1, steps=1, scale=1e-2)
    de = rng.normal(scale=3e-3, size=(1, 3))
    v, plastic = mt.return_map(v_prev, de, pm)
    if not plastic_flag:
        plastic = np.zeros(1, dtype=bool)
    res = lambda vv, vp=v_prev, d=de: mt.local_residual(vv[None], vp, d, pm, plastic)[0]  # noqa: E731
    J = mt.dH_dv(v, v_prev, pm, plastic)[0]
    np.testing.assert_allclose(J, _fd_jacobian(lambda z: res(z), v[0]), rtol=1e-5, atol=1e-6)
    Jp = mt.dH_dv_prev(v, pm, plastic)[0]
    fd = _fd_jacobian(lambda z: res(v[0], z[None]), v_prev[0])
    np.testing.assert_allclose(Jp, fd, rtol=1e-5, atol=1e-6)
    G = mt.dH_deps(pm)[0]
    fd = _fd_jacobian(lambda z: res(v[0], v_prev, z[None]), de[0])
    np.testing.assert_allclose(G, fd, rtol=1e-6, atol=1e-6)


def test_density_derivative_of_local_residual(rng):
    xbar = np.array([0.7])
    mat = MAT
    pm = PointMaterial.from_density(xbar, mat)
    v_prev = mt.virgin_state(1)
    de = np.array([[4e-3, -1e-3, 2e-3]])
    v, plastic = mt.return_map(v_prev, de, pm)
    assert plastic[0]
    g = mt.dH_dxbar(v, v_prev, de, pm, plastic)[0]
    h = 1e-7
    rp = mt.local_residual(v, v_prev, de, PointMaterial.from_density(xbar + h, mat), plastic)
    rm = mt.local_residual(v, v_prev, de, PointMaterial.from_density(xbar - h, mat), plastic)
    np.testing.assert_allclose(g, ((rp - rm) / (2 * h))[0], rtol=1e-6, atol=1e-9)


def test_consistent_tangent_matches_finite_differences(rng):
    v_prev, pm = random_plastic_history(rng, 1, steps=2, scale=5e-3)
    de = np.array([[3e-3, 1e-3, -2e-3]])
    v, plastic = mt.return_map(v_prev, de, pm)
    assert plastic[0]
    C = mt.consistent_tangent(v, v_prev, pm, plastic)[0]
    sig = lambda d: mt.return_map(v_prev, d[None], pm)[0][0, mt.SIG]  # noqa: E731
    np.testing.assert_allclose(C, _fd_jacobian(sig, de[0], h=1e-9), rtol=1e-5,
                               atol=1e-5 * np.abs(C).max())
    Ce = mt.consistent_tangent(v, v_prev, pm, np.zeros(1, dtype=bool))[0]
    np.testing.assert_array_equal(Ce, pm.D[0])


def test_oracle_agreement_on_random_cases(rng):
    n = 200
    v, pm = random_plastic_history(rng, n, steps=2)
    de = rng.normal(scale=4e-3, size=(n, 3))
    vn, plastic = mt.return_map(v, de, pm)
    worst = 0.0
    for k in range(n):
        vo, po = oracle_return_map(v[k], de[k], pm.E[k], MAT.nu, pm.sy0[k], MAT.H)
        assert po == plastic[k]
        worst = max(worst, np.max(np.abs(vo - vn[k]) / np.maximum(np.abs(vo), 1e-12)))
    assert worst <= 1e-10


def test_local_failure_reports_gauss_point():
    err = mt.LocalConvergenceError(np.array([7, 9]), 1e-3)
    assert "first id 7" in str(err) and err.gauss_points.tolist() == [7, 9]
