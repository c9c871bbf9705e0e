import numpy as np
import pytest

from plastopt.mma import MmaOptions, MmaState, mma_update, subsolv


def run_qp(x0, target, weights, opts, cons=None, iters=50):
    st = MmaState.box(x0.size, options=opts)
    x = x0.copy()
    history = [x]
    for _ in range(iters):
        f0 = 0.5 * np.sum(weights * (x - target) ** 2)
        df0 = weights * (x - target)
        if cons is None:
            fc, dfc = np.array([-1.0]), np.zeros((1, x.size))
        else:
            fc, dfc = cons(x)
        x = mma_update(x, f0, df0, fc, dfc, st)
        history.append(x)
    return x, history


def test_separable_quadratic_converges(rng):
    n = 30
    target = rng.uniform(0.1, 0.9, n)
    weights = rng.uniform(0.5, 5.0, n)
    x, hist = run_qp(np.full(n, 0.5), target, weights, MmaOptions(asy_min=1e-5))
    assert np.abs(x - target).max() <= 1e-4
    for a, b in zip(hist, hist[1:]):
        assert np.abs(b - a).max() <= 0.2 + 1e-15


def test_constrained_quadratic_matches_kkt():
    # minimize |x - 1|^2 / 2 subject to mean(x) <= 0.4: solution x = 0.4
    n = 10

    def cons(x):
        return np.array([x.mean() - 0.4]), np.full((1, n), 1.0 / n)

    x, _ = run_qp(np.full(n, 0.2), np.ones(n), np.ones(n), MmaOptions(asy_min=1e-5), cons,
                  iters=60)
    np.testing.assert_allclose(x, 0.4, atol=1e-4)


def test_zero_gradient_is_stationary():
    st = MmaState.box(5)
    x = np.linspace(0.1, 0.9, 5)
    xn = mma_update(x, 1.0, np.zeros(5), np.array([-1.0]), np.zeros((1, 5)), st)
    np.testing.assert_allclose(xn, x, atol=1e-6)


def test_steps_are_clipped_to_box_and_move_limit():
    st = MmaState.box(4)
    x = np.array([0.05, 0.5, 0.5, 0.95])
    df0 = np.array([10.0, 10.0, -10.0, -10.0])
    xn = mma_update(x, 0.0, df0, np.array([-1.0]), np.zeros((1, 4)), st)
    assert xn[0] == pytest.approx(0.0, abs=1e-9) and xn[3] == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(xn[1:3], [0.3, 0.7], atol=1e-9)
    assert np.all(xn >= 0) and np.all(xn <= 1)
    assert np.abs(xn - x).max() <= 0.2


def test_asymptote_rules():
    from plastopt.mma import _asymptotes

    st = MmaState.box(3)
    x = np.array([0.5, 0.5, 0.5])
    low, upp = _asymptotes(x, st)
    np.testing.assert_allclose([low, upp], [x - 0.5, x + 0.5])
    st.iteration = 3
    st.xold1 = np.array([0.4, 0.6, 0.5])
    st.xold2 = np.array([0.3, 0.5, 0.5])
    st.low, st.upp = st.xold1 - 0.2, st.xold1 + 0.2
    low, upp = _asymptotes(x, st)
    # steady move widens by 1.2, reversal shrinks by 0.7, no move keeps the gap
    np.testing.assert_allclose(x - low, [0.24, 0.14, 0.2])
    np.testing.assert_allclose(upp - x, [0.24, 0.14, 0.2])
    st.low, st.upp = st.xold1 - 1e-4, st.xold1 + 1e-4
    low, upp = _asymptotes(x, st)
    np.testing.assert_allclose(x - low, 0.01)


def test_non_finite_gradients_rejected():
    st = MmaState.box(2)
    with pytest.raises(ValueError):
        mma_update(np.full(2, 0.5), 0.0, np.array([np.nan, 0.0]), np.array([-1.0]),
                   np.zeros((1, 2)), st)


def test_subproblem_failure_keeps_design(monkeypatch, caplog):
    import plastopt.mma as mma

    def boom(*a, **k):
        raise np.linalg.LinAlgError("singular")

    monkeypatch.setattr(mma, "subsolv", boom)
    st = MmaState.box(3)
    x = np.full(3, 0.5)
    xn = mma.mma_update(x, 0.0, np.ones(3), np.array([0.5]), np.ones((1, 3)), st)
    np.testing.assert_array_equal(xn, x)
    assert "keeping current design" in caplog.text
    assert np.all(st.low < x) and np.all(st.upp > x)


def test_subsolv_single_variable_closed_form():
    # min p0/(U-x) + q0/(x-L) on [alfa, beta] with a slack constraint
    low, upp = np.array([-1.0]), np.array([2.0])
    p0, q0 = np.array([1.0]), np.array([4.0])
    x = subsolv(1, low, upp, np.array([0.0]), np.array([1.5]), p0, q0, np.zeros((1, 1)),
                np.zeros((1, 1)), np.array([1.0]), np.zeros(1), np.full(1, 1000.0), np.ones(1),
                1.0)
    # stationarity: p0/(U-x)^2 = q0/(x-L)^2 -> (x + 1) = 2 (2 - x)
    assert x[0] == pytest.approx(1.0, abs=1e-6)
