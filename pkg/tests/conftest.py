import numpy as np
import pytest

from plastopt.verification import appendix_case


def force_balance(model, history):
    """Per-increment ||theta f_hat - f_int|| over free DOFs, relative to ||theta f_hat||."""
    out = []
    free = model.bc.free_dofs(model.mesh.n_dofs)
    for inc in history.increments:
        ext = inc.theta * model.bc.f_hat
        res = ext - model.internal_forces(inc.v[:, 4:7])
        out.append(np.linalg.norm(res[free]) / np.linalg.norm(ext))
    return np.array(out)


@pytest.fixture(params=["point", "distributed"])
def beam(request):
    return appendix_case(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import VERDICTS
    except ImportError:
        return
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[n])
