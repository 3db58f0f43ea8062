import numpy as np
import pytest

from kedmd_mpc.experiments import build_dataset, build_model
from kedmd_mpc.geometry import Box
from kedmd_mpc.systems import make_linear, make_system


@pytest.fixture(scope="session")
def vdp():
    return make_system("vdp")


@pytest.fixture(scope="session")
def tanks():
    return make_system("tanks")


@pytest.fixture(scope="session")
def vdp_data(vdp):
    # small Padua grid keeps unit tests fast
    return build_dataset(vdp, "padua:10", seed=1)


@pytest.fixture(scope="session")
def vdp_pi(vdp, vdp_data):
    return build_model(vdp_data, vdp, pi=True)


@pytest.fixture(scope="session")
def vdp_plain(vdp, vdp_data):
    return build_model(vdp_data, vdp, pi=False)


@pytest.fixture
def stable_linear():
    A = np.array([[0.9, 0.1], [0.0, 0.8]])
    B = np.array([[0.0], [0.5]])
    return make_linear(A, B, Box((-1.0,), (1.0,)), Box.cube(-1.0, 1.0, 2))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
