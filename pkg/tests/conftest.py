import pytest

from gcnboost.config import resolve_config
from gcnboost.synth import generate_synthetic, preset

FAST = {
    "n2v.walk_length": 10,
    "n2v.walks_per_node": 2,
    "sg.dim": 16,
    "sg.epochs": 1,
    "gcn.max_iterations": 40,
    "gcn.lr": 0.01,
}


@pytest.fixture(scope="session")
def small_ds():
    return generate_synthetic(preset("easy", num_train=60, num_validation=15, num_test=5), seed=1)


@pytest.fixture
def fast_cfg():
    return resolve_config(FAST)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
