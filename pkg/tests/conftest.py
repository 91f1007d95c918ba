import numpy as np
import pytest

from depcon.models import LV_TRUE, LV_Y0, generate_observations, lv_model, make_pulse_train

_ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    """Collect one acceptance line; printed in the terminal summary."""
    line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
    _ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def lv_data():
    """Short LV problem used by the fast unit tests."""
    model = lv_model()
    S = make_pulse_train(10.0, 0.05, n_pulses=5, seed=1)
    obs = generate_observations(model, LV_TRUE, S, LV_Y0, 10.0, 80)
    return model, S, obs, LV_Y0.copy()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
