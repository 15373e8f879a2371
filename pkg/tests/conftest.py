import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "gausslan", deadline=None, max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])
settings.load_profile("gausslan")

from gausslan import make_model  # noqa: E402

#: one interior parameter per family, with the stage rules used throughout the tests
MODEL_CASES = {
    "mixed_fbm": ({}, [0.1, 1.0, 0.2, 1.0]),
    "fou": ({"beta": 0.5}, [1.0, 0.3, 1.0]),
    "ar1_mild": ({"alpha": 0.15}, [1.0, 1.0]),
    "white_noise": ({}, [1.5]),
}


@pytest.fixture(params=sorted(MODEL_CASES))
def model_case(request):
    params, theta = MODEL_CASES[request.param]
    return make_model(request.param, **params), np.array(theta)


def fgn_acf(H, k):
    """Closed-form autocovariance of unit-variance fractional Gaussian noise."""
    k = np.abs(np.asarray(k, dtype=float))
    return 0.5 * (np.abs(k + 1) ** (2 * H) - 2 * k ** (2 * H) + np.abs(k - 1) ** (2 * H))


#: one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: (int(s.split()[1].rstrip(":abc")), s)):
            terminalreporter.write_line(line)
