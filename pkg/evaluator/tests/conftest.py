import pytest

from rfeval.session import EvalSession, SessionConfig


@pytest.fixture(scope="session")
def session():
    return EvalSession(SessionConfig())


# decomposition ranks at which every kernel matrix keeps its full rank
LOSSLESS_RANKS = {"conv1": 8, "conv2": 24, "conv3": 48, "conv4": 48, "fc5": 10}

# per-layer parameter-budget maxima for the small CNN
BUDGET_MAX_RANKS = {"conv1": 6, "conv2": 16, "conv3": 24, "conv4": 32, "fc5": 9}

MIN_RANKS = {"conv1": 1, "conv2": 2, "conv3": 3, "conv4": 4, "fc5": 1}
