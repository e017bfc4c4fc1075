import os
import tempfile

import numpy as np
import pytest

# Set test environment variables before the app reads its settings
_TMP = tempfile.mkdtemp(prefix="justdense-tests-")
os.environ["API_SECRET_KEY"] = "test_secret_key"
os.environ["DATABASE_URL"] = f"sqlite:///{_TMP}/test_runs.db"
os.environ["OUTPUT_DIR"] = os.path.join(_TMP, "runs")
os.environ["LOG_DIR"] = ""
os.environ["LOG_LEVEL"] = "WARNING"


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale runs, selected with -m slow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("markexpr"):
        return
    skip_slow = pytest.mark.skip(reason="desk-scale run; use -m slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def small_config():
    """A forecasting comparison small enough to train in a few seconds"""
    from app.backend.models import ExperimentConfig

    return ExperimentConfig(
        template="attention", lookback=8, horizon=2, channels=2, n_windows=60,
        width=4, heads=2, n_blocks=1, ffn_hidden=8, steps=3, batch_size=8,
        calibration_size=4, seed=7,
    )
