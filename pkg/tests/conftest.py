import os
import sys

import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))
sys.path.insert(0, os.path.abspath(os.path.dirname(__file__)))

from experiments import calibrate  # noqa: E402
from factories import TOY_CALIBRATION, make_random_state  # noqa: E402
from models import Calibration, RunConfig  # noqa: E402

# full-size campaigns only run when RIS_RUN_SLOW is set
RUN_SLOW = os.getenv("RIS_RUN_SLOW", "").lower() in ("1", "true", "yes")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-size campaign, enabled by RIS_RUN_SLOW=1")


def pytest_collection_modifyitems(config, items):
    if RUN_SLOW:
        return
    skip = pytest.mark.skip(reason="set RIS_RUN_SLOW=1 to run")
    for item in items:
        if item.get_closest_marker("slow") is not None:
            item.add_marker(skip)


@pytest.fixture
def default_cfg() -> RunConfig:
    return RunConfig()


@pytest.fixture
def toy_cal() -> Calibration:
    return TOY_CALIBRATION


@pytest.fixture
def random_state():
    return make_random_state


@pytest.fixture(scope="session")
def calibration() -> Calibration:
    """Full calibration of the default parameter table, shared by the slow tests"""
    return calibrate(RunConfig())


@pytest.fixture(scope="session")
def baseline_calibration() -> Calibration:
    cfg = RunConfig()
    cfg = cfg.model_copy(update={"calibration": cfg.calibration.model_copy(update={"ris_anchor_elements": 0})})
    return calibrate(cfg)
