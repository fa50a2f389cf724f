"""Shared fixtures for the manipulation primitives tests."""

import numpy as np
import pytest

from manipulation_primitives.core.config import ConfigurationManager
from manipulation_primitives.core.entities import Trial
from manipulation_primitives.core.logging_service import reset_logging


@pytest.fixture(autouse=True)
def fresh_config():
    """Every test starts from the default configuration."""
    config = ConfigurationManager.reset_instance()
    yield config
    reset_logging()
    ConfigurationManager.reset_instance()


def make_trial(n=51, rate=50.0, trial_id="t1", subject="s1", action=None, v=None, w=None, F=None, b=None):
    """Trial with zero channels unless blocks are given."""
    t = np.arange(n) / rate
    return Trial(
        id=trial_id,
        subject=subject,
        action_label=action,
        t=t,
        v=np.zeros((n, 3)) if v is None else v,
        w=np.zeros((n, 3)) if w is None else w,
        F=np.zeros((n, 18)) if F is None else F,
        b=np.zeros((n, 8)) if b is None else b,
        rate=rate,
    )


@pytest.fixture
def trial_factory():
    return make_trial
