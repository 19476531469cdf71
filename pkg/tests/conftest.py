from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rapolab.dataset import standard_task  # noqa: E402
from rapolab.policy import init_policy  # noqa: E402

DATA = Path(__file__).parent / "data"
REPO = Path(__file__).parent.parent


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def task():
    return standard_task(0)


@pytest.fixture
def small_policy():
    """A policy with non-trivial weights so gradients are not degenerate."""
    p = init_policy(3, hidden=5, n_bins=7, seed=3, out_scale=0.5)
    rng = np.random.default_rng(4)
    return p.with_params(p.w1, rng.normal(0, 0.3, 5), p.w2, rng.normal(0, 0.3, 7))
