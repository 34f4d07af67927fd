import numpy as np
import pytest

from module.certifier import make_grids


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_grids():
    # đủ mịn để bước s của ex310 dưới δ₀ = 0.1
    return make_grids((80, 60))


@pytest.fixture
def ledger_path(tmp_path):
    return str(tmp_path / "runs.db")
