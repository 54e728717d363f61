import numpy as np
import pytest
from hypothesis import settings

from glowrecon.forward import TimeSteppingPlan
from glowrecon.grid import make_grid

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture(scope="session")
def mini_grid():
    return make_grid((-0.3, -0.3, -0.16), (0.3, 0.3, 0.1), (-0.2, -0.2, -0.1), (0.2, 0.2, 0.04), 0.02)


@pytest.fixture(scope="session")
def mini_plan():
    return TimeSteppingPlan(0.003, 0.9)


@pytest.fixture(scope="session")
def column_grid():
    """Narrow column: Neumann side walls keep a normally incident plane wave one-dimensional."""
    return make_grid((-0.04, -0.04, -0.16), (0.04, 0.04, 0.1), (-0.02, -0.02, -0.1), (0.02, 0.02, 0.04), 0.02)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


BLOCK = {"shapes": [{"kind": "box", "center": [0.0, 0.0, -0.02], "size": [0.06, 0.06, 0.04], "eps": 4.45}]}


@pytest.fixture(scope="session")
def block_sim():
    """Clean mini-preset records of the centered eps = 4.45 block."""
    from glowrecon.config import from_dict
    from glowrecon.pipeline import simulate

    cfg = from_dict({"preset": "mini", "phantom": BLOCK, "measurement_z": 0.06})
    return cfg, simulate(cfg)
