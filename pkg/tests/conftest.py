import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from splinepolicy import demos, flow, sim

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def demo_dirs(tmp_path_factory):
    """Default demo set: 100 expert episodes per target mode."""
    root = tmp_path_factory.mktemp("demos")
    dirs = []
    for mode, seed in (("static", 0), ("dynamic", 1000)):
        cfg = sim.EpisodeConfig(mode=mode, seed=seed)
        dirs.append(sim.generate_demos(cfg, 100, root / mode, name=mode))
    return dirs


@pytest.fixture(scope="session")
def trained_model(demo_dirs):
    """Flow policy trained with default settings on ``demo_dirs``."""
    spec = flow.BiapChunkSpec()
    targets, obs = demos.load_demo_dataset(demo_dirs, spec)
    model, trace = flow.fit_model(targets, obs, spec, flow.TrainConfig(steps=2000, seed=0))
    return model, trace
