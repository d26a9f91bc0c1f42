import numpy as np
import pytest

from spacslab.config import ExperimentConfig
from spacslab.fock import TruncationPolicy


@pytest.fixture
def policy():
    return TruncationPolicy(60)


@pytest.fixture
def seed():
    return 20060101


@pytest.fixture
def rng(seed):
    return np.random.default_rng(seed)


@pytest.fixture
def small_config():
    """A configuration small enough to run the whole pipeline in a few seconds."""
    return ExperimentConfig(
        alpha=0.955,
        eta=0.6,
        gain=0.03,
        n_phases=12,
        samples_per_phase=2000,
        dim=6,
        herald_frames=400_000,
        seed=7,
    )


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "experiment.env"
    path.write_text(
        "# small desk-scale run\n"
        "ALPHA=0.955\n"
        "ETA=0.6\n"
        "GAIN=0.03\n"
        "N_PHASES=12\n"
        "SAMPLES_PER_PHASE=2000\n"
        "DIM=6\n"
        "HERALD_FRAMES=400000\n"
        "SEED=7\n"
    )
    return str(path)
