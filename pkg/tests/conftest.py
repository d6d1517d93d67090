import numpy as np
import pytest
from hypothesis import settings

from dgz.dataio import SynthSpec, synth_dataset
from dgz.tensor_core import Rng

settings.register_profile("dgz", max_examples=40, deadline=None)
settings.load_profile("dgz")


@pytest.fixture
def rng():
    return Rng(12345)


@pytest.fixture(scope="session")
def small_dataset():
    """8 seen / 3 unseen classes, 60 samples each: fast enough for unit tests."""
    return synth_dataset(SynthSpec(n_seen=8, n_unseen=3, d_x=12, d_a=6, samples_per_class=60, seed=3))


def fast_config(**changes):
    from dgz.pipelines import TrainConfig

    base = dict(
        g_hidden=(32,),
        d_hidden=(32,),
        m_hidden=(32,),
        mapper_hidden=(32,),
        gen_epochs=3,
        cls_epochs=5,
        mapper_epochs=5,
        batch_size=128,
        per_class_gen=20,
        lr=1e-3,
    )
    base.update(changes)
    return TrainConfig(**base)


def assert_close(a, b, tol):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-300)
    assert np.abs(a - b).max(initial=0.0) / scale < tol
