import numpy as np
import pytest

from aibe.datakit import SynthSpec, gen_synthetic
from aibe.numkit import make_rng


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture(scope="session")
def small_ds():
    spec = SynthSpec(n_seen=4, n_unseen=2, n_attributes=3, feature_dim=6, per_class=8,
                     seen_test_per_class=3, sigma=0.2)
    return gen_synthetic(spec, make_rng(5))


def unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)
