import hypothesis
import numpy as np
import pytest

from archvol import Volume

hypothesis.settings.register_profile("default", max_examples=40, deadline=None)
hypothesis.settings.load_profile("default")


def random_volume(rng: np.random.Generator, dims, lo=0.0, hi=1.0) -> Volume:
    data = rng.uniform(lo, hi, size=dims).astype(np.float32)
    return Volume(tuple(dims), (1.0, 1.0, 1.0), data)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
