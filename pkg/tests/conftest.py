import hypothesis
import numpy as np
import pytest

from emojimm.corpus import split
from emojimm.synthetic import SyntheticSpec, generate_synthetic

np.seterr(all="raise", under="ignore")

hypothesis.settings.register_profile("default", max_examples=50, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.load_profile("default")


@pytest.fixture(scope="session")
def small_spec():
    return SyntheticSpec(k=4, n=400, text_signal_classes=(0, 1), image_signal_classes=(2, 3), noise_rate=0.0, seed=3)


@pytest.fixture(scope="session")
def small_split(small_spec):
    return split(generate_synthetic(small_spec), seed=1)
