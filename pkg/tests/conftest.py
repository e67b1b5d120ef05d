import numpy as np
import pytest

from polypgen.synth import SynthConfig, generate_dataset


@pytest.fixture(scope="session")
def small_dataset():
    """24 samples at 32x32, half polyp; shared by read-only tests."""
    return generate_dataset(SynthConfig(count=24, resolution=(32, 32), seed=7))


def rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)
