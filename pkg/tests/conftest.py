import numpy as np
import pytest

from dwf import Dataset, MlpSpec, SeededRng


@pytest.fixture
def rng():
    return SeededRng(0)


def tiny_classification(seed=0, n=256, d=6, classes=3):
    """Linearly-ish separable blobs, enough signal that a small net learns."""
    r = SeededRng(seed).child("blobs")
    centers = 2.0 * r.standard_normal((classes, d))
    labels = r.integers(0, classes, n)
    x = centers[labels] + 0.5 * r.standard_normal((n, d))
    return Dataset(x, labels.astype(np.int64), "train")


@pytest.fixture
def blobs():
    return tiny_classification()


@pytest.fixture
def small_spec():
    return MlpSpec((6, 8, 3))
