import numpy as np
import pytest

from feataug.dataio import DatasetBundle, EmbeddingDataset, LabelVocab
from feataug.synthgen import ClassSpec, MixtureSpec, generate_mixture


def make_ds(labels, vectors, names):
    """Dataset literal for tests: labels by id, vectors as nested lists."""
    vectors = np.asarray(vectors, np.float64)
    return EmbeddingDataset(vectors.shape[1] if vectors.ndim == 2 else 0,
                            np.asarray(labels, np.int64), vectors,
                            LabelVocab(tuple(names)))


def small_mixture(dim=4, sep=6.0, train=30, dev=10, test=10, n_classes=3,
                  stddev=1.0):
    """Well-separated axis-aligned Gaussian classes; cheap to train on."""
    classes = []
    for i in range(n_classes):
        mean = np.zeros(dim)
        mean[i % dim] = sep
        mean[(i + 1) % dim] = -sep if i % 2 else sep
        classes.append(ClassSpec(f"c{i}", mean, np.full(dim, stddev),
                                 train, dev, test))
    return MixtureSpec(dim=dim, classes=tuple(classes))


@pytest.fixture(scope="session")
def tiny_bundle() -> DatasetBundle:
    return generate_mixture(small_mixture(), seed=11)
