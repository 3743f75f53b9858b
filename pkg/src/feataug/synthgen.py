"""Synthetic class-conditional Gaussian embedding corpora.

Used as a stand-in for encoded sentence embeddings: each class c has a mean
vector and a per-dimension stddev, and row i of class c is
``mean_c + stddev_c * z`` with z drawn from a standard normal.  Class
separation is directly controllable, which makes classifier and generator
behavior predictable enough to assert on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import DatasetBundle, EmbeddingDataset, LabelVocab
from .errors import DataError

__all__ = ["ClassSpec", "MixtureSpec", "generate_mixture", "snipslike_spec"]


@dataclass(frozen=True)
class ClassSpec:
    """One mixture component: name, mean, stddev, per-split row counts."""

    name: str
    mean: np.ndarray
    stddev: np.ndarray
    train_count: int
    dev_count: int
    test_count: int

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64)
        stddev = np.array(self.stddev, dtype=np.float64)
        if mean.ndim != 1 or stddev.shape != mean.shape:
            raise DataError(f"class {self.name!r}: mean and stddev must be "
                            "1-D and the same length")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(stddev))):
            raise DataError(f"class {self.name!r}: non-finite mean or stddev")
        if np.any(stddev <= 0):
            raise DataError(f"class {self.name!r}: stddev must be > 0")
        for count in (self.train_count, self.dev_count, self.test_count):
            if count < 0:
                raise DataError(f"class {self.name!r}: negative row count")
        mean.setflags(write=False)
        stddev.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "stddev", stddev)


@dataclass(frozen=True)
class MixtureSpec:
    """A full mixture: vector width plus at least two classes."""

    dim: int
    classes: tuple[ClassSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if self.dim < 1:
            raise DataError(f"dim must be >= 1, got {self.dim}")
        if len(self.classes) < 2:
            raise DataError("a mixture needs at least 2 classes")
        seen = set()
        for c in self.classes:
            if c.mean.shape != (self.dim,):
                raise DataError(f"class {c.name!r}: mean length "
                                f"{c.mean.shape[0]} does not match dim {self.dim}")
            if c.name in seen:
                raise DataError(f"duplicate class name {c.name!r}")
            seen.add(c.name)

    @property
    def vocab(self) -> LabelVocab:
        return LabelVocab(tuple(c.name for c in self.classes))


def generate_mixture(spec: MixtureSpec, seed: int) -> DatasetBundle:
    """Sample a bundle from the mixture, deterministically for (spec, seed).

    Draw order is fixed: split-major (train, dev, test), classes in spec
    order within each split, rows of one class drawn as a single block of
    standard normals.  Rows in each split are grouped by class, in spec order.
    """
    rng = np.random.default_rng(seed)
    vocab = spec.vocab
    splits = []
    for attr in ("train_count", "dev_count", "test_count"):
        blocks, labels = [], []
        for label_id, c in enumerate(spec.classes):
            count = getattr(c, attr)
            z = rng.standard_normal((count, spec.dim))
            blocks.append(c.mean + c.stddev * z)
            labels.append(np.full(count, label_id, np.int64))
        splits.append(EmbeddingDataset(
            spec.dim,
            np.concatenate(labels) if labels else np.empty(0, np.int64),
            np.concatenate(blocks) if blocks else np.empty((0, spec.dim)),
            vocab))
    return DatasetBundle(*splits)


def snipslike_spec(dim: int, separation: float, seed: int, *,
                   train_per_class: int = 1800, dev_per_class: int = 100,
                   test_per_class: int = 100) -> MixtureSpec:
    """Seven balanced intent-like classes with unit stddev.

    Class means are random directions on the sphere of radius ``separation``
    (drawn from the given seed), so inter-class distance scales with
    separation while within-class spread stays fixed at 1.
    """
    if dim < 2:
        raise DataError(f"dim must be >= 2, got {dim}")
    if not separation > 0:
        raise DataError(f"separation must be > 0, got {separation}")
    rng = np.random.default_rng(seed)
    classes = []
    for i in range(7):
        direction = rng.standard_normal(dim)
        direction /= np.linalg.norm(direction)
        classes.append(ClassSpec(
            name=f"intent{i}",
            mean=direction * separation,
            stddev=np.ones(dim),
            train_count=train_per_class,
            dev_count=dev_per_class,
            test_count=test_per_class))
    return MixtureSpec(dim=dim, classes=tuple(classes))
