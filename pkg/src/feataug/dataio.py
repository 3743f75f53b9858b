"""Embedding dataset types, the EMBV1 text format, and dataset surgery.

An :class:`EmbeddingDataset` is an immutable table of labeled real vectors of
fixed width together with a :class:`LabelVocab` mapping label names to dense
integer ids.  Everything else in the package consumes and produces these
values; operations never mutate, they return new datasets.

EMBV1 format (UTF-8 text, one record per line)::

    embv1 <dim> <count>
    labels <name1> <name2> ...           # optional closed label vocabulary
    <label>\\t<v1> <v2> ... <v_dim>      # exactly <count> data rows

The first line is a fixed header.  If the second line starts with ``labels``
it declares a closed vocabulary: every row label must come from it and the
dataset vocabulary preserves its order.  Without it, labels are interned in
first-appearance order.  Vector components are serialized as shortest
round-trip decimal literals, so save followed by load reproduces every float64
bit-exactly while files stay diffable text.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

__all__ = [
    "Method",
    "LabelVocab",
    "EmbeddingDataset",
    "DatasetBundle",
    "AugmentedBatch",
    "load_embeddings",
    "save_embeddings",
    "load_manifest",
    "save_manifest",
    "subsample_class",
    "remove_label",
    "merge",
]


class Method(enum.Enum):
    """Augmentation methods understood by the generators and the harness."""

    UPSAMPLE = "upsample"
    PERTURB = "perturb"
    LINEAR = "linear"
    EXTRA = "extra"
    CVAE = "cvae"
    DELTA_R = "deltar"
    DELTA_S = "deltas"

    @classmethod
    def from_name(cls, name: str) -> "Method":
        for m in cls:
            if m.value == name:
                return m
        raise DataError(f"unknown method {name!r}; expected one of "
                        + ", ".join(m.value for m in cls))


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype)  # always copies
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LabelVocab:
    """Ordered, duplicate-free mapping between label names and integer ids."""

    names: tuple[str, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        for n in names:
            if not n or any(c.isspace() for c in n):
                raise DataError(f"invalid label name {n!r}: must be non-empty "
                                "and contain no whitespace")
        index = {n: i for i, n in enumerate(names)}
        if len(index) != len(names):
            raise DataError("duplicate label names in vocabulary")
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.names)

    def id_of(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise DataError(f"unknown label {name!r}") from None

    def name_of(self, label_id: int) -> str:
        if not 0 <= label_id < len(self.names):
            raise DataError(f"label id {label_id} out of range "
                            f"[0, {len(self.names)})")
        return self.names[label_id]


@dataclass(frozen=True)
class EmbeddingDataset:
    """Immutable (N, dim) float64 vectors with per-row integer labels."""

    dim: int
    labels: np.ndarray
    vectors: np.ndarray
    vocab: LabelVocab

    def __post_init__(self):
        if self.dim < 1:
            raise DataError(f"dim must be >= 1, got {self.dim}")
        labels = _frozen_array(self.labels, np.int64)
        vectors = _frozen_array(self.vectors, np.float64)
        if vectors.ndim != 2 or vectors.shape[1] != self.dim:
            raise DataError(f"vectors must have shape (N, {self.dim}), "
                            f"got {vectors.shape}")
        if labels.shape != (vectors.shape[0],):
            raise DataError(f"labels shape {labels.shape} does not match "
                            f"{vectors.shape[0]} rows")
        if not np.all(np.isfinite(vectors)):
            raise DataError("vectors contain non-finite components")
        if labels.size and (labels.min() < 0 or labels.max() >= len(self.vocab)):
            raise DataError("labels reference ids outside the vocabulary")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "vectors", vectors)

    @property
    def n_rows(self) -> int:
        return self.vectors.shape[0]

    def class_counts(self) -> np.ndarray:
        """Row count per vocabulary id, shape (len(vocab),)."""
        return np.bincount(self.labels, minlength=len(self.vocab))

    def indices_of(self, label_id: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label_id)

    def subset(self, indices) -> "EmbeddingDataset":
        """New dataset holding the given rows (same vocabulary)."""
        idx = np.asarray(indices, dtype=np.int64)
        return EmbeddingDataset(self.dim, self.labels[idx],
                                self.vectors[idx], self.vocab)


@dataclass(frozen=True)
class DatasetBundle:
    """Train/dev/test splits sharing one vocabulary and vector width."""

    train: EmbeddingDataset
    dev: EmbeddingDataset
    test: EmbeddingDataset

    def __post_init__(self):
        dims = {self.train.dim, self.dev.dim, self.test.dim}
        if len(dims) != 1:
            raise DataError(f"splits disagree on dim: {sorted(dims)}")
        names = {s.vocab.names for s in (self.train, self.dev, self.test)}
        if len(names) != 1:
            raise DataError("splits disagree on label vocabulary")

    @property
    def dim(self) -> int:
        return self.train.dim

    @property
    def vocab(self) -> LabelVocab:
        return self.train.vocab


@dataclass(frozen=True)
class AugmentedBatch:
    """Generated vectors for one label, tagged with method and seed."""

    label_id: int
    vectors: np.ndarray
    method: Method
    gen_seed: int

    def __post_init__(self):
        vectors = _frozen_array(self.vectors, np.float64)
        if vectors.ndim != 2:
            raise DataError(f"batch vectors must be 2-D, got {vectors.shape}")
        if not np.all(np.isfinite(vectors)):
            raise DataError("batch vectors contain non-finite components")
        if self.label_id < 0:
            raise DataError(f"label id must be >= 0, got {self.label_id}")
        object.__setattr__(self, "vectors", vectors)

    @property
    def size(self) -> int:
        return self.vectors.shape[0]


def load_embeddings(path) -> EmbeddingDataset:
    """Parse an EMBV1 file; raise DataError naming the offending line."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise DataError(f"{path}: cannot read: {e}") from None
    lines = text.split("\n")

    def fail(lineno: int, msg: str):
        raise DataError(f"{path}:{lineno}: {msg}")

    if not lines or not lines[0].strip():
        fail(1, "missing EMBV1 header")
    head = lines[0].split()
    if len(head) != 3 or head[0] != "embv1":
        fail(1, f"malformed header {lines[0]!r}; expected 'embv1 <dim> <count>'")
    try:
        dim, count = int(head[1]), int(head[2])
    except ValueError:
        fail(1, f"malformed header {lines[0]!r}: dim/count must be integers")
    if dim < 1:
        fail(1, f"dim must be >= 1, got {dim}")
    if count < 0:
        fail(1, f"count must be >= 0, got {count}")

    pos = 1
    closed: list[str] | None = None
    if pos < len(lines) and lines[pos].split()[:1] == ["labels"]:
        closed = lines[pos].split()[1:]
        pos += 1

    names: list[str] = list(closed) if closed is not None else []
    index = {n: i for i, n in enumerate(names)}
    if closed is not None and len(index) != len(names):
        fail(pos, "duplicate names in labels line")

    labels = np.empty(count, dtype=np.int64)
    vectors = np.empty((count, dim), dtype=np.float64)
    for r in range(count):
        lineno = pos + r + 1
        if pos + r >= len(lines):
            fail(lineno, f"expected {count} data rows, file ends after {r}")
        line = lines[pos + r]
        label, sep, rest = line.partition("\t")
        if not sep:
            fail(lineno, "missing TAB between label and vector")
        vals = rest.split()
        if len(vals) != dim:
            fail(lineno, f"expected {dim} components, got {len(vals)}")
        try:
            row = [float(v) for v in vals]
        except ValueError:
            fail(lineno, f"unparseable vector component in {rest!r}")
        vectors[r] = row
        if not np.all(np.isfinite(vectors[r])):
            fail(lineno, "non-finite vector component")
        if label in index:
            labels[r] = index[label]
        elif closed is not None:
            fail(lineno, f"label {label!r} not in the declared vocabulary")
        else:
            index[label] = len(names)
            names.append(label)
            labels[r] = index[label]

    for extra, line in enumerate(lines[pos + count:]):
        if line.strip():
            fail(pos + count + extra + 1, f"trailing content {line!r}")

    return EmbeddingDataset(dim, labels, vectors, LabelVocab(tuple(names)))


def save_embeddings(ds: EmbeddingDataset, path) -> None:
    """Write EMBV1.  Always emits the labels line so the vocabulary (including
    names with zero rows) survives a round trip exactly."""
    path = Path(path)
    out = [f"embv1 {ds.dim} {ds.n_rows}"]
    if len(ds.vocab):
        out.append("labels " + " ".join(ds.vocab.names))
    names = ds.vocab.names
    for lab, row in zip(ds.labels, ds.vectors):
        out.append(names[lab] + "\t" + " ".join(repr(float(v)) for v in row))
    path.write_text("\n".join(out) + "\n", encoding="utf-8")


_MANIFEST_KEYS = ("train", "dev", "test")


def save_manifest(path, train_path, dev_path, test_path) -> None:
    """Write a three-line key = value manifest naming the split files."""
    path = Path(path)
    lines = [f"{k} = {v}" for k, v in
             zip(_MANIFEST_KEYS, (train_path, dev_path, test_path))]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_manifest(path) -> DatasetBundle:
    """Load the bundle a manifest names.  Relative split paths are resolved
    against the manifest's own directory."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise DataError(f"{path}: cannot read: {e}") from None
    entries: dict[str, str] = {}
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not value:
            raise DataError(f"{path}:{lineno}: expected 'key = path', "
                            f"got {raw!r}")
        if key not in _MANIFEST_KEYS:
            raise DataError(f"{path}:{lineno}: unknown key {key!r}")
        if key in entries:
            raise DataError(f"{path}:{lineno}: duplicate key {key!r}")
        entries[key] = value
    missing = [k for k in _MANIFEST_KEYS if k not in entries]
    if missing:
        raise DataError(f"{path}: missing keys: {', '.join(missing)}")
    splits = []
    for key in _MANIFEST_KEYS:
        p = Path(entries[key])
        if not p.is_absolute():
            p = path.parent / p
        splits.append(load_embeddings(p))
    return DatasetBundle(*splits)


def subsample_class(ds: EmbeddingDataset, label_id: int, k: int,
                    seed: int) -> tuple[EmbeddingDataset, EmbeddingDataset]:
    """Split off k uniformly chosen rows of one class.

    Returns (seeds, rest) where seeds holds exactly k rows of ``label_id``
    drawn without replacement and rest holds every row of the other classes.
    The remaining rows of ``label_id`` are dropped.  Seed rows keep ascending
    dataset order regardless of draw order.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    ds.vocab.name_of(label_id)  # range check
    target_idx = ds.indices_of(label_id)
    if len(target_idx) < k:
        raise DataError(f"class {ds.vocab.name_of(label_id)!r} has only "
                        f"{len(target_idx)} rows, cannot draw k={k} seeds")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(target_idx), size=k, replace=False)
    chosen.sort()
    seeds = ds.subset(target_idx[chosen])
    rest = ds.subset(np.flatnonzero(ds.labels != label_id))
    return seeds, rest


def remove_label(ds: EmbeddingDataset, label_id: int) -> EmbeddingDataset:
    """Drop every row of one class; vocabulary is left untouched."""
    ds.vocab.name_of(label_id)  # range check
    return ds.subset(np.flatnonzero(ds.labels != label_id))


def merge(ds: EmbeddingDataset, batch: AugmentedBatch) -> EmbeddingDataset:
    """Append a generated batch to a dataset; batch rows come last."""
    if batch.vectors.shape[1] != ds.dim:
        raise DataError(f"batch dim {batch.vectors.shape[1]} does not match "
                        f"dataset dim {ds.dim}")
    ds.vocab.name_of(batch.label_id)  # must be a known class
    labels = np.concatenate([ds.labels,
                             np.full(batch.size, batch.label_id, np.int64)])
    vectors = np.concatenate([ds.vectors, batch.vectors])
    return EmbeddingDataset(ds.dim, labels, vectors, ds.vocab)
