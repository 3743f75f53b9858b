"""Single-layer softmax intent classifier with input dropout.

The model is one affine map from the embedding straight to class logits;
capacity stays tiny on purpose so that accuracy differences reflect the
training data, not the classifier.  Input dropout (default 0.1) is applied to
the embedding itself during training; evaluation is deterministic.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .dataio import EmbeddingDataset, LabelVocab
from .errors import DataError, NumericError

__all__ = [
    "Selection", "ClassifierTrainConfig", "SoftmaxClassifier", "EvalResult",
    "train_classifier", "evaluate", "predict_logits",
    "save_classifier", "load_classifier",
]

logger = logging.getLogger(__name__)


class Selection(enum.Enum):
    BEST_DEV = "best_dev"    # snapshot the epoch with the best dev accuracy
    LAST_EPOCH = "last_epoch"


@dataclass(frozen=True)
class ClassifierTrainConfig:
    lr: float = 1e-3
    epochs: int = 100
    batch_size: int = 32
    input_dropout_p: float = 0.1
    selection: Selection = Selection.BEST_DEV
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not 0.0 <= self.input_dropout_p < 1.0:
            raise ValueError("input_dropout_p must be in [0, 1)")


@dataclass
class SoftmaxClassifier:
    """Logits = x @ weights.T + bias; weights has shape (n_classes, dim)."""

    weights: np.ndarray
    bias: np.ndarray
    vocab: LabelVocab
    input_dropout_p: float = 0.1

    def __post_init__(self):
        self.weights = np.asarray(self.weights, np.float64)
        self.bias = np.asarray(self.bias, np.float64)
        if self.weights.ndim != 2:
            raise DataError(f"weights must be 2-D, got {self.weights.shape}")
        if self.weights.shape[0] != len(self.vocab):
            raise DataError(f"weights rows {self.weights.shape[0]} != "
                            f"vocabulary size {len(self.vocab)}")
        if self.bias.shape != (self.weights.shape[0],):
            raise DataError(f"bias shape {self.bias.shape} does not match "
                            f"weights {self.weights.shape}")

    @property
    def dim(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class EvalResult:
    accuracy: float
    confusion: np.ndarray = field(compare=False)  # [true, predicted] counts


def predict_logits(model: SoftmaxClassifier, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, np.float64)
    if x.shape[-1] != model.dim:
        raise DataError(f"input width {x.shape[-1]} != model dim {model.dim}")
    return x @ model.weights.T + model.bias


def train_classifier(train: EmbeddingDataset, dev: EmbeddingDataset,
                     cfg: ClassifierTrainConfig = ClassifierTrainConfig()
                     ) -> tuple[SoftmaxClassifier, list[float]]:
    """Adam-train from zero-initialized parameters; returns (model, trace).

    Each epoch shuffles the training rows, steps over minibatches, then
    scores dev accuracy (the trace).  BestDev selection snapshots parameters
    whenever dev accuracy strictly improves, so ties keep the earliest best
    epoch; LastEpoch keeps the final parameters.  Deterministic for a fixed
    (data, config): one Generator seeded from cfg.seed drives shuffling and
    the dropout masks, in that per-epoch order.
    """
    if train.n_rows == 0:
        raise DataError("cannot train a classifier on an empty dataset")
    if dev.n_rows == 0 and cfg.selection is Selection.BEST_DEV:
        raise DataError("BestDev selection needs a non-empty dev set")
    if dev.n_rows and dev.dim != train.dim:
        raise DataError("train/dev dim mismatch")
    n_classes, dim = len(train.vocab), train.dim
    weights = np.zeros((n_classes, dim))
    bias = np.zeros(n_classes)
    params = [weights, bias]
    adam = nn.AdamState.for_params(params, cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    p_drop = cfg.input_dropout_p

    best_acc = -1.0
    best = (weights.copy(), bias.copy())
    trace: list[float] = []
    x_all, y_all = train.vectors, train.labels
    for _ in range(cfg.epochs):
        order = rng.permutation(train.n_rows)
        for start in range(0, train.n_rows, cfg.batch_size):
            sel = order[start:start + cfg.batch_size]
            x = x_all[sel]
            if p_drop > 0.0:
                keep = rng.random(x.shape) >= p_drop
                x = x * keep / (1.0 - p_drop)
            logits = x @ weights.T + bias
            loss, dlogits = nn.cross_entropy_loss(logits, y_all[sel])
            if not np.isfinite(loss):
                raise NumericError(f"non-finite training loss {loss}")
            nn.adam_step(params, [dlogits.T @ x, dlogits.sum(axis=0)], adam)
        if dev.n_rows:
            model = SoftmaxClassifier(weights, bias, train.vocab, p_drop)
            acc = evaluate(model, dev).accuracy
            trace.append(acc)
            if cfg.selection is Selection.BEST_DEV and acc > best_acc:
                best_acc = acc
                best = (weights.copy(), bias.copy())

    if cfg.selection is Selection.BEST_DEV:
        weights, bias = best
        logger.debug("best dev accuracy %.4f", best_acc)
    return SoftmaxClassifier(weights, bias, train.vocab, p_drop), trace


def evaluate(model: SoftmaxClassifier, ds: EmbeddingDataset) -> EvalResult:
    """Accuracy and a [true, predicted] confusion matrix; argmax prediction
    with ties going to the lowest class id."""
    if ds.n_rows == 0:
        raise DataError("cannot evaluate on an empty dataset")
    if ds.dim != model.dim:
        raise DataError(f"dataset dim {ds.dim} != model dim {model.dim}")
    if len(ds.vocab) != len(model.vocab):
        raise DataError("dataset and model vocabulary sizes differ")
    pred = np.argmax(predict_logits(model, ds.vectors), axis=1)
    n = len(model.vocab)
    confusion = np.zeros((n, n), dtype=np.int64)
    np.add.at(confusion, (ds.labels, pred), 1)
    return EvalResult(float(np.mean(pred == ds.labels)), confusion)


def save_classifier(path, model: SoftmaxClassifier) -> None:
    nn.save_checkpoint(
        path, "classifier",
        {"vocab": list(model.vocab.names),
         "input_dropout_p": model.input_dropout_p},
        {"weights": model.weights, "bias": model.bias})


def load_classifier(path) -> SoftmaxClassifier:
    meta, arrays = nn.load_checkpoint(path, "classifier")
    try:
        vocab = LabelVocab(tuple(meta["vocab"]))
        return SoftmaxClassifier(arrays["weights"], arrays["bias"], vocab,
                                 float(meta["input_dropout_p"]))
    except KeyError as e:
        raise DataError(f"classifier checkpoint missing field {e}") from None
