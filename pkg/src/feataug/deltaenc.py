"""Delta-encoder: learns within-class variation and transplants it.

The encoder sees a same-class pair [x_i ; x_j] and compresses their
difference into a small latent (width 16); the decoder rebuilds x_i from
[z ; x_j].  Both nets have one 512-wide leaky-ReLU (max(x, 0.2x)) hidden
layer with 50% dropout during training; the loss is summed-per-row L1.

Generation anchors the decoder on the target-class seeds and feeds latents
encoded from pairs drawn elsewhere: DeltaR takes pairs from a random
non-target class, DeltaS from the target seeds themselves.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np

from . import nn
from .augment import _draw_distinct_pairs
from .dataio import AugmentedBatch, EmbeddingDataset, Method
from .errors import DataError, NumericError
from .nn import Activation

__all__ = [
    "HIDDEN_WIDTH", "LATENT_WIDTH", "DROPOUT_P", "PairStrategy",
    "DeltaTrainConfig", "DeltaEncoderModel", "train_delta", "generate_delta",
    "save_delta", "load_delta",
]

logger = logging.getLogger(__name__)

HIDDEN_WIDTH = 512
LATENT_WIDTH = 16
DROPOUT_P = 0.5


class PairStrategy(enum.Enum):
    DELTA_R = "deltar"  # pairs from a uniformly chosen non-target class
    DELTA_S = "deltas"  # pairs from the target seeds themselves


@dataclass(frozen=True)
class DeltaTrainConfig:
    lr: float = 1e-3
    epochs: int = 200
    batch_size: int = 64
    pairs_per_class: int | None = None  # None: one pair per class row
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.pairs_per_class is not None and self.pairs_per_class < 1:
            raise ValueError("pairs_per_class must be >= 1 or None")


@dataclass
class DeltaEncoderModel:
    encoder: nn.Mlp  # [x_i ; x_j] -> z
    decoder: nn.Mlp  # [z ; x_j] -> x_i_hat
    dim: int


def build_delta(dim: int, rng) -> DeltaEncoderModel:
    """Fresh Glorot-initialized model (encoder first, then decoder)."""
    encoder = nn.init_mlp([2 * dim, HIDDEN_WIDTH, LATENT_WIDTH],
                          [Activation.LEAKY_RELU_02, Activation.IDENTITY],
                          dropout=[DROPOUT_P, 0.0], rng=rng)
    decoder = nn.init_mlp([LATENT_WIDTH + dim, HIDDEN_WIDTH, dim],
                          [Activation.LEAKY_RELU_02, Activation.IDENTITY],
                          dropout=[DROPOUT_P, 0.0], rng=rng)
    return DeltaEncoderModel(encoder, decoder, dim)


def _loss_and_grads(encoder: nn.Mlp, decoder: nn.Mlp, xi: np.ndarray,
                    xj: np.ndarray, *, train: bool = False, rng=None):
    """L1 reconstruction of x_i from ([x_i ; x_j] -> z, [z ; x_j]).

    Returns (loss, enc_grads, dec_grads).  With train=False (no dropout) the
    pass is deterministic, which the finite-difference check relies on.
    """
    z, enc_cache = nn.forward(encoder, np.concatenate([xi, xj], axis=1),
                              train=train, rng=rng)
    xhat, dec_cache = nn.forward(decoder, np.concatenate([z, xj], axis=1),
                                 train=train, rng=rng)
    loss, dxhat = nn.l1_loss(xhat, xi)
    dec_grads, ddec_in = nn.backward(decoder, dec_cache, dxhat)
    enc_grads, _ = nn.backward(encoder, enc_cache,
                               ddec_in[:, :LATENT_WIDTH])
    return loss, enc_grads, dec_grads


def _epoch_pairs(ds: EmbeddingDataset, eligible: np.ndarray,
                 pairs_per_class: int | None, rng):
    """Global row indices (i, j) of same-class pairs for one epoch, drawn
    class by class in id order, then shuffled together."""
    all_i, all_j = [], []
    for label_id in eligible:
        rows = ds.indices_of(label_id)
        count = pairs_per_class if pairs_per_class is not None else len(rows)
        i, j = _draw_distinct_pairs(rng, len(rows), count)
        all_i.append(rows[i])
        all_j.append(rows[j])
    i = np.concatenate(all_i)
    j = np.concatenate(all_j)
    order = rng.permutation(len(i))
    return i[order], j[order]


def train_delta(ds: EmbeddingDataset, cfg: DeltaTrainConfig = DeltaTrainConfig()
                ) -> tuple[DeltaEncoderModel, list[float]]:
    """Train on same-class pairs from every class with >= 2 rows.

    Classes with a single row cannot form a pair and are skipped with a
    warning.  Deterministic for fixed (ds, cfg): one Generator seeded from
    cfg.seed drives init, then per epoch the pair draws, the shuffle, and the
    dropout masks.  Returns (model, per-epoch mean L1 trace).
    """
    counts = ds.class_counts()
    eligible = np.flatnonzero(counts >= 2)
    for label_id in np.flatnonzero(counts == 1):
        logger.warning("class %r has a single row; skipped for pair training",
                       ds.vocab.name_of(int(label_id)))
    if len(eligible) == 0:
        raise DataError("no class has >= 2 rows; cannot form training pairs")
    rng = np.random.default_rng(cfg.seed)
    model = build_delta(ds.dim, rng)
    params = model.encoder.params() + model.decoder.params()
    adam = nn.AdamState.for_params(params, cfg.lr)

    trace: list[float] = []
    for epoch in range(cfg.epochs):
        pi, pj = _epoch_pairs(ds, eligible, cfg.pairs_per_class, rng)
        total = 0.0
        for start in range(0, len(pi), cfg.batch_size):
            sel = slice(start, start + cfg.batch_size)
            xi, xj = ds.vectors[pi[sel]], ds.vectors[pj[sel]]
            loss, enc_grads, dec_grads = _loss_and_grads(
                model.encoder, model.decoder, xi, xj, train=True, rng=rng)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite delta-encoder loss {loss} "
                                   f"at epoch {epoch}")
            flat = [g for pair in enc_grads for g in pair] \
                + [g for pair in dec_grads for g in pair]
            nn.adam_step(params, flat, adam)
            total += loss * len(xi)
        trace.append(total / len(pi))
        if (epoch + 1) % 50 == 0:
            logger.debug("delta epoch %d: l1 %.4f", epoch + 1, trace[-1])
    return model, trace


def generate_delta(model: DeltaEncoderModel, ds: EmbeddingDataset,
                   target_label: int, n: int, strategy: PairStrategy,
                   seed: int) -> AugmentedBatch:
    """Generate n rows for target_label by transplanting encoded deltas.

    Anchors cycle round-robin through the target rows of ds (ascending row
    order).  Latent codes come from same-class pairs: DeltaS draws them
    within the target rows (needs >= 2); DeltaR draws, per output, a uniform
    non-target class with >= 2 rows and a distinct pair inside it.  Draw
    order from the seed: DeltaR first picks the n classes, then pair indices;
    DeltaS only the pair indices.
    """
    ds.vocab.name_of(target_label)  # range check
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    target_rows = ds.indices_of(target_label)
    if len(target_rows) == 0:
        raise DataError("no rows of the target class to anchor on")
    method = Method.DELTA_S if strategy is PairStrategy.DELTA_S \
        else Method.DELTA_R
    if n == 0:
        return AugmentedBatch(target_label, np.empty((0, ds.dim)), method,
                              seed)
    rng = np.random.default_rng(seed)
    anchors = ds.vectors[target_rows[np.arange(n) % len(target_rows)]]

    if strategy is PairStrategy.DELTA_S:
        if len(target_rows) < 2:
            raise DataError("DeltaS needs >= 2 target rows to form pairs")
        i, j = _draw_distinct_pairs(rng, len(target_rows), n)
        pi, pj = target_rows[i], target_rows[j]
    else:
        counts = ds.class_counts()
        sources = [c for c in range(len(counts))
                   if c != target_label and counts[c] >= 2]
        if not sources:
            raise DataError("DeltaR needs a non-target class with >= 2 rows")
        rows_by_class = [ds.indices_of(c) for c in sources]
        sizes = counts[sources]
        pick = rng.integers(0, len(sources), size=n)
        m = sizes[pick]
        # uniform ints below per-row bounds via the floor trick
        i_loc = np.floor(rng.random(n) * m).astype(np.int64)
        off = 1 + np.floor(rng.random(n) * (m - 1)).astype(np.int64)
        j_loc = (i_loc + off) % m
        pi = np.array([rows_by_class[c][a] for c, a in zip(pick, i_loc)])
        pj = np.array([rows_by_class[c][b] for c, b in zip(pick, j_loc)])

    z, _ = nn.forward(model.encoder,
                      np.concatenate([ds.vectors[pi], ds.vectors[pj]], axis=1))
    out, _ = nn.forward(model.decoder, np.concatenate([z, anchors], axis=1))
    return AugmentedBatch(target_label, out, method, seed)


def save_delta(path, model: DeltaEncoderModel) -> None:
    meta = {"dim": model.dim, "encoder": nn.mlp_meta(model.encoder),
            "decoder": nn.mlp_meta(model.decoder)}
    arrays = {**nn.pack_mlp("enc", model.encoder),
              **nn.pack_mlp("dec", model.decoder)}
    nn.save_checkpoint(path, "delta", meta, arrays)


def load_delta(path) -> DeltaEncoderModel:
    meta, arrays = nn.load_checkpoint(path, "delta")
    try:
        return DeltaEncoderModel(nn.unpack_mlp("enc", meta["encoder"], arrays),
                                 nn.unpack_mlp("dec", meta["decoder"], arrays),
                                 int(meta["dim"]))
    except KeyError as e:
        raise DataError(f"delta checkpoint missing field {e}") from None
