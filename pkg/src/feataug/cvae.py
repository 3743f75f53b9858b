"""Conditional VAE over embedding vectors, conditioned on the class label.

Encoder: [x ; one-hot(y)] -> 2048 tanh -> linear 256, split into mu and
logvar (latent width 128).  Decoder: [z ; one-hot(y)] -> 2048 tanh -> linear
reconstruction.  Training minimizes summed-per-row MSE plus kl_weight times
the diagonal-Gaussian KL to the prior; with kl_weight = 0 the KL is still
reported in the trace but contributes nothing to gradients.  Sampling decodes
prior draws z ~ N(0, I) for the requested class.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import nn
from .dataio import AugmentedBatch, EmbeddingDataset, Method
from .errors import ConfigError, DataError, NumericError
from .nn import Activation

__all__ = [
    "HIDDEN_WIDTH", "LATENT_WIDTH", "CvaeTrainConfig", "CvaeModel",
    "EpochLoss", "train_cvae", "sample_cvae", "save_cvae", "load_cvae",
]

logger = logging.getLogger(__name__)

HIDDEN_WIDTH = 2048
LATENT_WIDTH = 128


@dataclass(frozen=True)
class CvaeTrainConfig:
    lr: float = 1e-3
    epochs: int = 200
    batch_size: int = 64
    kl_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.kl_weight < 0:
            raise ConfigError(f"kl_weight must be >= 0, got {self.kl_weight}")


@dataclass
class CvaeModel:
    encoder: nn.Mlp  # [x ; one-hot] -> [mu ; logvar]
    decoder: nn.Mlp  # [z ; one-hot] -> x_hat
    dim: int
    n_classes: int

    @property
    def latent_dim(self) -> int:
        return self.encoder.out_dim // 2


@dataclass(frozen=True)
class EpochLoss:
    total: float
    recon: float
    kl: float


def _one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    return np.eye(n_classes)[labels]


def _loss_and_grads(encoder: nn.Mlp, decoder: nn.Mlp, x: np.ndarray,
                    y1h: np.ndarray, eps: np.ndarray, kl_weight: float):
    """Full forward + backward for one fixed-noise batch.

    Returns (total, recon, kl, enc_grads, dec_grads).  Deterministic given
    its arguments, which is what the finite-difference check needs.
    """
    n = x.shape[0]
    enc_out, enc_cache = nn.forward(encoder, np.concatenate([x, y1h], axis=1))
    mu, logvar = enc_out[:, :LATENT_WIDTH], enc_out[:, LATENT_WIDTH:]
    sigma = np.exp(0.5 * logvar)
    z = mu + sigma * eps
    xhat, dec_cache = nn.forward(decoder, np.concatenate([z, y1h], axis=1))
    recon, dxhat = nn.mse_loss(xhat, x)
    kl = float(np.mean(nn.kl_diag_gaussian(mu, logvar)))
    total = recon + kl_weight * kl

    dec_grads, ddec_in = nn.backward(decoder, dec_cache, dxhat)
    dz = ddec_in[:, :LATENT_WIDTH]
    dmu = dz + kl_weight * mu / n
    dlogvar = dz * (0.5 * sigma * eps) \
        + kl_weight * 0.5 * (np.exp(logvar) - 1.0) / n
    enc_grads, _ = nn.backward(encoder, enc_cache,
                               np.concatenate([dmu, dlogvar], axis=1))
    return total, recon, kl, enc_grads, dec_grads


def build_cvae(dim: int, n_classes: int, rng) -> CvaeModel:
    """Fresh Glorot-initialized model (encoder first, then decoder)."""
    encoder = nn.init_mlp([dim + n_classes, HIDDEN_WIDTH, 2 * LATENT_WIDTH],
                          [Activation.TANH, Activation.IDENTITY], rng=rng)
    decoder = nn.init_mlp([LATENT_WIDTH + n_classes, HIDDEN_WIDTH, dim],
                          [Activation.TANH, Activation.IDENTITY], rng=rng)
    return CvaeModel(encoder, decoder, dim, n_classes)


def train_cvae(ds: EmbeddingDataset, cfg: CvaeTrainConfig = CvaeTrainConfig()
               ) -> tuple[CvaeModel, list[EpochLoss]]:
    """Train on every row of ds; returns (model, per-epoch loss trace).

    Deterministic for a fixed (ds, cfg): one Generator seeded from cfg.seed
    drives init, the per-epoch shuffle, and the latent noise, in that order.
    Trace entries are row-weighted epoch means.
    """
    if ds.n_rows == 0:
        raise DataError("cannot train a CVAE on an empty dataset")
    rng = np.random.default_rng(cfg.seed)
    model = build_cvae(ds.dim, len(ds.vocab), rng)
    params = model.encoder.params() + model.decoder.params()
    adam = nn.AdamState.for_params(params, cfg.lr)
    n_enc = len(model.encoder.params())
    y1h_all = _one_hot(ds.labels, len(ds.vocab))

    trace: list[EpochLoss] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(ds.n_rows)
        sums = np.zeros(3)
        for start in range(0, ds.n_rows, cfg.batch_size):
            sel = order[start:start + cfg.batch_size]
            eps = rng.standard_normal((len(sel), LATENT_WIDTH))
            total, recon, kl, enc_grads, dec_grads = _loss_and_grads(
                model.encoder, model.decoder, ds.vectors[sel], y1h_all[sel],
                eps, cfg.kl_weight)
            if not np.isfinite(total):
                raise NumericError(f"non-finite CVAE loss {total} "
                                   f"at epoch {epoch}")
            flat = [g for pair in enc_grads for g in pair] \
                + [g for pair in dec_grads for g in pair]
            assert len(flat) == n_enc + len(model.decoder.params())
            nn.adam_step(params, flat, adam)
            sums += len(sel) * np.array([total, recon, kl])
        mean = sums / ds.n_rows
        trace.append(EpochLoss(*mean))
        if (epoch + 1) % 50 == 0:
            logger.debug("cvae epoch %d: total %.4f recon %.4f kl %.4f",
                         epoch + 1, *mean)
    return model, trace


def sample_cvae(model: CvaeModel, label_id: int, n: int,
                seed: int) -> AugmentedBatch:
    """Decode n prior samples z ~ N(0, I) conditioned on label_id."""
    if not 0 <= label_id < model.n_classes:
        raise DataError(f"label id {label_id} out of range "
                        f"[0, {model.n_classes})")
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, LATENT_WIDTH))
    y1h = _one_hot(np.full(n, label_id, np.int64), model.n_classes)
    out, _ = nn.forward(model.decoder, np.concatenate([z, y1h], axis=1))
    return AugmentedBatch(label_id, out, Method.CVAE, seed)


def save_cvae(path, model: CvaeModel) -> None:
    meta = {"dim": model.dim, "n_classes": model.n_classes,
            "encoder": nn.mlp_meta(model.encoder),
            "decoder": nn.mlp_meta(model.decoder)}
    arrays = {**nn.pack_mlp("enc", model.encoder),
              **nn.pack_mlp("dec", model.decoder)}
    nn.save_checkpoint(path, "cvae", meta, arrays)


def load_cvae(path) -> CvaeModel:
    meta, arrays = nn.load_checkpoint(path, "cvae")
    try:
        return CvaeModel(nn.unpack_mlp("enc", meta["encoder"], arrays),
                         nn.unpack_mlp("dec", meta["decoder"], arrays),
                         int(meta["dim"]), int(meta["n_classes"]))
    except KeyError as e:
        raise DataError(f"cvae checkpoint missing field {e}") from None
