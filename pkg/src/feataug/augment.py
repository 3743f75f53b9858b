"""Training-free augmentation: upsample, perturb, linear delta, extrapolation.

Every generator has the same shape: (seed vectors, n, config, seed) -> batch.
Seeds are the (k, dim) float64 vectors of one class; the output is an
:class:`~feataug.dataio.AugmentedBatch` of n rows for that class.  Given the
same inputs and seed the output is bit-identical.

Randomness is a single ``numpy.random.Generator`` per call, consumed in a
documented order so tests can re-derive which seed rows produced each output:

* perturb: one (n, dim) uniform noise block, then (Mixed mode only) n coin
  flips;
* linear delta: n draws of i, n offset draws for j, n draws of k;
* extrapolation: n draws of i, then n offset draws for j.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .dataio import AugmentedBatch, Method
from .errors import ConfigError, DataError

__all__ = [
    "PerturbMode", "PerturbConfig", "ExtraConfig",
    "upsample", "perturb", "linear_delta", "extrapolate",
]


class PerturbMode(enum.Enum):
    ADDITIVE = "additive"          # x + eps
    MULTIPLICATIVE = "multiplicative"  # x * (1 + eps)
    MIXED = "mixed"                # fair per-vector coin between the two


@dataclass(frozen=True)
class PerturbConfig:
    mode: PerturbMode = PerturbMode.MIXED
    alpha: float = 1.0  # noise is U[-alpha, alpha] per component

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and self.alpha >= 0):
            raise ConfigError(f"perturb alpha must be >= 0, got {self.alpha}")


@dataclass(frozen=True)
class ExtraConfig:
    lam: float = 0.5  # extrapolation step size

    def __post_init__(self):
        if not np.isfinite(self.lam):
            raise ConfigError(f"extrapolation lambda must be finite, "
                              f"got {self.lam}")


def _check_seeds(seeds, n: int, minimum: int) -> np.ndarray:
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    seeds = np.asarray(seeds, np.float64)
    if seeds.ndim != 2:
        raise DataError(f"seed vectors must be (k, dim), got {seeds.shape}")
    if n > 0 and seeds.shape[0] < minimum:
        raise DataError(f"need at least {minimum} seed vectors, "
                        f"got {seeds.shape[0]}")
    return seeds


def _round_robin(n: int, k: int) -> np.ndarray:
    """Output row t maps to seed t % k, so counts differ by at most one."""
    return np.arange(n) % k


def upsample(seeds, n: int, *, label_id: int = 0) -> AugmentedBatch:
    """Duplicate the seeds round-robin until n rows exist.

    Output rows are bit-identical copies; no randomness is involved, so the
    recorded gen seed is 0.
    """
    seeds = _check_seeds(seeds, n, minimum=1)
    idx = _round_robin(n, seeds.shape[0]) if n else np.empty(0, np.int64)
    return AugmentedBatch(label_id, seeds[idx], Method.UPSAMPLE, 0)


def perturb(seeds, n: int, cfg: PerturbConfig = PerturbConfig(), *,
            seed: int = 0, label_id: int = 0) -> AugmentedBatch:
    """Round-robin the seeds and add uniform noise U[-alpha, alpha].

    Additive gives x + eps, Multiplicative x * (1 + eps); Mixed flips a fair
    coin per output row between the two.  alpha = 0 reduces every mode to
    upsampling bit-exactly.
    """
    seeds = _check_seeds(seeds, n, minimum=1)
    rng = np.random.default_rng(seed)
    base = seeds[_round_robin(n, seeds.shape[0])] if n \
        else np.empty((0, seeds.shape[1]))
    eps = rng.uniform(-cfg.alpha, cfg.alpha, size=base.shape)
    additive = base + eps
    multiplicative = base * (1.0 + eps)
    if cfg.mode is PerturbMode.ADDITIVE:
        out = additive
    elif cfg.mode is PerturbMode.MULTIPLICATIVE:
        out = multiplicative
    else:
        coin = rng.random(base.shape[0]) < 0.5
        out = np.where(coin[:, None], additive, multiplicative)
    return AugmentedBatch(label_id, out, Method.PERTURB, seed)


def _draw_distinct_pairs(rng, m: int, n: int):
    """n uniform (i, j) with i != j: i uniform, j = (i + offset) % m with
    offset uniform in 1..m-1."""
    i = rng.integers(0, m, size=n)
    offset = rng.integers(1, m, size=n)
    return i, (i + offset) % m


def _apply_linear(seeds: np.ndarray, i, j, k) -> np.ndarray:
    """(seeds[i] - seeds[j]) + seeds[k], the within-class delta transplant."""
    return (seeds[i] - seeds[j]) + seeds[k]


def _apply_extra(seeds: np.ndarray, i, j, lam: float) -> np.ndarray:
    """(seeds[i] - seeds[j]) * lam + seeds[i], stepping away from seeds[j]."""
    return (seeds[i] - seeds[j]) * lam + seeds[i]


def linear_delta(seeds, n: int, *, seed: int = 0,
                 label_id: int = 0) -> AugmentedBatch:
    """Apply the difference of one seed pair to a third seed.

    For each output: draw i, j (distinct, uniform), k (uniform, may equal
    either) and emit (seeds[i] - seeds[j]) + seeds[k].  Needs k >= 2 seeds.
    """
    seeds = _check_seeds(seeds, n, minimum=2)
    if n == 0:
        return AugmentedBatch(label_id, np.empty((0, seeds.shape[1])),
                              Method.LINEAR, seed)
    rng = np.random.default_rng(seed)
    i, j = _draw_distinct_pairs(rng, seeds.shape[0], n)
    k = rng.integers(0, seeds.shape[0], size=n)
    return AugmentedBatch(label_id, _apply_linear(seeds, i, j, k),
                          Method.LINEAR, seed)


def extrapolate(seeds, n: int, cfg: ExtraConfig = ExtraConfig(), *,
                seed: int = 0, label_id: int = 0) -> AugmentedBatch:
    """Step lambda of the way from seeds[j] through seeds[i] and beyond.

    For each output: draw i, j (distinct, uniform) and emit
    (seeds[i] - seeds[j]) * lam + seeds[i].  Outputs lie on the line through
    the pair.  Needs k >= 2 seeds.
    """
    seeds = _check_seeds(seeds, n, minimum=2)
    if n == 0:
        return AugmentedBatch(label_id, np.empty((0, seeds.shape[1])),
                              Method.EXTRA, seed)
    rng = np.random.default_rng(seed)
    i, j = _draw_distinct_pairs(rng, seeds.shape[0], n)
    return AugmentedBatch(label_id, _apply_extra(seeds, i, j, cfg.lam),
                          Method.EXTRA, seed)
