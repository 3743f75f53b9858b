"""Dense-network numerics: layers, losses, Adam, and correctness checks.

Everything is float64 numpy, batch-first.  A model is a plain list of affine
layers with an activation and an optional dropout probability; forward returns
a cache that backward consumes, so there is no autograd and no hidden state.
All randomness (init, dropout masks, latent noise) flows through caller-owned
``numpy.random.Generator`` objects.

Loss reduction convention: mean over the batch axis, sum over feature
dimensions.  Loss gradients already include the 1/N batch factor, so backward
never rescales.

Checkpoints are ``.npz`` archives with a ``__meta__`` JSON entry (format
version, model kind, shapes) next to the raw parameter arrays; see
:func:`save_checkpoint`.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

__all__ = [
    "Activation", "LossKind", "Layer", "Mlp", "init_mlp", "forward",
    "backward", "softmax", "cross_entropy_loss", "mse_loss", "l1_loss",
    "kl_diag_gaussian", "reparameterize", "AdamState", "adam_step",
    "max_rel_grad_error", "save_checkpoint", "load_checkpoint",
    "mlp_meta", "pack_mlp", "unpack_mlp",
]

CHECKPOINT_VERSION = 1


class Activation(enum.Enum):
    TANH = "tanh"
    LEAKY_RELU_02 = "leaky_relu_02"  # max(x, 0.2 * x)
    IDENTITY = "identity"


class LossKind(enum.Enum):
    MSE = "mse"
    L1 = "l1"
    CROSS_ENTROPY = "cross_entropy"
    GAUSSIAN_KL = "gaussian_kl"


def _act(z: np.ndarray, kind: Activation) -> np.ndarray:
    if kind is Activation.TANH:
        return np.tanh(z)
    if kind is Activation.LEAKY_RELU_02:
        return np.maximum(z, 0.2 * z)
    return z


def _act_deriv(z: np.ndarray, h: np.ndarray, kind: Activation) -> np.ndarray:
    # h is the activation output for z, reused where that is cheaper.
    if kind is Activation.TANH:
        return 1.0 - h * h
    if kind is Activation.LEAKY_RELU_02:
        return np.where(z > 0, 1.0, 0.2)
    return np.ones_like(z)


@dataclass
class Layer:
    """Affine map (out, in) plus activation and optional dropout."""

    weight: np.ndarray
    bias: np.ndarray
    activation: Activation
    dropout_p: float = 0.0

    def __post_init__(self):
        self.weight = np.asarray(self.weight, np.float64)
        self.bias = np.asarray(self.bias, np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError(f"inconsistent layer shapes {self.weight.shape} "
                             f"/ {self.bias.shape}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class Mlp:
    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("Mlp needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError(f"layer width mismatch: {a.out_dim} feeds "
                                 f"{b.in_dim}")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order: (weight, bias) per layer."""
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out


def init_mlp(sizes, activations, dropout=None, *, rng) -> Mlp:
    """Glorot-uniform weights, zero biases.

    sizes = [in, h1, ..., out]; activations and dropout (optional) have one
    entry per layer.  Consumes one uniform block per layer from rng.
    """
    sizes = list(sizes)
    activations = list(activations)
    n_layers = len(sizes) - 1
    if n_layers < 1 or len(activations) != n_layers:
        raise ValueError("need len(sizes) - 1 == len(activations) >= 1")
    dropout = list(dropout) if dropout is not None else [0.0] * n_layers
    if len(dropout) != n_layers:
        raise ValueError("dropout needs one entry per layer")
    layers = []
    for fan_in, fan_out, act, p in zip(sizes, sizes[1:], activations, dropout):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weight = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        layers.append(Layer(weight, np.zeros(fan_out), act, p))
    return Mlp(layers)


@dataclass
class _LayerCache:
    x_in: np.ndarray       # layer input
    z: np.ndarray          # pre-activation
    h: np.ndarray          # post-activation, pre-dropout
    scaled_mask: np.ndarray | None  # inverted-dropout mask / (1 - p), or None


@dataclass
class Cache:
    layer_caches: list[_LayerCache]
    squeeze: bool
    train: bool


def forward(mlp: Mlp, x, *, train: bool = False, rng=None):
    """Run the network; returns (output, cache).

    A 1-D input is treated as a single row and the output is squeezed back.
    In train mode, layers with dropout_p > 0 apply inverted dropout to their
    activations (one mask draw per such layer, in layer order); eval mode is
    the deterministic identity on that step.
    """
    x = np.asarray(x, np.float64)
    squeeze = x.ndim == 1
    a = np.atleast_2d(x)
    if a.shape[1] != mlp.in_dim:
        raise ValueError(f"input width {a.shape[1]} != network input "
                         f"{mlp.in_dim}")
    caches = []
    for layer in mlp.layers:
        z = a @ layer.weight.T + layer.bias
        h = _act(z, layer.activation)
        scaled_mask = None
        out = h
        if train and layer.dropout_p > 0.0:
            if rng is None:
                raise ValueError("train-mode forward with dropout needs rng")
            keep = rng.random(h.shape) >= layer.dropout_p
            scaled_mask = keep / (1.0 - layer.dropout_p)
            out = h * scaled_mask
        caches.append(_LayerCache(a, z, h, scaled_mask))
        a = out
    if squeeze:
        return a[0], Cache(caches, True, train)
    return a, Cache(caches, False, train)


def backward(mlp: Mlp, cache: Cache, grad_out):
    """Reverse-mode pass; returns (param_grads, grad_input).

    param_grads is [(dW, db), ...] aligned with mlp.layers.  grad_out must be
    the gradient of a scalar loss w.r.t. the forward output (already carrying
    any 1/N batch factor).  The cache must come from the matching forward on
    the same model.
    """
    if len(cache.layer_caches) != len(mlp.layers):
        raise ValueError("cache does not match this network")
    g = np.atleast_2d(np.asarray(grad_out, np.float64))
    grads: list[tuple[np.ndarray, np.ndarray]] = []
    for layer, lc in zip(reversed(mlp.layers), reversed(cache.layer_caches)):
        if g.shape != lc.z.shape:
            raise ValueError("gradient shape does not match cached forward")
        if lc.scaled_mask is not None:
            g = g * lc.scaled_mask
        dz = g * _act_deriv(lc.z, lc.h, layer.activation)
        grads.append((dz.T @ lc.x_in, dz.sum(axis=0)))
        g = dz @ layer.weight
    grads.reverse()
    grad_in = g[0] if cache.squeeze else g
    return grads, grad_in


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax."""
    logits = np.asarray(logits, np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy_loss(logits: np.ndarray, labels: np.ndarray):
    """Mean negative log-likelihood; returns (loss, grad_wrt_logits)."""
    logits = np.atleast_2d(np.asarray(logits, np.float64))
    labels = np.atleast_1d(np.asarray(labels, np.int64))
    n = logits.shape[0]
    if labels.shape != (n,):
        raise ValueError("labels must hold one id per logits row")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_z - shifted[np.arange(n), labels]))
    grad = softmax(logits)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def mse_loss(pred: np.ndarray, target: np.ndarray):
    """Summed squared error per row, averaged over the batch."""
    pred = np.atleast_2d(np.asarray(pred, np.float64))
    target = np.atleast_2d(np.asarray(target, np.float64))
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(np.sum(diff * diff, axis=1)))
    return loss, 2.0 * diff / pred.shape[0]


def l1_loss(pred: np.ndarray, target: np.ndarray):
    """Summed absolute error per row, averaged over the batch."""
    pred = np.atleast_2d(np.asarray(pred, np.float64))
    target = np.atleast_2d(np.asarray(target, np.float64))
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(np.sum(np.abs(diff), axis=1)))
    return loss, np.sign(diff) / pred.shape[0]


def kl_diag_gaussian(mu: np.ndarray, logvar: np.ndarray):
    """KL(N(mu, diag(exp(logvar))) || N(0, I)), summed over dimensions.

    1-D inputs give a scalar, 2-D a per-row vector.  The closed form
    0.5 * sum(mu^2 + exp(logvar) - logvar - 1) is clamped at 0 to absorb
    ~1e-17 of negative rounding dust; the true value is always >= 0.
    """
    mu = np.asarray(mu, np.float64)
    logvar = np.asarray(logvar, np.float64)
    if mu.shape != logvar.shape:
        raise ValueError(f"shape mismatch {mu.shape} vs {logvar.shape}")
    kl = 0.5 * np.sum(mu * mu + np.exp(logvar) - logvar - 1.0, axis=-1)
    kl = np.maximum(kl, 0.0)
    return float(kl) if kl.ndim == 0 else kl


def reparameterize(mu: np.ndarray, logvar: np.ndarray, seed) -> np.ndarray:
    """z = mu + exp(logvar / 2) * eps with eps ~ N(0, I).

    seed may be an int or an existing Generator (passed through unchanged).
    """
    mu = np.asarray(mu, np.float64)
    logvar = np.asarray(logvar, np.float64)
    if mu.shape != logvar.shape:
        raise ValueError(f"shape mismatch {mu.shape} vs {logvar.shape}")
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal(mu.shape)
    return mu + np.exp(0.5 * logvar) * eps


@dataclass
class AdamState:
    """Bias-corrected Adam moments for a fixed parameter list."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr: float, **kw) -> "AdamState":
        state = cls(lr=lr, **kw)
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
        return state


def adam_step(params, grads, state: AdamState):
    """One in-place Adam update; returns (params, state)."""
    if not (len(params) == len(grads) == len(state.m)):
        raise ValueError("params/grads/state lengths disagree")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"grad shape {g.shape} != param shape {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


def max_rel_grad_error(loss_and_grads, params, *, h: float = 1e-5,
                       rng=None, samples_per_tensor: int = 25) -> float:
    """Central-difference check of analytic gradients.

    loss_and_grads() -> (loss, grads) must be deterministic (freeze any noise
    or dropout masks before calling) and read the arrays in ``params``
    in place.  For each tensor, up to samples_per_tensor coordinates are
    checked (all of them if the tensor is small; otherwise an rng-sampled
    subset).  Error metric per coordinate: |a - n| / max(1e-4, |a| + |n|),
    so near-zero gradients are compared absolutely at 1e-8 resolution.
    """
    _, grads = loss_and_grads()
    if len(grads) != len(params):
        raise ValueError("loss_and_grads returned wrong gradient count")
    worst = 0.0
    for p, g in zip(params, grads):
        if p.size <= samples_per_tensor:
            coords = np.arange(p.size)
        else:
            if rng is None:
                raise ValueError("rng required to sample large tensors")
            coords = rng.choice(p.size, size=samples_per_tensor, replace=False)
        for flat in coords:
            orig = p.flat[flat]
            p.flat[flat] = orig + h
            lp, _ = loss_and_grads()
            p.flat[flat] = orig - h
            lm, _ = loss_and_grads()
            p.flat[flat] = orig
            numeric = (lp - lm) / (2.0 * h)
            analytic = g.flat[flat]
            rel = abs(analytic - numeric) / max(1e-4, abs(analytic) + abs(numeric))
            worst = max(worst, rel)
    return worst


def save_checkpoint(path, kind: str, meta: dict, arrays: dict) -> None:
    """Write a model checkpoint: npz of arrays plus a __meta__ JSON entry."""
    payload = {"version": CHECKPOINT_VERSION, "kind": kind, **meta}
    blob = {"__meta__": np.frombuffer(
        json.dumps(payload, sort_keys=True).encode("utf-8"), dtype=np.uint8)}
    for name, arr in arrays.items():
        if name == "__meta__":
            raise ValueError("array name __meta__ is reserved")
        blob[name] = np.asarray(arr, np.float64)
    with open(path, "wb") as f:
        np.savez(f, **blob)


def load_checkpoint(path, expect_kind: str):
    """Read a checkpoint written by save_checkpoint; returns (meta, arrays)."""
    path = Path(path)
    try:
        with np.load(path) as npz:
            data = {k: npz[k] for k in npz.files}
    except (OSError, ValueError) as e:
        raise DataError(f"{path}: cannot read checkpoint: {e}") from None
    if "__meta__" not in data:
        raise DataError(f"{path}: not a model checkpoint (missing metadata)")
    meta = json.loads(bytes(data.pop("__meta__")).decode("utf-8"))
    if meta.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version "
                        f"{meta.get('version')!r}")
    if meta.get("kind") != expect_kind:
        raise DataError(f"{path}: checkpoint kind {meta.get('kind')!r}, "
                        f"expected {expect_kind!r}")
    return meta, data


def mlp_meta(mlp: Mlp) -> dict:
    """JSON-safe structural description of a network."""
    return {
        "sizes": [mlp.in_dim] + [layer.out_dim for layer in mlp.layers],
        "activations": [layer.activation.value for layer in mlp.layers],
        "dropout": [layer.dropout_p for layer in mlp.layers],
    }


def pack_mlp(prefix: str, mlp: Mlp) -> dict:
    """Parameter arrays keyed <prefix>_w<i> / <prefix>_b<i>."""
    arrays = {}
    for i, layer in enumerate(mlp.layers):
        arrays[f"{prefix}_w{i}"] = layer.weight
        arrays[f"{prefix}_b{i}"] = layer.bias
    return arrays


def unpack_mlp(prefix: str, meta: dict, arrays: dict) -> Mlp:
    """Inverse of pack_mlp + mlp_meta."""
    try:
        sizes = meta["sizes"]
        acts = [Activation(a) for a in meta["activations"]]
        dropout = meta["dropout"]
    except (KeyError, ValueError) as e:
        raise DataError(f"malformed network metadata: {e}") from None
    layers = []
    for i, act in enumerate(acts):
        try:
            weight = arrays[f"{prefix}_w{i}"]
            bias = arrays[f"{prefix}_b{i}"]
        except KeyError as e:
            raise DataError(f"checkpoint missing array {e}") from None
        if weight.shape != (sizes[i + 1], sizes[i]):
            raise DataError(f"array {prefix}_w{i} has shape {weight.shape}, "
                            f"metadata says {(sizes[i + 1], sizes[i])}")
        layers.append(Layer(weight.copy(), bias.copy(), act, dropout[i]))
    return Mlp(layers)
