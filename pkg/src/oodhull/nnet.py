"""A small from-scratch multilayer perceptron and its training recipe.

Training is SGD with Nesterov momentum, optional cosine-annealed learning
rate, and L2 weight decay. Modes: plain training, linear probing for the
first half of the epochs followed by full fine-tuning, and fine-tuning from
a saved checkpoint. All arithmetic is float64 numpy; everything is
bit-reproducible given the config seed.
"""

import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .envsim import LabeledBatch
from .errors import ConfigurationError, TrainingDivergedError, UnsupportedTransformError, ValidationError
from .rng import derive_rng

MODES = ("scratch", "linear_probe_then_finetune", "finetune_from")
SCHEDULES = ("cosine", "constant")


@dataclass
class Predictor:
    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValidationError(f"bad layer sizes {sizes}")
        if self.activation != "relu":
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i], sizes[i + 1]) or b.shape != (sizes[i + 1],):
                raise ValidationError(f"layer {i} parameter shapes inconsistent with {sizes}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValidationError(f"layer {i} has non-finite parameters")

    @property
    def num_layers(self) -> int:
        return len(self.layer_sizes) - 1

    def copy(self) -> "Predictor":
        return Predictor(
            self.layer_sizes,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
        )


@dataclass
class AugmentPolicy:
    random_crop_pad: int = 0
    hflip_prob: float = 0.0
    jitter_std: float = 0.0

    def __post_init__(self):
        if self.random_crop_pad < 0 or self.jitter_std < 0:
            raise ValidationError("augmentation amounts must be nonnegative")
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise ValidationError("hflip_prob must lie in [0, 1]")

    @property
    def is_identity(self) -> bool:
        return self.random_crop_pad == 0 and self.hflip_prob == 0.0 and self.jitter_std == 0.0


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int = 128
    lr: float = 0.01
    weight_decay: float = 1e-5
    momentum: float = 0.9
    schedule: str = "cosine"
    mode: str = "scratch"
    checkpoint: str | None = None
    augment: AugmentPolicy | None = None
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ValidationError("lr must be positive")
        if self.weight_decay < 0:
            raise ValidationError("weight_decay must be nonnegative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValidationError("momentum must lie in [0, 1)")
        if self.schedule not in SCHEDULES:
            raise ConfigurationError(f"unknown schedule {self.schedule!r}")
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown training mode {self.mode!r}")
        if self.mode == "finetune_from" and not self.checkpoint:
            raise ConfigurationError("finetune_from requires a checkpoint path")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    train_error: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    wall_time: float = 0.0


def init_predictor(layer_sizes, seed: int) -> Predictor:
    """Scaled uniform fan-in init: U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2:
        raise ValidationError("need at least input and output layer sizes")
    rng = derive_rng(seed, "init", *sizes)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return Predictor(sizes, weights, biases)


def param_count(p: Predictor) -> int:
    return int(sum(w.size for w in p.weights) + sum(b.size for b in p.biases))


def forward_activations(p: Predictor, x: np.ndarray) -> list[np.ndarray]:
    """Per-layer post-activation values; the last entry is the raw scores."""
    acts = [np.asarray(x, dtype=float)]
    a = acts[0]
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        z = a @ w + b
        a = z if i == p.num_layers - 1 else np.maximum(z, 0.0)
        acts.append(a)
    return acts


def scores(p: Predictor, x: np.ndarray) -> np.ndarray:
    return forward_activations(p, x)[-1]


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cross_entropy(p: Predictor, x: np.ndarray, y: np.ndarray) -> float:
    logp = _log_softmax(scores(p, x))
    return float(-logp[np.arange(len(y)), y].mean())


def loss_and_grads(
    p: Predictor, x: np.ndarray, y: np.ndarray
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Mean cross-entropy and its analytic gradients w.r.t. all parameters."""
    acts = forward_activations(p, x)
    logp = _log_softmax(acts[-1])
    n = len(y)
    loss = float(-logp[np.arange(n), y].mean())
    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads_w: list[np.ndarray] = [None] * p.num_layers
    grads_b: list[np.ndarray] = [None] * p.num_layers
    for i in range(p.num_layers - 1, -1, -1):
        grads_w[i] = acts[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ p.weights[i].T) * (acts[i] > 0)
    return loss, grads_w, grads_b


def cosine_lr(lr0: float, t: int, total: int) -> float:
    """Cosine annealing: lr0 at t=0, 0 at t=total."""
    return lr0 * (1.0 + np.cos(np.pi * t / total)) / 2.0


def schedule_lr(cfg: TrainConfig, epoch: int) -> float:
    if cfg.schedule == "cosine":
        return cosine_lr(cfg.lr, epoch, cfg.epochs)
    return cfg.lr


def train(p: Predictor, data: LabeledBatch, cfg: TrainConfig) -> tuple[Predictor, TrainHistory]:
    """Train a copy of the predictor; the input object is never mutated.

    In linear_probe_then_finetune mode the first epochs//2 epochs update only
    the final layer. In finetune_from mode the starting parameters come from
    cfg.checkpoint and `p` only fixes the expected architecture.
    """
    if len(data) == 0:
        raise ValidationError("training data must be non-empty")
    if cfg.mode == "finetune_from":
        p = load_checkpoint(cfg.checkpoint)
    head_width = p.layer_sizes[-1]
    if int(data.labels.max()) >= head_width:
        raise ValidationError(
            f"labels reach {data.labels.max()} but the head has width {head_width}"
        )

    t_start = time.perf_counter()
    p = p.copy()
    vel_w = [np.zeros_like(w) for w in p.weights]
    vel_b = [np.zeros_like(b) for b in p.biases]
    history = TrainHistory()
    probe_epochs = cfg.epochs // 2 if cfg.mode == "linear_probe_then_finetune" else 0
    mu = cfg.momentum

    for epoch in range(cfg.epochs):
        lr = schedule_lr(cfg, epoch)
        rng = derive_rng(cfg.seed, "train-epoch", epoch)
        epoch_data = data
        if cfg.augment is not None and not cfg.augment.is_identity:
            epoch_data = augment(data, cfg.augment, seed=int(rng.integers(2**62)))
        order = rng.permutation(len(epoch_data))
        head_only = epoch < probe_epochs
        first = p.num_layers - 1 if head_only else 0
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, gw, gb = loss_and_grads(p, epoch_data.features[idx], epoch_data.labels[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch)
            losses.append(loss)
            for i in range(first, p.num_layers):
                if cfg.weight_decay:
                    gw[i] += cfg.weight_decay * p.weights[i]
                    gb[i] += cfg.weight_decay * p.biases[i]
                if mu:
                    vel_w[i] = mu * vel_w[i] + gw[i]
                    vel_b[i] = mu * vel_b[i] + gb[i]
                    p.weights[i] -= lr * (gw[i] + mu * vel_w[i])
                    p.biases[i] -= lr * (gb[i] + mu * vel_b[i])
                else:
                    p.weights[i] -= lr * gw[i]
                    p.biases[i] -= lr * gb[i]
        history.train_loss.append(float(np.mean(losses)))
        history.train_error.append(evaluate(p, epoch_data))
        history.lr.append(float(lr))
    history.wall_time = time.perf_counter() - t_start
    return p, history


def evaluate(p: Predictor, data: LabeledBatch) -> float:
    """0-1 error under argmax prediction; ties go to the lower class index."""
    if len(data) == 0:
        raise ValidationError("evaluation data must be non-empty")
    pred = np.argmax(scores(p, data.features), axis=1)
    return float((pred != data.labels).mean())


def predict_proba(p: Predictor, x: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(scores(p, x)))


def encode(p: Predictor, data: LabeledBatch) -> np.ndarray:
    """Penultimate-layer activations, one row per sample."""
    return forward_activations(p, data.features)[-2]


def augment(data: LabeledBatch, policy: AugmentPolicy, seed: int) -> LabeledBatch:
    """Label-preserving stochastic augmentation, deterministic given seed.

    Grids (64-d) support random crop with zero padding and horizontal flips;
    2-d point features support Gaussian jitter only.
    """
    if policy.is_identity:
        return LabeledBatch(data.features.copy(), data.labels.copy(), data.env_ids.copy())
    rng = derive_rng(seed, "augment")
    n = len(data)
    if data.dim == 2:
        if policy.random_crop_pad or policy.hflip_prob:
            raise UnsupportedTransformError("crop/flip undefined for 2-d point features")
        feats = data.features + rng.normal(0.0, policy.jitter_std, size=data.features.shape)
        return LabeledBatch(feats, data.labels.copy(), data.env_ids.copy())
    if data.dim != 64:
        raise UnsupportedTransformError(f"augmentation undefined for dim {data.dim}")
    if policy.jitter_std:
        raise UnsupportedTransformError("jitter is defined for 2-d point features only")
    grids = data.features.reshape(n, 8, 8)
    if policy.random_crop_pad:
        pad = policy.random_crop_pad
        padded = np.pad(grids, ((0, 0), (pad, pad), (pad, pad)))
        offs = rng.integers(0, 2 * pad + 1, size=(n, 2))
        out = np.empty_like(grids)
        for i in range(n):
            r, c = offs[i]
            out[i] = padded[i, r : r + 8, c : c + 8]
        grids = out
    if policy.hflip_prob:
        flip = rng.uniform(size=n) < policy.hflip_prob
        grids = grids.copy()
        grids[flip] = grids[flip, :, ::-1]
    return LabeledBatch(grids.reshape(n, 64), data.labels.copy(), data.env_ids.copy())


# ---------------------------------------------------------------------------
# Checkpoint format: magic, version, layer count, layer sizes (u32 LE),
# then weight and bias matrices per layer as little-endian float64.

_MAGIC = b"OHMLP"
_VERSION = 1


def save_checkpoint(p: Predictor, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(p.layer_sizes)))
        fh.write(struct.pack(f"<{len(p.layer_sizes)}I", *p.layer_sizes))
        for w, b in zip(p.weights, p.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_checkpoint(path: str) -> Predictor:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ConfigurationError(f"{path}: not a predictor checkpoint")
        version, n_sizes = struct.unpack("<II", fh.read(8))
        if version != _VERSION:
            raise ConfigurationError(f"{path}: unsupported checkpoint version {version}")
        sizes = struct.unpack(f"<{n_sizes}I", fh.read(4 * n_sizes))
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            w = np.frombuffer(fh.read(8 * fan_in * fan_out), dtype="<f8").reshape(fan_in, fan_out)
            b = np.frombuffer(fh.read(8 * fan_out), dtype="<f8")
            weights.append(w.astype(float))
            biases.append(b.astype(float))
    return Predictor(tuple(sizes), weights, biases)
