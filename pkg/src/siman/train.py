"""Training loop for ConvNet-S: momentum SGD, cosine schedule, and per-layer
binarization statistics.

Binarized layers and real-valued layers sit in separate weight-decay
groups, so the l2 term can be dropped on binarized weights only.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import data as D
from .binarize import cosine, objective_value, optimal_binarize, quantization_error
from .errors import DatasetEmpty, InvalidArgs, NonFiniteGradient
from .nn import BINARIZERS, ConvNetS, softmax_cross_entropy

# CLI mode -> (binarizer, weight decay on binarized layers)
DEFAULT_DECAY = 5e-4
MODES = {
    "siman": ("siman", 0.0),
    "siman1": ("siman1", DEFAULT_DECAY),
    "siman2": ("siman1", 0.0),
    "siman3": ("siman", DEFAULT_DECAY),
    "sign": ("sign_baseline", DEFAULT_DECAY),
}

METRIC_COLUMNS = ("epoch", "lr", "train_loss", "train_acc", "test_acc",
                  "mean_p_plus", "mean_cos_siman", "mean_cos_sign")
STATS_COLUMNS = ("layer", "filters", "n", "mean_p_plus", "cos_siman", "cos_siman_pm1",
                 "cos_sign", "qerr_siman", "qerr_sign")


@dataclass
class TrainConfig:
    learning_rate: float = 0.1
    momentum: float = 0.9
    epochs: int = 20
    batch_size: int = 128
    weight_decay_other: float = DEFAULT_DECAY
    weight_decay_binarized: float = 0.0
    seed: int = 0
    schedule: str = "cosine"
    binarizer: str = "siman"
    augment: bool = False

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise InvalidArgs(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise InvalidArgs(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.epochs < 0 or self.batch_size < 1:
            raise InvalidArgs("epochs must be >= 0 and batch_size >= 1")
        if self.schedule != "cosine":
            raise InvalidArgs(f"unsupported schedule {self.schedule!r}")
        if self.binarizer not in BINARIZERS:
            raise InvalidArgs(f"unknown binarizer {self.binarizer!r}")

    @classmethod
    def for_mode(cls, mode: str, **kw) -> "TrainConfig":
        if mode not in MODES:
            raise InvalidArgs(f"unknown mode {mode!r}; choose from {sorted(MODES)}")
        binarizer, decay = MODES[mode]
        kw.setdefault("weight_decay_binarized", decay)
        return cls(binarizer=binarizer, **kw)


@dataclass(frozen=True)
class ModelSpec:
    in_channels: int = 3
    classes: int = 10
    widths: tuple = (16, 32, 64, 64)

    def build(self, binarizer: str) -> ConvNetS:
        return ConvNetS(self.in_channels, self.classes, self.widths, binarizer)


@dataclass
class NetworkState:
    """Model parameters plus the optimizer's momentum buffers."""

    model: ConvNetS
    spec: ModelSpec
    config: TrainConfig
    velocity: dict = field(default_factory=dict)

    @classmethod
    def initial(cls, spec: ModelSpec, config: TrainConfig) -> "NetworkState":
        model = spec.build(config.binarizer).init_weights(config.seed)
        return cls(model, spec, config)

    @property
    def layers(self):
        return self.model.layers

    def tensors(self) -> "dict[str, np.ndarray]":
        out = dict(self.model.state_dict())
        for k, v in self.velocity.items():
            out[f"velocity.{k}"] = v
        return out


def cosine_lr(lr0: float, epoch: int, total: int) -> float:
    if total <= 0:
        return lr0
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * epoch / total))


def sgd_step(state: NetworkState, grads: dict, config: TrainConfig, epoch: int) -> NetworkState:
    """One momentum-SGD update in place (PyTorch convention:
    ``v = mu v + g + d w``; ``w -= lr v``)."""
    lr = cosine_lr(config.learning_rate, epoch, config.epochs)
    for name, w, layer in state.model.named_params():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient in {name}")
        decay = config.weight_decay_binarized if layer.binarized else config.weight_decay_other
        if decay:
            g = g + decay * w
        if config.momentum:
            v = state.velocity.get(name)
            if v is None:
                v = state.velocity[name] = np.zeros_like(w)
            v *= config.momentum
            v += g
            g = v
        w -= lr * g
    return state


def collect_grads(model: ConvNetS) -> dict:
    return {f"{layer.name}.{k}": layer.grads[k] for layer in model.layers for k in layer.params}


def predict(model: ConvNetS, images: np.ndarray, batch_size: int = 500) -> np.ndarray:
    out = [model.forward(images[s:s + batch_size], training=False).argmax(axis=1)
           for s in range(0, images.shape[0], batch_size)]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def accuracy(model: ConvNetS, ds: D.Dataset) -> float:
    if len(ds) == 0:
        return math.nan
    return float(np.mean(predict(model, _inputs(ds)) == ds.labels))


def _inputs(ds: D.Dataset) -> np.ndarray:
    return D.normalize_cifar(ds.images) if ds.kind == "cifar10" else ds.images


def filter_stats(w) -> dict:
    """Statistics of the optimal code for one filter, next to the sign baseline."""
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    mag = np.abs(w)
    code = optimal_binarize(w)
    sign = np.where(w >= 0, 1.0, -1.0)
    return {
        "p_plus": code.ones / w.size,
        "cos_siman": objective_value(w, code),
        "cos_siman_pm1": cosine(w, code.to_pm1()),
        "cos_sign": cosine(w, sign),
        "qerr_siman": quantization_error(mag, code.bits),
        "qerr_sign": quantization_error(w, sign),
    }


def layer_stats(state: NetworkState | ConvNetS) -> list[dict]:
    """Per binarized layer: per-filter p_plus and filter-averaged cosine
    similarities and quantization errors for the optimal code and the
    sign baseline.

    ``cos_siman`` is cos(|w|, b) for the optimal {0,1} code ``b``;
    ``cos_siman_pm1`` is cos(w, 2b - 1), reported for comparison.
    """
    model = state.model if isinstance(state, NetworkState) else state
    out = []
    for layer in model.binary_layers():
        w = layer.params["weight"]
        rows = [filter_stats(f) for f in w.reshape(w.shape[0], -1)]
        rec = {"layer": layer.name, "filters": w.shape[0], "n": w[0].size,
               "p_plus": [r["p_plus"] for r in rows]}
        for key in ("p_plus", "cos_siman", "cos_siman_pm1", "cos_sign", "qerr_siman", "qerr_sign"):
            rec["mean_" + key if key == "p_plus" else key] = float(np.mean([r[key] for r in rows]))
        out.append(rec)
    return out


def stats_rows(stats: list[dict]):
    return [[s[c] for c in STATS_COLUMNS] for s in stats]


def train(spec: ModelSpec, dataset, config: TrainConfig, state: NetworkState | None = None,
          on_epoch=None) -> tuple[NetworkState, list[dict]]:
    """Run ``config.epochs`` epochs; return the final state and metric rows.

    ``dataset`` is a ``(train, test)`` pair of :class:`siman.data.Dataset`.
    Batch order and augmentation come from generators seeded by
    ``(seed, epoch)``, so a run depends only on its inputs.
    """
    train_ds, test_ds = dataset
    if len(train_ds) == 0:
        raise DatasetEmpty("training set is empty")
    state = state or NetworkState.initial(spec, config)
    model = state.model
    x_all = _inputs(train_ds)
    use_aug = config.augment and train_ds.is_image
    metrics = []
    for epoch in range(config.epochs):
        lr = cosine_lr(config.learning_rate, epoch, config.epochs)
        order_rng = np.random.default_rng([config.seed, 1, epoch])
        aug_rng = np.random.default_rng([config.seed, 2, epoch])
        loss_sum, correct = 0.0, 0
        for idx in D.batches(len(train_ds), config.batch_size, order_rng):
            x = x_all[idx]
            if use_aug:
                x = D.augment_batch(x, aug_rng)
            y = train_ds.labels[idx]
            logits = model.forward(x, training=True)
            loss, grad = softmax_cross_entropy(logits, y)
            if not math.isfinite(loss):
                raise NonFiniteGradient(f"loss became {loss} in epoch {epoch}")
            model.backward(grad)
            sgd_step(state, collect_grads(model), config, epoch)
            loss_sum += loss * idx.size
            correct += int((logits.argmax(axis=1) == y).sum())
        stats = layer_stats(model)
        row = {
            "epoch": epoch + 1,
            "lr": lr,
            "train_loss": loss_sum / len(train_ds),
            "train_acc": correct / len(train_ds),
            "test_acc": accuracy(model, test_ds),
            "mean_p_plus": float(np.mean([s["mean_p_plus"] for s in stats])),
            "mean_cos_siman": float(np.mean([s["cos_siman"] for s in stats])),
            "mean_cos_sign": float(np.mean([s["cos_sign"] for s in stats])),
        }
        metrics.append(row)
        if on_epoch is not None:
            on_epoch(row)
    return state, metrics


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
