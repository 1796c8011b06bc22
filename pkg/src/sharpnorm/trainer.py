"""Seeded minibatch training with Adam or SGD."""

from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .hessian import NumericError
from .losses import LossId, as_loss_id, batch_zero_one


@dataclass(frozen=True)
class Adam:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class SGD:
    lr: float = 0.01


@dataclass(frozen=True)
class TrainConfig:
    optimizer: object = Adam()
    epochs: int = 50
    batch_size: int = 128
    seed: int = 0
    loss: str = "ce"

    def __post_init__(self):
        if self.optimizer.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        as_loss_id(self.loss)

    def to_dict(self):
        opt = asdict(self.optimizer)
        opt["name"] = type(self.optimizer).__name__.lower()
        return {"optimizer": opt, "epochs": self.epochs, "batch_size": self.batch_size, "seed": self.seed, "loss": LossId(self.loss).value}

    @classmethod
    def from_dict(cls, d):
        opt = dict(d.get("optimizer", {}))
        name = opt.pop("name", "adam")
        optimizer = {"adam": Adam, "sgd": SGD}[name](**opt)
        rest = {k: d[k] for k in ("epochs", "batch_size", "seed", "loss") if k in d}
        return cls(optimizer=optimizer, **rest)


@dataclass
class RunRecord:
    params: nn.ParamStore
    config: TrainConfig
    loss_curve: list
    train_accuracy: float = None
    test_accuracy: float = None
    gap: float = None
    corruption: object = None
    extra: dict = field(default_factory=dict)


def init_params(net, seed) -> nn.ParamStore:
    """Uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases."""
    rng = np.random.default_rng([seed, 0])
    store = nn.ParamStore(net)
    for l, spec in enumerate(net.param_layers):
        w = store.weight(l)
        taps = int(np.prod(w.shape[2:])) if w.ndim > 2 else 1
        fan_out, fan_in = w.shape[0] * taps, w.shape[1] * taps
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w[...] = rng.uniform(-bound, bound, size=w.shape)
    return store


def train(net, ds, cfg: TrainConfig = TrainConfig(), params=None) -> RunRecord:
    """Fit ``net`` to ``ds``; bit-reproducible given ``cfg.seed``."""
    if len(ds) == 0:
        raise ValueError("empty training set")
    params = init_params(net, cfg.seed) if params is None else params.copy()
    theta = params.flat
    shuffle = np.random.default_rng([cfg.seed, 1])
    opt = cfg.optimizer
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    t = 0
    curve = []
    for epoch in range(cfg.epochs):
        order = shuffle.permutation(len(ds))
        total = 0.0
        for xb, yb in ds.batches(cfg.batch_size, order):
            loss, g = nn.loss_and_gradient(net, params, xb, yb, cfg.loss)
            if not np.isfinite(loss):
                raise NumericError(f"training loss diverged in epoch {epoch}")
            total += loss * len(yb)
            if isinstance(opt, Adam):
                t += 1
                m = opt.beta1 * m + (1 - opt.beta1) * g
                v = opt.beta2 * v + (1 - opt.beta2) * g * g
                mhat = m / (1 - opt.beta1**t)
                vhat = v / (1 - opt.beta2**t)
                theta -= opt.lr * mhat / (np.sqrt(vhat) + opt.eps)
            else:
                theta -= opt.lr * g
        curve.append(total / len(ds))
    return RunRecord(params, cfg, curve, corruption=ds.corruption)


def predict(net, params, x, batch_size=1024) -> np.ndarray:
    x = np.asarray(x)
    out = [np.argmax(nn.forward(net, params, x[i : i + batch_size]), axis=1) for i in range(0, len(x), batch_size)]
    return np.concatenate(out)


def evaluate(net, params, ds) -> float:
    """Accuracy, i.e. one minus the mean 0-1 loss over the whole dataset."""
    if len(ds) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    errors = 0.0
    for i in range(0, len(ds), 1024):
        logits = nn.forward(net, params, ds.features[i : i + 1024])
        errors += batch_zero_one(logits, ds.labels[i : i + 1024]).sum()
    return 1.0 - errors / len(ds)


def gap(train_acc, test_acc) -> float:
    return train_acc - test_acc


def run(net, train_ds, test_ds, cfg: TrainConfig = TrainConfig()) -> RunRecord:
    """Train, then fill in train/test accuracy and the generalization gap."""
    rec = train(net, train_ds, cfg)
    rec.train_accuracy = evaluate(net, rec.params, train_ds)
    rec.test_accuracy = evaluate(net, rec.params, test_ds)
    rec.gap = gap(rec.train_accuracy, rec.test_accuracy)
    return rec


def mlp(sizes, num_classes=None, bias=True) -> nn.NetworkSpec:
    """ReLU MLP with layer widths ``sizes`` (input first, classes last)."""
    layers = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(nn.Dense(a, b, bias))
        if i < len(sizes) - 2:
            layers.append(nn.ReLU())
    return nn.NetworkSpec(layers, (sizes[0],), num_classes or sizes[-1])


__all__ = ["Adam", "SGD", "TrainConfig", "RunRecord", "init_params", "train", "evaluate", "gap", "run", "mlp", "predict"]
