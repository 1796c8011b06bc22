"""Per-sample losses on network outputs.

Every differentiable loss exposes a batched ``(values, dlogits)`` form where
``dlogits[n]`` is the gradient of ``values[n]`` with respect to ``logits[n]``.
"""

from enum import Enum

import numpy as np

STD_EPS = 1e-12


class LossId(str, Enum):
    CE = "ce"
    NSCE = "nsce"
    ZERO_ONE = "zero_one"
    # not a classification loss; used for scalar regression fixtures
    SQUARED = "mse"


class UnsupportedLossError(ValueError):
    pass


def as_loss_id(loss) -> LossId:
    try:
        return LossId(loss)
    except ValueError:
        raise UnsupportedLossError(f"unknown loss {loss!r}") from None


def _check_labels(labels, k):
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise IndexError(f"label out of range for {k} classes")
    return labels.astype(np.intp)


def _log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits, label) -> float:
    """Negative log-softmax probability of ``label``."""
    logits = np.asarray(logits, dtype=np.float64)
    (label,) = _check_labels([label], logits.shape[-1])
    return float(-_log_softmax(logits)[label])


def _normalize(logits):
    mu = logits.mean(axis=-1, keepdims=True)
    s = np.sqrt(((logits - mu) ** 2).mean(axis=-1, keepdims=True))
    return logits / np.maximum(s, STD_EPS), s


def nsce_loss(logits, label) -> float:
    """Cross-entropy of logits divided by their population standard deviation.

    Invariant to positive rescaling and to constant shifts of the logits.
    """
    logits = np.asarray(logits, dtype=np.float64)
    scaled, _ = _normalize(logits)
    return cross_entropy(scaled, label)


def zero_one(logits, label) -> int:
    logits = np.asarray(logits, dtype=np.float64)
    (label,) = _check_labels([label], logits.shape[-1])
    # np.argmax returns the first maximal index
    return int(np.argmax(logits) != label)


def batch_ce(logits, labels):
    labels = _check_labels(labels, logits.shape[1])
    logp = _log_softmax(logits)
    rows = np.arange(len(labels))
    values = -logp[rows, labels]
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    return values, grad


def batch_nsce(logits, labels):
    k = logits.shape[1]
    scaled, s = _normalize(logits)
    values, g = batch_ce(scaled, labels)
    active = s > STD_EPS
    s_safe = np.maximum(s, STD_EPS)
    # d(f/s)/df applied to g; the std term only exists where the guard is off
    centered = logits - logits.mean(axis=1, keepdims=True)
    proj = (logits * g).sum(axis=1, keepdims=True)
    grad = g / s_safe - np.where(active, centered * proj / (k * s_safe**3), 0.0)
    return values, grad


def batch_squared(outputs, targets):
    targets = np.asarray(targets, dtype=np.float64).reshape(outputs.shape)
    diff = outputs - targets
    return (diff**2).sum(axis=1), 2.0 * diff


def batch_zero_one(logits, labels):
    labels = _check_labels(labels, logits.shape[1])
    return (np.argmax(logits, axis=1) != labels).astype(np.float64)


def batch_loss(loss, logits, targets):
    """Per-sample values and logit gradients for a differentiable loss."""
    loss = as_loss_id(loss)
    logits = np.asarray(logits, dtype=np.float64)
    if loss is LossId.CE:
        return batch_ce(logits, targets)
    if loss is LossId.NSCE:
        return batch_nsce(logits, targets)
    if loss is LossId.SQUARED:
        return batch_squared(logits, targets)
    raise UnsupportedLossError(f"{loss.value} loss has no gradient")


def batch_values(loss, logits, targets):
    loss = as_loss_id(loss)
    if loss is LossId.ZERO_ONE:
        return batch_zero_one(np.asarray(logits, dtype=np.float64), targets)
    return batch_loss(loss, logits, targets)[0]


def mean_loss(loss, logits, targets) -> float:
    values = batch_values(loss, logits, targets)
    return float(values.sum() / len(values))
