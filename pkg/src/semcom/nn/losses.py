"""Loss primitives with fused gradients.

Per-sample variants reduce every axis except the leading batch axis and
return a ``(B,)`` tensor; the plain variants return a scalar mean.
"""

import numpy as np

from ..errors import NumericError, ShapeError
from .tensor import Tensor, _make, check_finite


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}", expected=a.shape, actual=b.shape)


def mse_per_sample(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b)
    diff = (a.data - b.data).reshape(a.shape[0], -1)
    n = diff.shape[1]

    def back(g):
        gd = (2.0 / n) * diff * g[:, None]
        if a.requires_grad:
            a._accumulate(gd.reshape(a.shape))
        if b.requires_grad:
            b._accumulate(-gd.reshape(b.shape))

    return _make(np.mean(diff * diff, axis=1), (a, b), back)


def mse_loss(a, b):
    """Mean squared difference over all elements."""
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b)
    diff = a.data - b.data
    n = diff.size

    def back(g):
        gd = (2.0 / n) * diff * g
        if a.requires_grad:
            a._accumulate(gd)
        if b.requires_grad:
            b._accumulate(-gd)

    return _make(np.mean(diff * diff), (a, b), back)


def _log_softmax(z):
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    return np.exp(_log_softmax(z))


def ce_per_sample(logits, labels):
    """Cross entropy of softmax(logits[i]) against one-hot ``labels[i]``."""
    logits = _as_tensor(logits)
    check_finite(logits.data, "logits")
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.data.ndim != 2 or labels.shape[0] != logits.shape[0]:
        raise ShapeError(f"logits {logits.shape} and labels {labels.shape} disagree")
    n_cls = logits.shape[1]
    if np.any(labels < 0) or np.any(labels >= n_cls):
        raise ValueError(f"label out of range for {n_cls} classes")
    logp = _log_softmax(logits.data)
    rows = np.arange(labels.shape[0])
    loss = -logp[rows, labels]

    def back(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        logits._accumulate(p * g[:, None])

    return _make(loss, (logits,), back)


def softmax_cross_entropy(logits, label):
    """CE for one logit vector and an int label, or a batch mean for (B, C) logits."""
    logits = _as_tensor(logits)
    if logits.data.ndim == 1:
        per = ce_per_sample(_reshape_row(logits), [label])
        return _index0(per)
    per = ce_per_sample(logits, label)
    n = per.shape[0]

    def back(g):
        per._accumulate(np.full(n, g / n))

    return _make(per.data.mean(), (per,), back)


def _reshape_row(t):
    def back(g):
        t._accumulate(g.reshape(t.shape))

    return _make(t.data.reshape(1, -1), (t,), back)


def _index0(t):
    def back(g):
        t._accumulate(np.array([g]).reshape(t.shape))

    return _make(t.data[0], (t,), back)


def l1_per_sample(a, b):
    """Mean absolute difference per sample."""
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b)
    diff = (a.data - b.data).reshape(a.shape[0], -1)
    n = diff.shape[1]
    sign = np.sign(diff)

    def back(g):
        gd = sign * (g[:, None] / n)
        if a.requires_grad:
            a._accumulate(gd.reshape(a.shape))
        if b.requires_grad:
            b._accumulate(-gd.reshape(b.shape))

    return _make(np.mean(np.abs(diff), axis=1), (a, b), back)


def bce_per_sample(prob, target, eps=1e-7):
    """Binary cross entropy of probabilities ``prob`` (B, 1) against 0/1 targets."""
    prob = _as_tensor(prob)
    p = prob.data.reshape(-1)
    if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
        raise NumericError("probabilities must lie in [0, 1]")
    y = np.asarray(target, dtype=np.float64).reshape(-1)
    pc = np.clip(p, eps, 1 - eps)
    loss = -(y * np.log(pc) + (1 - y) * np.log(1 - pc))

    def back(g):
        gp = g * (-(y / pc) + (1 - y) / (1 - pc))
        prob._accumulate(gp.reshape(prob.shape))

    return _make(loss, (prob,), back)
