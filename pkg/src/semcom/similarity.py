"""Dataset similarity via the proxy A-distance.

Draw ``n`` samples from each domain, label them 0 (library) and 1 (observed),
train a linear classifier to tell them apart and turn its held-out error
``eps`` into ``d_A = 2 (1 - 2 eps)``.
"""

from dataclasses import dataclass

import numpy as np

from .data import Dataset, match_images
from .errors import DatasetError
from .nn import Adam, sequential
from .nn import tensor as T
from .nn.losses import bce_per_sample
from .schedule import batch_schedule


@dataclass
class MergedDataset:
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray

    def __post_init__(self):
        labels = np.concatenate([self.train_y, self.test_y])
        if not set(np.unique(labels)) <= {0, 1} or len(np.unique(labels)) != 2:
            raise DatasetError("merged dataset needs both domain labels 0 and 1")

    @property
    def shape(self):
        return self.train_x.shape[1:]


def _images(d):
    return d.images if isinstance(d, Dataset) else np.asarray(d, dtype=np.float64)


def _unit_range(x):
    lo, hi = float(x.min()), float(x.max())
    if lo >= 0.0 and hi <= 1.0:
        return x
    return (x - lo) / (hi - lo) if hi > lo else np.zeros_like(x)


def build_merged(lib, obs, n, seed=0, test_fraction=0.2):
    """Balanced, shuffled 2n-sample domain-labelled set with a stratified split.

    ``obs`` is resampled to the library's sample shape first. Each domain
    contributes ``round(test_fraction * n)`` samples to the test part.
    """
    k, s = _images(lib), _images(obs)
    if n < 1 or len(k) < n or len(s) < n:
        raise DatasetError(f"need at least n={n} samples per domain (got {len(k)} and {len(s)})")
    rng = np.random.default_rng(seed)
    k = k[rng.choice(len(k), n, replace=False)]
    s = s[rng.choice(len(s), n, replace=False)]
    if s.shape[1:] != k.shape[1:]:
        s = match_images(s, k.shape[1:])
    n_test = int(round(test_fraction * n))
    x = _unit_range(np.concatenate([k, s]))
    k, s = x[:n], x[n:]
    train_x = np.concatenate([k[n_test:], s[n_test:]])
    train_y = np.repeat([0, 1], n - n_test)
    test_x = np.concatenate([k[:n_test], s[:n_test]])
    test_y = np.repeat([0, 1], n_test)
    p, q = rng.permutation(len(train_x)), rng.permutation(len(test_x))
    return MergedDataset(train_x[p], train_y[p], test_x[q], test_y[q])


def classifier_error(clf, x, y):
    if len(x) == 0:
        return float("nan")
    p = clf.forward(x).data.reshape(-1)
    return float(np.mean((p > 0.5).astype(int) != np.asarray(y)))


def train_domain_classifier(m, seed=0, epochs=100, lr=0.01, batch_size=64):
    """Fit a dense+sigmoid classifier with Adam on binary cross entropy.

    Returns ``(classifier, eps)`` with ``eps`` the held-out error rate.
    """
    rng = np.random.default_rng(seed)
    clf = sequential(["flatten", ("dense", 1), "sigmoid"], m.shape, rng, "domain_classifier")
    opt = Adam(clf.parameters(), eta=lr)
    target = m.train_y.astype(np.float64).reshape(-1, 1)
    for epoch in range(epochs):
        for idx in batch_schedule(len(m.train_x), batch_size, seed, epoch):
            clf.zero_grad()
            T.mean(bce_per_sample(clf.forward(m.train_x[idx]), target[idx])).backward()
            opt.step()
    return clf, classifier_error(clf, m.test_x, m.test_y)


def pad(epsilon):
    """Proxy A-distance ``2 (1 - 2 eps)`` clamped to [0, 2]."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    return min(2.0, max(0.0, 2.0 * (1.0 - 2.0 * epsilon)))


def proxy_a_distance(lib, obs, n, seed=0, epochs=100, lr=0.01):
    """Convenience wrapper returning ``(eps, d_A)``."""
    m = build_merged(lib, obs, n, seed)
    _, eps = train_domain_classifier(m, seed, epochs, lr)
    return eps, pad(eps)
