"""Deterministic mini-batch order shared by every trainer."""

import numpy as np


def batch_schedule(n, batch_size, seed, epoch):
    """Index arrays covering ``range(n)`` once, shuffled per (seed, epoch)."""
    if n < 1 or batch_size < 1:
        raise ValueError("n and batch_size must be positive")
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]
