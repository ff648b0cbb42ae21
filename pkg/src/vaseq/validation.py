"""Input validation helpers for the estimator API."""

from __future__ import annotations

import numbers

import numpy as np

IMAGE_SIZE = 96


def check_random_state(seed):
    """Accept None, an int seed, or a Generator; return a Generator."""
    if seed is None:
        return np.random.default_rng()
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, numbers.Integral):
        return np.random.default_rng(int(seed))
    raise ValueError(f"cannot use {seed!r} to seed a random generator")


def check_sequences(X, copy=False):
    """Validate sequence input of shape (n, L, 96, 96, 3).

    uint8 frames are rescaled to [-1, 1]; float input must already be in
    [-1, 1].  Returns a float32 array.
    """
    X = np.asarray(X)
    if X.ndim != 5 or X.shape[2:] != (IMAGE_SIZE, IMAGE_SIZE, 3):
        raise ValueError(f"expected (n, L, {IMAGE_SIZE}, {IMAGE_SIZE}, 3) "
                         f"sequences, got {X.shape}")
    if X.shape[0] == 0 or X.shape[1] == 0:
        raise ValueError("need at least one sequence with at least one frame")
    if X.dtype == np.uint8:
        return (X.astype(np.float32) - np.float32(128.0)) / np.float32(128.0)
    X = X.astype(np.float32, copy=copy)
    if X.min() < -1.0 or X.max() > 1.0:
        raise ValueError("float sequences must be scaled to [-1, 1]")
    return X


def check_labels(y, n_sequences, seq_len):
    """Validate targets of shape (n, L, 2) with values in [-1, 1]."""
    y = np.asarray(y, dtype=np.float32)
    if y.shape != (n_sequences, seq_len, 2):
        raise ValueError(f"expected labels of shape ({n_sequences}, {seq_len}, 2), "
                         f"got {y.shape}")
    if y.min() < -1.0 or y.max() > 1.0:
        raise ValueError("labels must be scaled to [-1, 1]")
    return y
