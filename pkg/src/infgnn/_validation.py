"""Input checks shared by the estimator wrappers."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array


def check_windows(x, name: str = "X", n_features: int | None = None, steps: int | None = None) -> np.ndarray:
    """Return ``x`` as a finite float64 array of shape ``(S, N, D, T)``."""
    arr = check_array(x, allow_nd=True, dtype=np.float64, ensure_2d=False, ensure_all_finite=True,
                      input_name=name)
    if arr.ndim != 4:
        raise ValueError(f"{name} must have shape (samples, nodes, features, steps), got {arr.shape}")
    if n_features is not None and arr.shape[2] != n_features:
        raise ValueError(f"{name} has {arr.shape[2]} features, expected {n_features}")
    if steps is not None and arr.shape[3] != steps:
        raise ValueError(f"{name} spans {arr.shape[3]} steps, expected {steps}")
    return arr


def check_adjacency(a, n_nodes: int | None = None) -> np.ndarray:
    arr = check_array(a, dtype=np.float64, ensure_all_finite=True, input_name="adjacency")
    if arr.shape[0] != arr.shape[1]:
        raise ValueError(f"adjacency must be square, got {arr.shape}")
    if n_nodes is not None and arr.shape[0] != n_nodes:
        raise ValueError(f"adjacency covers {arr.shape[0]} nodes, windows have {n_nodes}")
    if np.any(arr < 0):
        raise ValueError("adjacency must be nonnegative")
    if not np.array_equal(arr, arr.T):
        raise ValueError("adjacency must be symmetric")
    return arr


def check_pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = check_windows(x, "X")
    y = check_windows(y, "y", n_features=x.shape[2])
    if x.shape[:2] != y.shape[:2]:
        raise ValueError(f"X and y disagree on samples/nodes: {x.shape[:2]} vs {y.shape[:2]}")
    return x, y
