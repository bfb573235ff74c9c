"""Input checks shared by the estimator-style policies."""
import numpy as np
from sklearn.utils.validation import check_array


def check_penalty_matrix(X, name="X"):
    X = check_array(X, dtype=np.float64, ensure_2d=True, input_name=name)
    if X.shape[1] < 2:
        raise ValueError(f"{name} needs at least two AoI levels, got {X.shape[1]}")
    if np.any(X < 0):
        raise ValueError(f"{name} must be nonnegative")
    return X


def check_aoi(X, n_sources, delta_bound):
    """Validate a batch of AoI vectors and saturate them at ``delta_bound``."""
    X = check_array(np.atleast_2d(X), dtype=None, ensure_2d=True, input_name="aoi")
    if X.shape[1] != n_sources:
        raise ValueError(f"expected {n_sources} sources, got {X.shape[1]}")
    if not np.all(X == np.round(X)):
        raise ValueError("AoI values must be integers")
    X = X.astype(np.int64)
    if np.any(X < 1):
        raise ValueError("AoI values must be >= 1")
    return np.minimum(X, delta_bound)


def check_channels(n_channels, n_sources):
    if not 1 <= n_channels <= n_sources:
        raise ValueError(f"need 1 <= n_channels <= {n_sources}, got {n_channels}")
