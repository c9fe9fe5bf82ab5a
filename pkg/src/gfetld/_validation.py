"""Input validation helpers shared by the estimators and functional API."""
import numbers

import numpy as np
from sklearn.utils import check_array


def check_samples(X, name="X", min_rows=1):
    """Return ``X`` as a float 2-D array of shape (rows, dim).

    A 1-D input is read as ``rows`` scalar samples.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    X = check_array(X, ensure_2d=True, ensure_min_samples=0, input_name=name)
    if X.shape[0] < min_rows:
        raise ValueError(f"{name} needs at least {min_rows} rows, got {X.shape[0]}")
    return X


def check_same_dim(X, Y):
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} != {Y.shape[1]}")


def check_vector(x, name="x"):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.ndim != 1:
        raise ValueError(f"{name} must be a vector, got shape {x.shape}")
    return x


def check_positive(value, name):
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")
    return float(value)


def check_ensemble(theta, min_particles=2):
    """Return particles as an (M, D) float array with M >= ``min_particles``."""
    theta = np.asarray(theta, dtype=float)
    if theta.ndim == 1:
        theta = theta[:, None]
    if theta.ndim != 2:
        raise ValueError(f"ensemble must be (M, D), got shape {theta.shape}")
    if theta.shape[0] < min_particles:
        raise ValueError(f"ensemble needs M >= {min_particles}, got {theta.shape[0]}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("ensemble contains non-finite values")
    return theta
