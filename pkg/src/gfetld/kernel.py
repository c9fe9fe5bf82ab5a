"""Gaussian kernel, its gradient, bandwidth selection and MMD^2 estimators."""
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist

from ._validation import check_positive, check_same_dim, check_samples, check_vector
from .exceptions import DegenerateDataError


@dataclass(frozen=True)
class KernelSpec:
    """Gaussian kernel ``k(x, y) = exp(-|x - y|^2 / (2 * bandwidth^2))``."""

    bandwidth: float

    def __post_init__(self):
        object.__setattr__(self, "bandwidth", check_positive(self.bandwidth, "bandwidth"))


def _spec(spec):
    if isinstance(spec, KernelSpec):
        return spec
    return KernelSpec(spec)


def eval_kernel(x, y, spec):
    spec = _spec(spec)
    x, y = check_vector(x, "x"), check_vector(y, "y")
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape[0]} != {y.shape[0]}")
    d2 = np.sum((x - y) ** 2)
    return float(np.exp(-d2 / (2.0 * spec.bandwidth**2)))


def kernel_gradient_x(x, y, spec):
    """Gradient of ``k(x, y)`` with respect to its first argument."""
    spec = _spec(spec)
    x, y = check_vector(x, "x"), check_vector(y, "y")
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape[0]} != {y.shape[0]}")
    diff = x - y
    k = np.exp(-np.sum(diff**2) / (2.0 * spec.bandwidth**2))
    return -diff / spec.bandwidth**2 * k


def gram(X, Y, spec):
    """Kernel matrix between the rows of two 2-D arrays."""
    spec = _spec(spec)
    return np.exp(-cdist(X, Y, "sqeuclidean") / (2.0 * spec.bandwidth**2))


def median_heuristic_bandwidth(data):
    """Median of the pairwise Euclidean distances between the rows of ``data``."""
    Y = check_samples(data, "data")
    if Y.shape[0] < 2:
        raise DegenerateDataError("median heuristic needs at least 2 samples")
    gamma = float(np.median(pdist(Y)))
    if gamma <= 0.0:
        raise DegenerateDataError("median pairwise distance is zero")
    return KernelSpec(gamma)


def _offdiag_mean(K):
    n = K.shape[0]
    # np.sum uses pairwise summation
    return (np.sum(K) - np.sum(np.diag(K))) / (n * (n - 1))


def mmd2_unbiased(X, Y, spec):
    """Unbiased (U-statistic) estimate of MMD^2 between two sample batches.

    Diagonal terms are excluded from the within-batch sums, so the result can
    be negative.
    """
    X = check_samples(X, "X", min_rows=2)
    Y = check_samples(Y, "Y", min_rows=2)
    check_same_dim(X, Y)
    return float(
        _offdiag_mean(gram(X, X, spec))
        + _offdiag_mean(gram(Y, Y, spec))
        - 2.0 * np.mean(gram(X, Y, spec))
    )


def mmd2_vstat(X, Y, spec):
    """Biased (V-statistic) estimate of MMD^2; always non-negative."""
    X = check_samples(X, "X")
    Y = check_samples(Y, "Y")
    check_same_dim(X, Y)
    value = np.mean(gram(X, X, spec)) + np.mean(gram(Y, Y, spec)) - 2.0 * np.mean(gram(X, Y, spec))
    # exact RKHS norm is >= 0; clamp round-off only
    return float(max(value, 0.0))
