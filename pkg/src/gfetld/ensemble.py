"""Ensemble moment statistics.

Particles are stored row-wise as an ``(M, D)`` array and model outputs as an
``(M, J, N)`` array, ``outputs[m, j] = G(theta[m], u[j])``. All
normalisations use ``1/M``.
"""
from dataclasses import dataclass

import numpy as np

from ._validation import check_ensemble
from .exceptions import SingularMatrixError


@dataclass(frozen=True)
class EnsembleStats:
    mean: np.ndarray  # (D,)
    cov: np.ndarray  # (D, D)
    sqrt: np.ndarray  # (D, M)
    output_means: np.ndarray  # (J, N)
    cross_covs: np.ndarray  # (J, D, N)


def ensemble_mean(theta):
    theta = check_ensemble(theta, min_particles=1)
    return theta.mean(axis=0)


def deviations(theta):
    """Rows ``theta[m] - mean``."""
    theta = check_ensemble(theta, min_particles=1)
    return theta - theta.mean(axis=0)


def generalized_sqrt(theta):
    """Non-symmetric ``(D, M)`` square root ``dev.T / sqrt(M)`` of the covariance."""
    theta = check_ensemble(theta)
    return deviations(theta).T / np.sqrt(theta.shape[0])


def ensemble_covariance(theta, jitter=0.0):
    """Empirical covariance with ``1/M`` normalisation, plus optional ``jitter * I``."""
    theta = check_ensemble(theta)
    dev = deviations(theta)
    C = dev.T @ dev / theta.shape[0]
    if jitter:
        C = C + jitter * np.eye(C.shape[0])
    return C


def _check_outputs(theta, outputs):
    outputs = np.asarray(outputs, dtype=float)
    if outputs.ndim != 3 or outputs.shape[0] != theta.shape[0]:
        raise ValueError(
            f"outputs must have shape (M={theta.shape[0]}, J, N), got {outputs.shape}"
        )
    return outputs


def cross_covariances(theta, outputs):
    """All ``J`` parameter/output cross-covariances, shape ``(J, D, N)``."""
    theta = check_ensemble(theta)
    outputs = _check_outputs(theta, outputs)
    dev = deviations(theta)
    out_dev = outputs - outputs.mean(axis=0)
    return np.einsum("md,mjn->jdn", dev, out_dev) / theta.shape[0]


def cross_covariance(theta, outputs, j):
    """Cross-covariance ``(D, N)`` between particles and outputs of latent seed ``j``.

    ``j`` is zero-based.
    """
    theta = check_ensemble(theta)
    outputs = _check_outputs(theta, outputs)
    J = outputs.shape[1]
    if not 0 <= j < J:
        raise ValueError(f"seed index {j} out of range for J={J}")
    dev = deviations(theta)
    out_dev = outputs[:, j, :] - outputs[:, j, :].mean(axis=0)
    return dev.T @ out_dev / theta.shape[0]


def ensemble_stats(theta, outputs=None, jitter=0.0):
    theta = check_ensemble(theta)
    S = generalized_sqrt(theta)
    C = ensemble_covariance(theta, jitter)
    if outputs is None:
        out_means = np.empty((0, 0))
        ccov = np.empty((0, theta.shape[1], 0))
    else:
        outputs = _check_outputs(theta, outputs)
        out_means = outputs.mean(axis=0)
        ccov = cross_covariances(theta, outputs)
    return EnsembleStats(theta.mean(axis=0), C, S, out_means, ccov)


def affine_transform(theta, A, b, inverse=False):
    """Apply ``theta -> A theta + b`` row-wise, or its inverse ``A^{-1}(theta - b)``."""
    theta = check_ensemble(theta, min_particles=1)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    D = theta.shape[1]
    if A.shape != (D, D) or b.shape != (D,):
        raise ValueError(f"A must be ({D}, {D}) and b ({D},)")
    if np.linalg.cond(A) > 1.0 / np.finfo(float).eps:
        raise SingularMatrixError("affine map matrix is singular")
    if not inverse:
        return theta @ A.T + b
    return np.linalg.solve(A, (theta - b).T).T
