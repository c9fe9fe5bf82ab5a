"""Likelihood-based reference posteriors and error metrics."""
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ._validation import check_samples


def conjugate_gaussian_posterior(prior_mean, prior_var, data, noise_sd=1.0):
    """Posterior ``(mean, var)`` of a Gaussian location with known noise sd.

    Empty data returns the prior.
    """
    y = np.asarray(data, dtype=float).ravel()
    if prior_var <= 0:
        raise ValueError("prior_var must be positive")
    precision = 1.0 / prior_var + y.size / noise_sd**2
    mean = (prior_mean / prior_var + y.sum() / noise_sd**2) / precision
    return float(mean), float(1.0 / precision)


@dataclass
class GridPosterior:
    grid: np.ndarray
    log_weights: np.ndarray
    degenerate: bool = False

    @property
    def weights(self):
        return np.exp(self.log_weights - logsumexp(self.log_weights))

    @property
    def mean(self):
        return float(np.sum(self.grid * self.weights))

    @property
    def var(self):
        w = self.weights
        m = np.sum(self.grid * w)
        return float(np.sum((self.grid - m) ** 2 * w))


def grid_posterior(log_likelihood, grid, prior_mean, prior_var):
    """Normalised posterior on ``grid`` for a 1-D Gaussian prior."""
    grid = np.asarray(grid, dtype=float)
    logw = -0.5 * (grid - prior_mean) ** 2 / prior_var + log_likelihood
    logw = logw - logsumexp(logw)
    return GridPosterior(grid, logw)


def default_grid(lo=-5.0, hi=12.0, n=3401):
    return np.linspace(lo, hi, n)


def grid_posterior_gaussian(data, prior_mean, prior_var, grid=None, noise_sd=1.0):
    y = check_samples(data, "data")[:, 0]
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    loglik = -0.5 * np.sum((y[None, :] - grid[:, None]) ** 2, axis=1) / noise_sd**2
    return grid_posterior(loglik, grid, prior_mean, prior_var)


def grid_posterior_uniform(data, prior_mean, prior_var, half_width=1.0, grid=None, floor=1e-12):
    """Grid posterior for ``y ~ U[theta - h, theta + h]``.

    Data points outside the support get likelihood ``floor`` instead of 0, so
    contaminated data still yield a proper posterior. ``degenerate`` is set
    when no grid point has every datum inside its support.
    """
    y = check_samples(data, "data")[:, 0]
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    inside = np.abs(y[None, :] - grid[:, None]) <= half_width
    loglik = np.where(inside, -np.log(2.0 * half_width), np.log(floor)).sum(axis=1)
    post = grid_posterior(loglik, grid, prior_mean, prior_var)
    post.degenerate = not bool(np.any(inside.all(axis=1)))
    return post


def rmse(estimates, truth):
    """Componentwise root mean square error of ``estimates`` (runs x dim) against ``truth``."""
    est = np.asarray(estimates, dtype=float)
    truth = np.atleast_1d(np.asarray(truth, dtype=float))
    if est.ndim == 0:
        est = est.reshape(1, 1)
    elif est.ndim == 1:
        # a list of scalars for 1-D truth, a single estimate otherwise
        est = est[:, None] if truth.size == 1 else est[None, :]
    if est.shape[0] < 1:
        raise ValueError("need at least one estimate")
    if est.shape[1] != truth.size:
        raise ValueError(f"dimension mismatch: {est.shape[1]} != {truth.size}")
    return np.sqrt(np.mean((est - truth) ** 2, axis=0))
