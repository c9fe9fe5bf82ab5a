"""scikit-learn style wrappers around the sampler.

``fit(Y)`` takes the observed samples as an ``(N, dim)`` array, mirroring the
``fit(X)`` convention of unsupervised estimators.
"""
import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_samples
from .models import get_model
from .sampler import (
    GaussianPrior,
    SamplerConfig,
    minimum_mmd_estimate,
    mmd2_objective,
    resolve_bandwidth,
    run_chain,
    substream,
    ROLE_LATENT,
)


def _resolve_model(model, model_params):
    if isinstance(model, str):
        return get_model(model, **(model_params or {}))
    return model


class GFETLDSampler(BaseEstimator):
    """Sample the MMD-Bayes posterior of a simulator with GF-ETLD.

    Parameters
    ----------
    model : str or GenerativeModel
        Registry name or model instance.
    prior_mean, prior_var : array-like
        Gaussian prior; ``prior_var`` holds variances or a full covariance.
    bandwidth : "median" or float
    n_particles, n_sims, step_size, beta, n_steps, seed, latent_policy,
    jitter, method, sqrt : see :class:`gfetld.sampler.SamplerConfig`.

    Attributes
    ----------
    particles_ : ndarray (M, D)
    posterior_mean_, posterior_cov_ : ndarray
    bandwidth_ : float
    mmd2_trace_ : ndarray (n_steps,)
    """

    def __init__(self, model="gaussian_location", prior_mean=(0.0,), prior_var=(1.0,),
                 bandwidth="median", n_particles=10, n_sims=20, step_size=1e-3, beta=1.0,
                 n_steps=100, seed=0, latent_policy="resample", jitter=0.0,
                 method="gradient_free", sqrt="generalized", model_params=None):
        self.model = model
        self.prior_mean = prior_mean
        self.prior_var = prior_var
        self.bandwidth = bandwidth
        self.n_particles = n_particles
        self.n_sims = n_sims
        self.step_size = step_size
        self.beta = beta
        self.n_steps = n_steps
        self.seed = seed
        self.latent_policy = latent_policy
        self.jitter = jitter
        self.method = method
        self.sqrt = sqrt
        self.model_params = model_params

    def _config(self):
        return SamplerConfig(
            n_particles=self.n_particles, n_sims=self.n_sims, step_size=self.step_size,
            beta=self.beta, n_steps=self.n_steps, seed=self.seed,
            latent_policy=self.latent_policy, jitter=self.jitter, method=self.method,
            sqrt=self.sqrt,
        )

    def fit(self, Y, y=None):
        Y = check_samples(Y, "Y")
        model = _resolve_model(self.model, self.model_params)
        if Y.shape[1] != model.n_outputs:
            raise ValueError(f"Y has {Y.shape[1]} columns, model outputs {model.n_outputs}")
        prior = GaussianPrior(self.prior_mean, self.prior_var)
        spec = resolve_bandwidth(self.bandwidth, Y, model, prior, seed=self.seed)
        result = run_chain(model, Y, prior, self._config(), spec)
        self.particles_ = result.ensemble
        self.posterior_mean_ = result.mean
        self.posterior_cov_ = result.cov
        self.bandwidth_ = spec.bandwidth
        self.mmd2_trace_ = result.mmd2_trace
        self.n_features_in_ = Y.shape[1]
        return self

    def transform(self, Y=None):
        """The fitted particle ensemble (the input is ignored)."""
        check_is_fitted(self, "particles_")
        return self.particles_


class MinimumMMDEstimator(BaseEstimator):
    """Point estimate minimising the frozen-latent U-statistic MMD^2 by gradient descent."""

    def __init__(self, model="gaussian_location", theta0=(0.0,), step=1.0, iters=200,
                 n_sims=50, bandwidth="median", seed=0, model_params=None):
        self.model = model
        self.theta0 = theta0
        self.step = step
        self.iters = iters
        self.n_sims = n_sims
        self.bandwidth = bandwidth
        self.seed = seed
        self.model_params = model_params

    def fit(self, Y, y=None):
        Y = check_samples(Y, "Y")
        model = _resolve_model(self.model, self.model_params)
        spec = resolve_bandwidth(self.bandwidth, Y)
        latents = model.sample_latent(substream(self.seed, ROLE_LATENT), self.n_sims)
        theta, trace = minimum_mmd_estimate(model, Y, self.theta0, self.step, self.iters, spec,
                                            latents, return_trace=True)
        self.theta_ = theta
        self.objective_ = float(mmd2_objective(theta, model, latents, Y, spec))
        self.objective_trace_ = trace
        self.bandwidth_ = spec.bandwidth
        self.n_features_in_ = Y.shape[1]
        return self

    def predict(self, X=None):
        """The fitted parameter estimate."""
        check_is_fitted(self, "theta_")
        return self.theta_
