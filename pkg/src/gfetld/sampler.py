"""Ensemble transform Langevin dynamics targeting the MMD-Bayes posterior.

The target is ``pi(theta) ∝ prior(theta) * exp(-beta * MMD^2(P_theta, data))``.
Each Euler-Maruyama step moves every particle by

    dt * (C grad log prior - beta * g + (D + 1)/M * (theta - mean))
    + sqrt(2 dt) * C^{1/2} xi

where ``g`` is either the cross-covariance contraction of the kernel
gradients (gradient free) or ``C`` times the exact MMD^2 gradient.
"""
from dataclasses import dataclass, field, replace

import numpy as np

from ._validation import check_ensemble, check_samples, check_vector
from .ensemble import cross_covariances, generalized_sqrt
from .exceptions import CapabilityError, DivergenceError
from .kernel import KernelSpec, median_heuristic_bandwidth

# substream roles for the seed hierarchy
ROLE_INIT, ROLE_LATENT, ROLE_NOISE = 0, 1, 2


@dataclass(frozen=True)
class GaussianPrior:
    """Gaussian prior. ``cov`` is a vector of variances or a full matrix."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = check_vector(self.mean, "mean")
        cov = np.asarray(self.cov, dtype=float)
        if cov.ndim <= 1:
            cov = np.broadcast_to(cov, mean.shape)
            if np.any(cov <= 0):
                raise ValueError("prior variances must be positive")
            cov = np.diag(cov)
        if cov.shape != (mean.size, mean.size):
            raise ValueError("prior covariance does not match the mean")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "_chol", np.linalg.cholesky(cov))
        object.__setattr__(self, "_precision", np.linalg.inv(cov))

    @property
    def dim(self):
        return self.mean.size

    def score(self, theta):
        """``grad log prior`` at each row of ``theta``."""
        return -(theta - self.mean) @ self._precision

    def sample(self, rng, n):
        return self.mean + rng.standard_normal((n, self.dim)) @ self._chol.T

    def pulled_back(self, A, b):
        """Prior of ``t`` where ``theta = A t + b``."""
        A_inv = np.linalg.inv(A)
        return GaussianPrior(A_inv @ (self.mean - b), A_inv @ self.cov @ A_inv.T)


@dataclass(frozen=True)
class SamplerConfig:
    n_particles: int = 10
    n_sims: int = 20
    step_size: float = 1e-3
    beta: float = 1.0
    n_steps: int = 100
    seed: int = 0
    latent_policy: str = "resample"
    jitter: float = 0.0
    burn_in: int = 0
    method: str = "gradient_free"
    sqrt: str = "generalized"
    keep_trajectory: bool = False
    thin: int = 1
    average_trajectory: bool = False

    def __post_init__(self):
        if self.n_particles < 2:
            raise ValueError("n_particles must be >= 2")
        if self.n_sims < 2:
            raise ValueError("n_sims must be >= 2 for the unbiased MMD estimate")
        if not self.step_size >= 0:
            raise ValueError("step_size must be non-negative")
        if not self.beta >= 0:
            raise ValueError("beta must be non-negative")
        if self.n_steps < 0 or self.burn_in < 0 or self.thin < 1:
            raise ValueError("n_steps, burn_in must be >= 0 and thin >= 1")
        if self.latent_policy not in ("resample", "frozen"):
            raise ValueError(f"unknown latent_policy {self.latent_policy!r}")
        if self.method not in ("gradient_free", "gradient"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.sqrt not in ("generalized", "symmetric"):
            raise ValueError(f"unknown sqrt {self.sqrt!r}")
        if self.jitter < 0:
            raise ValueError("jitter must be non-negative")


@dataclass
class ChainResult:
    ensemble: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    mmd2_trace: np.ndarray
    trajectory: list = field(default=None, repr=False)


def substream(seed, role, index=0):
    """Independent generator for a ``(role, index)`` pair under a master seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), role, int(index)]))


def _kernel_spec(spec):
    return spec if isinstance(spec, KernelSpec) else KernelSpec(spec)


def _check_data(data):
    return check_samples(data, "data")


def _mmd_output_gradients(outputs, data, spec):
    """Per-particle U-statistic MMD^2 and its gradient w.r.t. each output.

    For particle ``m`` returns ``mmd2[m]`` and ``V[m, j] = d MMD^2 / d x^{mj}``:

        2/(J(J-1)) sum_{l != j} grad_x k(x^{mj}, x^{ml})
        - 2/(J N) sum_n grad_x k(x^{mj}, y^n)

    With a single data row the data/data term is taken as 0.
    """
    M, J, _ = outputs.shape
    Nd = data.shape[0]
    h2 = spec.bandwidth**2

    x_sq = np.einsum("mjn,mjn->mj", outputs, outputs)
    y_sq = np.einsum("nd,nd->n", data, data)
    d_xx = x_sq[:, :, None] + x_sq[:, None, :] - 2.0 * np.einsum("mjn,mln->mjl", outputs, outputs)
    d_xy = x_sq[:, :, None] + y_sq[None, None, :] - 2.0 * np.einsum("mjn,kn->mjk", outputs, data)
    K_xx = np.exp(-np.clip(d_xx, 0.0, None) / (2.0 * h2))
    K_xx[:, np.arange(J), np.arange(J)] = 1.0
    K_xy = np.exp(-np.clip(d_xy, 0.0, None) / (2.0 * h2))

    # sum_l K_jl (x_j - x_l); the diagonal contributes nothing
    grad_xx = -(outputs * K_xx.sum(axis=2)[..., None] - K_xx @ outputs) / h2
    grad_xy = -(outputs * K_xy.sum(axis=2)[..., None] - K_xy @ data) / h2
    V = 2.0 / (J * (J - 1)) * grad_xx - 2.0 / (J * Nd) * grad_xy

    within = (K_xx.sum(axis=(1, 2)) - J) / (J * (J - 1))
    if Nd > 1:
        K_yy = np.exp(-np.clip(y_sq[:, None] + y_sq[None, :] - 2.0 * data @ data.T, 0.0, None)
                      / (2.0 * h2))
        data_term = (K_yy.sum() - np.trace(K_yy)) / (Nd * (Nd - 1))
    else:
        data_term = 0.0
    mmd2 = within + data_term - 2.0 * K_xy.mean(axis=(1, 2))
    return mmd2, V


def mmd_drift_g(theta, outputs, data, spec):
    """Gradient-free MMD drift ``g^m = sum_j C^{theta x^j} V[m, j]``, shape ``(M, D)``.

    Equals ``C @ grad MMD^2(theta^m)`` whenever the simulator is affine in theta.
    """
    theta = check_ensemble(theta)
    outputs = np.asarray(outputs, dtype=float)
    if outputs.ndim != 3 or outputs.shape[1] < 2:
        raise ValueError("outputs must be (M, J, N) with J >= 2")
    data = _check_data(data)
    _, V = _mmd_output_gradients(outputs, data, _kernel_spec(spec))
    return np.einsum("jdn,mjn->md", cross_covariances(theta, outputs), V)


def _exact_gradients(theta, model, latents, data, spec):
    if not model.has_jacobian:
        raise CapabilityError(f"{type(model).__name__} does not provide a Jacobian")
    outputs = model.simulate(theta, latents)
    mmd2, V = _mmd_output_gradients(outputs, data, spec)
    jac = model.jacobian(theta, latents)  # (M, J, N, D)
    return mmd2, np.einsum("mjnd,mjn->md", jac, V)


def grad_mmd2_exact(theta, model, latents, data, spec):
    """Gradient in ``theta`` of the U-statistic MMD^2 with latents and data held fixed."""
    theta = check_vector(theta, "theta")
    data = _check_data(data)
    latents = np.asarray(latents, dtype=float)
    if latents.shape[0] < 2:
        raise ValueError("need at least 2 latent draws")
    _, grad = _exact_gradients(theta[None, :], model, latents, data, _kernel_spec(spec))
    return grad[0]


def mmd2_objective(theta, model, latents, data, spec):
    """U-statistic MMD^2 between ``G(theta, latents)`` and the data."""
    theta = check_vector(theta, "theta")
    outputs = model.simulate(theta[None, :], np.asarray(latents, dtype=float))
    mmd2, _ = _mmd_output_gradients(outputs, _check_data(data), _kernel_spec(spec))
    return float(mmd2[0])


def correction_term(theta):
    """Finite-ensemble drift correction ``(D + 1)/M * (theta - mean)``."""
    theta = check_ensemble(theta)
    M, D = theta.shape
    return (D + 1) / M * (theta - theta.mean(axis=0))


def _symmetric_sqrt(C):
    w, Q = np.linalg.eigh(C)
    return (Q * np.sqrt(np.clip(w, 0.0, None))) @ Q.T


def _step(theta, data, model, prior, cfg, spec, rng, latents=None, step_index=0):
    """One batch-synchronous Euler-Maruyama update; returns ``(theta_new, mean MMD^2)``."""
    # overflow shows up as non-finite particles and is reported below
    with np.errstate(over="ignore", invalid="ignore"):
        return _step_unchecked(theta, data, model, prior, cfg, spec, rng, latents, step_index)


def _step_unchecked(theta, data, model, prior, cfg, spec, rng, latents, step_index):
    M, D = theta.shape
    if latents is None:
        latents = model.sample_latent(rng, cfg.n_sims)
    if cfg.sqrt == "generalized":
        xi = rng.standard_normal((M, M))
    else:
        xi = rng.standard_normal((M, D))
    ridge = rng.standard_normal((M, D)) if cfg.jitter > 0 else None

    S = generalized_sqrt(theta)
    C = S @ S.T
    if cfg.jitter > 0:
        C = C + cfg.jitter * np.eye(D)

    mmd_mean = np.nan
    if cfg.beta > 0:
        if cfg.method == "gradient_free":
            try:
                outputs = model.simulate(theta, latents)
            except DivergenceError:
                raise DivergenceError(step_index, "simulator blew up") from None
            mmd2, V = _mmd_output_gradients(outputs, data, spec)
            g = np.einsum("jdn,mjn->md", cross_covariances(theta, outputs), V)
        else:
            mmd2, grad = _exact_gradients(theta, model, latents, data, spec)
            g = grad @ C
        mmd_mean = float(np.mean(mmd2))
    else:
        g = 0.0

    drift = prior.score(theta) @ C - cfg.beta * g + correction_term(theta)
    if cfg.sqrt == "generalized":
        noise = xi @ S.T
    else:
        noise = xi @ _symmetric_sqrt(S @ S.T)
    if ridge is not None:
        noise = noise + np.sqrt(cfg.jitter) * ridge
    new = theta + cfg.step_size * drift + np.sqrt(2.0 * cfg.step_size) * noise
    if not np.all(np.isfinite(new)):
        raise DivergenceError(step_index)
    return new, mmd_mean


def gf_etld_step(theta, data, model, prior, cfg, rng, spec, latents=None, step_index=0):
    """Gradient-free update of the ensemble; never calls ``model.jacobian``.

    ``rng`` supplies, in order, the ``J`` shared latent draws (unless
    ``latents`` is given) and the Gaussian increments.
    """
    theta = check_ensemble(theta)
    cfg = cfg if cfg.method == "gradient_free" else replace(cfg, method="gradient_free")
    return _step(theta, _check_data(data), model, prior, cfg, _kernel_spec(spec), rng,
                 latents, step_index)[0]


def gradient_etld_step(theta, data, model, prior, cfg, rng, spec, latents=None, step_index=0):
    """Same update as :func:`gf_etld_step` with the exact MMD^2 gradient."""
    if not model.has_jacobian:
        raise CapabilityError(f"{type(model).__name__} does not provide a Jacobian")
    theta = check_ensemble(theta)
    cfg = cfg if cfg.method == "gradient" else replace(cfg, method="gradient")
    return _step(theta, _check_data(data), model, prior, cfg, _kernel_spec(spec), rng,
                 latents, step_index)[0]


def run_chain(model, data, prior, cfg, spec, initial=None):
    """Evolve an ensemble drawn from the prior for ``cfg.n_steps`` steps.

    Randomness comes from independent substreams of ``cfg.seed``: one for the
    initial draw, and per step one for latents and one for increments.
    """
    data = _check_data(data)
    spec = _kernel_spec(spec)
    if cfg.method == "gradient" and not model.has_jacobian:
        raise CapabilityError(f"{type(model).__name__} does not provide a Jacobian")
    if initial is None:
        theta = prior.sample(substream(cfg.seed, ROLE_INIT), cfg.n_particles)
    else:
        theta = check_ensemble(initial)
    frozen = None
    if cfg.latent_policy == "frozen":
        frozen = model.sample_latent(substream(cfg.seed, ROLE_LATENT), cfg.n_sims)

    trace = np.empty(cfg.n_steps)
    trajectory = [theta.copy()] if cfg.keep_trajectory else None
    kept = []
    for k in range(cfg.n_steps):
        latents = frozen
        if latents is None:
            latents = model.sample_latent(substream(cfg.seed, ROLE_LATENT, k + 1), cfg.n_sims)
        theta, trace[k] = _step(theta, data, model, prior, cfg, spec,
                                substream(cfg.seed, ROLE_NOISE, k + 1), latents, k)
        if cfg.keep_trajectory and (k + 1) % cfg.thin == 0:
            trajectory.append(theta.copy())
        if cfg.average_trajectory and k + 1 > cfg.burn_in:
            kept.append(theta)

    if cfg.average_trajectory and kept:
        pooled = np.concatenate(kept)
    else:
        pooled = theta
    mean = pooled.mean(axis=0)
    dev = pooled - mean
    cov = dev.T @ dev / pooled.shape[0]
    return ChainResult(theta, mean, cov, trace, trajectory)


def minimum_mmd_estimate(model, data, theta0, step, iters, spec, latents, return_trace=False):
    """Fixed-step gradient descent on the frozen-latent U-statistic MMD^2."""
    data = _check_data(data)
    spec = _kernel_spec(spec)
    if iters < 1:
        raise ValueError("iters must be >= 1")
    theta = check_vector(theta0, "theta0").copy()
    latents = np.asarray(latents, dtype=float)
    trace = []
    for i in range(iters):
        mmd2, grad = _exact_gradients(theta[None, :], model, latents, data, spec)
        trace.append(float(mmd2[0]))
        theta = theta - step * grad[0]
        if not np.all(np.isfinite(theta)):
            raise DivergenceError(i)
    trace.append(mmd2_objective(theta, model, latents, data, spec))
    if return_trace:
        return theta, np.array(trace)
    return theta


def resolve_bandwidth(bandwidth, data, model=None, prior=None, seed=0, n_pilot=20):
    """Kernel spec from an explicit bandwidth or ``"median"``.

    The median heuristic is computed on the data. With a single data row it is
    computed on the data pooled with ``n_pilot`` simulations at the prior mean.
    """
    if bandwidth != "median":
        return KernelSpec(float(bandwidth))
    data = _check_data(data)
    if data.shape[0] >= 2 or model is None or prior is None:
        return median_heuristic_bandwidth(data)
    pilot = model.simulate(prior.mean[None, :], model.sample_latent(substream(seed, 99), n_pilot))[0]
    return median_heuristic_bandwidth(np.vstack([data, pilot]))
