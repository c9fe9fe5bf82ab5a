"""Generative models ``x = G(theta, u)`` and data contamination.

Every model maps an ``(M, D)`` parameter array and a ``(J, ...)`` latent
array to an ``(M, J, N)`` output array, so the same latent draws are shared
by all particles.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_samples
from .exceptions import CapabilityError, DivergenceError


class GenerativeModel:
    """Base class for simulators.

    Subclasses set ``n_params`` and ``n_outputs`` and implement
    ``sample_latent`` and ``simulate``. Models whose simulator is
    differentiable in ``theta`` also override ``jacobian`` and set
    ``has_jacobian = True``.
    """

    n_params: int
    n_outputs: int
    has_jacobian = False

    def sample_latent(self, rng, n):
        raise NotImplementedError

    def simulate(self, theta, latents):
        raise NotImplementedError

    def jacobian(self, theta, latents):
        """Jacobian ``dG/dtheta`` with shape ``(M, J, N, D)``."""
        raise CapabilityError(f"{type(self).__name__} does not provide a Jacobian")

    def _theta(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.ndim == 1:
            theta = theta.reshape(-1, self.n_params) if self.n_params > 1 else theta[:, None]
        if theta.shape[1] != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {theta.shape[1]}")
        return theta


def simulate_gaussian_location(theta, u):
    return np.asarray(theta, dtype=float) + u


def simulate_uniform_location(theta, u, half_width=1.0):
    u = np.asarray(u, dtype=float)
    if np.any((u < 0.0) | (u > 1.0)):
        raise ValueError("uniform latent variables must lie in [0, 1]")
    return np.asarray(theta, dtype=float) + half_width * (2.0 * u - 1.0)


class GaussianLocationModel(GenerativeModel):
    """``G(theta, u) = theta + u`` with ``u ~ N(0, I)`` in ``dim`` dimensions."""

    has_jacobian = True

    def __init__(self, dim=1):
        self.n_params = self.n_outputs = int(dim)

    def sample_latent(self, rng, n):
        return rng.standard_normal((n, self.n_outputs))

    def simulate(self, theta, latents):
        theta = self._theta(theta)
        return simulate_gaussian_location(theta[:, None, :], latents[None, :, :])

    def jacobian(self, theta, latents):
        theta = self._theta(theta)
        eye = np.eye(self.n_params)
        return np.broadcast_to(eye, (theta.shape[0], latents.shape[0]) + eye.shape).copy()


class UniformLocationModel(GenerativeModel):
    """``G(theta, u) = theta + h (2u - 1)`` with ``u ~ U(0, 1)``: uniform on ``[theta - h, theta + h]``."""

    has_jacobian = True
    n_params = n_outputs = 1

    def __init__(self, half_width=1.0):
        self.half_width = half_width

    def sample_latent(self, rng, n):
        return rng.random((n, 1))

    def simulate(self, theta, latents):
        theta = self._theta(theta)
        return simulate_uniform_location(theta[:, None, :], latents[None, :, :], self.half_width)

    def jacobian(self, theta, latents):
        theta = self._theta(theta)
        return np.ones((theta.shape[0], latents.shape[0], 1, 1))


# -- stochastic Lorenz96 -----------------------------------------------------


@dataclass(frozen=True)
class Lorenz96Params:
    b0: float
    b1: float
    phi: float
    sigma_e: float

    def __post_init__(self):
        if not abs(self.phi) < 1.0:
            raise ValueError(f"|phi| must be < 1, got {self.phi}")
        if not self.sigma_e > 0.0:
            raise ValueError(f"sigma_e must be positive, got {self.sigma_e}")

    def as_array(self):
        return np.array([self.b0, self.b1, self.phi, self.sigma_e])


@dataclass(frozen=True)
class Lorenz96Config:
    K: int = 8
    F: float = 10.0
    dt: float = 3.0 / 40.0
    T: float = 2.5
    spinup_steps: int = 100
    initial_state: tuple = None
    shared_residual: bool = False
    n_steps: int = field(init=False)

    def __post_init__(self):
        if self.K < 4:
            raise ValueError("Lorenz96 needs K >= 4")
        # small tolerance so that e.g. T = 33 * dt is not floored to 32
        object.__setattr__(self, "n_steps", int(math.floor(self.T / self.dt + 1e-9)))
        if self.n_steps < 1:
            raise ValueError("T must cover at least one time step")

    @property
    def n_outputs(self):
        return self.n_steps * self.K

    def start_state(self):
        """State after the deterministic spin-up from ``initial_state`` (default ``F``, first entry +0.01)."""
        if self.initial_state is None:
            y = np.full(self.K, float(self.F))
            y[0] += 0.01
        else:
            y = np.asarray(self.initial_state, dtype=float)
            if y.shape != (self.K,):
                raise ValueError(f"initial_state must have length K={self.K}")
        zero = np.zeros(self.K)
        for _ in range(self.spinup_steps):
            y = rk4_step(y, self.F, zero, self.dt)
        return y


def lorenz96_drift(y, F, g):
    """``dy_k/dt = -y_{k-1}(y_{k-2} - y_{k+1}) - y_k + F - g_k`` with cyclic indices.

    Works on the last axis, so batches of states can be passed at once.
    """
    y = np.asarray(y, dtype=float)
    if y.shape[-1] < 4:
        raise ValueError("Lorenz96 needs K >= 4")
    ym1 = np.roll(y, 1, axis=-1)
    ym2 = np.roll(y, 2, axis=-1)
    yp1 = np.roll(y, -1, axis=-1)
    return -ym1 * (ym2 - yp1) - y + F - g


def rk4_step(y, F, g, dt):
    """One classical Runge-Kutta step with the forcing ``g`` held fixed."""
    k1 = lorenz96_drift(y, F, g)
    k2 = lorenz96_drift(y + 0.5 * dt * k1, F, g)
    k3 = lorenz96_drift(y + 0.5 * dt * k2, F, g)
    k4 = lorenz96_drift(y + dt * k3, F, g)
    return y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def ar1_update(r, phi, sigma_e, eta):
    """``r_next = phi * r + sigma_e * sqrt(1 - phi^2) * eta``."""
    phi = np.asarray(phi, dtype=float)
    if np.any(np.abs(phi) >= 1.0):
        raise ValueError("AR(1) coefficient must satisfy |phi| < 1")
    return phi * r + sigma_e * np.sqrt(1.0 - phi**2) * eta


def stochastic_forcing(y_k, r_prev, eta, params):
    """Subgrid forcing ``b0 + b1 y_k + ar1_update(r_prev, phi, sigma_e, eta)``."""
    return params.b0 + params.b1 * y_k + ar1_update(r_prev, params.phi, params.sigma_e, eta)


def _integrate_lorenz96(b0, b1, phi, sigma_e, cfg, y0, eta, state_bound=None):
    """Vectorised integration.

    Parameters are scalars or arrays of shape ``batch + (1,)``. ``eta`` has
    shape ``(..., n_steps, K)``, or ``(..., n_steps, 1)`` for a shared
    residual. Returns ``(..., n_steps * K)``. A finite ``state_bound``
    clamps every state component after each step.
    """
    batch = np.broadcast_shapes(np.shape(b0)[:-1], eta.shape[:-2])
    y = np.broadcast_to(y0, batch + (cfg.K,)).copy()
    r = np.zeros(batch + (eta.shape[-1],))
    scale = sigma_e * np.sqrt(1.0 - phi**2)
    out = np.empty(batch + (cfg.n_steps, cfg.K))
    for i in range(cfg.n_steps):
        r = phi * r + scale * eta[..., i, :]
        g = b0 + b1 * y + r
        y = rk4_step(y, cfg.F, g, cfg.dt)
        if state_bound is not None:
            y = np.clip(y, -state_bound, state_bound)
        out[..., i, :] = y
    return out.reshape(batch + (cfg.n_outputs,))


def simulate_lorenz96(params, cfg, eta):
    """Trajectory of the stochastic Lorenz96 system, flattened time-major.

    ``eta`` holds the ``(n_steps, K)`` standard normal draws (``(n_steps, 1)``
    when ``cfg.shared_residual``). The forcing is frozen over each RK4 step.
    """
    eta = np.asarray(eta, dtype=float)
    n_res = 1 if cfg.shared_residual else cfg.K
    if eta.shape != (cfg.n_steps, n_res):
        raise ValueError(f"eta must have shape ({cfg.n_steps}, {n_res}), got {eta.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = _integrate_lorenz96(
            params.b0, params.b1, params.phi, params.sigma_e, cfg, cfg.start_state(), eta
        )
    if not np.all(np.isfinite(out)):
        raise DivergenceError(0, "Lorenz96 trajectory blew up")
    return out


class StochasticLorenz96Model(GenerativeModel):
    """Stochastic Lorenz96 with AR(1) subgrid forcing, ``theta = (b0, b1, phi, sigma_e)``.

    Particles may leave the region where the simulator is well posed: the
    simulator evaluates them at ``phi`` clipped to ``[-phi_max, phi_max]``
    (AR(1) stationarity) and ``b1`` clipped to ``b1_range`` (for ``b1 < -1``
    the linear term is anti-damping and trajectories blow up). Weakly damped,
    strongly forced particles still make RK4 at the default step unstable, so
    the state is clamped to ``[-state_bound, state_bound]`` after every step
    (``None`` disables the clamp). Prior draws stay below ``|y| = 30``. No
    Jacobian is available.
    """

    n_params = 4
    param_names = ("b0", "b1", "phi", "sigma_e")

    def __init__(self, config=None, phi_max=0.999, b1_range=(-0.8, 20.0), state_bound=100.0):
        self.config = config if config is not None else Lorenz96Config()
        self.state_bound = state_bound
        self.phi_max = phi_max
        self.b1_range = b1_range
        self.n_outputs = self.config.n_outputs
        self._y0 = self.config.start_state()

    def sample_latent(self, rng, n):
        n_res = 1 if self.config.shared_residual else self.config.K
        return rng.standard_normal((n, self.config.n_steps, n_res))

    def simulate(self, theta, latents):
        theta = self._theta(theta)
        cols = [theta[:, i, None, None] for i in range(4)]
        b0, b1, phi, sigma_e = cols
        phi = np.clip(phi, -self.phi_max, self.phi_max)
        b1 = np.clip(b1, *self.b1_range)
        with np.errstate(over="ignore", invalid="ignore"):
            out = _integrate_lorenz96(b0, b1, phi, sigma_e, self.config, self._y0, latents[None],
                                      self.state_bound)
        if not np.all(np.isfinite(out)):
            raise DivergenceError(0, "Lorenz96 trajectory blew up")
        return out


def contaminate(clean, epsilon, rng, outlier_mean=10.0, outlier_sd=1.0):
    """Replace ``round(epsilon * rows)`` rows by draws from ``N(outlier_mean, outlier_sd^2)``.

    Returns the contaminated copy and the sorted replaced indices.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    data = check_samples(clean, "clean").copy()
    n = data.shape[0]
    n_out = n_outliers(epsilon, n)
    idx = np.sort(rng.choice(n, size=n_out, replace=False))
    data[idx] = rng.normal(outlier_mean, outlier_sd, size=(n_out, data.shape[1]))
    return data, idx


def n_outliers(epsilon, n):
    # round half up; guards against 0.1 * 150 = 15.000000000000002
    return int(math.floor(round(epsilon * n, 9) + 0.5))


MODELS = {
    "gaussian_location": GaussianLocationModel,
    "uniform_location": UniformLocationModel,
    "lorenz96_stochastic": StochasticLorenz96Model,
}


def get_model(name, **kwargs):
    try:
        cls = MODELS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
    return cls(**kwargs)
