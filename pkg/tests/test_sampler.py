import numpy as np
import pytest
from dataclasses import replace

from gfetld.ensemble import affine_transform, ensemble_covariance
from gfetld.exceptions import CapabilityError, DivergenceError
from gfetld.kernel import KernelSpec, mmd2_unbiased
from gfetld.models import GaussianLocationModel, StochasticLorenz96Model, UniformLocationModel
from gfetld.sampler import (
    GaussianPrior,
    SamplerConfig,
    correction_term,
    gf_etld_step,
    grad_mmd2_exact,
    gradient_etld_step,
    minimum_mmd_estimate,
    mmd2_objective,
    mmd_drift_g,
    resolve_bandwidth,
    run_chain,
    substream,
)

from _toys import AffineModel, CountingModel, NonlinearToy, random_affine

SPEC = KernelSpec(1.0)


def fd_grad(model, theta, latents, data, spec, h=1e-5):
    out = []
    for e in np.eye(theta.size):
        up = mmd2_objective(theta + h * e, model, latents, data, spec)
        dn = mmd2_objective(theta - h * e, model, latents, data, spec)
        out.append((up - dn) / (2 * h))
    return np.array(out)


# -- MMD objective and gradients ---------------------------------------------


def test_objective_matches_kernel_estimator():
    rng = np.random.default_rng(0)
    m = GaussianLocationModel(2)
    lat, data = m.sample_latent(rng, 6), rng.normal(size=(9, 2))
    theta = np.array([0.3, -0.4])
    assert mmd2_objective(theta, m, lat, data, SPEC) == pytest.approx(
        mmd2_unbiased(theta + lat, data, SPEC), rel=1e-12)


@pytest.mark.parametrize("model", [GaussianLocationModel(), UniformLocationModel(),
                                   GaussianLocationModel(3)], ids=["gauss", "unif", "gauss3"])
@pytest.mark.parametrize("seed", range(4))
def test_exact_gradient_matches_finite_differences(model, seed):
    rng = np.random.default_rng(seed)
    lat = model.sample_latent(rng, 5)
    data = rng.normal(size=(7, model.n_outputs))
    theta = rng.normal(size=model.n_params)
    spec = KernelSpec(0.5 + rng.random())
    np.testing.assert_allclose(grad_mmd2_exact(theta, model, lat, data, spec),
                               fd_grad(model, theta, lat, data, spec), atol=1e-6)


def test_gradient_vanishes_at_symmetric_minimiser():
    u = np.array([[0.4], [-0.4], [1.3], [-1.3]])
    y = np.array([[0.2], [-0.2], [0.9], [-0.9], [0.0]])
    g = grad_mmd2_exact([0.0], GaussianLocationModel(), u, y, SPEC)
    assert abs(g[0]) < 1e-8


def test_exact_gradient_needs_jacobian():
    m = StochasticLorenz96Model()
    lat = m.sample_latent(np.random.default_rng(0), 2)
    with pytest.raises(CapabilityError):
        grad_mmd2_exact([2.0, 0.8, 0.9, 1.7], m, lat, np.zeros((1, 264)), SPEC)


def test_drift_g_zero_for_collapsed_ensemble():
    m = GaussianLocationModel()
    theta = np.full((5, 1), 0.7)
    lat = m.sample_latent(np.random.default_rng(1), 4)
    g = mmd_drift_g(theta, m.simulate(theta, lat), np.zeros((3, 1)), SPEC)
    np.testing.assert_array_equal(g, 0.0)


def test_drift_g_equals_preconditioned_gradient_for_location_model():
    rng = np.random.default_rng(2)
    m = GaussianLocationModel()
    theta = rng.normal(size=(6, 1))
    lat, data = m.sample_latent(rng, 5), rng.normal(size=(8, 1))
    g = mmd_drift_g(theta, m.simulate(theta, lat), data, SPEC)
    C = ensemble_covariance(theta)
    for i in range(6):
        np.testing.assert_allclose(g[i], C @ grad_mmd2_exact(theta[i], m, lat, data, SPEC),
                                   rtol=1e-10, atol=1e-14)


def test_drift_g_lies_in_deviation_span():
    rng = np.random.default_rng(3)
    m = GaussianLocationModel(5)
    theta = rng.normal(size=(3, 5))
    lat, data = m.sample_latent(rng, 4), rng.normal(size=(6, 5))
    g = mmd_drift_g(theta, m.simulate(theta, lat), data, SPEC)
    Q, _ = np.linalg.qr((theta - theta.mean(0)).T)
    resid = g.T - Q @ (Q.T @ g.T)
    assert np.abs(resid).max() < 1e-12 * np.abs(g).max()


def test_drift_g_requires_two_sims():
    theta = np.array([[0.0], [1.0]])
    with pytest.raises(ValueError):
        mmd_drift_g(theta, np.zeros((2, 1, 1)), np.zeros((2, 1)), SPEC)


# -- single steps ------------------------------------------------------------


def _location_setup(seed=0, M=10, J=10):
    rng = np.random.default_rng(seed)
    model = GaussianLocationModel()
    prior = GaussianPrior([2.0], [1.0])
    data = rng.normal(size=(30, 1))
    cfg = SamplerConfig(n_particles=M, n_sims=J, step_size=1e-3, beta=30.0, n_steps=50, seed=seed)
    return model, prior, data, cfg


def test_step_at_degenerate_fixed_point():
    model, prior, data, cfg = _location_setup()
    cfg = replace(cfg, beta=0.0)
    theta = np.full((4, 1), 2.0)
    out = gf_etld_step(theta, data, model, prior, cfg, np.random.default_rng(0), SPEC)
    np.testing.assert_array_equal(out, theta)


def test_zero_step_size_returns_input():
    model, prior, data, cfg = _location_setup()
    theta = np.random.default_rng(1).normal(size=(10, 1))
    cfg = replace(cfg, step_size=0.0)
    for step in (gf_etld_step, gradient_etld_step):
        out = step(theta, data, model, prior, cfg, np.random.default_rng(0), SPEC)
        np.testing.assert_array_equal(out, theta)


def test_step_is_deterministic():
    model, prior, data, cfg = _location_setup()
    theta = np.random.default_rng(1).normal(size=(10, 1))
    a = gf_etld_step(theta, data, model, prior, cfg, np.random.default_rng(5), SPEC)
    b = gf_etld_step(theta, data, model, prior, cfg, np.random.default_rng(5), SPEC)
    np.testing.assert_array_equal(a, b)


def test_beta_zero_gradient_free_equals_gradient():
    model, prior, data, cfg = _location_setup()
    cfg = replace(cfg, beta=0.0)
    theta = np.random.default_rng(1).normal(size=(10, 1))
    a = gf_etld_step(theta, data, model, prior, cfg, np.random.default_rng(5), SPEC)
    b = gradient_etld_step(theta, data, model, prior, cfg, np.random.default_rng(5), SPEC)
    np.testing.assert_array_equal(a, b)


def test_gradient_step_rejects_lorenz():
    m = StochasticLorenz96Model()
    prior = GaussianPrior([1, 0, 0, 1], [2, 1, 2, 1])
    theta = prior.sample(np.random.default_rng(0), 5)
    cfg = SamplerConfig(n_particles=5, n_sims=2)
    with pytest.raises(CapabilityError):
        gradient_etld_step(theta, np.zeros((1, 264)), m, prior, cfg, np.random.default_rng(0), SPEC)
    with pytest.raises(CapabilityError):
        run_chain(m, np.zeros((1, 264)), prior, replace(cfg, method="gradient"), SPEC)


def test_gf_step_never_calls_jacobian():
    model, prior, data, cfg = _location_setup()
    counted = CountingModel(model)
    run_chain(counted, data, prior, cfg, SPEC)
    assert counted.jacobian_calls == 0 and counted.simulate_calls == cfg.n_steps
    run_chain(counted, data, prior, replace(cfg, method="gradient", n_steps=3), SPEC)
    assert counted.jacobian_calls == 3


def test_correction_term_halves_when_M_doubles():
    theta = np.random.default_rng(4).normal(size=(6, 3))
    np.testing.assert_allclose(correction_term(np.vstack([theta, theta]))[:6],
                               0.5 * correction_term(theta), rtol=1e-12)


def test_divergence_names_step():
    model, prior, data, cfg = _location_setup()
    cfg = replace(cfg, step_size=1e300, n_steps=5)
    with pytest.raises(DivergenceError) as err:
        run_chain(model, data, prior, cfg, SPEC)
    assert 0 <= err.value.step < 5
    assert f"step {err.value.step}" in str(err.value)


# -- chains ------------------------------------------------------------------


def test_linear_model_gradient_free_matches_gradient():
    model, prior, data, cfg = _location_setup()
    cfg = replace(cfg, keep_trajectory=True)
    a = run_chain(model, data, prior, cfg, SPEC)
    b = run_chain(model, data, prior, replace(cfg, method="gradient"), SPEC)
    for x, y in zip(a.trajectory, b.trajectory):
        np.testing.assert_allclose(x, y, rtol=1e-8)


def test_chain_determinism():
    model, prior, data, cfg = _location_setup()
    a = run_chain(model, data, prior, cfg, SPEC)
    b = run_chain(model, data, prior, cfg, SPEC)
    np.testing.assert_array_equal(a.ensemble, b.ensemble)
    np.testing.assert_array_equal(a.mmd2_trace, b.mmd2_trace)


def test_zero_steps_returns_prior_draw():
    model, prior, data, cfg = _location_setup(M=400)
    res = run_chain(model, data, prior, replace(cfg, n_steps=0), SPEC)
    np.testing.assert_array_equal(res.ensemble, prior.sample(substream(cfg.seed, 0), 400))
    assert abs(res.mean[0] - 2.0) < 4 / np.sqrt(400)


def test_frozen_latents_are_reused():
    seen = []

    class Recorder(GaussianLocationModel):
        def simulate(self, theta, latents):
            seen.append(latents.copy())
            return super().simulate(theta, latents)

    model, prior, data, cfg = _location_setup()
    run_chain(Recorder(), data, prior, replace(cfg, n_steps=3, latent_policy="frozen"), SPEC)
    assert all(np.array_equal(seen[0], s) for s in seen)
    seen.clear()
    run_chain(Recorder(), data, prior, replace(cfg, n_steps=3), SPEC)
    assert not np.array_equal(seen[0], seen[1])


def test_trajectory_thinning_and_averaging():
    model, prior, data, cfg = _location_setup()
    cfg = replace(cfg, n_steps=10, keep_trajectory=True, thin=5)
    res = run_chain(model, data, prior, cfg, SPEC)
    assert len(res.trajectory) == 3
    avg = run_chain(model, data, prior, replace(cfg, average_trajectory=True, burn_in=5), SPEC)
    np.testing.assert_array_equal(avg.ensemble, res.ensemble)
    assert not np.array_equal(avg.mean, res.mean)


def test_symmetric_root_option_runs():
    model, prior, data, cfg = _location_setup()
    res = run_chain(model, data, prior, replace(cfg, sqrt="symmetric"), SPEC)
    assert np.all(np.isfinite(res.ensemble))


def test_jitter_keeps_collapsed_ensemble_moving():
    model, prior, data, cfg = _location_setup()
    theta = np.full((10, 1), 1.0)
    cfg = replace(cfg, beta=0.0, jitter=1e-2)
    out = gf_etld_step(theta, data, model, prior, cfg, np.random.default_rng(0), SPEC)
    assert np.ptp(out) > 0


def test_prior_recovery_short():
    prior = GaussianPrior([2.0], [1.0])
    cfg = SamplerConfig(n_particles=200, n_sims=2, step_size=1e-2, beta=0.0, n_steps=500, seed=3)
    res = run_chain(GaussianLocationModel(), np.zeros((2, 1)), prior, cfg, SPEC)
    assert abs(res.mean[0] - 2.0) < 3 / np.sqrt(200)
    assert 0.75 < res.cov[0, 0] < 1.25


def test_full_covariance_prior():
    prior = GaussianPrior([0.0, 1.0], [[2.0, 0.5], [0.5, 1.0]])
    np.testing.assert_allclose(prior.score(np.array([[1.0, 1.0]])),
                               -np.linalg.solve(prior.cov, [1.0, 0.0])[None, :])
    with pytest.raises(ValueError):
        GaussianPrior([0.0], [-1.0])


def test_config_validation():
    for bad in (dict(n_particles=1), dict(n_sims=1), dict(latent_policy="x"), dict(method="x"),
                dict(sqrt="x"), dict(beta=-1.0), dict(thin=0), dict(jitter=-1.0)):
        with pytest.raises(ValueError):
            SamplerConfig(**bad)


# -- affine invariance -------------------------------------------------------


def _affine_check(model, prior, data, A, b, n_steps=20, M=12, J=8, beta=5.0, spec=SPEC):
    cfg = SamplerConfig(n_particles=M, n_sims=J, step_size=1e-3, beta=beta, n_steps=n_steps,
                        seed=11, latent_policy="frozen", keep_trajectory=True)
    theta0 = prior.sample(np.random.default_rng(5), M)
    orig = run_chain(model, data, prior, cfg, spec, initial=theta0)
    tilde = run_chain(AffineModel(model, A, b), data, prior.pulled_back(A, b), cfg, spec,
                      initial=affine_transform(theta0, A, b, inverse=True))
    worst = 0.0
    for x, t in zip(orig.trajectory, tilde.trajectory):
        mapped = affine_transform(x, A, b, inverse=True)
        worst = max(worst, np.abs(mapped - t).max() / np.abs(t).max())
    return worst


@pytest.mark.parametrize("seed", range(5))
def test_affine_invariance_nonlinear_2d(seed):
    rng = np.random.default_rng(100 + seed)
    A, b = random_affine(rng, 2)
    model = NonlinearToy()
    data = model.simulate([[0.5, -0.3]], model.sample_latent(rng, 15))[0]
    prior = GaussianPrior([0.0, 0.0], [1.0, 2.0])
    assert _affine_check(model, prior, data, A, b) < 1e-8


@pytest.mark.parametrize("seed", range(2))
def test_affine_invariance_gaussian_4d(seed):
    rng = np.random.default_rng(200 + seed)
    A, b = random_affine(rng, 4)
    model = GaussianLocationModel(4)
    data = rng.normal(size=(10, 4))
    prior = GaussianPrior(np.zeros(4), [1.0, 2.0, 0.5, 1.0])
    assert _affine_check(model, prior, data, A, b) < 1e-8


# -- minimum MMD -------------------------------------------------------------


def _grid_minimiser(model, data, latents, spec):
    grid = np.linspace(-1, 1, 2001)
    vals = [mmd2_objective([t], model, latents, data, spec) for t in grid]
    return grid[int(np.argmin(vals))]


def test_minimum_mmd_recovers_location():
    rng = np.random.default_rng(7)
    model = GaussianLocationModel()
    data = rng.normal(size=(100, 1))
    data -= data.mean()
    lat = model.sample_latent(rng, 50)
    theta, trace = minimum_mmd_estimate(model, data, [2.0], 2.0, 300, SPEC, lat, return_trace=True)
    best = _grid_minimiser(model, data, lat, SPEC)
    assert abs(theta[0]) < 0.2
    assert abs(theta[0] - best) < 0.01
    assert np.all(np.diff(trace) <= 1e-12)
    again = minimum_mmd_estimate(model, data, [best], 2.0, 50, SPEC, lat)
    assert abs(again[0] - best) < 0.05


def test_minimum_mmd_zero_step_and_errors():
    model = GaussianLocationModel()
    lat = model.sample_latent(np.random.default_rng(0), 5)
    data = np.zeros((3, 1)) + [[0.0], [1.0], [2.0]]
    np.testing.assert_array_equal(minimum_mmd_estimate(model, data, [2.0], 0.0, 5, SPEC, lat), [2.0])
    with pytest.raises(ValueError):
        minimum_mmd_estimate(model, data, [2.0], 0.1, 0, SPEC, lat)
    with pytest.raises(CapabilityError):
        minimum_mmd_estimate(StochasticLorenz96Model(), np.zeros((1, 264)), np.ones(4), 0.1, 1,
                             SPEC, StochasticLorenz96Model().sample_latent(np.random.default_rng(0), 2))


def test_resolve_bandwidth():
    data = np.array([[0.0], [1.0]])
    assert resolve_bandwidth("median", data).bandwidth == 1.0
    assert resolve_bandwidth(0.3, data).bandwidth == 0.3
    m = GaussianLocationModel()
    spec = resolve_bandwidth("median", [[0.0]], m, GaussianPrior([0.0], [1.0]))
    assert spec.bandwidth > 0
