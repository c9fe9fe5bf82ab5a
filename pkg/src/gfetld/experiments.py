"""Experiment drivers: configuration, seeding, repetitions and report files."""
import csv
import dataclasses
import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .baselines import conjugate_gaussian_posterior, default_grid, grid_posterior_uniform, rmse
from .exceptions import ConfigError, DivergenceError
from .models import (
    GaussianLocationModel,
    Lorenz96Config,
    StochasticLorenz96Model,
    UniformLocationModel,
    contaminate,
)
from .sampler import GaussianPrior, SamplerConfig, resolve_bandwidth, run_chain

# seed-hierarchy roles below the master seed
_DATA, _SAMPLER, _CONTAM = 10, 20, 30

LORENZ_PARAMS = ("b0", "b1", "phi", "sigma_e")

PRESETS = {
    "gaussian-location": dict(
        n_obs=150, true_theta=[0.0], prior_mean=[2.0], prior_var=[1.0],
        epsilons=[0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7], repetitions=10,
        n_particles=10, n_sims=20, step_size=1e-3, beta=800.0, n_steps=400, bandwidth=3.0,
    ),
    "uniform-location": dict(
        n_obs=100, true_theta=[1.0], prior_mean=[2.0], prior_var=[1.0],
        epsilons=[0.0, 0.1, 0.2, 0.3, 0.4], repetitions=10,
        n_particles=10, n_sims=20, step_size=1e-3, beta=100.0, n_steps=500, bandwidth=1.0,
    ),
    "lorenz96": dict(
        n_obs=20, true_theta=[2.0, 0.8, 0.9, 1.7], prior_mean=[1.0, 0.0, 0.0, 1.0],
        prior_var=[2.0, 1.0, 2.0, 1.0], epsilons=[], repetitions=3,
        n_particles=200, n_sims=10, step_size=1e-3, beta=300.0, n_steps=3000,
        bandwidth="median",
    ),
}


@dataclass
class ExperimentConfig:
    """Flat experiment configuration; every field can be set as ``key=value``."""

    experiment: str = "gaussian-location"
    seed: int = 0
    data_seed: int = None
    sampler_seed: int = None
    repetitions: int = 10
    n_obs: int = 150
    true_theta: list = field(default_factory=lambda: [0.0])
    prior_mean: list = field(default_factory=lambda: [2.0])
    prior_var: list = field(default_factory=lambda: [1.0])
    epsilon: float = 0.0
    epsilons: list = field(default_factory=list)
    outlier_mean: float = 10.0
    outlier_sd: float = 1.0
    bandwidth: object = "median"
    n_particles: int = 10
    n_sims: int = 20
    step_size: float = 1e-3
    beta: float = 1.0
    n_steps: int = 100
    latent_policy: str = "resample"
    jitter: float = 0.0
    method: str = "gradient_free"
    sqrt: str = "generalized"
    average_trajectory: bool = False
    burn_in: int = 0
    baseline: bool = True
    grid_lo: float = -5.0
    grid_hi: float = 12.0
    grid_n: int = 3401
    likelihood_floor: float = 1e-12
    half_width: float = 1.0
    lorenz_K: int = 8
    lorenz_F: float = 10.0
    lorenz_dt: float = 3.0 / 40.0
    lorenz_T: float = 2.5
    shared_residual: bool = False
    lorenz_state_bound: float = 100.0
    output_dir: str = None

    @classmethod
    def from_mapping(cls, values):
        """Preset for ``values["experiment"]`` overlaid with ``values``."""
        values = dict(values)
        # a report.json is accepted and its config echo reused
        if "config" in values and "runs" in values:
            values = dict(values["config"])
        name = values.get("experiment", cls.experiment)
        if name not in PRESETS:
            raise ConfigError(f"experiment: unknown value {name!r}; choose from {sorted(PRESETS)}")
        known = {f.name: f for f in dataclasses.fields(cls)}
        merged = dict(PRESETS[name], experiment=name)
        for key, value in values.items():
            if key not in known:
                raise ConfigError(f"{key}: unknown configuration key")
            merged[key] = value
        kwargs = {key: _coerce(key, value, known[key].type) for key, value in merged.items()}
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def validate(self):
        if self.repetitions < 1:
            raise ConfigError("repetitions: must be >= 1")
        if self.n_obs < 1:
            raise ConfigError("n_obs: must be >= 1")
        for eps in list(self.epsilons) + [self.epsilon]:
            if not 0.0 <= eps <= 1.0:
                raise ConfigError(f"epsilons: {eps} is outside [0, 1]")
        dim = len(self.true_theta)
        if len(self.prior_mean) != dim:
            raise ConfigError(f"prior_mean: expected {dim} entries")
        if self.epsilons and dim != 1:
            raise ConfigError("epsilons: sweeps need a one-parameter model")
        if not (self.bandwidth == "median" or (isinstance(self.bandwidth, float) and self.bandwidth > 0)):
            raise ConfigError(f"bandwidth: expected 'median' or a positive number, got {self.bandwidth!r}")
        try:
            self.sampler_config(0)
            self.prior()
            self.model()
        except ValueError as err:
            raise ConfigError(str(err)) from None

    def to_dict(self):
        """Config echo; the output directory is left out so reports do not depend on it."""
        out = dataclasses.asdict(self)
        out.pop("output_dir")
        return out

    # -- derived objects ---------------------------------------------------

    def model(self):
        if self.experiment == "gaussian-location":
            return GaussianLocationModel(len(self.true_theta))
        if self.experiment == "uniform-location":
            return UniformLocationModel(self.half_width)
        cfg = Lorenz96Config(K=self.lorenz_K, F=self.lorenz_F, dt=self.lorenz_dt, T=self.lorenz_T,
                             shared_residual=self.shared_residual)
        return StochasticLorenz96Model(cfg, state_bound=self.lorenz_state_bound)

    def prior(self):
        return GaussianPrior(self.prior_mean, self.prior_var)

    def sampler_config(self, seed):
        return SamplerConfig(
            n_particles=self.n_particles, n_sims=self.n_sims, step_size=self.step_size,
            beta=self.beta, n_steps=self.n_steps, seed=seed, latent_policy=self.latent_policy,
            jitter=self.jitter, method=self.method, sqrt=self.sqrt, burn_in=self.burn_in,
            average_trajectory=self.average_trajectory,
        )

    def param_names(self):
        if self.experiment == "lorenz96":
            return list(LORENZ_PARAMS)
        if len(self.true_theta) == 1:
            return ["theta"]
        return [f"theta_{i + 1}" for i in range(len(self.true_theta))]

    def sweep(self):
        return list(self.epsilons) if self.epsilons else [self.epsilon]

    def reference_epsilon(self):
        """The contamination level summarised in ``rmse.csv`` and ``ensemble_final.csv``."""
        levels = self.sweep()
        return self.epsilon if self.epsilon in levels else levels[0]

    def seeds(self, rep):
        """``(data_seed, sampler_seed)`` for one repetition, derived independently."""
        data = self.data_seed if self.data_seed is not None else self.seed
        samp = self.sampler_seed if self.sampler_seed is not None else self.seed
        return (_derive(data, _DATA, rep), _derive(samp, _SAMPLER, rep))


def _derive(seed, role, index):
    return int(np.random.SeedSequence([int(seed), role, int(index)]).generate_state(1, np.uint64)[0])


def _coerce(key, value, kind):
    try:
        if key in ("data_seed", "sampler_seed", "output_dir", "lorenz_state_bound"):
            if value is None:
                return None
            kind = {"output_dir": str, "lorenz_state_bound": float}.get(key, int)
            return str(value) if kind is str else _coerce("", value, kind)
        if key == "bandwidth":
            return value if value == "median" else float(value)
        if kind is int:
            if isinstance(value, bool) or float(value) != int(value):
                raise ValueError
            return int(value)
        if kind is float:
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        if kind is bool:
            if not isinstance(value, bool):
                raise ValueError
            return value
        if kind is list:
            return [float(v) for v in (value if isinstance(value, (list, tuple)) else [value])]
        if kind is str and not isinstance(value, str):
            raise ValueError
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: invalid value {value!r}") from None
    return value


# -- running -------------------------------------------------------------------


def generate_data(cfg, model, rep, epsilon):
    """Observed data for one repetition and contamination level.

    The clean sample depends only on the repetition, so every level of an
    epsilon sweep contaminates the same clean data.
    """
    data_seed, _ = cfg.seeds(rep)
    rng = np.random.default_rng(np.random.SeedSequence([data_seed, 0]))
    latents = model.sample_latent(rng, cfg.n_obs)
    clean = model.simulate(np.asarray(cfg.true_theta)[None, :], latents)[0]
    if epsilon == 0.0:
        return clean
    level = int(round(epsilon * 1_000_000))
    crng = np.random.default_rng(np.random.SeedSequence([data_seed, _CONTAM, level]))
    return contaminate(clean, epsilon, crng, cfg.outlier_mean, cfg.outlier_sd)[0]


def _baseline(cfg, data):
    if cfg.experiment == "gaussian-location" and len(cfg.true_theta) == 1:
        mean, var = conjugate_gaussian_posterior(cfg.prior_mean[0], cfg.prior_var[0], data)
        return dict(posterior_mean=[mean], posterior_var=[var], degenerate=False)
    if cfg.experiment == "uniform-location":
        grid = default_grid(cfg.grid_lo, cfg.grid_hi, cfg.grid_n)
        post = grid_posterior_uniform(data, cfg.prior_mean[0], cfg.prior_var[0], cfg.half_width,
                                      grid, cfg.likelihood_floor)
        return dict(posterior_mean=[post.mean], posterior_var=[post.var], degenerate=post.degenerate)
    return None


def run_experiment(cfg):
    """Run every repetition and contamination level; returns ``(report, ensembles)``.

    A diverged run is recorded with ``status = "diverged"`` and the others
    carry on. ``ensembles`` maps ``(rep, epsilon)`` to final GF-ETLD ensembles.
    """
    model = cfg.model()
    prior = cfg.prior()
    runs, ensembles = [], {}
    timing = {"gf_etld": 0.0, "standard_bayes": 0.0, "data_generation": 0.0}
    counts = {"gf_etld": 0, "standard_bayes": 0}
    for rep in range(cfg.repetitions):
        data_seed, sampler_seed = cfg.seeds(rep)
        for eps in cfg.sweep():
            t0 = time.perf_counter()
            data = generate_data(cfg, model, rep, eps)
            timing["data_generation"] += time.perf_counter() - t0

            row = dict(repetition=rep, epsilon=eps, method="gf_etld", data_seed=data_seed,
                       sampler_seed=sampler_seed)
            t0 = time.perf_counter()
            try:
                spec = resolve_bandwidth(cfg.bandwidth, data, model, prior, seed=sampler_seed)
                row["bandwidth"] = spec.bandwidth
                res = run_chain(model, data, prior, cfg.sampler_config(sampler_seed), spec)
            except DivergenceError as err:
                row.update(status="diverged", error=str(err), step=err.step,
                           posterior_mean=None, posterior_var=None)
            else:
                row.update(status="ok", posterior_mean=res.mean.tolist(),
                           posterior_var=np.diag(res.cov).tolist(),
                           final_mmd2=float(res.mmd2_trace[-1]) if res.mmd2_trace.size else None)
                ensembles[(rep, eps)] = res.ensemble
            timing["gf_etld"] += time.perf_counter() - t0
            counts["gf_etld"] += 1
            runs.append(row)

            if cfg.baseline:
                t0 = time.perf_counter()
                base = _baseline(cfg, data)
                if base is not None:
                    timing["standard_bayes"] += time.perf_counter() - t0
                    counts["standard_bayes"] += 1
                    runs.append(dict(repetition=rep, epsilon=eps, method="standard_bayes",
                                     data_seed=data_seed, status="ok", **base))

    report = dict(
        config=cfg.to_dict(),
        params=cfg.param_names(),
        runs=runs,
        summary=summarise(cfg, runs),
        timing=dict(
            methods={m: dict(seconds_total=timing[m], runs=counts[m]) for m in counts if counts[m]},
            data_generation_seconds=timing["data_generation"],
        ),
    )
    return report, ensembles


def summarise(cfg, runs):
    """RMSE and mean posterior mean per (epsilon, method) over successful runs."""
    rows = []
    truth = np.asarray(cfg.true_theta, dtype=float)
    for eps in cfg.sweep():
        for method in ("gf_etld", "standard_bayes"):
            sel = [r for r in runs if r["epsilon"] == eps and r["method"] == method]
            if not sel:
                continue
            ok = [r["posterior_mean"] for r in sel if r["status"] == "ok"]
            row = dict(epsilon=eps, method=method, n_ok=len(ok), n_failed=len(sel) - len(ok))
            if ok:
                row["posterior_mean"] = np.mean(ok, axis=0).tolist()
                row["rmse"] = rmse(np.asarray(ok), truth).tolist()
            else:
                row["posterior_mean"] = row["rmse"] = None
            if method == "standard_bayes":
                row["degenerate"] = sum(bool(r.get("degenerate")) for r in sel)
            rows.append(row)
    return rows


def all_diverged(report):
    gf = [r for r in report["runs"] if r["method"] == "gf_etld"]
    return bool(gf) and all(r["status"] != "ok" for r in gf)


# -- output files ----------------------------------------------------------------


def _fmt(x):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return None if not math.isfinite(obj) else float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def emit_outputs(report, ensembles, directory):
    """Write the CSV and JSON outputs; returns the list of written paths."""
    cfg = ExperimentConfig(**report["config"])
    os.makedirs(directory, exist_ok=True)
    names = report["params"]
    ref = cfg.reference_epsilon()
    written = []

    path = os.path.join(directory, "ensemble_final.csv")
    ens = next((ensembles[k] for k in sorted(ensembles) if k[1] == ref), None)
    _write_csv(path, [f"theta_{i + 1}" for i in range(len(names))],
               [] if ens is None else ens.tolist())
    written.append(path)

    path = os.path.join(directory, "rmse.csv")
    ref_row = next((r for r in report["summary"] if r["epsilon"] == ref and r["method"] == "gf_etld"),
                   None)
    values = ref_row["rmse"] if ref_row and ref_row["rmse"] is not None else [None] * len(names)
    _write_csv(path, ["param", "rmse"], zip(names, values))
    written.append(path)

    if cfg.epsilons:
        path = os.path.join(directory, "sweep.csv")
        rows = [(r["epsilon"], r["method"],
                 None if r["posterior_mean"] is None else r["posterior_mean"][0],
                 None if r["rmse"] is None else r["rmse"][0]) for r in report["summary"]]
        _write_csv(path, ["epsilon", "method", "posterior_mean", "rmse"], rows)
        written.append(path)

    path = os.path.join(directory, "report.json")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_json_safe(report), fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(path)

    path = os.path.join(directory, "timing.csv")
    rows = [(m, t["seconds_total"], t["seconds_total"] / t["runs"])
            for m, t in report["timing"]["methods"].items()]
    _write_csv(path, ["method", "seconds_total", "seconds_per_sample"], rows)
    written.append(path)
    return written
