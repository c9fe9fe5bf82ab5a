"""Command line interface.

Subcommands
-----------
run       run an experiment from a config file and ``key=value`` overrides
mmd       MMD^2 between two CSV sample files
estimate  minimum-MMD point estimate for a location model

Exit codes: 0 success, 1 configuration error, 2 every run diverged, 3 I/O error.
"""
import argparse
import csv
import logging
import os
import sys

import numpy as np
import yaml

from .exceptions import CapabilityError, ConfigError, DegenerateDataError, DivergenceError
from .experiments import ExperimentConfig, all_diverged, emit_outputs, run_experiment
from .kernel import mmd2_unbiased, mmd2_vstat
from .models import MODELS, get_model
from .sampler import ROLE_LATENT, minimum_mmd_estimate, resolve_bandwidth, substream

OUTPUT_ENV = "GFETLD_OUTPUT_DIR"
EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("gfetld")


def _parse_override(text):
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    try:
        value = yaml.safe_load(raw) if raw else ""
    except yaml.YAMLError as err:
        raise ConfigError(f"{key}: cannot parse value {raw!r} ({err})") from None
    return key.strip(), value


def load_config(path=None, overrides=()):
    """Read a YAML or JSON mapping (JSON is valid YAML) and apply ``key=value`` overrides."""
    values = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            try:
                loaded = yaml.safe_load(fh)
            except yaml.YAMLError as err:
                mark = getattr(err, "problem_mark", None)
                where = f" line {mark.line + 1}" if mark is not None else ""
                raise ConfigError(f"{path}:{where} {getattr(err, 'problem', err)}") from None
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping of keys to values")
        if "config" in loaded and "runs" in loaded:
            loaded = loaded["config"]
        values.update(loaded)
    for text in overrides:
        key, value = _parse_override(text)
        values[key] = value
    return ExperimentConfig.from_mapping(values)


def read_samples(path):
    """Numeric rows of a CSV file; a non-numeric first row is taken as a header."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if rows:
        try:
            [float(v) for v in rows[0]]
        except ValueError:
            rows = rows[1:]
    try:
        return np.array([[float(v) for v in r] for r in rows], dtype=float)
    except ValueError as err:
        raise ConfigError(f"{path}: {err}") from None


def _cmd_run(args):
    positional = list(args.items)
    path = None
    if positional and "=" not in positional[0]:
        path = positional.pop(0)
    cfg = load_config(path, positional)
    out_dir = args.output_dir or cfg.output_dir or os.environ.get(OUTPUT_ENV) or "results"
    cfg.output_dir = out_dir
    log.info("running %s with %d repetition(s)", cfg.experiment, cfg.repetitions)
    report, ensembles = run_experiment(cfg)
    for path in emit_outputs(report, ensembles, out_dir):
        log.info("wrote %s", path)
    for row in report["summary"]:
        rm = "nan" if row["rmse"] is None else " ".join(f"{v:.4g}" for v in row["rmse"])
        print(f"epsilon={row['epsilon']:g} method={row['method']} rmse={rm} "
              f"failed={row['n_failed']}")
    if all_diverged(report):
        print("error: every GF-ETLD run diverged", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def _bandwidth_arg(text):
    return text if text == "median" else float(text)


def _cmd_mmd(args):
    X, Y = read_samples(args.x), read_samples(args.y)
    spec = resolve_bandwidth(args.bandwidth, np.vstack([X, Y]) if args.bandwidth == "median" else Y)
    fn = mmd2_unbiased if args.statistic == "unbiased" else mmd2_vstat
    print(format(fn(X, Y, spec), ".17g"))
    return EXIT_OK


def _cmd_estimate(args):
    data = read_samples(args.data)
    model = get_model(args.model)
    spec = resolve_bandwidth(args.bandwidth, data)
    latents = model.sample_latent(substream(args.seed, ROLE_LATENT), args.n_sims)
    theta0 = np.array(args.theta0, dtype=float)
    theta = minimum_mmd_estimate(model, data, theta0, args.step, args.iters, spec, latents)
    print(",".join(format(v, ".17g") for v in theta))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="gfetld", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment")
    run.add_argument("items", nargs="*", metavar="[CONFIG] key=value",
                     help="optional YAML/JSON config file followed by overrides")
    run.add_argument("-o", "--output-dir", help=f"output directory (default ${OUTPUT_ENV} or ./results)")
    run.set_defaults(func=_cmd_run)

    mmd = sub.add_parser("mmd", help="MMD^2 between two CSV sample files")
    mmd.add_argument("x")
    mmd.add_argument("y")
    mmd.add_argument("--bandwidth", type=_bandwidth_arg, default="median",
                     help="'median' (pooled samples) or a positive number")
    mmd.add_argument("--statistic", choices=("unbiased", "vstat"), default="unbiased")
    mmd.set_defaults(func=_cmd_mmd)

    est = sub.add_parser("estimate", help="minimum-MMD point estimate")
    est.add_argument("data")
    est.add_argument("--model", choices=sorted(MODELS), default="gaussian_location")
    est.add_argument("--theta0", type=float, nargs="+", default=[0.0])
    est.add_argument("--step", type=float, default=1.0)
    est.add_argument("--iters", type=int, default=200)
    est.add_argument("--n-sims", type=int, default=50)
    est.add_argument("--bandwidth", type=_bandwidth_arg, default="median")
    est.add_argument("--seed", type=int, default=0)
    est.set_defaults(func=_cmd_estimate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except OSError as err:
        print(f"error: {err.filename or ''}: {err.strerror or err}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, CapabilityError, DegenerateDataError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
