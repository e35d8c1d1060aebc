"""Command-line entry point ``hbrvm``.

Exit codes: 0 success, 1 a requested check failed, 2 configuration or I/O
error, 3 numerical failure, 4 an acceptance threshold was exceeded.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import bench
from .bench import ExperimentConfig, q_schedule, simulate_data
from .errors import ConfigError, HBRVMError, InsufficientDataError, NumericalError, OracleRangeError
from .gibbs import ChainConfig, Hyperparams, run_chain
from .kernels import (
    KernelSpec,
    build_kernel,
    check_gaussian_separation,
    check_near_orthogonality,
    near_identity_band,
    read_matrix_csv,
    spectral_certificate,
    write_matrix_csv,
)
from .oracle import GridSpec, oracle_posterior
from .priors import parse_prior, tau_squared

log = logging.getLogger("hbrvm")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_THRESHOLD = 0, 1, 2, 3, 4
CHECKS = ("certificate", "separation", "near_orthogonality", "near_identity")
_TUPLE_FIELDS = {"n_grid", "checks", "lambda_sq_range"}


@dataclass(frozen=True)
class RunConfig(ExperimentConfig):
    """Experiment settings plus run plumbing; parsed from flat JSON."""

    out: str = "out"
    verbosity: int = 0
    threads: int | None = None
    n: int = 2
    design_csv: str | None = None
    y_csv: str | None = None
    checks: tuple = ("certificate",)
    a_L: float = 0.6
    a_U: float = 2.0
    oracle_nodes: int = 64
    lambda_sq_range: tuple | None = None
    save_traces: bool = False
    metric: str = "err_sq"
    against: str = "q_n"
    slope_max: float | None = None

    def __post_init__(self):
        super().__post_init__()
        for key in _TUPLE_FIELDS:
            v = getattr(self, key)
            if isinstance(v, list):
                object.__setattr__(self, key, tuple(v))
        unknown = [c for c in self.checks if c not in CHECKS]
        if unknown:
            raise ConfigError(f"unknown check {unknown[0]!r}; choose from {CHECKS}")

    def experiment(self) -> ExperimentConfig:
        names = {f.name for f in fields(ExperimentConfig)}
        return ExperimentConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in _TUPLE_FIELDS:
            if d[key] is not None:
                d[key] = list(d[key])
        return d


CONFIG_KEYS = tuple(f.name for f in fields(RunConfig))


def config_from_dict(data: dict) -> RunConfig:
    """Strict parse: any key outside ``RunConfig`` is an error naming it."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    for key in data:
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
    try:
        return RunConfig(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(args) -> RunConfig:
    data = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
    for item in args.override or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        key, value = item.split("=", 1)
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        data[key] = _parse_value(value)
    if args.seed is not None:
        data["seed"] = args.seed
    if args.out is not None:
        data["out"] = args.out
    threads = args.threads
    if threads is None and data.get("threads") is None and os.environ.get("RVM_THREADS"):
        try:
            threads = int(os.environ["RVM_THREADS"])
        except ValueError as exc:
            raise ConfigError(f"RVM_THREADS must be an integer, got {os.environ['RVM_THREADS']!r}") from exc
    if threads is not None:
        data["threads"] = threads
    if data.get("threads") is None:
        data["threads"] = os.cpu_count() or 1
    return config_from_dict(data)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o)}")


def _read_csv(path):
    try:
        return read_matrix_csv(path)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def _problem(cfg: RunConfig):
    """Design, kernel, response and reference for single-instance commands."""
    if cfg.design_csv:
        X = _read_csv(cfg.design_csv)
        p = X.shape[1]
        scale = float(p) ** cfg.theta if cfg.normalize_kernel else 1.0
        K = build_kernel(X, KernelSpec(cfg.kernel_family, cfg.theta, scale)).entries
        if cfg.y_csv is None:
            raise ConfigError("design_csv given without y_csv")
        Y = _read_csv(cfg.y_csv).ravel()
        if Y.size != K.shape[0]:
            raise ConfigError(f"y_csv has {Y.size} values, design has {K.shape[0]} rows")
        return X, K, Y, None
    X, K, truth = bench.cell_inputs(cfg, cfg.n)
    Y = simulate_data(K, truth, np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(1, cfg.n, 0))))
    return X, K, Y, truth.beta0


def _hyper(cfg: RunConfig, K: np.ndarray) -> Hyperparams:
    n = K.shape[0]
    q = q_schedule(n, cfg.gamma) if n > 1 else 1
    t1 = float(np.linalg.eigvalsh(K)[0])
    return Hyperparams(cfg.a, cfg.b, tau_squared(cfg.schedule, n, q, t1))


# ----------------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------------


def cmd_kernel_check(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    if cfg.design_csv:
        X = _read_csv(cfg.design_csv)
    else:
        X, _, _ = bench.cell_inputs(cfg, cfg.n)
        write_matrix_csv(out / "design.csv", X)
    n, p = X.shape
    scale = float(p) ** cfg.theta if cfg.normalize_kernel else 1.0
    K = build_kernel(X, KernelSpec(cfg.kernel_family, cfg.theta, scale)).entries
    report = {"n": n, "p": p}
    ok = True
    for check in cfg.checks:
        if check == "certificate":
            res = spectral_certificate(K, cfg.c1, cfg.c2).to_dict()
        elif check == "near_identity":
            lo, hi = near_identity_band(n)
            res = spectral_certificate(K, lo, hi).to_dict()
        elif check == "separation":
            res = check_gaussian_separation(X, cfg.theta)
        else:
            res = check_near_orthogonality(X, cfg.a_L, cfg.a_U)
        report[check] = res
        ok &= bool(res["satisfied"])
        print(f"{check}: {'pass' if res['satisfied'] else 'FAIL'}")
    _write_json(out / "kernel_check.json", report)
    return EXIT_OK if ok else EXIT_CHECK


def cmd_fit(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    _, K, Y, beta0 = _problem(cfg)
    hyper = _hyper(cfg, K)
    chain = ChainConfig(cfg.n_iter, cfg.burn_in, cfg.thin, cfg.n_chains, cfg.seed)
    summary = run_chain(K, Y, parse_prior(cfg.prior), hyper, chain, reference=beta0)
    result = summary.to_dict()
    result["tau_sq"] = hyper.tau_sq
    _write_json(out / "fit.json", result)
    if cfg.save_traces:
        np.savez(out / "traces.npz", **{
            f"{name}_{c}": getattr(t, name)
            for c, t in enumerate(summary.traces)
            for name in ("sigma_sq", "beta", "lambda_sq")
        })
    print(f"ess_min={summary.ess_min:.1f} rhat_max={summary.rhat_max:.4f}")
    return EXIT_OK


def cmd_oracle(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    _, K, Y, _ = _problem(cfg)
    hyper = _hyper(cfg, K)
    grid = GridSpec(cfg.oracle_nodes, cfg.lambda_sq_range)
    res = oracle_posterior(K, Y, parse_prior(cfg.prior), hyper, grid)
    d = res.to_dict()
    d["tau_sq"] = hyper.tau_sq
    _write_json(out / "oracle.json", d)
    print(f"mean_beta={np.array2string(res.mean_beta)} edge_mass={res.edge_mass:.2e}")
    return EXIT_OK


def _slope_violations(fits: dict, slope_max: float | None) -> list[str]:
    if slope_max is None:
        return []
    return [k for k, f in fits.items() if "slope" in f and f["slope"] > slope_max]


def cmd_bench(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    rows = bench.run_bench(cfg.experiment(), threads=int(cfg.threads or 1),
                           progress=lambda r: log.info("cell n=%d rep=%d %s", r["n"], r["replicate"], r["flags"]))
    summary = bench.write_outputs(out, rows, cfg.experiment())
    for key, fit in summary["rate_fits"].items():
        print(f"{key}: " + (f"slope={fit['slope']:.3f} r2={fit['r_squared']:.3f}" if "slope" in fit else fit["error"]))
    bad = _slope_violations(summary["rate_fits"], cfg.slope_max)
    if bad:
        print(f"slope above {cfg.slope_max}: {', '.join(bad)}", file=sys.stderr)
        return EXIT_THRESHOLD
    return EXIT_OK


def cmd_rate_fit(cfg: RunConfig, paths) -> int:
    out = _out_dir(cfg)
    rows = []
    for p in paths:
        try:
            rows.extend(bench.read_rows_csv(p))
        except OSError as exc:
            raise ConfigError(f"cannot read {p}: {exc}") from exc
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"{p}: malformed bench CSV ({exc})") from exc
    aggs = bench.aggregate(rows, metrics=(cfg.metric,))
    fit = bench.rate_fit(aggs, cfg.metric, cfg.against)
    _write_json(out / "rate_fit.json", fit)
    print(f"{cfg.metric}~{cfg.against}: slope={fit['slope']:.4f} intercept={fit['intercept']:.4f} "
          f"r2={fit['r_squared']:.4f}")
    if _slope_violations({"fit": fit}, cfg.slope_max):
        return EXIT_THRESHOLD
    return EXIT_OK


# ----------------------------------------------------------------------------
# entry point
# ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON config file")
    common.add_argument("--seed", type=int, help="root seed")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--threads", type=int, metavar="N", help="worker processes (default: RVM_THREADS or CPU count)")
    common.add_argument("--override", action="append", metavar="KEY=VALUE",
                        help="set a config key; VALUE is parsed as JSON when possible")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="hbrvm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("kernel-check", parents=[common], help="spectral certificate and design condition checks")
    sub.add_parser("fit", parents=[common], help="run the Gibbs sampler on one data set")
    sub.add_parser("oracle", parents=[common], help="grid-integrated posterior for n <= 3")
    sub.add_parser("bench", parents=[common], help="Monte-Carlo contraction bench")
    rf = sub.add_parser("rate-fit", parents=[common], help="log-log rate fit over bench CSVs")
    rf.add_argument("paths", nargs="+", help="bench cells.csv files")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        if cfg.verbosity and not args.verbose:
            log.setLevel(logging.WARNING - 10 * min(cfg.verbosity, 2))
        if args.command == "kernel-check":
            return cmd_kernel_check(cfg)
        if args.command == "fit":
            return cmd_fit(cfg)
        if args.command == "oracle":
            return cmd_oracle(cfg)
        if args.command == "bench":
            return cmd_bench(cfg)
        return cmd_rate_fit(cfg, args.paths)
    except (ConfigError, InsufficientDataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, OracleRangeError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        ctx = getattr(exc, "context", None)
        if ctx:
            print(json.dumps(ctx, default=_json_default, sort_keys=True), file=sys.stderr)
        return EXIT_NUMERICAL
    except HBRVMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
