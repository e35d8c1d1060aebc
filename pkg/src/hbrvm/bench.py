"""Monte-Carlo contraction bench.

For each sample size n on a grid and each replicate, the bench draws a
design and a sparse truth, simulates ``Y = K beta0 + eps``, runs the Gibbs
engine and records squared-error, posterior-trace and tail-probability
metrics. Replicate averages estimate the frequentist expectations that the
contraction results bound.

Seeding: the design and the truth depend on ``(seed, n)`` only, so every
replicate at a given n shares them; noise and chains depend on
``(seed, n, replicate)``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import InsufficientDataError, InvalidInputError, NumericalError
from .gibbs import ChainConfig, Hyperparams, run_chain
from .kernels import KernelSpec, build_kernel, generate_design, spectral_certificate
from .priors import GlobalSchedule, parse_prior, tau_squared

# ----------------------------------------------------------------------------
# truth and data
# ----------------------------------------------------------------------------

VALUE_RULES = ("alternating", "uniform", "unbounded")
SUPPORT_RULES = ("random", "first")


def q_schedule(n: int, gamma: float) -> int:
    """Sparsity ``q_n = ceil(n**gamma)``."""
    if not 0 < gamma < 1:
        raise InvalidInputError(f"gamma must lie in (0, 1), got {gamma}")
    # guard against 100**0.5 = 10.000000000000002
    return int(math.ceil(round(n ** gamma, 9)))


@dataclass
class TrueModel:
    beta0: np.ndarray
    q_n: int
    M: float
    sigma0_sq: float
    support: np.ndarray


def generate_truth(n: int, q_n: int, M: float, sigma0_sq: float, rng: np.random.Generator,
                   support_rule: str = "random", value_rule: str = "alternating") -> TrueModel:
    """Sparse coefficient vector with ``q_n`` nonzeros bounded by ``M``.

    ``unbounded`` draws Cauchy(0, M) values and ignores the bound; it exists
    to probe behaviour when the boundedness assumption fails.
    """
    if not 0 <= q_n <= n:
        raise InvalidInputError(f"need 0 <= q_n <= n, got q_n={q_n}, n={n}")
    if support_rule not in SUPPORT_RULES:
        raise InvalidInputError(f"unknown support_rule {support_rule!r}")
    if value_rule not in VALUE_RULES:
        raise InvalidInputError(f"unknown value_rule {value_rule!r}")
    beta0 = np.zeros(n)
    if support_rule == "first":
        support = np.arange(q_n)
    else:
        support = np.sort(rng.choice(n, size=q_n, replace=False))
    if value_rule == "alternating":
        values = M * np.where(np.arange(q_n) % 2 == 0, 1.0, -1.0)
    elif value_rule == "uniform":
        values = np.empty(q_n)
        for i in range(q_n):
            v = 0.0
            while abs(v) < M / 10.0:
                v = rng.uniform(-M, M)
            values[i] = v
    else:
        values = M * rng.standard_cauchy(q_n)
    beta0[support] = values
    return TrueModel(beta0, q_n, float(M), float(sigma0_sq), support)


def simulate_data(K, truth: TrueModel, rng: np.random.Generator) -> np.ndarray:
    """``Y = K beta0 + sigma0 z`` with z standard normal."""
    K = np.asarray(getattr(K, "entries", K), dtype=float)
    if K.shape != (truth.beta0.size, truth.beta0.size):
        raise InvalidInputError(f"kernel {K.shape} does not match beta0 of length {truth.beta0.size}")
    z = rng.standard_normal(truth.beta0.size)
    return K @ truth.beta0 + math.sqrt(truth.sigma0_sq) * z


# ----------------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    regime: str = "bounded_kernel"
    n_grid: tuple = (50, 100, 200, 400)
    gamma: float = 0.5
    design_kind: str = "separated"
    p: int | None = None
    p_factor: float = 1.0
    p_safety: float = 4.0
    kernel_family: str = "gaussian"
    theta: float = 1.0
    normalize_kernel: bool = False
    prior: str = "inverse_gamma(3, 1)"
    a: float = 1.0
    b: float = 1.0
    tau_constant: float = 1.0
    delta: float | None = None
    M: float = 2.0
    sigma0_sq: float = 1.0
    support_rule: str = "random"
    value_rule: str = "alternating"
    replicates: int = 16
    seed: int = 0
    n_iter: int = 5000
    burn_in: int = 1000
    thin: int = 1
    n_chains: int = 2
    c1: float = 0.5
    c2: float = 2.0
    max_ratio: float = 2.0
    rhat_limit: float = 1.05

    def __post_init__(self):
        object.__setattr__(self, "n_grid", tuple(int(v) for v in self.n_grid))
        if list(self.n_grid) != sorted(set(self.n_grid)):
            raise InvalidInputError(f"n_grid must be strictly increasing, got {self.n_grid}")
        GlobalSchedule(self.regime, self.tau_constant, self.delta)
        parse_prior(self.prior)
        q_schedule(self.n_grid[0], self.gamma)
        if self.replicates < 1:
            raise InvalidInputError("replicates must be >= 1")
        self.chain_config()

    def chain_config(self) -> ChainConfig:
        return ChainConfig(self.n_iter, self.burn_in, self.thin, self.n_chains)

    @property
    def schedule(self) -> GlobalSchedule:
        return GlobalSchedule(self.regime, self.tau_constant, self.delta)

    def dimension(self, n: int) -> int | None:
        """Covariate dimension p used at sample size n."""
        if self.p is not None:
            return int(self.p)
        if self.design_kind == "simplex":
            return None
        if self.regime == "polynomial_consistency":
            q = q_schedule(n, self.gamma)
            p = math.ceil(self.p_safety * (q * n ** 1.5) ** (1.0 / (2.0 * self.theta)))
            return max(p, n + 1)
        p = int(math.ceil(self.p_factor * n))
        if self.design_kind == "perturbed_orthogonal":
            p = max(p, n + 1)
        return p

    def to_dict(self) -> dict:
        d = asdict(self)
        d["n_grid"] = list(self.n_grid)
        return d


def default_config(regime: str = "bounded_kernel", **overrides) -> ExperimentConfig:
    """Defaults per regime; keyword overrides replace individual fields."""
    if regime == "bounded_kernel":
        base = ExperimentConfig(regime=regime)
    elif regime == "polynomial_contraction":
        base = ExperimentConfig(regime=regime, design_kind="simplex", kernel_family="polynomial", theta=0.1)
    elif regime == "polynomial_consistency":
        base = ExperimentConfig(regime=regime, design_kind="perturbed_orthogonal",
                                kernel_family="polynomial", theta=1.0)
    else:
        raise InvalidInputError(f"unknown regime {regime!r}")
    return replace(base, **overrides)


# ----------------------------------------------------------------------------
# cells
# ----------------------------------------------------------------------------

METRICS = (
    "q_n", "p", "tau_sq", "lambda_min", "lambda_max",
    "err_sq", "trace_var", "err_sq_beta", "trace_var_beta",
    "post_dist", "threshold", "tail_prob", "tail_prob_se",
    "err_sq_se", "trace_var_se",
    "ratio_err_q", "ratio_trace_q", "ratio_err_q_t2sq", "ratio_err_minimax",
    "ratio_err_beta_rate", "ess_min", "rhat",
)
COLUMNS = ("n", "replicate", "regime") + METRICS + ("flags", "seed")


def _stream(config: ExperimentConfig, *key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=tuple(key)))


def cell_inputs(config: ExperimentConfig, n: int):
    """Design, kernel and truth shared by all replicates at size n."""
    rng = _stream(config, 0, n)
    p = config.dimension(n)
    X = generate_design(n, p, config.design_kind, rng, theta=config.theta)
    p = X.shape[1]
    scale = float(p) ** config.theta if config.normalize_kernel else 1.0
    K = build_kernel(X, KernelSpec(config.kernel_family, config.theta, scale)).entries
    q = q_schedule(n, config.gamma)
    truth = generate_truth(n, q, config.M, config.sigma0_sq, rng, config.support_rule, config.value_rule)
    return X, K, truth


def _certify(config: ExperimentConfig, K: np.ndarray, n: int, q: int) -> tuple[float, float, list]:
    flags = []
    if config.regime == "bounded_kernel":
        cert = spectral_certificate(K, config.c1, config.c2)
        if not cert.satisfied:
            flags.append("certificate")
        return cert.lambda_min, cert.lambda_max, flags
    w = np.linalg.eigvalsh(K)
    t1, t2 = float(w[0]), float(w[-1])
    if not t1 > 0 or t2 / t1 > config.max_ratio:
        flags.append("certificate")
    elif config.regime == "polynomial_contraction" and not t2 ** 2 < n / q:
        flags.append("t2_rate")
    elif config.regime == "polynomial_consistency" and not t1 > math.sqrt(q * n ** 1.5):
        flags.append("t1_rate")
    return t1, t2, flags


def cell_threshold(config: ExperimentConfig, n: int, q: int, t1: float, t2: float) -> float:
    if config.regime == "bounded_kernel":
        return math.log(n / q) * q
    if config.regime == "polynomial_contraction":
        return q * t2 ** 2
    return math.sqrt(q * t1 ** -2 * n ** 1.5)


def run_cell(config: ExperimentConfig, n: int, replicate: int) -> dict:
    """One (n, replicate) cell. Failures become flagged rows, not exceptions."""
    row = {k: float("nan") for k in METRICS}
    row.update(n=n, replicate=replicate, regime=config.regime, flags="",
               seed=f"{config.seed}/{n}/{replicate}")
    X, K, truth = cell_inputs(config, n)
    q = truth.q_n
    t1, t2, flags = _certify(config, K, n, q)
    row.update(q_n=q, p=X.shape[1], lambda_min=t1, lambda_max=t2)
    if flags:
        row["flags"] = ";".join(flags)
        return row
    Y = simulate_data(K, truth, _stream(config, 1, n, replicate))
    tau_sq = tau_squared(config.schedule, n, q, t1)
    hyper = Hyperparams(config.a, config.b, tau_sq)
    try:
        summary = run_chain(K, Y, parse_prior(config.prior), hyper, config.chain_config(),
                            reference=truth.beta0,
                            seed=np.random.SeedSequence(config.seed, spawn_key=(2, n, replicate)))
    except NumericalError as exc:
        row.update(tau_sq=tau_sq, flags="numerical")
        row["error"] = str(exc)
        return row

    Kb0 = K @ truth.beta0
    err_sq = float(np.sum((summary.rb_mean_Kbeta - Kb0) ** 2))
    err_sq_beta = float(np.sum((summary.rb_mean_beta - truth.beta0) ** 2))
    thr = cell_threshold(config, n, q, t1, t2)
    metric = "beta" if config.regime == "polynomial_consistency" else "Kbeta"
    # MC s.e. of a squared norm by the delta method
    diff = summary.rb_mean_Kbeta - Kb0
    err_se = float(2.0 * math.sqrt(np.sum((diff * summary.rb_mean_Kbeta_se) ** 2)))
    row.update(
        tau_sq=tau_sq,
        err_sq=err_sq,
        trace_var=summary.trace_var_Kbeta,
        err_sq_beta=err_sq_beta,
        trace_var_beta=summary.trace_var_beta,
        post_dist=summary.mean_dist(metric),
        threshold=thr,
        tail_prob=summary.tail_prob(thr, metric),
        tail_prob_se=summary.tail_prob_se(thr, metric),
        err_sq_se=err_se,
        trace_var_se=summary.trace_var_Kbeta_se,
        ratio_err_q=err_sq / q,
        ratio_trace_q=summary.trace_var_Kbeta / q,
        ratio_err_q_t2sq=err_sq / (q * t2 ** 2),
        ratio_err_minimax=err_sq / (q * math.log(n / q)) if n > q else float("nan"),
        ratio_err_beta_rate=err_sq_beta / math.sqrt(q * t1 ** -2 * n ** 1.5),
        ess_min=summary.ess_min,
        rhat=summary.rhat_max,
    )
    if not summary.rhat_max < config.rhat_limit:
        row["flags"] = "rhat"
    return row


def _run_cell_star(args):
    from threadpoolctl import threadpool_limits

    with threadpool_limits(1):
        return run_cell(*args)


def run_bench(config: ExperimentConfig, threads: int = 1, progress=None) -> list[dict]:
    """All cells of the bench, ordered by (n, replicate)."""
    jobs = [(config, n, r) for n in config.n_grid for r in range(config.replicates)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_run_cell_star, jobs))
    else:
        rows = []
        for job in jobs:
            rows.append(run_cell(*job))
            if progress is not None:
                progress(rows[-1])
    rows.sort(key=lambda r: (r["n"], r["replicate"]))
    return rows


# ----------------------------------------------------------------------------
# aggregation and fits
# ----------------------------------------------------------------------------


def aggregate(rows: list[dict], metrics=("err_sq", "trace_var", "err_sq_beta", "trace_var_beta",
                                          "tail_prob", "ratio_err_q", "ratio_trace_q",
                                          "ratio_err_q_t2sq", "ratio_err_minimax",
                                          "ratio_err_beta_rate")) -> list[dict]:
    """Per-n mean and standard error over unflagged replicates."""
    out = []
    for n in sorted({r["n"] for r in rows}):
        group = [r for r in rows if r["n"] == n]
        good = [r for r in group if not r["flags"]]
        first = group[0]
        agg = {"n": n, "q_n": first["q_n"], "lambda_min": first.get("lambda_min", float("nan")),
               "lambda_max": first.get("lambda_max", float("nan")),
               "used": len(good), "flagged": len(group) - len(good)}
        for m in metrics:
            if m not in first:
                continue
            vals = np.array([r[m] for r in good], dtype=float)
            agg[m] = float(vals.mean()) if vals.size else float("nan")
            agg[m + "_se"] = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size >= 2 else float("nan")
        out.append(agg)
    return out


def rate_fit(aggregates: list[dict], metric: str, against: str = "q_n") -> dict:
    """OLS of log(mean metric) on log(rate); rate is ``q_n`` or ``q_n * t2^2``."""
    pts = []
    for a in aggregates:
        if a.get("used", 1) == 0:
            continue
        y = a[metric]
        if against == "q_n":
            x = a["q_n"]
        elif against == "q_n_t2_sq":
            x = a["q_n"] * a["lambda_max"] ** 2
        else:
            raise InvalidInputError(f"unknown rate {against!r}")
        if np.isfinite(y) and y > 0 and x > 0:
            pts.append((math.log(x), math.log(y)))
    if len(pts) < 3:
        raise InsufficientDataError(f"rate fit of {metric} needs >= 3 usable grid points, got {len(pts)}")
    lx, ly = np.array(pts).T
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return {"metric": metric, "against": against, "slope": float(slope),
            "intercept": float(intercept), "r_squared": r2, "points": len(pts)}


def tail_curve(rows: list[dict]) -> list[dict]:
    """Mean tail probability per n over unflagged replicates."""
    return [{"n": a["n"], "tail_prob": a["tail_prob"], "se": a["tail_prob_se"], "used": a["used"]}
            for a in aggregate(rows, metrics=("tail_prob",))]


def tail_non_increasing(curve: list[dict], n_se: float = 2.0, floor: float = 0.05) -> bool:
    """Non-increasing within ``n_se`` pooled s.e., or uniformly below ``floor``."""
    probs = [c["tail_prob"] for c in curve]
    if all(p < floor for p in probs):
        return True
    for a, b in zip(curve, curve[1:]):
        se = math.sqrt(np.nan_to_num(a["se"]) ** 2 + np.nan_to_num(b["se"]) ** 2)
        if b["tail_prob"] > a["tail_prob"] + n_se * se:
            return False
    return True


# ----------------------------------------------------------------------------
# output
# ----------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in COLUMNS])
    return buf.getvalue()


def read_rows_csv(path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            row = {}
            for k, v in rec.items():
                if k in ("regime", "flags", "seed"):
                    row[k] = v or ""
                elif v == "":
                    row[k] = float("nan")
                elif k in ("n", "replicate", "q_n", "p"):
                    row[k] = int(float(v))
                else:
                    row[k] = float(v)
            rows.append(row)
    return rows


def summarize_bench(rows: list[dict], config: ExperimentConfig | None = None) -> dict:
    aggs = aggregate(rows)
    fits = {}
    targets = [("err_sq", "q_n"), ("trace_var", "q_n")]
    regime = rows[0]["regime"] if rows else None
    if regime == "polynomial_contraction":
        targets += [("err_sq", "q_n_t2_sq"), ("trace_var", "q_n_t2_sq")]
    for metric, against in targets:
        try:
            fits[f"{metric}~{against}"] = rate_fit(aggs, metric, against)
        except InsufficientDataError as exc:
            fits[f"{metric}~{against}"] = {"error": str(exc)}
    out = {"aggregates": aggs, "rate_fits": fits, "tail_curve": tail_curve(rows)}
    if config is not None:
        out["config"] = config.to_dict()
    return out


def write_outputs(out_dir, rows: list[dict], config: ExperimentConfig | None = None) -> dict:
    """Long CSV, JSON summary and two-column gnuplot files per curve."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "cells.csv").write_text(rows_to_csv(rows))
    summary = summarize_bench(rows, config)
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True, default=_json_default) + "\n")
    for key in ("err_sq", "trace_var", "tail_prob", "ratio_err_q", "ratio_err_beta_rate"):
        lines = [f"# n mean_{key} se"]
        lines += [f"{a['n']} {a[key]!r} {a[key + '_se']!r}" for a in summary["aggregates"]]
        (out / f"{key}.dat").write_text("\n".join(lines) + "\n")
    return summary


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o)}")
