"""Local-variance priors on lambda^2 and global shrinkage schedules.

Parameterizations:

=================  ==============================================
Gamma(s, r)        density r^s x^(s-1) e^(-r x) / Gamma(s)
InverseGamma(s, d) density d^s x^(-s-1) e^(-d/x) / Gamma(s)
InverseGaussian    mean mu, shape lam (Wald)
BetaPrime(a, b)    density x^(a-1) (1+x)^(-a-b) / B(a, b)
PointMass(v)       all mass at v
=================  ==============================================
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special, stats

from .errors import InvalidInputError

__all__ = [
    "Gamma",
    "InverseGamma",
    "InverseGaussian",
    "BetaPrime",
    "PointMass",
    "parse_prior",
    "classify_moments",
    "MomentReport",
    "quadrature_moment_scan",
    "GlobalSchedule",
    "tau_squared",
]


def _check_positive(**params):
    for name, value in params.items():
        if not (value > 0 and math.isfinite(value)):
            raise InvalidInputError(f"{name} must be positive and finite, got {value}")


class LocalVariancePrior:
    """Common interface; subclasses are frozen dataclasses."""

    name = "prior"

    def _dist(self):
        raise NotImplementedError

    def logpdf(self, x):
        return self._dist().logpdf(x)

    def density(self, lambda_sq):
        """Density at ``lambda_sq > 0`` (scalar or array)."""
        x = np.asarray(lambda_sq, dtype=float)
        if np.any(x <= 0):
            raise InvalidInputError("density is defined on lambda_sq > 0 only")
        out = np.exp(self.logpdf(x))
        return float(out) if out.ndim == 0 else out

    def cdf(self, x):
        return self._dist().cdf(x)

    def ppf(self, q):
        return self._dist().ppf(q)

    def sample(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    def log_moment(self, m: float) -> float:
        """log E[(lambda^2)^m]; ``inf`` when the moment diverges."""
        raise NotImplementedError

    def moment(self, m: float) -> float:
        lm = self.log_moment(m)
        return math.inf if lm == math.inf else math.exp(lm)

    def moment_finite(self, m: float) -> bool:
        return bool(self.log_moment(m) < math.inf)

    @property
    def params(self) -> tuple:
        raise NotImplementedError

    def __str__(self):
        return f"{self.name}({', '.join(repr(float(v)) for v in self.params)})"


@dataclass(frozen=True)
class Gamma(LocalVariancePrior):
    shape: float
    rate: float
    name = "gamma"

    def __post_init__(self):
        _check_positive(shape=self.shape, rate=self.rate)

    @property
    def params(self):
        return (self.shape, self.rate)

    def _dist(self):
        return stats.gamma(a=self.shape, scale=1.0 / self.rate)

    def sample(self, rng, size=None):
        return rng.gamma(self.shape, 1.0 / self.rate, size=size)

    def log_moment(self, m):
        if self.shape + m <= 0:
            return math.inf
        return special.gammaln(self.shape + m) - special.gammaln(self.shape) - m * math.log(self.rate)


@dataclass(frozen=True)
class InverseGamma(LocalVariancePrior):
    shape: float
    scale: float
    name = "inverse_gamma"

    def __post_init__(self):
        _check_positive(shape=self.shape, scale=self.scale)

    @property
    def params(self):
        return (self.shape, self.scale)

    def _dist(self):
        return stats.invgamma(a=self.shape, scale=self.scale)

    def sample(self, rng, size=None):
        return self.scale / rng.gamma(self.shape, 1.0, size=size)

    def log_moment(self, m):
        if self.shape - m <= 0:
            return math.inf
        return special.gammaln(self.shape - m) - special.gammaln(self.shape) + m * math.log(self.scale)

    @property
    def mean(self) -> float:
        return self.scale / (self.shape - 1.0) if self.shape > 1 else math.inf


@dataclass(frozen=True)
class InverseGaussian(LocalVariancePrior):
    mean: float
    shape: float
    name = "inverse_gaussian"

    def __post_init__(self):
        _check_positive(mean=self.mean, shape=self.shape)

    @property
    def params(self):
        return (self.mean, self.shape)

    def _dist(self):
        return stats.invgauss(mu=self.mean / self.shape, scale=self.shape)

    def sample(self, rng, size=None):
        return rng.wald(self.mean, self.shape, size=size)

    def log_moment(self, m):
        # E[X^m] = sqrt(2 lam / pi) e^(lam/mu) mu^(m - 1/2) K_{m - 1/2}(lam/mu)
        z = self.shape / self.mean
        return (
            0.5 * math.log(2.0 * z / math.pi)
            + z
            + m * math.log(self.mean)
            + math.log(special.kve(m - 0.5, z))
            - z
        )


@dataclass(frozen=True)
class BetaPrime(LocalVariancePrior):
    a: float
    b: float
    name = "beta_prime"

    def __post_init__(self):
        _check_positive(a=self.a, b=self.b)

    @property
    def params(self):
        return (self.a, self.b)

    def _dist(self):
        return stats.betaprime(self.a, self.b)

    def sample(self, rng, size=None):
        # ratio of independent gammas
        return rng.gamma(self.a, 1.0, size=size) / rng.gamma(self.b, 1.0, size=size)

    def log_moment(self, m):
        if not (-self.a < m < self.b):
            return math.inf
        return special.betaln(self.a + m, self.b - m) - special.betaln(self.a, self.b)


@dataclass(frozen=True)
class PointMass(LocalVariancePrior):
    value: float
    name = "point_mass"

    def __post_init__(self):
        _check_positive(value=self.value)

    @property
    def params(self):
        return (self.value,)

    def logpdf(self, x):
        raise InvalidInputError("a point mass has no density")

    def cdf(self, x):
        return np.where(np.asarray(x) >= self.value, 1.0, 0.0)

    def ppf(self, q):
        return np.full_like(np.asarray(q, dtype=float), self.value)

    def sample(self, rng, size=None):
        if size is None:
            return float(self.value)
        return np.full(size, float(self.value))

    def log_moment(self, m):
        return m * math.log(self.value)


_FAMILIES = {
    "gamma": Gamma,
    "inverse_gamma": InverseGamma,
    "inverse_gaussian": InverseGaussian,
    "beta_prime": BetaPrime,
    "point_mass": PointMass,
}
_PRIOR_RE = re.compile(r"^\s*([a-z_]+)\s*\(([^()]*)\)\s*$")


def parse_prior(text: str) -> LocalVariancePrior:
    """Parse a ``family(param1, param2)`` string such as ``inverse_gamma(2.5, 1.0)``."""
    if isinstance(text, LocalVariancePrior):
        return text
    m = _PRIOR_RE.match(str(text))
    if not m:
        raise InvalidInputError(f"cannot parse prior {text!r}; expected family(p1, p2)")
    family, args = m.group(1), m.group(2)
    if family not in _FAMILIES:
        raise InvalidInputError(f"unknown prior family {family!r}; expected one of {sorted(_FAMILIES)}")
    try:
        values = [float(v) for v in args.split(",") if v.strip()]
        return _FAMILIES[family](*values)
    except TypeError as exc:
        raise InvalidInputError(f"wrong number of parameters for {family}: {args!r}") from exc
    except ValueError as exc:
        raise InvalidInputError(f"bad parameters for {family}: {args!r}") from exc


# ----------------------------------------------------------------------------
# moment classification
# ----------------------------------------------------------------------------


@dataclass
class MomentReport:
    prior: str
    delta: float
    fourth_moment_finite: bool
    inverse_second_finite: bool
    one_plus_delta: bool
    numeric_estimates: dict = field(default_factory=dict)

    def one_plus_delta_finite(self, delta: float | None = None) -> bool:
        if delta is None or delta == self.delta:
            return self.one_plus_delta
        return parse_prior(self.prior).moment_finite(1.0 + delta)

    def to_dict(self) -> dict:
        return {
            "prior": self.prior,
            "delta": self.delta,
            "fourth_moment_finite": self.fourth_moment_finite,
            "inverse_second_finite": self.inverse_second_finite,
            "one_plus_delta_finite": self.one_plus_delta,
            "numeric_estimates": self.numeric_estimates,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def classify_moments(prior: LocalVariancePrior, delta: float | None = None,
                     rng: np.random.Generator | None = None, n_mc: int = 0) -> MomentReport:
    """Closed-form finiteness of E[(l2)^2], E[(l2)^-1] and E[(l2)^(1+delta)].

    ``delta`` defaults to 1, which reproduces the fourth-moment condition.
    With ``n_mc > 0`` Monte-Carlo estimates of the finite moments are attached.
    """
    delta = 1.0 if delta is None else float(delta)
    if delta <= 0:
        raise InvalidInputError(f"delta must be positive, got {delta}")
    orders = {"second": 2.0, "inverse": -1.0, "one_plus_delta": 1.0 + delta}
    finite = {k: bool(prior.moment_finite(m)) for k, m in orders.items()}
    estimates = {}
    if n_mc > 0:
        rng = np.random.default_rng() if rng is None else rng
        draws = np.asarray(prior.sample(rng, size=n_mc), dtype=float)
        for key, m in orders.items():
            if finite[key]:
                estimates[key] = float(np.mean(draws ** m))
    return MomentReport(
        prior=str(prior),
        delta=delta,
        fourth_moment_finite=finite["second"],
        inverse_second_finite=finite["inverse"],
        one_plus_delta=finite["one_plus_delta"],
        numeric_estimates=estimates,
    )


def truncated_moment(prior: LocalVariancePrior, m: float, lo: float, hi: float) -> float:
    """Integral of ``x**m * density(x)`` over [lo, hi], by decades in log x."""
    edges = np.unique(np.concatenate([
        [math.log(lo), math.log(hi)],
        np.arange(math.ceil(math.log(lo)), math.floor(math.log(hi)) + 1, 2.0),
    ]))

    def integrand(u):
        return math.exp((m + 1.0) * u + float(prior.logpdf(math.exp(u))))

    total = 0.0
    for left, right in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad(integrand, left, right, limit=200, epsabs=0.0, epsrel=1e-11)
        total += val
    return total


QUADRATURE_LEVELS = (1e4, 1e8, 1e12, 1e16)


def quadrature_moment_scan(prior: LocalVariancePrior, m: float,
                           levels=QUADRATURE_LEVELS, rel_tol: float = 1e-6,
                           decay: float = 0.9) -> dict:
    """Decide finiteness of E[(l2)^m] from truncated quadrature.

    The support is truncated to ``[1/L, L]`` for each level ``L``. The moment
    is declared finite when the last widening adds at most ``rel_tol`` of the
    running value, or when the increments shrink geometrically (each at most
    ``decay`` times the previous one), as they do for a power-law tail with
    a negative exponent. Logarithmic and power-law divergence give constant
    or growing increments.
    """
    values = [truncated_moment(prior, m, 1.0 / L, L) for L in levels]
    incs = np.diff(values)
    growth = incs[-1] / max(abs(values[-2]), 1e-300)
    monotone = all(b >= a for a, b in zip(values, values[1:]))
    shrinking = bool(np.all(incs[1:] <= decay * incs[:-1]))
    finite = bool(growth <= rel_tol or shrinking)
    return {"values": values, "growth": float(growth), "monotone": monotone, "finite": finite}


# ----------------------------------------------------------------------------
# global schedules
# ----------------------------------------------------------------------------

REGIMES = ("bounded_kernel", "polynomial_contraction", "polynomial_consistency")


@dataclass(frozen=True)
class GlobalSchedule:
    regime: str = "bounded_kernel"
    constant: float = 1.0
    delta: float | None = None

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise InvalidInputError(f"unknown regime {self.regime!r}; expected one of {REGIMES}")
        _check_positive(constant=self.constant)
        if self.delta is not None:
            if self.regime != "bounded_kernel":
                raise InvalidInputError("the weakened-moment delta applies to bounded_kernel only")
            _check_positive(delta=self.delta)


def tau_squared(schedule: GlobalSchedule, n: int, q_n: int, t1: float | None = None) -> float:
    """Global shrinkage tau_n^2 for the given regime."""
    if n < 1:
        raise InvalidInputError(f"n must be >= 1, got {n}")
    if not 1 <= q_n <= n:
        raise InvalidInputError(f"need 1 <= q_n <= n, got q_n={q_n}, n={n}")
    c = schedule.constant
    if schedule.regime == "polynomial_consistency":
        if t1 is None or not t1 > 0:
            raise InvalidInputError("polynomial_consistency needs a positive t1")
        return c * math.sqrt(q_n * t1 ** -2 * n ** -1.5)
    if schedule.delta is not None:
        return c * q_n * n ** (-1.0 - 1.0 / (1.0 + schedule.delta))
    return c * q_n * n ** -1.5
