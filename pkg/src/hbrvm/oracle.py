"""Brute-force posterior for n <= 3 by grid integration over log lambda^2.

The marginal posterior of Lambda^2 is, up to a constant,

    pi(Lambda^2) |K^2 Lambda^2 + tau^-2 I|^(-1/2)
        (b + Y'[I - K (K^2 + tau^-2 Lambda^-2)^-1 K] Y)^(-(n+a)/2)

and is integrated on a tensor grid of cell midpoints in log coordinates.
Conditional on Lambda^2 the beta mean and E(sigma^2 | Lambda^2, Y) are
closed form, so posterior moments are weighted averages over the grid.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidInputError, NumericalError, OracleRangeError
from .gibbs import Hyperparams, _as_kernel, closed_form_point_mass
from .priors import LocalVariancePrior, PointMass

MAX_N = 3
MAX_NODES = 10 ** 6
EDGE_MASS_LIMIT = 0.01


@dataclass(frozen=True)
class GridSpec:
    nodes_per_dim: int = 64
    lambda_sq_range: tuple | None = None
    quantiles: tuple = (1e-4, 1.0 - 1e-4)

    def __post_init__(self):
        if self.nodes_per_dim < 32:
            raise InvalidInputError(f"nodes_per_dim must be >= 32, got {self.nodes_per_dim}")
        if self.lambda_sq_range is not None:
            lo, hi = self.lambda_sq_range
            if not (0 < lo < hi):
                raise InvalidInputError(f"need 0 < lo < hi, got {self.lambda_sq_range}")

    def resolve_range(self, prior: LocalVariancePrior) -> tuple[float, float]:
        if self.lambda_sq_range is not None:
            return tuple(float(v) for v in self.lambda_sq_range)
        lo, hi = (float(v) for v in prior.ppf(np.array(self.quantiles)))
        return lo, hi

    def nodes(self, prior: LocalVariancePrior) -> tuple[np.ndarray, float]:
        """Cell midpoints in log lambda^2 and the cell width."""
        lo, hi = self.resolve_range(prior)
        edges = np.linspace(math.log(lo), math.log(hi), self.nodes_per_dim + 1)
        return 0.5 * (edges[:-1] + edges[1:]), float(edges[1] - edges[0])


def log_weight(K, Y, lambda_sq, prior: LocalVariancePrior, hyper: Hyperparams) -> tuple[float, np.ndarray, float]:
    """Unnormalized log posterior density of Lambda^2 (w.r.t. d lambda^2).

    Returns ``(log_w, conditional_mean, quad_form)``. The determinant uses
    the symmetric factorization of ``Lambda (K^2 + tau^-2 Lambda^-2) Lambda``.
    """
    n = Y.size
    lam = np.sqrt(lambda_sq)
    A = K @ K
    A[np.diag_indices(n)] += 1.0 / (hyper.tau_sq * lambda_sq)
    S = lam[:, None] * A * lam[None, :]
    try:
        Ls = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("oracle node is not positive definite", {"lambda_sq": lambda_sq.tolist()}) from exc
    logdet = 2.0 * float(np.sum(np.log(np.diag(Ls))))
    # A^-1 K Y = Lambda S^-1 Lambda K Y
    mean = lam * np.linalg.solve(S, lam * (K @ Y))
    q = float(Y @ Y - (K @ Y) @ mean)
    log_prior = float(np.sum(prior.logpdf(lambda_sq)))
    log_w = log_prior - 0.5 * logdet - 0.5 * (n + hyper.a) * math.log(hyper.b + q)
    return log_w, mean, q


@dataclass
class OracleResult:
    mean_beta: np.ndarray
    mean_Kbeta: np.ndarray
    trace_var_Kbeta: float
    trace_var_beta: float
    normalizer: float  # log of the grid integral of the unnormalized density
    edge_mass: float
    grid: GridSpec
    lambda_sq_range: tuple
    refinement_change: float | None = None

    def to_dict(self) -> dict:
        g = asdict(self.grid)
        g["lambda_sq_range"] = list(self.lambda_sq_range)
        return {
            "mean_beta": self.mean_beta.tolist(),
            "mean_Kbeta": self.mean_Kbeta.tolist(),
            "trace_var_Kbeta": self.trace_var_Kbeta,
            "trace_var_beta": self.trace_var_beta,
            "log_normalizer": self.normalizer,
            "edge_mass": self.edge_mass,
            "refinement_change": self.refinement_change,
            "grid": g,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def _evaluate(K, Y, prior, hyper, grid: GridSpec) -> OracleResult:
    n = Y.size
    u, h = grid.nodes(prior)
    m = u.size
    total = m ** n
    if total > MAX_NODES:
        raise InvalidInputError(f"grid has {total} nodes, limit is {MAX_NODES}")
    idx = np.array(list(itertools.product(range(m), repeat=n)), dtype=int).reshape(total, n)
    uu = u[idx]
    lam_sq = np.exp(uu)
    lam = np.sqrt(lam_sq)
    K2 = K @ K
    KY = K @ Y
    A = np.broadcast_to(K2, (total, n, n)).copy()
    A[:, np.arange(n), np.arange(n)] += 1.0 / (hyper.tau_sq * lam_sq)
    # symmetric form Lambda A Lambda has the determinant of K^2 Lambda^2 + tau^-2 I
    S = lam[:, :, None] * A * lam[:, None, :]
    try:
        Ls = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("an oracle node is not positive definite", {"n": n}) from exc
    logdet = 2.0 * np.sum(np.log(np.diagonal(Ls, axis1=1, axis2=2)), axis=1)
    Ainv = np.linalg.inv(A)
    means = np.einsum("kij,j->ki", Ainv, KY)
    q = np.maximum(Y @ Y - means @ KY, 0.0)
    log_prior = np.sum(prior.logpdf(lam_sq), axis=1)
    # d lambda^2 = lambda^2 d u
    log_w = log_prior - 0.5 * logdet - 0.5 * (n + hyper.a) * np.log(hyper.b + q) + np.sum(uu, axis=1)
    e_sigma = (hyper.b + q) / (n + hyper.a - 2.0)
    tr_inv = np.trace(Ainv, axis1=1, axis2=2)
    tr_k = np.einsum("kij,ji->k", Ainv, K2)
    edge = np.any((idx == 0) | (idx == m - 1), axis=1)

    log_z = float(logsumexp(log_w))
    w = np.exp(log_w - log_z)
    mean_beta = w @ means
    mean_Kbeta = K @ mean_beta
    Kmeans = means @ K
    tv_K = float(w @ (e_sigma * tr_k) + w @ np.sum((Kmeans - mean_Kbeta) ** 2, axis=1))
    tv_b = float(w @ (e_sigma * tr_inv) + w @ np.sum((means - mean_beta) ** 2, axis=1))
    edge_mass = float(w[edge].sum())
    return OracleResult(mean_beta, mean_Kbeta, tv_K, tv_b, log_z + n * math.log(h), edge_mass,
                        grid, grid.resolve_range(prior))


def oracle_posterior(K, Y, prior: LocalVariancePrior, hyper: Hyperparams,
                     grid: GridSpec | None = None, refine: bool = True) -> OracleResult:
    """Posterior moments of beta and K beta by grid integration over Lambda^2.

    With ``refine`` the grid is also evaluated at twice the node count and
    the finer answer is returned, with the relative change in ``mean_beta``
    recorded as ``refinement_change``.
    """
    K = _as_kernel(K)
    Y = np.asarray(Y, dtype=float)
    n = Y.size
    if n > MAX_N:
        raise InvalidInputError(f"oracle supports n <= {MAX_N}, got n={n}")
    hyper.check_n(n)
    grid = GridSpec() if grid is None else grid

    if isinstance(prior, PointMass):
        cf = closed_form_point_mass(K, Y, prior.value, hyper)
        return OracleResult(cf["mean_beta"], cf["mean_Kbeta"], cf["trace_var_Kbeta"],
                            cf["trace_var_beta"], 0.0, 0.0, grid, (prior.value, prior.value), 0.0)

    res = _evaluate(K, Y, prior, hyper, grid)
    if refine:
        fine_grid = GridSpec(2 * grid.nodes_per_dim, grid.lambda_sq_range, grid.quantiles)
        if fine_grid.nodes_per_dim ** n <= MAX_NODES:
            fine = _evaluate(K, Y, prior, hyper, fine_grid)
            change = float(np.linalg.norm(fine.mean_beta - res.mean_beta)
                           / max(np.linalg.norm(fine.mean_beta), 1e-300))
            fine.refinement_change = change
            res = fine
    if res.edge_mass > EDGE_MASS_LIMIT:
        raise OracleRangeError(
            f"{res.edge_mass:.3%} of posterior weight lies on edge nodes; widen lambda_sq_range "
            f"(currently {res.lambda_sq_range})"
        )
    return res
