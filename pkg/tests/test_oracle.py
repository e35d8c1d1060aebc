import json
import math

import numpy as np
import pytest
from scipy import integrate

from hbrvm.errors import InvalidInputError, OracleRangeError
from hbrvm.gibbs import ChainConfig, Hyperparams, closed_form_point_mass, run_chain
from hbrvm.oracle import GridSpec, log_weight, oracle_posterior
from hbrvm.priors import BetaPrime, Gamma, InverseGamma, PointMass


def small_problem(n, seed):
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((n, n))
    K = G @ G.T / n + np.eye(n)
    Y = K @ rng.choice([-1.0, 1.0], size=n) + rng.standard_normal(n)
    return K, Y


def test_point_mass_reproduces_closed_form():
    K, Y = small_problem(3, 0)
    h = Hyperparams(1.0, 1.0, 0.4)
    res = oracle_posterior(K, Y, PointMass(1.0), h)
    cf = closed_form_point_mass(K, Y, 1.0, h)
    np.testing.assert_allclose(res.mean_beta, cf["mean_beta"], rtol=1e-10)
    assert res.trace_var_Kbeta == pytest.approx(cf["trace_var_Kbeta"], rel=1e-10)


def test_one_dimensional_against_adaptive_quadrature():
    y, tau_sq = 1.7, 0.8
    h = Hyperparams(1.5, 1.0, tau_sq)
    prior = InverseGamma(3.0, 1.0)
    n, a, b = 1, h.a, h.b

    def weight(u):
        # integrand in u = log lambda^2, including the Jacobian lambda^2
        l = math.exp(u)
        s = 1.0 + 1.0 / (tau_sq * l)
        q = y * y - y * y / s
        return prior.density(l) * (l + 1.0 / tau_sq) ** -0.5 * (b + q) ** (-(n + a) / 2) * l

    def cond_mean(u):
        return y / (1.0 + 1.0 / (tau_sq * math.exp(u)))

    edges = np.arange(-20.0, 20.5, 1.0)
    pieces = list(zip(edges[:-1], edges[1:]))
    z = sum(integrate.quad(weight, lo, hi, epsrel=1e-13)[0] for lo, hi in pieces)
    m = sum(integrate.quad(lambda u: weight(u) * cond_mean(u), lo, hi, epsrel=1e-13)[0] for lo, hi in pieces) / z
    res = oracle_posterior(np.array([[1.0]]), np.array([y]), prior, h,
                           GridSpec(512, lambda_sq_range=(1e-5, 1e6)), refine=False)
    assert res.mean_beta[0] == pytest.approx(m, rel=1e-6)


def test_refinement_is_cauchy():
    K, Y = small_problem(2, 1)
    h = Hyperparams(1.0, 1.0, 0.5)
    prior = InverseGamma(3.0, 1.0)
    rng_ = (1e-3, 1e3)
    means = [oracle_posterior(K, Y, prior, h, GridSpec(m, rng_), refine=False).mean_beta for m in (32, 64, 128, 256)]
    diffs = [np.linalg.norm(b - a) for a, b in zip(means, means[1:])]
    # midpoint rule in log lambda^2 converges at least quadratically, down to round-off
    for prev, cur in zip(diffs, diffs[1:]):
        assert cur <= max(prev / 4, 1e-11)


def test_refinement_change_reported_and_small():
    K, Y = small_problem(2, 2)
    res = oracle_posterior(K, Y, InverseGamma(3.0, 1.0), Hyperparams(1.0, 1.0, 0.5))
    assert res.refinement_change is not None and res.refinement_change < 0.005
    assert res.grid.nodes_per_dim == 128


def test_permutation_symmetry():
    K, Y = small_problem(3, 3)
    h = Hyperparams(1.0, 1.0, 0.6)
    perm = np.array([2, 0, 1])
    g = GridSpec(32)
    a = oracle_posterior(K, Y, BetaPrime(2.0, 3.0), h, g, refine=False)
    b = oracle_posterior(K[np.ix_(perm, perm)], Y[perm], BetaPrime(2.0, 3.0), h, g, refine=False)
    np.testing.assert_allclose(b.mean_beta, a.mean_beta[perm], rtol=1e-9)


def test_weights_match_marginal_likelihood_path():
    """Integrating sigma^2 out of Y ~ N(0, sigma^2 (I + tau^2 K L K)) gives the same weights."""
    K, Y = small_problem(3, 4)
    h = Hyperparams(1.3, 0.7, 0.45)
    prior = Gamma(2.0, 1.5)
    n = 3
    rng = np.random.default_rng(5)
    for _ in range(20):
        lam = rng.gamma(1.0, size=n) * 3
        lw, _, _ = log_weight(K, Y, lam, prior, h)
        C = np.eye(n) + h.tau_sq * K @ np.diag(lam) @ K
        sign, logdet = np.linalg.slogdet(C)
        quad = Y @ np.linalg.solve(C, Y)
        # |K^2 L + tau^-2 I| = tau^(-2n) |I + tau^2 K L K|, with tau^(-2n) = tau_sq^(-n)
        alt = (np.sum(prior.logpdf(lam)) - 0.5 * (logdet - n * math.log(h.tau_sq))
               - 0.5 * (n + h.a) * math.log(h.b + quad))
        assert lw == pytest.approx(alt, rel=1e-10)


def test_edge_mass_error():
    K, Y = small_problem(2, 6)
    with pytest.raises(OracleRangeError, match="edge"):
        oracle_posterior(K, Y, InverseGamma(3.0, 1.0), Hyperparams(1.0, 1.0, 0.5),
                         GridSpec(32, lambda_sq_range=(0.5, 0.6)))


def test_size_limits():
    K, Y = small_problem(4, 7)
    with pytest.raises(InvalidInputError):
        oracle_posterior(K, Y, InverseGamma(3.0, 1.0), Hyperparams())
    with pytest.raises(InvalidInputError):
        GridSpec(16)
    with pytest.raises(InvalidInputError):
        GridSpec(64, lambda_sq_range=(2.0, 1.0))


def test_json_embeds_grid():
    K, Y = small_problem(2, 8)
    res = oracle_posterior(K, Y, InverseGamma(3.0, 1.0), Hyperparams(), GridSpec(32), refine=False)
    d = json.loads(res.to_json())
    assert d["grid"]["nodes_per_dim"] == 32
    assert d["grid"]["lambda_sq_range"] == list(res.lambda_sq_range)
    assert len(d["mean_beta"]) == 2


def test_gibbs_agrees_with_oracle_at_n2():
    K, Y = small_problem(2, 9)
    h = Hyperparams(1.0, 1.0, 2 ** -1.5)
    prior = InverseGamma(3.0, 1.0)
    ref = oracle_posterior(K, Y, prior, h)
    s = run_chain(K, Y, prior, h, ChainConfig(n_iter=12_000, burn_in=1000, seed=9))
    assert np.all(np.abs(s.rb_mean_beta - ref.mean_beta) <= 3 * s.rb_mean_beta_se)
    assert s.trace_var_Kbeta == pytest.approx(ref.trace_var_Kbeta, rel=0.1)
