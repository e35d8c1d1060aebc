import numpy as np
import pytest

from hbrvm.diagnostics import diagnostics, ess, split_rhat


def test_white_noise_ess_near_length():
    x = np.random.default_rng(0).standard_normal(1000)
    e, degenerate = ess(x)
    assert 800 <= e <= 1200
    assert not degenerate


def test_ar1_ess_matches_theory():
    rng = np.random.default_rng(1)
    phi, n = 0.8, 200_000
    x = np.empty(n)
    x[0] = rng.standard_normal()
    eps = rng.standard_normal(n) * np.sqrt(1 - phi ** 2)
    for t in range(1, n):
        x[t] = phi * x[t - 1] + eps[t]
    e, _ = ess(x)
    assert e == pytest.approx(n * (1 - phi) / (1 + phi), rel=0.1)


def test_constant_chain_is_degenerate():
    e, degenerate = ess(np.full((2, 300), 4.2))
    assert e == 600 and degenerate


def test_identical_chains_rhat():
    x = np.random.default_rng(2).standard_normal(2000)
    # two copies of one chain: between-chain spread is zero, only the split halves differ
    assert abs(split_rhat(np.stack([x, x])) - 1.0) < 0.01


def test_rhat_detects_offset_chains():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 1000))
    x[1] += 3.0
    assert split_rhat(x) > 1.5


def test_rhat_constant_chains():
    assert split_rhat(np.ones((2, 10))) == 1.0


def test_diagnostics_shapes():
    d = diagnostics(np.random.default_rng(4).standard_normal((2, 500, 3)))
    assert d["ess"].shape == (3,) and d["rhat"].shape == (3,)
    assert np.all(d["rhat"] < 1.05)
