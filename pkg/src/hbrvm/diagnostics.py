"""Effective sample size and split-R-hat for scalar MCMC traces."""

from __future__ import annotations

import numpy as np


def _autocov(x: np.ndarray) -> np.ndarray:
    """Autocovariance of each row of ``x`` (biased estimator, via FFT)."""
    n = x.shape[-1]
    xc = x - x.mean(axis=-1, keepdims=True)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size, axis=-1)
    return np.fft.irfft(f * np.conj(f), size, axis=-1)[..., :n] / n


def ess(chains) -> tuple[float, bool]:
    """Effective sample size of a scalar quantity.

    ``chains`` is ``(n_draws,)`` or ``(n_chains, n_draws)``. Autocorrelations
    are combined across chains and truncated with Geyer's initial monotone
    sequence. Returns ``(ess, degenerate)``; a trace with zero variance has
    ``ess`` equal to the number of draws and ``degenerate=True``.
    """
    x = np.atleast_2d(np.asarray(chains, dtype=float))
    m, n = x.shape
    total = m * n
    if n < 4:
        return float(total), False
    acov = _autocov(x)
    w = acov[:, 0].mean() * n / (n - 1.0)
    chain_means = x.mean(axis=1)
    var_plus = w * (n - 1.0) / n
    if m > 1:
        var_plus += chain_means.var(ddof=1)
    if not var_plus > 0 or not np.isfinite(var_plus):
        return float(total), True
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # Geyer: sum consecutive pairs while positive, force monotone
    pair_sums = rho[:-1:2] + rho[1::2]
    tau = 0.0
    prev = np.inf
    for s in pair_sums:
        if s <= 0:
            break
        s = min(s, prev)
        tau += s
        prev = s
    tau = max(-1.0 + 2.0 * tau, 1.0 / np.log10(total))
    return float(total / tau), False


def split_rhat(chains) -> float:
    """Split-R-hat (Gelman et al.) for ``(n_chains, n_draws)`` traces."""
    x = np.atleast_2d(np.asarray(chains, dtype=float))
    m, n = x.shape
    half = n // 2
    if half < 2:
        return float("nan")
    parts = np.concatenate([x[:, :half], x[:, n - half:]], axis=0)
    means = parts.mean(axis=1)
    W = parts.var(axis=1, ddof=1).mean()
    B = half * means.var(ddof=1)
    if W == 0:
        return 1.0 if B == 0 else float("inf")
    var_hat = (half - 1.0) / half * W + B / half
    return float(np.sqrt(var_hat / W))


def diagnostics(traces) -> dict:
    """ESS per coordinate and split-R-hat of ``(n_chains, n_draws, k)`` traces."""
    x = np.asarray(traces, dtype=float)
    if x.ndim == 2:
        x = x[..., None]
    ess_vals, degenerate, rhats = [], [], []
    for j in range(x.shape[2]):
        e, d = ess(x[:, :, j])
        ess_vals.append(e)
        degenerate.append(d)
        rhats.append(split_rhat(x[:, :, j]) if x.shape[0] >= 2 else float("nan"))
    return {"ess": np.array(ess_vals), "degenerate": np.array(degenerate), "rhat": np.array(rhats)}
