"""Scalar random-variate machinery used by the Gibbs sweep.

* generalized inverse Gaussian draws by ratio-of-uniforms, vectorized over
  parameters
* slice sampling with step doubling (Neal, 2003), vectorized over
  independent one-dimensional targets
"""

from __future__ import annotations

import numpy as np
from .errors import NumericalError

MAX_DOUBLINGS = 100


def gig_sample(p, a, b, rng: np.random.Generator, size=None) -> np.ndarray:
    """Draw from GIG(p, a, b) with density ``x^(p-1) exp(-(a x + b / x) / 2)``.

    Vectorized over parameters. With ``omega = sqrt(a b)`` and
    ``alpha = sqrt(b / a)`` the draw is ``alpha * X`` where X has density
    proportional to ``x^(p-1) exp(-omega (x + 1/x) / 2)``; X is generated by
    ratio-of-uniforms (with or without mode shift) or, for small omega and
    |p| < 1, by rejection from a three-piece hat (Hoermann and Leydold, 2014).
    Negative p uses ``X(p) = 1 / X(-p)``.

    Boundary cases: ``b == 0`` gives Gamma(p, rate a/2) (needs p > 0) and
    ``a == 0`` gives the reciprocal of Gamma(-p, rate b/2) (needs p < 0).
    """
    p, a, b = np.broadcast_arrays(
        np.asarray(p, dtype=float), np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    )
    if size is not None:
        p, a, b = (np.broadcast_to(v, size) for v in (p, a, b))
    shape = p.shape
    p, a, b = (np.ravel(v) for v in (p, a, b))
    if np.any(a < 0) or np.any(b < 0) or np.any((a == 0) & (b == 0)):
        raise NumericalError("GIG needs a, b >= 0, not both zero", {"a": a.tolist()[:5], "b": b.tolist()[:5]})
    out = np.empty(p.shape)

    zero_b = b == 0
    if np.any(zero_b & (p <= 0)):
        raise NumericalError("GIG with b = 0 and p <= 0 is improper", {"p": p[zero_b].tolist()})
    if np.any(zero_b):
        out[zero_b] = rng.gamma(p[zero_b], 2.0 / a[zero_b])
    zero_a = (a == 0) & ~zero_b
    if np.any(zero_a & (p >= 0)):
        raise NumericalError("GIG with a = 0 and p >= 0 is improper", {"p": p[zero_a].tolist()})
    if np.any(zero_a):
        out[zero_a] = 1.0 / rng.gamma(-p[zero_a], 2.0 / b[zero_a])

    ok = ~(zero_a | zero_b)
    if np.any(ok):
        lam = np.abs(p[ok])
        omega = np.sqrt(a[ok] * b[ok])
        x = _standard_gig(lam, omega, rng)
        x = np.where(p[ok] < 0, 1.0 / x, x)
        out[ok] = np.sqrt(b[ok] / a[ok]) * x
    out = out.reshape(shape)
    return out if out.ndim else float(out)


def _gig_mode(lam, omega):
    return np.where(
        lam >= 1.0,
        (np.sqrt((lam - 1.0) ** 2 + omega ** 2) + (lam - 1.0)) / omega,
        omega / (np.sqrt((1.0 - lam) ** 2 + omega ** 2) + (1.0 - lam)),
    )


def _standard_gig(lam, omega, rng):
    """X with density ~ x^(lam-1) exp(-omega (x + 1/x) / 2), lam >= 0, omega > 0."""
    x = np.empty(lam.shape)
    shift = (lam > 2.0) | (omega > 3.0)
    noshift = ~shift & ((lam >= 1.0 - 2.25 * omega ** 2) | (omega > 0.2))
    hat = ~shift & ~noshift
    if np.any(shift):
        x[shift] = _rou_shift(lam[shift], omega[shift], rng)
    if np.any(noshift):
        x[noshift] = _rou_noshift(lam[noshift], omega[noshift], rng)
    if np.any(hat):
        x[hat] = _three_piece_hat(lam[hat], omega[hat], rng)
    return x


def _rejection_loop(propose, accept_log, n, rng):
    """Fill n draws: ``propose(idx) -> (x, logv)``, accept when ``logv <= accept_log(x, idx)``."""
    out = np.empty(n)
    pending = np.arange(n)
    while pending.size:
        x, logv = propose(pending)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            good = (x > 0) & (logv <= accept_log(x, pending))
        out[pending[good]] = x[good]
        pending = pending[~good]
    return out


def _rou_noshift(lam, omega, rng):
    t = 0.5 * (lam - 1.0)
    s = 0.25 * omega
    xm = _gig_mode(lam, omega)
    nc = t * np.log(xm) - s * (xm + 1.0 / xm)
    ym = ((lam + 1.0) + np.sqrt((lam + 1.0) ** 2 + omega ** 2)) / omega
    um = np.exp(0.5 * (lam + 1.0) * np.log(ym) - s * (ym + 1.0 / ym) - nc)

    def propose(i):
        u = um[i] * rng.uniform(size=i.size)
        v = rng.uniform(size=i.size)
        return u / v, np.log(v)

    def accept_log(x, i):
        return t[i] * np.log(x) - s[i] * (x + 1.0 / x) - nc[i]

    return _rejection_loop(propose, accept_log, lam.size, rng)


def _rou_shift(lam, omega, rng):
    t = 0.5 * (lam - 1.0)
    s = 0.25 * omega
    xm = _gig_mode(lam, omega)
    nc = t * np.log(xm) - s * (xm + 1.0 / xm)
    # extremes of (x - xm) sqrt(f(x)) are roots of a cubic
    a_ = -(2.0 * (lam + 1.0) / omega + xm)
    b_ = 2.0 * (lam - 1.0) * xm / omega - 1.0
    c_ = xm
    p_ = b_ - a_ ** 2 / 3.0
    q_ = 2.0 * a_ ** 3 / 27.0 - a_ * b_ / 3.0 + c_
    fi = np.arccos(np.clip(-q_ / (2.0 * np.sqrt(-(p_ ** 3) / 27.0)), -1.0, 1.0))
    fak = 2.0 * np.sqrt(-p_ / 3.0)
    y1 = fak * np.cos(fi / 3.0) - a_ / 3.0
    y2 = fak * np.cos(fi / 3.0 + 4.0 / 3.0 * np.pi) - a_ / 3.0
    uplus = (y1 - xm) * np.exp(t * np.log(y1) - s * (y1 + 1.0 / y1) - nc)
    uminus = (y2 - xm) * np.exp(t * np.log(y2) - s * (y2 + 1.0 / y2) - nc)

    def propose(i):
        u = uminus[i] + rng.uniform(size=i.size) * (uplus[i] - uminus[i])
        v = rng.uniform(size=i.size)
        return u / v + xm[i], np.log(v)

    def accept_log(x, i):
        return t[i] * np.log(x) - s[i] * (x + 1.0 / x) - nc[i]

    return _rejection_loop(propose, accept_log, lam.size, rng)


def _three_piece_hat(lam, omega, rng):
    """Rejection for 0 <= lam < 1 and small omega: constant, power and exponential hat pieces."""
    xm = _gig_mode(lam, omega)
    x0 = omega / (1.0 - lam)
    k0 = np.exp((lam - 1.0) * np.log(xm) - 0.5 * omega * (xm + 1.0 / xm))
    A0 = k0 * x0
    far = x0 >= 2.0 / omega
    lam0 = lam == 0.0
    k1 = np.where(far, 0.0, np.exp(-omega))
    with np.errstate(divide="ignore", invalid="ignore"):
        A1_pow = k1 / lam * ((2.0 / omega) ** lam - x0 ** lam)
    A1 = np.where(far, 0.0, np.where(lam0, k1 * np.log(2.0 / omega ** 2), A1_pow))
    k2 = np.where(far, x0 ** (lam - 1.0), (2.0 / omega) ** (lam - 1.0))
    A2 = np.where(far, k2 * 2.0 * np.exp(-omega * x0 / 2.0) / omega, k2 * 2.0 * np.exp(-1.0) / omega)
    total = A0 + A1 + A2
    edge = np.maximum(x0, 2.0 / omega)

    def propose(i):
        v = total[i] * rng.uniform(size=i.size)
        x = np.empty(i.size)
        hx = np.empty(i.size)
        r0 = v <= A0[i]
        x[r0] = x0[i][r0] * v[r0] / A0[i][r0]
        hx[r0] = k0[i][r0]
        v1 = v - A0[i]
        r1 = ~r0 & (v1 <= A1[i])
        if np.any(r1):
            l1, o1, kk, vv, xx0 = lam[i][r1], omega[i][r1], k1[i][r1], v1[r1], x0[i][r1]
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                xp = np.where(l1 == 0.0, xx0 * np.exp(vv / kk),
                              (xx0 ** l1 + l1 / kk * vv) ** (1.0 / np.where(l1 == 0.0, 1.0, l1)))
            x[r1] = xp
            hx[r1] = kk * xp ** (l1 - 1.0)
        r2 = ~r0 & ~r1
        if np.any(r2):
            o2, kk, vv = omega[i][r2], k2[i][r2], v1[r2] - A1[i][r2]
            with np.errstate(divide="ignore", invalid="ignore"):
                xp = -2.0 / o2 * np.log(np.exp(-o2 / 2.0 * edge[i][r2]) - o2 / (2.0 * kk) * vv)
            x[r2] = xp
            hx[r2] = kk * np.exp(-o2 / 2.0 * xp)
        with np.errstate(divide="ignore"):
            return x, np.log(rng.uniform(size=i.size) * hx)

    def accept_log(x, i):
        return (lam[i] - 1.0) * np.log(x) - omega[i] / 2.0 * (x + 1.0 / x)

    return _rejection_loop(propose, accept_log, lam.size, rng)


def slice_doubling(x0, logf, rng: np.random.Generator, width: float = 1.0,
                   max_doublings: int = MAX_DOUBLINGS, logf0=None):
    """One slice-sampling update per coordinate using step doubling.

    ``logf(x, idx)`` returns the unnormalized log density of the targets
    ``idx`` evaluated at ``x`` (both 1-d arrays of equal length). Every
    coordinate is an independent one-dimensional target.

    Raises ``NumericalError`` when an interval still brackets the slice
    after ``max_doublings`` doublings.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    n = x0.size
    allidx = np.arange(n)
    if logf0 is None:
        logf0 = logf(x0, allidx)
    y = logf0 - rng.exponential(size=n)

    # doubling
    L = x0 - width * rng.uniform(size=n)
    R = L + width
    fL = logf(L, allidx)
    fR = logf(R, allidx)
    active = (fL > y) | (fR > y)
    k = 0
    while np.any(active):
        if k >= max_doublings:
            bad = np.flatnonzero(active)
            raise NumericalError(
                f"slice interval still open after {max_doublings} doublings",
                {"coordinates": bad.tolist(), "x0": x0[bad].tolist(), "log_level": y[bad].tolist()},
            )
        idx = np.flatnonzero(active)
        span = R[idx] - L[idx]
        left = rng.uniform(size=idx.size) < 0.5
        li, ri = idx[left], idx[~left]
        L[li] -= span[left]
        R[ri] += span[~left]
        if li.size:
            fL[li] = logf(L[li], li)
        if ri.size:
            fR[ri] = logf(R[ri], ri)
        active[idx] = (fL[idx] > y[idx]) | (fR[idx] > y[idx])
        k += 1

    # shrinkage with the doubling acceptability test
    x1 = x0.copy()
    f1 = np.empty(n)
    lo, hi = L.copy(), R.copy()
    pending = np.ones(n, dtype=bool)
    while np.any(pending):
        idx = np.flatnonzero(pending)
        prop = lo[idx] + rng.uniform(size=idx.size) * (hi[idx] - lo[idx])
        fp = logf(prop, idx)
        good = fp > y[idx]
        if np.any(good):
            gi = idx[good]
            good[good] = _acceptable(x0[gi], prop[good], L[gi], R[gi], y[gi], gi, logf, width)
        acc = idx[good]
        x1[acc] = prop[good]
        f1[acc] = fp[good]
        pending[acc] = False
        rej = ~good
        below = prop[rej] < x0[idx[rej]]
        lo[idx[rej][below]] = prop[rej][below]
        hi[idx[rej][~below]] = prop[rej][~below]
    return x1, f1


def _acceptable(x0, x1, L, R, y, idx, logf, width):
    """Neal's test that x1 would have produced the same doubled interval."""
    L = L.copy()
    R = R.copy()
    ok = np.ones(x0.size, dtype=bool)
    differ = np.zeros(x0.size, dtype=bool)
    active = (R - L) > 1.1 * width
    while np.any(active):
        a = np.flatnonzero(active)
        M = 0.5 * (L[a] + R[a])
        differ[a] |= ((x0[a] < M) & (x1[a] >= M)) | ((x0[a] >= M) & (x1[a] < M))
        go_left = x1[a] < M
        R[a[go_left]] = M[go_left]
        L[a[~go_left]] = M[~go_left]
        check = a[differ[a]]
        if check.size:
            reject = (y[check] >= logf(L[check], idx[check])) & (y[check] >= logf(R[check], idx[check]))
            ok[check[reject]] = False
            active[check[reject]] = False
        active[a] &= (R[a] - L[a]) > 1.1 * width
    return ok
