"""Kernel matrices, design generators and spectral certificates.

Two kernel families are supported:

* Gaussian    ``K(x, x') = exp(-||x - x'||^2 / theta)``
* Polynomial  ``K(x, x') = (x . x' + 1) ** theta``

each optionally divided elementwise by ``scale_normalization`` (``p**theta``
when studying the normalized polynomial kernel).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .errors import InvalidInputError, KernelConstructionError, NumericalError

GAUSSIAN = "gaussian"
POLYNOMIAL = "polynomial"
FAMILIES = (GAUSSIAN, POLYNOMIAL)

DESIGN_KINDS = ("exact_orthogonal", "separated", "perturbed_orthogonal", "simplex")

# log(DBL_MAX) is ~709.78; stay clear of it
_LOG_OVERFLOW = 700.0
EIG_SLACK = 1e-9


def as_design(X) -> np.ndarray:
    """Validate a design matrix and return it as a 2-d float array."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise InvalidInputError(f"design must be n x p with n, p >= 1, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        bad = np.argwhere(~np.isfinite(X))[0]
        raise InvalidInputError(f"design has a non-finite value at row {bad[0]}, column {bad[1]}")
    return X


@dataclass(frozen=True)
class KernelSpec:
    family: str
    theta: float
    scale_normalization: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidInputError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        if not (self.theta > 0 and math.isfinite(self.theta)):
            raise InvalidInputError(f"theta must be positive, got {self.theta}")
        if not (self.scale_normalization > 0 and math.isfinite(self.scale_normalization)):
            raise InvalidInputError(
                f"scale_normalization must be positive, got {self.scale_normalization}"
            )

    @classmethod
    def normalized_polynomial(cls, theta: float, p: int) -> "KernelSpec":
        """Polynomial kernel divided by ``p**theta``."""
        return cls(POLYNOMIAL, theta, float(p) ** theta)


@dataclass
class KernelMatrix:
    entries: np.ndarray
    spec: KernelSpec

    @property
    def n(self) -> int:
        return self.entries.shape[0]


@dataclass
class SpectralCertificate:
    lambda_min: float
    lambda_max: float
    c1: float
    c2: float
    satisfied: bool

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "SpectralCertificate":
        return cls(float(d["lambda_min"]), float(d["lambda_max"]),
                   float(d["c1"]), float(d["c2"]), bool(d["satisfied"]))


def _symmetric_gram(X: np.ndarray) -> np.ndarray:
    G = X @ X.T
    # mirror the upper triangle so G is symmetric bit-for-bit
    return np.triu(G) + np.triu(G, 1).T


def kernel_value(x, y, spec: KernelSpec) -> float:
    """Scalar kernel evaluation, mostly useful as a reference."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if spec.family == GAUSSIAN:
        value = math.exp(-float(np.sum((x - y) ** 2)) / spec.theta)
    else:
        value = (float(np.dot(x, y)) + 1.0) ** spec.theta
    return value / spec.scale_normalization


def build_kernel(X, spec: KernelSpec) -> KernelMatrix:
    """Build the n x n kernel matrix of the rows of ``X``.

    The diagonal is evaluated with the same formula as every other entry.
    Raises ``KernelConstructionError`` naming the first offending pair if
    an entry would overflow or is undefined (negative base raised to a
    non-integer power).
    """
    X = as_design(X)
    if spec.family == GAUSSIAN:
        D = squareform(pdist(X, "sqeuclidean"))
        K = np.exp(-D / spec.theta)
    else:
        base = _symmetric_gram(X) + 1.0
        integer_power = float(spec.theta).is_integer()
        if not integer_power and np.any(base < 0):
            i, j = np.argwhere(base < 0)[0]
            raise KernelConstructionError(
                f"pair ({i}, {j}): x_i.x_j + 1 = {base[i, j]!r} < 0 cannot be raised "
                f"to non-integer theta={spec.theta}"
            )
        with np.errstate(divide="ignore"):
            log_mag = spec.theta * np.log(np.abs(base))
        if np.any(log_mag > _LOG_OVERFLOW):
            i, j = np.argwhere(log_mag > _LOG_OVERFLOW)[0]
            raise KernelConstructionError(
                f"pair ({i}, {j}): (x_i.x_j + 1)^theta overflows "
                f"(theta*log|base| = {log_mag[i, j]:.1f})"
            )
        if integer_power:
            K = base ** int(spec.theta)
        else:
            K = base ** spec.theta
    if spec.scale_normalization != 1.0:
        K = K / spec.scale_normalization
    if not np.all(np.isfinite(K)):
        i, j = np.argwhere(~np.isfinite(K))[0]
        raise KernelConstructionError(f"pair ({i}, {j}): kernel entry is not finite")
    return KernelMatrix(K, spec)


def spectral_certificate(K, c1: float, c2: float, slack: float = EIG_SLACK) -> SpectralCertificate:
    """Check ``c1 I <= K <= c2 I`` with a dense symmetric eigensolve."""
    M = K.entries if isinstance(K, KernelMatrix) else np.asarray(K, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidInputError(f"kernel must be square, got shape {M.shape}")
    if not np.array_equal(M, M.T):
        raise InvalidInputError("kernel matrix is not symmetric")
    try:
        w = np.linalg.eigvalsh(M)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - symmetric input
        raise NumericalError("symmetric eigensolver did not converge", {"n": M.shape[0]}) from exc
    lo, hi = float(w[0]), float(w[-1])
    ok = (c1 - slack <= lo) and (hi <= c2 + slack)
    return SpectralCertificate(lo, hi, float(c1), float(c2), bool(ok))


def near_identity_band(n: int) -> tuple[float, float]:
    """The ``(1 - 1/n, 1 + 1/n)`` eigenvalue band that certifies a kernel is close to the identity."""
    return 1.0 - 1.0 / n, 1.0 + 1.0 / n


def check_gaussian_separation(X, theta: float) -> dict:
    """Compare the smallest pairwise squared distance with ``2 theta log n``."""
    X = as_design(X)
    n = X.shape[0]
    if n < 2:
        raise InvalidInputError("separation check needs at least two rows")
    min_sq = float(np.min(pdist(X, "sqeuclidean")))
    threshold = 2.0 * theta * math.log(n)
    return {"min_sq_distance": min_sq, "threshold": threshold, "satisfied": bool(min_sq >= threshold)}


def check_near_orthogonality(X, a_L: float, a_U: float) -> dict:
    """Near-orthogonality conditions for the normalized polynomial kernel.

    ``|(x_i.x_i + 1)/p - 1| <= 1/h`` with ``h = 2 a_U n`` and
    ``|(x_i.x_j + 1)/p| <= 1/k`` with ``k = n**4``.
    """
    if not a_L > 0.5:
        raise InvalidInputError(f"a_L must exceed 1/2, got {a_L}")
    if a_U < a_L:
        raise InvalidInputError(f"need a_L <= a_U, got ({a_L}, {a_U})")
    X = as_design(X)
    n, p = X.shape
    S = (_symmetric_gram(X) + 1.0) / p
    diag_dev = float(np.max(np.abs(np.diag(S) - 1.0)))
    off = S[~np.eye(n, dtype=bool)]
    max_off = float(np.max(np.abs(off))) if off.size else 0.0
    h = 2.0 * a_U * n
    k = float(n) ** 4
    return {
        "max_diag_dev": diag_dev,
        "max_offdiag": max_off,
        "h": h,
        "k": k,
        "satisfied": bool(diag_dev <= 1.0 / h and max_off <= 1.0 / k),
    }


def _orthonormal_frame(n: int, p: int, rng: np.random.Generator) -> np.ndarray:
    """p x n matrix with orthonormal columns."""
    Q, R = np.linalg.qr(rng.standard_normal((p, n)))
    # fix column signs so the frame is a deterministic function of the draw
    return Q * np.sign(np.diag(R))


def simplex_dimension(n: int) -> int:
    """Smallest p accepted by the ``simplex`` design for n rows."""
    a = (n + 1) / 2.0
    return max(2 * n, math.ceil(a * a))


def generate_design(
    n: int,
    p: int | None,
    kind: str,
    rng: np.random.Generator | None = None,
    *,
    theta: float = 1.0,
    a_U: float = 2.0,
) -> np.ndarray:
    """Generate an n x p design matrix of the requested kind.

    exact_orthogonal
        ``sqrt(p)`` times an orthonormal n-frame, so ``X X^T = p I``.
    separated
        Gaussian rows rescaled so the smallest pairwise squared distance is
        1% above ``2 theta log n``.
    perturbed_orthogonal
        Rows with Gram matrix ``p I - J + E`` where ``E`` is a small random
        perturbation inside the near-orthogonality bounds for ``a_U``.
        Needs ``p > n``.
    simplex
        Deterministic rows with ``x_i.x_j = -1`` exactly and
        ``||x_i||^2 = p - 1`` up to rounding; the polynomial kernel built on
        it is exactly diagonal for any theta. ``p=None`` picks the smallest
        admissible dimension.
    """
    if kind not in DESIGN_KINDS:
        raise InvalidInputError(f"unknown design kind {kind!r}; expected one of {DESIGN_KINDS}")
    if n < 1:
        raise InvalidInputError(f"n must be >= 1, got {n}")
    if rng is None:
        rng = np.random.default_rng()

    if kind == "simplex":
        if p is None:
            p = simplex_dimension(n)
        a = -(n + 1) / 2.0
        if p < 2 * n or p < a * a:
            raise InvalidInputError(f"simplex design with n={n} needs p >= {simplex_dimension(n)}, got {p}")
        X = np.zeros((n, p))
        X[:, :n] = 1.0
        X[np.arange(n), np.arange(n)] = a + 1.0
        X[np.arange(n), n + np.arange(n)] = math.sqrt(p - a * a)
        return X

    if p is None:
        raise InvalidInputError(f"design kind {kind!r} needs an explicit p")

    if kind == "exact_orthogonal":
        if p < n:
            raise InvalidInputError(f"exact_orthogonal needs p >= n, got n={n}, p={p}")
        return math.sqrt(p) * _orthonormal_frame(n, p, rng).T

    if kind == "separated":
        if n < 2:
            raise InvalidInputError("separated design needs n >= 2")
        X = rng.standard_normal((n, p))
        min_sq = float(np.min(pdist(X, "sqeuclidean")))
        if min_sq <= 0:
            raise NumericalError("degenerate draw: duplicate rows", {"n": n, "p": p})
        target = 1.01 * 2.0 * theta * math.log(n)
        return X * math.sqrt(target / min_sq)

    # perturbed_orthogonal
    if p <= n:
        raise InvalidInputError(f"perturbed_orthogonal needs p > n, got n={n}, p={p}")
    h = 2.0 * a_U * n
    k = float(n) ** 4
    E = np.triu(rng.uniform(0.1, 0.5, size=(n, n)) * p / k, 1)
    E = E + E.T
    G = p * np.eye(n) - np.ones((n, n)) + E
    G[np.diag_indices(n)] += rng.uniform(-0.5, 0.5, size=n) * p / h
    w, V = np.linalg.eigh(G)
    if w[0] <= 0:
        raise NumericalError("perturbed Gram matrix is not positive definite", {"n": n, "p": p})
    S = (V * np.sqrt(w)) @ V.T
    return S @ _orthonormal_frame(n, p, rng).T


def empirical_cutoff(n_grid: Iterable[int], passes: Callable[[int], bool]) -> dict:
    """Smallest grid n from which every larger grid point passes.

    Returns ``{"per_n": {n: bool}, "cutoff": n or None}``.
    """
    grid = sorted(n_grid)
    per_n = {n: bool(passes(n)) for n in grid}
    cutoff = None
    for n in reversed(grid):
        if not per_n[n]:
            break
        cutoff = n
    return {"per_n": per_n, "cutoff": cutoff}


# ----------------------------------------------------------------------------
# serialization
# ----------------------------------------------------------------------------


def write_matrix_csv(path, M, p: int | None = None) -> None:
    """Write a row-major CSV with a ``# n=<n> p=<p>`` header line."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    n, cols = M.shape
    lines = [f"# n={n} p={cols if p is None else p}"]
    lines.extend(",".join(repr(float(v)) for v in row) for row in M)
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrix_csv(path) -> np.ndarray:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("#"):
        raise InvalidInputError(f"{path}: missing '# n=<n> p=<p>' header")
    header = dict(tok.split("=") for tok in text[0][1:].split())
    rows = [[float(v) for v in line.split(",")] for line in text[1:] if line.strip()]
    M = np.array(rows, dtype=float)
    n, p = int(header["n"]), int(header["p"])
    if M.shape != (n, p):
        raise InvalidInputError(f"{path}: header says {n}x{p}, body is {M.shape}")
    return M
