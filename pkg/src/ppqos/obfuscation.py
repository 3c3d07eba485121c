"""User-side data obfuscation: z-score normalization plus random noise.

Each user normalizes their own row of observed QoS values to zero mean
and unit variance, adds i.i.d. noise of scale alpha, and submits only the
result. The (mean, std) pair stays with the user as a secret; it is what
later turns a normalized-space prediction back into a real QoS value.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .dataset import QosMatrix

DISTRIBUTIONS = ("uniform", "gaussian")

# Below this, a row's spread is treated as zero and its normalized values
# are all 0 (they recover to the row mean).
DEGENERATE_STD = 1e-12


@dataclass(frozen=True)
class UserSecret:
    """Per-user mean and population std, kept at the user side."""

    mean: float
    std: float

    def __post_init__(self):
        if self.std < 0:
            raise ValueError("std must be >= 0")


@dataclass(frozen=True)
class ObfuscationConfig:
    """Noise scale, noise distribution, and RNG seed.

    alpha is the half-range of uniform noise or the standard deviation of
    gaussian noise; it applies in normalized (dimensionless) space.
    """

    alpha: float
    distribution: str = "uniform"
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(
                f"distribution must be one of {DISTRIBUTIONS}, got {self.distribution!r}"
            )
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")


class ObfuscatedMatrix:
    """Normalized-and-noised QoS matrix; same support as its source.

    Values live in normalized space and may legitimately be negative or
    zero, unlike QosMatrix.
    """

    __slots__ = ("_values",)

    def __init__(self, values: np.ndarray):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("obfuscated matrix must be 2-dimensional")
        if np.any(np.isinf(values)):
            raise ValueError("obfuscated values must be finite")
        values = values.copy()
        values.setflags(write=False)
        self._values = values

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def mask(self) -> np.ndarray:
        return ~np.isnan(self._values)

    @property
    def n_users(self) -> int:
        return self._values.shape[0]

    @property
    def n_services(self) -> int:
        return self._values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self._values.shape

    @property
    def n_entries(self) -> int:
        return int(self.mask.sum())

    def __repr__(self):
        return f"ObfuscatedMatrix({self.n_users}x{self.n_services}, {self.n_entries} entries)"


def user_rng(seed: int, user: int) -> np.random.Generator:
    """Per-user noise stream, derived from (seed, user index).

    Keying the stream by user keeps rows independent and reproducible no
    matter in which order they are obfuscated.
    """
    return np.random.default_rng([seed, user])


def normalize_row(row) -> tuple[np.ndarray, UserSecret]:
    """Z-score normalize one user's observed values.

    Mean and *population* std (divisor = number of observations) are
    computed over the row; each value maps to (value - mean) / std. A row
    with (near-)zero spread normalizes to all zeros with secret std 0.
    """
    row = np.asarray(row, dtype=np.float64)
    if row.ndim != 1 or row.size == 0:
        raise ValueError("row must be a nonempty 1-D array of observed values")
    mean = float(row.mean())
    std = float(row.std())
    if std < DEGENERATE_STD:
        return np.zeros_like(row), UserSecret(mean=mean, std=0.0)
    return (row - mean) / std, UserSecret(mean=mean, std=std)


def perturb_row(normalized, cfg: ObfuscationConfig, rng: np.random.Generator) -> np.ndarray:
    """Add i.i.d. noise of scale cfg.alpha to a normalized row.

    Uniform noise is drawn from [-alpha, alpha], gaussian noise from
    N(0, alpha^2). alpha = 0 leaves the row exactly unchanged.
    """
    normalized = np.asarray(normalized, dtype=np.float64)
    if cfg.distribution == "uniform":
        noise = rng.uniform(-cfg.alpha, cfg.alpha, size=normalized.shape)
    else:
        noise = rng.normal(0.0, cfg.alpha, size=normalized.shape)
    return normalized + noise


def obfuscate_matrix(
    train: QosMatrix, cfg: ObfuscationConfig
) -> tuple[ObfuscatedMatrix, list[UserSecret]]:
    """Obfuscate every user row independently.

    Each row is normalized then perturbed with its own RNG stream keyed by
    (cfg.seed, user index). Users with no observed training values get the
    neutral secret (0, 0); they contribute nothing and their predictions
    recover to 0.
    """
    if train.n_entries == 0:
        raise ValueError("cannot obfuscate an empty matrix")
    values = train.values
    out = np.full(train.shape, np.nan)
    secrets: list[UserSecret] = []
    for u in range(train.n_users):
        observed = ~np.isnan(values[u])
        if not observed.any():
            secrets.append(UserSecret(mean=0.0, std=0.0))
            continue
        normalized, secret = normalize_row(values[u][observed])
        out[u, observed] = perturb_row(normalized, cfg, user_rng(cfg.seed, u))
        secrets.append(secret)
    return ObfuscatedMatrix(out), secrets


def recover(prediction, secret: UserSecret):
    """Map a normalized-space prediction back to QoS units.

    Returns mean + std * prediction, clamped below at 0 since response
    time and throughput cannot be negative. Accepts scalars or arrays.
    """
    raw = secret.mean + secret.std * np.asarray(prediction, dtype=np.float64)
    clamped = np.maximum(raw, 0.0)
    return float(clamped) if clamped.ndim == 0 else clamped


def recover_matrix(predictions: np.ndarray, secrets: list[UserSecret]) -> np.ndarray:
    """Row-wise recovery of a (n_users, n_services) prediction array."""
    means = np.array([s.mean for s in secrets])
    stds = np.array([s.std for s in secrets])
    raw = means[:, None] + stds[:, None] * np.asarray(predictions, dtype=np.float64)
    return np.maximum(raw, 0.0)


def export_obfuscated(matrix: ObfuscatedMatrix, path) -> None:
    """Write an obfuscated matrix as "u s value" triples.

    Only the noised values leave this function; secrets are never
    serialized alongside them.
    """
    values = matrix.values
    n, m = values.shape
    uu, ss = np.nonzero(~np.isnan(values))
    buf = io.StringIO()
    buf.write(f"# shape {n} {m}\n")
    for u, s in zip(uu.tolist(), ss.tolist()):
        buf.write(f"{u} {s} {float(values[u, s])!r}\n")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(buf.getvalue())


def scalar_product_error(n: int, alpha: float, seed: int = 0) -> float:
    """Relative error of the noisy inner product on zero-mean vectors.

    Draws zero-mean vectors a, b and uniform noises eps, delta in
    [-alpha, alpha], and returns |(a+eps).(b+delta) - a.b| / n. The
    statistic shrinks as n grows, which is what makes similarity
    computation on obfuscated data workable.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(n)
    b = rng.standard_normal(n)
    a -= a.mean()
    b -= b.mean()
    eps = rng.uniform(-alpha, alpha, n)
    delta = rng.uniform(-alpha, alpha, n)
    return float(abs((a + eps) @ (b + delta) - a @ b) / n)
