"""User-service QoS matrices: loading, statistics, splits, and synthesis.

A QoS matrix holds the observed response-time/throughput measurements of
users invoking Web services. Storage is a dense float64 array with NaN
marking unobserved cells; observed values are strictly positive. Values
that are nonpositive or equal to the missing-value sentinel (WS-DREAM
uses -1 for failed invocations) are dropped at load time.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np


class LoadError(ValueError):
    """Raised when a data file cannot be parsed."""


class QosMatrix:
    """Immutable sparse matrix of observed QoS values.

    Backed by a dense (n_users, n_services) float64 array with NaN for
    missing cells. All stored values are finite and strictly positive.
    """

    __slots__ = ("_values",)

    def __init__(self, values: np.ndarray):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("QoS matrix must be 2-dimensional")
        observed = ~np.isnan(values)
        stored = values[observed]
        if np.any(~np.isfinite(stored)) or np.any(stored <= 0):
            raise ValueError("observed QoS values must be finite and > 0")
        values = values.copy()
        values.setflags(write=False)
        self._values = values

    @property
    def values(self) -> np.ndarray:
        """Read-only (n_users, n_services) array, NaN at missing cells."""
        return self._values

    @property
    def mask(self) -> np.ndarray:
        """Boolean array, True where a value is observed."""
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

    def entry_indices(self) -> tuple[np.ndarray, np.ndarray]:
        """Observed (user, service) index arrays in row-major order."""
        return np.nonzero(self.mask)

    def __eq__(self, other) -> bool:
        if not isinstance(other, QosMatrix):
            return NotImplemented
        if self.shape != other.shape:
            return False
        a, b = self._values, other._values
        return bool(np.all((np.isnan(a) & np.isnan(b)) | (a == b)))

    def __hash__(self):
        return hash((self.shape, self.n_entries))

    def __repr__(self):
        return f"QosMatrix({self.n_users}x{self.n_services}, {self.n_entries} entries)"


@dataclass(frozen=True)
class DatasetStats:
    """Summary statistics over the observed entries of a QoS matrix."""

    value_range: tuple[float, float]
    mean: float
    std: float
    n_users: int
    n_services: int
    n_entries: int


@dataclass(frozen=True)
class SplitConfig:
    """Density-based train/test split parameters."""

    density: float
    seed: int

    def __post_init__(self):
        if not 0.0 < self.density <= 1.0:
            raise ValueError(f"density must be in (0, 1], got {self.density}")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")


def _filter_missing(values: np.ndarray, missing_sentinel: float) -> np.ndarray:
    """Replace sentinel and nonpositive entries with NaN."""
    out = values.astype(np.float64, copy=True)
    drop = (out <= 0) | (out == missing_sentinel) | np.isnan(out)
    out[drop] = np.nan
    return out


def load_dense_matrix(path, missing_sentinel: float = -1.0) -> QosMatrix:
    """Load a whitespace-separated dense matrix, one row per user.

    Cells that are nonpositive or equal to `missing_sentinel` become
    missing. Raises LoadError (naming the offending line) on ragged rows,
    non-numeric tokens, or unreadable files.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise LoadError(f"cannot read {path}: {exc}") from exc

    rows = []
    width = None
    for lineno, line in enumerate(lines, start=1):
        tokens = line.split()
        if not tokens:
            continue
        try:
            row = np.asarray(tokens, dtype=np.float64)
        except ValueError as exc:
            raise LoadError(f"{path}: line {lineno}: non-numeric token") from exc
        if width is None:
            width = row.size
        elif row.size != width:
            raise LoadError(
                f"{path}: line {lineno}: expected {width} columns, got {row.size}"
            )
        rows.append(row)
    if not rows:
        raise LoadError(f"{path}: no data rows")
    return QosMatrix(_filter_missing(np.vstack(rows), missing_sentinel))


def load_triples(path, missing_sentinel: float = -1.0) -> QosMatrix:
    """Load "user service value" lines; '#' starts a comment.

    Dimensions default to 1 + the max index per axis; a directive comment
    "# shape N M" overrides them. Duplicate (u, s) pairs with conflicting
    values and negative indices are errors.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise LoadError(f"cannot read {path}: {exc}") from exc

    shape_override = None
    triples: dict[tuple[int, int], float] = {}
    max_u = max_s = -1
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if stripped.startswith("#"):
            fields = stripped[1:].split()
            if len(fields) == 3 and fields[0] == "shape":
                try:
                    shape_override = (int(fields[1]), int(fields[2]))
                except ValueError as exc:
                    raise LoadError(f"{path}: line {lineno}: bad shape directive") from exc
            continue
        if not stripped:
            continue
        fields = stripped.split()
        if len(fields) != 3:
            raise LoadError(f"{path}: line {lineno}: expected 'u s value'")
        try:
            u, s, value = int(fields[0]), int(fields[1]), float(fields[2])
        except ValueError as exc:
            raise LoadError(f"{path}: line {lineno}: non-numeric token") from exc
        if u < 0 or s < 0:
            raise LoadError(f"{path}: line {lineno}: negative index")
        if (u, s) in triples and triples[(u, s)] != value:
            raise LoadError(f"{path}: line {lineno}: conflicting duplicate for ({u}, {s})")
        triples[(u, s)] = value
        max_u, max_s = max(max_u, u), max(max_s, s)

    if shape_override is not None:
        n, m = shape_override
        if max_u >= n or max_s >= m:
            raise LoadError(f"{path}: index exceeds declared shape {n}x{m}")
    else:
        n, m = max_u + 1, max_s + 1
    if n <= 0 or m <= 0:
        raise LoadError(f"{path}: no data rows")
    values = np.full((n, m), np.nan)
    for (u, s), value in triples.items():
        values[u, s] = value
    return QosMatrix(_filter_missing(values, missing_sentinel))


def save_triples(matrix, path) -> None:
    """Write observed entries as "u s value" lines plus a shape directive.

    Accepts anything exposing `.values` (QosMatrix or ObfuscatedMatrix);
    per-user normalization secrets are never written.
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


def stats(m: QosMatrix) -> DatasetStats:
    """Range, mean, and population std over the observed entries only."""
    observed = m.values[m.mask]
    if observed.size == 0:
        raise ValueError("cannot compute statistics of an empty matrix")
    return DatasetStats(
        value_range=(float(observed.min()), float(observed.max())),
        mean=float(observed.mean()),
        std=float(observed.std()),
        n_users=m.n_users,
        n_services=m.n_services,
        n_entries=int(observed.size),
    )


def split_by_density(m: QosMatrix, cfg: SplitConfig) -> tuple[QosMatrix, QosMatrix]:
    """Partition observed entries into train/test by global uniform sampling.

    The train set keeps round-half-up(density * n_entries) entries drawn
    uniformly over all observed cells; the rest become the test set. The
    split is deterministic given cfg.seed.
    """
    uu, ss = m.entry_indices()
    n_entries = uu.size
    n_train = int(np.floor(cfg.density * n_entries + 0.5))
    if n_train == 0:
        raise ValueError(
            f"density {cfg.density} keeps zero of {n_entries} entries"
        )
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(n_entries)
    train_idx = order[:n_train]
    test_idx = order[n_train:]

    train = np.full(m.shape, np.nan)
    test = np.full(m.shape, np.nan)
    train[uu[train_idx], ss[train_idx]] = m.values[uu[train_idx], ss[train_idx]]
    test[uu[test_idx], ss[test_idx]] = m.values[uu[test_idx], ss[test_idx]]
    return QosMatrix(train), QosMatrix(test)


def synth_lowrank(
    n_users: int,
    n_services: int,
    rank: int,
    bias_scale: float = 1.0,
    density: float = 1.0,
    seed: int = 0,
):
    """Generate a synthetic bias-plus-low-rank QoS matrix with ground truth.

    Entries are b_s + U_u . S_s, shifted into strictly positive territory
    (the shift is absorbed into the returned biases, so the returned
    factors reproduce the generated values exactly). Returns the matrix
    and the ground-truth FactorModel for oracle tests.
    """
    from .factorization import FactorModel

    if rank < 1:
        raise ValueError("rank must be >= 1")
    if not 0.0 < density <= 1.0:
        raise ValueError("density must be in (0, 1]")
    rng = np.random.default_rng(seed)
    factors_u = rng.standard_normal((rank, n_users)) / np.sqrt(rank)
    factors_s = rng.standard_normal((rank, n_services)) / np.sqrt(rank)
    biases = bias_scale * rng.standard_normal(n_services)
    interactions = factors_u.T @ factors_s
    # Shift into positive territory via the biases, then rebuild the dense
    # matrix so value == b_s + U_u.S_s holds exactly for the returned model.
    margin = 0.1
    low = (biases[None, :] + interactions).min()
    if low < margin:
        biases = biases + (margin - low)
    values = biases[None, :] + interactions
    if density < 1.0:
        keep = rng.random((n_users, n_services)) < density
        values[~keep] = np.nan
    return QosMatrix(values), FactorModel(U=factors_u, S=factors_s, b=biases)
