"""Neighborhood-based QoS predictors.

Two flavors share the same machinery:

* P-UIPCC works on an obfuscated matrix. User similarity is the scaled
  inner product of noised rows (an approximation of Pearson correlation
  that needs no per-user means), service similarity is cosine over
  co-observed users, and predictions are weighted averages in normalized
  space.
* UIPCC is the plain counterpart on raw data: Pearson correlation on both
  axes and deviation-from-mean predictions (user/service mean plus
  weighted centered residuals), with a user mean -> service mean ->
  global mean fallback chain.

Scalar operations are the reference implementations; the predict_all_*
functions run the same math over every cell through vectorized tables and
a compiled top-k kernel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .dataset import QosMatrix
from .obfuscation import ObfuscatedMatrix


@dataclass(frozen=True)
class NeighborConfig:
    """Top-k neighbor count and user/service combination weight."""

    k: int = 10
    lam: float = 0.5

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must be in [0, 1]")


@dataclass(frozen=True)
class SimilarityTable:
    """Pairwise similarities over one axis.

    values is square with NaN marking undefined pairs; support counts the
    co-observed cells behind each pair. Tables are exactly symmetric,
    clamped to [-1, 1], and have diagonal 1 wherever the entity has any
    observation.
    """

    axis: str  # "users" or "services"
    values: np.ndarray
    support: np.ndarray


def _clamp(sim: float) -> float:
    return float(min(1.0, max(-1.0, sim)))


def pcc_user_similarity(R: QosMatrix, u: int, v: int):
    """Pearson correlation between two users over co-invoked services.

    Values are centered by each user's mean over their *full* observed
    row. Returns None when fewer than 2 services are shared or either
    centered norm over the overlap is zero.
    """
    vals, mask = R.values, R.mask
    overlap = mask[u] & mask[v]
    if overlap.sum() < 2:
        return None
    mean_u = vals[u][mask[u]].mean()
    mean_v = vals[v][mask[v]].mean()
    x = vals[u, overlap] - mean_u
    y = vals[v, overlap] - mean_v
    norm_x = np.sqrt((x * x).sum())
    norm_y = np.sqrt((y * y).sum())
    if norm_x == 0.0 or norm_y == 0.0:
        return None
    return _clamp((x @ y) / (norm_x * norm_y))


def approx_user_similarity(rp: ObfuscatedMatrix, u: int, v: int):
    """Similarity of two users from obfuscated rows alone.

    Inner product over the overlap divided by sqrt(|I_u| * |I_v|), where
    I_u is the user's full support. Approximates Pearson correlation
    because rows are normalized before submission; noise can push it
    outside [-1, 1], so the result is clamped. None on empty overlap.
    """
    vals, mask = rp.values, rp.mask
    overlap = mask[u] & mask[v]
    if not overlap.any():
        return None
    num = float(vals[u, overlap] @ vals[v, overlap])
    den = float(np.sqrt(mask[u].sum() * mask[v].sum()))
    return _clamp(num / den)


def cosine_service_similarity(rp: ObfuscatedMatrix, s: int, g: int):
    """Cosine similarity of two service columns over co-observing users."""
    vals, mask = rp.values, rp.mask
    overlap = mask[:, s] & mask[:, g]
    if not overlap.any():
        return None
    x = vals[overlap, s]
    y = vals[overlap, g]
    norm_x = np.sqrt((x * x).sum())
    norm_y = np.sqrt((y * y).sum())
    if norm_x == 0.0 or norm_y == 0.0:
        return None
    return _clamp((x @ y) / (norm_x * norm_y))


def top_k_neighbors(sims, k: int, candidates=None) -> list[int]:
    """Indices of the up-to-k most similar qualifying neighbors.

    sims is a 1-D array with NaN for undefined pairs. Only strictly
    positive similarities qualify; candidates (a boolean support filter,
    e.g. "observed the target service") further restricts the pool. Ties
    are broken by ascending index.
    """
    sims = np.asarray(sims, dtype=np.float64)
    if k < 1:
        raise ValueError("k must be >= 1")
    with np.errstate(invalid="ignore"):
        valid = sims > 0.0  # NaN compares False
    if candidates is not None:
        valid &= np.asarray(candidates, dtype=bool)
    idx = np.nonzero(valid)[0]
    ranked = sorted(idx.tolist(), key=lambda i: (-sims[i], i))
    return ranked[:k]


def predict_user_based(rp, u: int, s: int, neighbors, sims):
    """Eq.-style weighted average of neighbor values for service s.

    neighbors must already be filtered to users that observed s (see
    top_k_neighbors); sims is the similarity vector for user u. Returns
    None when there are no neighbors or the weights sum to zero.
    """
    if not len(neighbors):
        return None
    neighbors = list(neighbors)
    sims = np.asarray(sims, dtype=np.float64)
    weights = sims[neighbors]
    values = rp.values[neighbors, s]
    if np.any(np.isnan(values)):
        raise ValueError("neighbor without an observation for the target service")
    den = weights.sum()
    if den == 0.0:
        return None
    return float((weights @ values) / den)


def predict_service_based(rp, u: int, s: int, neighbors, sims):
    """Mirror of predict_user_based using similar services' values."""
    if not len(neighbors):
        return None
    neighbors = list(neighbors)
    sims = np.asarray(sims, dtype=np.float64)
    weights = sims[neighbors]
    values = rp.values[u, neighbors]
    if np.any(np.isnan(values)):
        raise ValueError("neighbor service not observed by the target user")
    den = weights.sum()
    if den == 0.0:
        return None
    return float((weights @ values) / den)


def combine(user_pred, service_pred, lam: float) -> float:
    """Convex combination of the two sides; total via fallbacks.

    Both defined: lam * user + (1 - lam) * service. One defined: that
    one. Neither: 0, which recovery later maps to the user's mean.
    """
    if user_pred is not None and service_pred is not None:
        return lam * user_pred + (1.0 - lam) * service_pred
    if user_pred is not None:
        return float(user_pred)
    if service_pred is not None:
        return float(service_pred)
    return 0.0


# ---------------------------------------------------------------------------
# Similarity tables (vectorized)
# ---------------------------------------------------------------------------

def _mirror_upper(a: np.ndarray) -> np.ndarray:
    """Copy the upper triangle onto the lower one for exact symmetry."""
    upper = np.triu(np.ones(a.shape, dtype=bool))
    return np.where(upper, a, a.T)


def _overlap_cosine(
    X: np.ndarray, M: np.ndarray, min_overlap: int, block: int = 1024
) -> tuple[np.ndarray, np.ndarray]:
    """Cosine similarity between all column pairs of X over co-observed rows.

    X holds values with 0 at missing cells, M the 0/1 mask. Computed in
    column blocks to bound temporary memory on wide matrices. Returns
    (sim, overlap) where sim is NaN for pairs with overlap < min_overlap
    or a zero norm over the overlap.
    """
    n_cols = X.shape[1]
    Xsq = X * X
    sim = np.empty((n_cols, n_cols))
    overlap = np.empty((n_cols, n_cols), dtype=np.int32)
    for start in range(0, n_cols, block):
        stop = min(start + block, n_cols)
        num = X[:, start:stop].T @ X
        sq_a = Xsq[:, start:stop].T @ M  # norms of block columns over each partner's support
        sq_b = M[:, start:stop].T @ Xsq
        ov = (M[:, start:stop].T @ M).round().astype(np.int32)
        with np.errstate(invalid="ignore", divide="ignore"):
            blk = num / (np.sqrt(sq_a) * np.sqrt(sq_b))
        blk[(ov < min_overlap) | (sq_a <= 0.0) | (sq_b <= 0.0)] = np.nan
        sim[start:stop] = blk
        overlap[start:stop] = ov
    np.clip(sim, -1.0, 1.0, out=sim)
    return sim, overlap


def _pin_diagonal(sim: np.ndarray, counts: np.ndarray) -> None:
    """Self-similarity is 1 wherever the entity has any observation."""
    d = np.where(counts >= 1, 1.0, np.nan)
    np.fill_diagonal(sim, d)


def approx_user_similarity_table(rp: ObfuscatedMatrix) -> SimilarityTable:
    """All-pairs user similarity on obfuscated data (scaled inner product)."""
    V = np.nan_to_num(rp.values)
    M = rp.mask.astype(np.float64)
    counts = rp.mask.sum(axis=1)
    num = V @ V.T
    overlap = (M @ M.T).round().astype(np.int32)
    with np.errstate(invalid="ignore", divide="ignore"):
        sim = num / np.sqrt(np.outer(counts, counts))
    np.clip(sim, -1.0, 1.0, out=sim)
    sim[overlap == 0] = np.nan
    _pin_diagonal(sim, counts)
    return SimilarityTable("users", _mirror_upper(sim), overlap)


def pcc_user_similarity_table(R: QosMatrix) -> SimilarityTable:
    """All-pairs Pearson user similarity on raw data (full-row means)."""
    mask = R.mask
    V = np.nan_to_num(R.values)
    counts = mask.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(counts > 0, V.sum(axis=1) / counts, 0.0)
    Y = (V - means[:, None]) * mask
    sim, overlap = _overlap_cosine(Y.T, mask.T.astype(np.float64), min_overlap=2)
    _pin_diagonal(sim, counts)
    return SimilarityTable("users", _mirror_upper(sim), overlap)


def cosine_service_similarity_table(rp: ObfuscatedMatrix) -> SimilarityTable:
    """All-pairs cosine service similarity on obfuscated columns."""
    V = np.nan_to_num(rp.values)
    M = rp.mask.astype(np.float64)
    counts = rp.mask.sum(axis=0)
    sim, overlap = _overlap_cosine(V, M, min_overlap=1)
    _pin_diagonal(sim, counts)
    return SimilarityTable("services", _mirror_upper(sim), overlap)


def pcc_service_similarity_table(R: QosMatrix) -> SimilarityTable:
    """All-pairs Pearson service similarity on raw data (full-column means)."""
    mask = R.mask
    V = np.nan_to_num(R.values)
    counts = mask.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(counts > 0, V.sum(axis=0) / counts, 0.0)
    Y = (V - means[None, :]) * mask
    sim, overlap = _overlap_cosine(Y, mask.astype(np.float64), min_overlap=2)
    _pin_diagonal(sim, counts)
    return SimilarityTable("services", _mirror_upper(sim), overlap)


# ---------------------------------------------------------------------------
# Bulk prediction
# ---------------------------------------------------------------------------

@njit(parallel=True, cache=True)
def _topk_weighted_sums(sim, vals, obs, k):  # pragma: no cover - compiled
    """Weighted neighbor averages for every (target, column) pair.

    sim: (T, C) similarities, NaN undefined. vals: (C, M) with 0 at
    missing. obs: (C, M) observation mask. For each target t, candidates
    are ranked by descending similarity (ties by ascending index,
    self excluded, only sim > 0); each output column takes the weighted
    average of the first k ranked candidates observed in that column.
    NaN where no neighbor qualifies.
    """
    T, C = sim.shape
    M = vals.shape[1]
    out = np.full((T, M), np.nan)
    for t in prange(T):
        keys = np.empty(C)
        for c in range(C):
            s_tc = sim[t, c]
            if c == t or not (s_tc > 0.0):  # NaN fails the comparison
                keys[c] = np.inf
            else:
                keys[c] = -s_tc
        order = np.argsort(keys, kind="mergesort")  # stable: ties by index
        p = 0
        while p < C and keys[order[p]] < np.inf:
            p += 1
        for j in range(M):
            num = 0.0
            den = 0.0
            cnt = 0
            for i in range(p):
                c = order[i]
                if obs[c, j]:
                    w = sim[t, c]
                    num += w * vals[c, j]
                    den += w
                    cnt += 1
                    if cnt == k:
                        break
            if cnt > 0:
                out[t, j] = num / den
    return out


def _combine_arrays(user_pred, service_pred, lam, fallback):
    """Array form of combine() with an explicit fallback for the neither case."""
    u_def = ~np.isnan(user_pred)
    s_def = ~np.isnan(service_pred)
    out = np.where(u_def & s_def, lam * user_pred + (1.0 - lam) * service_pred, np.nan)
    out = np.where(u_def & ~s_def, user_pred, out)
    out = np.where(s_def & ~u_def, service_pred, out)
    return np.where(np.isnan(out), fallback, out)


def predict_all_puipcc(rp: ObfuscatedMatrix, cfg: NeighborConfig) -> np.ndarray:
    """Predict every unobserved cell of an obfuscated matrix.

    Returns a (n_users, n_services) array in normalized space with NaN at
    the observed (training) cells. Cells with no usable neighbors on
    either side fall back to 0, which recovery maps to the user's mean.
    """
    utable = approx_user_similarity_table(rp)
    stable = cosine_service_similarity_table(rp)
    V = np.nan_to_num(rp.values)
    obs = rp.mask
    user_pred = _topk_weighted_sums(utable.values, V, obs, cfg.k)
    service_pred = _topk_weighted_sums(stable.values, V.T, obs.T, cfg.k).T
    out = _combine_arrays(user_pred, service_pred, cfg.lam, 0.0)
    out[obs] = np.nan
    return out


def predict_all_uipcc(R: QosMatrix, cfg: NeighborConfig) -> np.ndarray:
    """Plain UIPCC on raw data: predictions for every unobserved cell.

    Each side predicts mean + weighted average of centered neighbor
    residuals; the sides are blended by cfg.lam. Cells where neither side
    is defined fall back to the user mean, then the service mean, then
    the global mean. Returns raw-space values, NaN at observed cells.
    """
    mask = R.mask
    V = np.nan_to_num(R.values)
    user_counts = mask.sum(axis=1)
    service_counts = mask.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        user_means = np.where(user_counts > 0, V.sum(axis=1) / user_counts, np.nan)
        service_means = np.where(service_counts > 0, V.sum(axis=0) / service_counts, np.nan)
    global_mean = V.sum() / mask.sum()

    utable = pcc_user_similarity_table(R)
    stable = pcc_service_similarity_table(R)

    centered_u = (V - np.nan_to_num(user_means)[:, None]) * mask
    resid_u = _topk_weighted_sums(utable.values, centered_u, mask, cfg.k)
    user_pred = user_means[:, None] + resid_u  # NaN base only when side undefined anyway

    centered_s = (V - np.nan_to_num(service_means)[None, :]) * mask
    resid_s = _topk_weighted_sums(stable.values, centered_s.T, mask.T, cfg.k).T
    service_pred = service_means[None, :] + resid_s

    fallback = np.broadcast_to(user_means[:, None], R.shape)
    fallback = np.where(np.isnan(fallback), service_means[None, :], fallback)
    fallback = np.where(np.isnan(fallback), global_mean, fallback)

    out = _combine_arrays(user_pred, service_pred, cfg.lam, fallback)
    out[mask] = np.nan
    return out
