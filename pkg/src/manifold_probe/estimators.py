"""Pure numerical kernels: centering, exact k-NN, local/global intrinsic
dimensionality, and the log-det information volume.

All estimators treat their input as an unordered point set. ``tle_global`` and
``information_volume`` canonicalize row order internally so that permuting the
input rows cannot change the result (floating-point reductions are otherwise
order-sensitive). ``knn``, ``tle_local`` and ``center`` operate on the rows as
given.

Numbers come in as anything array-like; computation is float64 throughout.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

__all__ = [
    "PointCloud",
    "NeighborList",
    "IdEstimate",
    "center",
    "knn",
    "tle_local",
    "tle_global",
    "information_volume",
    "DEFAULT_K",
]

# A point cloud is just an (m, d) float array; kept as an alias so signatures
# read like the domain language.
PointCloud = np.ndarray

DEFAULT_K = 20

# Budget for one pairwise-distance block, in float64 cells (~128 MB).
_BLOCK_CELLS = 1 << 24


def _as_matrix(data, what: str) -> np.ndarray:
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"{what} must be a 2-d matrix, got shape {x.shape}")
    if x.size == 0:
        raise ValueError(f"{what} must be non-empty")
    if not np.isfinite(x).all():
        raise ValueError(f"non-finite entry in {what}")
    return x


def _canonical_order(x: np.ndarray) -> np.ndarray:
    """Indices sorting rows lexicographically (first column is primary)."""
    return np.lexsort(x.T[::-1])


@dataclass(frozen=True, eq=False)
class NeighborList:
    """Exact k-nearest-neighbor table for one point cloud.

    indices[i] holds the k neighbors of point i ordered by ascending
    Euclidean distance, equal distances broken by lower point index.
    The self index never appears. ``r_k[i]`` is the distance to the
    k-th neighbor.
    """

    indices: np.ndarray
    distances: np.ndarray
    k: int

    @property
    def r_k(self) -> np.ndarray:
        return self.distances[:, -1]


@dataclass(frozen=True, eq=False)
class IdEstimate:
    """Result of a global intrinsic-dimensionality run.

    global_id is the arithmetic mean of the defined per-point estimates.
    local_ids is aligned with the input rows and holds NaN where a point
    produced no estimate (degenerate neighborhood, every pair term skipped,
    or a non-positive raw value). num_skipped_terms counts individual
    pair log-terms dropped by the positivity rule across all valid points.
    """

    global_id: float
    local_ids: np.ndarray
    num_valid_points: int
    num_skipped_terms: int
    k_used: int
    warning: str | None = None


def center(states) -> np.ndarray:
    """Subtract the column-wise mean from every row.

    A matrix whose rows are all identical centers to exactly zero (the
    all-equal case is handled explicitly; a floating-point mean of T equal
    values is not guaranteed to reproduce the value bit-for-bit).
    """
    x = _as_matrix(states, "states")
    if np.all(x == x[0]):
        return np.zeros_like(x)
    return x - x.mean(axis=0, keepdims=True)


def knn(cloud: PointCloud, k: int) -> NeighborList:
    """Exact brute-force Euclidean k-nearest neighbors.

    Args:
        cloud: (m, d) points.
        k: neighbors per point, 1 <= k <= m-1.

    Returns:
        NeighborList with distances sorted ascending per row and distance
        ties broken deterministically toward the lower point index.

    Distances are computed in row blocks so memory stays bounded for large
    clouds (the full m x m matrix is never materialized when m is big).
    """
    pts = _as_matrix(cloud, "cloud")
    m = pts.shape[0]
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    if k >= m:
        raise ValueError(f"k must be at most m-1 (k={k}, m={m})")

    indices = np.empty((m, k), dtype=np.int64)
    distances = np.empty((m, k), dtype=np.float64)
    block = max(1, _BLOCK_CELLS // m)
    for start in range(0, m, block):
        stop = min(start + block, m)
        d = cdist(pts[start:stop], pts)
        d[np.arange(stop - start), np.arange(start, stop)] = np.inf
        # stable sort keeps equal distances in index order: lower index wins
        order = np.argsort(d, axis=1, kind="stable")[:, :k]
        indices[start:stop] = order
        distances[start:stop] = np.take_along_axis(d, order, axis=1)
    return NeighborList(indices=indices, distances=distances, k=k)


def _pair_log_stats(rel: np.ndarray, r: float) -> tuple[float, int, int]:
    """Sum, count and skip count of pair log-ratio terms for one neighborhood.

    rel holds the k neighbors relative to the query point; r is the distance
    to the k-th neighbor. For every ordered neighbor pair (v, w), v != w, two
    ratios are formed: one from v directly and one from v reflected through
    the query. Each ratio is the positive root u of

        (r^2 - |v|^2) u^2 + 2 v.(w - v) u - |w - v|^2 = 0

    evaluated in the cancellation-free form 2|w-v|^2 / (alpha + sqrt(disc)).
    When v sits exactly on the neighborhood shell (|v| = r) the equation
    degenerates and u reduces to |w-v|^2 / (2 v.(w-v)). Ratios that come out
    non-positive or non-finite (shell terms with non-positive denominator,
    coincident pairs) are skipped and counted.
    """
    g = rel @ rel.T
    nrm = np.einsum("ii->i", g).copy()
    lead = np.maximum(r * r - nrm, 0.0)[:, None]
    nv = nrm[:, None]
    nw = nrm[None, :]
    off = ~np.eye(rel.shape[0], dtype=bool)
    n_off = int(off.sum())

    total = 0.0
    count = 0
    skipped = 0
    for sign in (1.0, -1.0):
        alpha = 2.0 * (nv - sign * g)
        vv = nv + nw - 2.0 * sign * g
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            disc = alpha * alpha + 4.0 * vv * lead
            u = 2.0 * vv / (alpha + np.sqrt(disc))
            logs = np.log(u)
        ok = off & np.isfinite(logs)
        total += float(logs[ok].sum())
        n_ok = int(ok.sum())
        count += n_ok
        skipped += n_off - n_ok
    return total, count, skipped


def _point_estimate(pts: np.ndarray, nb: NeighborList, i: int) -> tuple[float | None, int]:
    r = float(nb.distances[i, -1])
    if r <= 0.0:
        return None, 0
    rel = pts[nb.indices[i]] - pts[i]
    total, count, skipped = _pair_log_stats(rel, r)
    if count == 0:
        return None, skipped
    s = total / count
    if s >= 0.0:
        return None, skipped
    return -1.0 / s, skipped


def tle_local(cloud: PointCloud, neighbors: NeighborList, i: int) -> float | None:
    """Local intrinsic-dimensionality estimate at point i, or None.

    None signals a degenerate neighborhood: the k-th neighbor distance is
    zero (duplicate-saturated), every pair term was skipped, or the raw
    estimate came out non-positive.
    """
    pts = _as_matrix(cloud, "cloud")
    value, _ = _point_estimate(pts, neighbors, i)
    return value


def tle_global(cloud: PointCloud, k: int = DEFAULT_K, fallback: bool = False) -> IdEstimate:
    """Global intrinsic dimensionality: mean of local estimates over the cloud.

    Args:
        cloud: (m, d) points, m >= k+2.
        k: neighborhood size.
        fallback: when m < k+2, reduce k to m-2 (floor 2) with a warning
            instead of raising.

    Raises:
        ValueError: "insufficient points" when m < k+2 without fallback, or
            when no point yields a defined local estimate.
    """
    pts = _as_matrix(cloud, "cloud")
    m = pts.shape[0]
    warning = None
    if m < k + 2:
        if not fallback:
            raise ValueError(f"insufficient points: m={m} but k={k} needs m >= {k + 2}")
        reduced = max(2, m - 2)
        if m < reduced + 2:
            raise ValueError(f"insufficient points: m={m} cannot support any k")
        warning = f"k reduced from {k} to {reduced} for m={m}"
        warnings.warn(warning, RuntimeWarning, stacklevel=2)
        k = reduced

    order = _canonical_order(pts)
    spts = pts[order]
    nb = knn(spts, k)

    local_sorted = np.full(m, np.nan)
    skipped = 0
    for i in range(m):
        value, sk = _point_estimate(spts, nb, i)
        skipped += sk
        if value is not None:
            local_sorted[i] = value
    defined = ~np.isnan(local_sorted)
    if not defined.any():
        raise ValueError("no valid local estimates (all neighborhoods degenerate)")

    local = np.empty(m)
    local[order] = local_sorted
    return IdEstimate(
        global_id=float(local_sorted[defined].mean()),
        local_ids=local,
        num_valid_points=int(defined.sum()),
        num_skipped_terms=int(skipped),
        k_used=k,
        warning=warning,
    )


def information_volume(states) -> float:
    """Half log-determinant of I + (d/T) Z Z^T for the centered trajectory Z.

    Args:
        states: (T, d) matrix; rows are trajectory steps.

    Returns:
        A nonnegative float. Zero exactly for a single step or for a
        trajectory whose steps are all identical.

    The determinant is evaluated on the smaller Gram side (T x T or d x d,
    whichever is smaller; both sides agree by the Sylvester identity) via a
    Cholesky factorization. Eigenvalues of the argument are >= 1 for finite
    input, so the factorization cannot fail except through rounding; in that
    case an eigenvalue path clamps below-1 values at 1.
    """
    x = _as_matrix(states, "states")
    t, d = x.shape
    if t == 1 or np.all(x == x[0]):
        return 0.0
    x = x[_canonical_order(x)]
    z = x - x.mean(axis=0, keepdims=True)
    scale = d / t
    gram = z @ z.T if t <= d else z.T @ z
    arg = np.eye(gram.shape[0]) + scale * gram
    try:
        chol = np.linalg.cholesky(arg)
        value = float(np.log(np.einsum("ii->i", chol)).sum())
    except np.linalg.LinAlgError:
        eig = np.linalg.eigvalsh(arg)
        value = 0.5 * float(np.log(np.maximum(eig, 1.0)).sum())
    return max(value, 0.0)
