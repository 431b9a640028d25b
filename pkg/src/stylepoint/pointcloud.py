"""Point-cloud kernels: farthest point sampling, ball query, IDW interpolation.

All distances are Euclidean in the NDC frame the encoder operates in.
Every kernel is deterministic: FPS seeds at the point nearest the
centroid, ties break toward the lowest index, and ball-query truncation
keeps the K lowest source indices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, ops


@dataclass
class SampleIndex:
    indices: np.ndarray    # (m,) selected point indices, in selection order
    distances: np.ndarray  # (m,) max-min distance at the moment of selection (seed: 0)


@dataclass
class NeighborGraph:
    indices: np.ndarray  # (M, K) source indices, -1 padded
    counts: np.ndarray   # (M,) valid neighbors per query
    radius: float
    k: int


def farthest_point_sample(points: np.ndarray, m: int) -> SampleIndex:
    """Greedy max-min subsampling seeded at the point nearest the centroid."""
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    if not 1 <= m <= n:
        raise ValueError(f"cannot sample {m} points from {n}")
    centroid = pts.mean(axis=0)
    seed = int(np.argmin(((pts - centroid) ** 2).sum(axis=1)))
    selected = np.empty(m, dtype=np.int64)
    sel_dist = np.empty(m, dtype=np.float64)
    selected[0] = seed
    sel_dist[0] = 0.0
    min_d2 = ((pts - pts[seed]) ** 2).sum(axis=1)
    for i in range(1, m):
        nxt = int(np.argmax(min_d2))
        selected[i] = nxt
        sel_dist[i] = np.sqrt(min_d2[nxt])
        d2 = ((pts - pts[nxt]) ** 2).sum(axis=1)
        np.minimum(min_d2, d2, out=min_d2)
    return SampleIndex(selected, sel_dist.astype(np.float32))


def _ball_query_bruteforce(queries, source, r, k):
    m = len(queries)
    indices = np.full((m, k), -1, dtype=np.int64)
    counts = np.zeros(m, dtype=np.int64)
    r2 = r * r
    # chunk the all-pairs matrix to bound memory
    chunk = max(1, int(4e6) // max(1, len(source)))
    for lo in range(0, m, chunk):
        hi = min(m, lo + chunk)
        d2 = ((queries[lo:hi, None, :] - source[None, :, :]) ** 2).sum(axis=2)
        for row, qi in enumerate(range(lo, hi)):
            hits = np.nonzero(d2[row] <= r2)[0][:k]
            indices[qi, :len(hits)] = hits
            counts[qi] = len(hits)
    return indices, counts


def _ball_query_grid(queries, source, r, k):
    """Uniform-grid accelerated path; membership identical to brute force."""
    m = len(queries)
    cell = np.floor(source / r).astype(np.int64)
    buckets: dict[tuple, list] = {}
    for i, key in enumerate(map(tuple, cell)):
        buckets.setdefault(key, []).append(i)
    indices = np.full((m, k), -1, dtype=np.int64)
    counts = np.zeros(m, dtype=np.int64)
    r2 = r * r
    qcell = np.floor(queries / r).astype(np.int64)
    for qi in range(m):
        cx, cy, cz = qcell[qi]
        cand: list[int] = []
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    cand.extend(buckets.get((cx + dx, cy + dy, cz + dz), ()))
        if not cand:
            continue
        cand_arr = np.sort(np.asarray(cand, dtype=np.int64))
        d2 = ((source[cand_arr] - queries[qi]) ** 2).sum(axis=1)
        hits = cand_arr[d2 <= r2][:k]
        indices[qi, :len(hits)] = hits
        counts[qi] = len(hits)
    return indices, counts


def ball_query(queries: np.ndarray, source: np.ndarray, r: float, k: int,
               method: str = "grid") -> NeighborGraph:
    """Up to K source points within radius r of each query.

    Neighbors are kept in ascending source-index order and truncated to
    the first K (order-insensitive aggregation downstream makes this a
    safe, deterministic cap). Empty neighbor lists are allowed.
    """
    if r <= 0:
        raise ValueError(f"radius must be positive, got {r}")
    if k < 1:
        raise ValueError(f"K must be >= 1, got {k}")
    queries = np.asarray(queries, dtype=np.float64)
    source = np.asarray(source, dtype=np.float64)
    if method == "grid":
        indices, counts = _ball_query_grid(queries, source, r, k)
    elif method == "bruteforce":
        indices, counts = _ball_query_bruteforce(queries, source, r, k)
    else:
        raise ValueError(f"unknown ball_query method '{method}'")
    return NeighborGraph(indices, counts, float(r), int(k))


IDW_EPS = 1e-8


def idw_weights(targets: np.ndarray, source: np.ndarray, k: int = 3,
                power: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """(indices (M,k), normalized weights (M,k)) of the k nearest sources.

    w_i = 1 / max(d_i, eps)^power, normalized to sum 1. A target closer
    than eps to a source snaps to that source exactly (one-hot row).
    """
    targets = np.asarray(targets, dtype=np.float64)
    source = np.asarray(source, dtype=np.float64)
    n = len(source)
    if n < 1:
        raise ValueError("idw needs at least one source point")
    k = min(k, n)
    m = len(targets)
    idx = np.empty((m, k), dtype=np.int64)
    d = np.empty((m, k), dtype=np.float64)
    chunk = max(1, int(8e6) // max(1, n))
    for lo in range(0, m, chunk):
        hi = min(m, lo + chunk)
        d2 = ((targets[lo:hi, None, :] - source[None, :, :]) ** 2).sum(axis=2)
        if k < n:
            part = np.argpartition(d2, k - 1, axis=1)[:, :k]
        else:
            part = np.broadcast_to(np.arange(n), (hi - lo, n)).copy()
        part_d2 = np.take_along_axis(d2, part, axis=1)
        # deterministic order: by distance, then by source index
        order = np.lexsort((part, part_d2), axis=1)
        idx[lo:hi] = np.take_along_axis(part, order, axis=1)
        d[lo:hi] = np.sqrt(np.take_along_axis(part_d2, order, axis=1))
    w = 1.0 / np.maximum(d, IDW_EPS) ** power
    exact = d[:, 0] < IDW_EPS
    w[exact] = 0.0
    w[exact, 0] = 1.0
    w /= w.sum(axis=1, keepdims=True)
    return idx, w.astype(np.float32)


def idw_interpolate(targets: np.ndarray, source: np.ndarray, features,
                    k: int = 3, power: int = 2) -> Tensor:
    """Inverse-distance-weighted feature interpolation, differentiable in features.

    Geometry (indices and weights) is fixed; the result is linear in the
    source features, so the backward pass is the transposed weight matrix.
    """
    idx, w = idw_weights(targets, source, k=k, power=power)
    feats = features if isinstance(features, Tensor) else Tensor(features)
    return ops.weighted_gather(feats, idx, w)
