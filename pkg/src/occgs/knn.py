"""Exact k-nearest-neighbour search with deterministic tie breaking."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree


def exact_knn(query, points, k: int):
    """K nearest ``points`` per query row -> (indices, distances), ties to the lower index.

    A kd-tree proposes candidates which are re-ranked exactly on
    (distance, index); ambiguous rows fall back to a full radius search.
    With fewer than ``k`` points the whole set repeats cyclically.
    """
    occ = np.asarray(query, dtype=np.float64).reshape(-1, 3)
    seen = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n_seen = len(seen)
    if n_seen == 0:
        raise ValueError("cannot search an empty point set")
    idx = np.empty((len(occ), k), dtype=np.int64)
    dist = np.empty((len(occ), k))
    if len(occ) == 0:
        return idx, dist
    if n_seen < k:
        for r, q in enumerate(occ):
            d = np.sqrt(((seen - q) ** 2).sum(-1))
            sel = np.resize(np.lexsort((np.arange(n_seen), d)), k)
            idx[r], dist[r] = sel, d[sel]
        return idx, dist
    tree = cKDTree(seen)
    # a few spare candidates per query; rows whose k-th exact distance reaches
    # the last candidate could have a tie outside the set and are redone below
    m = min(n_seen, k + 4)
    _, cand = tree.query(occ, k=m)
    cand = cand.reshape(len(occ), m)
    d = np.sqrt(((seen[cand] - occ[:, None, :]) ** 2).sum(-1))
    order = np.lexsort((cand, d), axis=-1)
    cand = np.take_along_axis(cand, order, -1)
    d = np.take_along_axis(d, order, -1)
    idx[:], dist[:] = cand[:, :k], d[:, :k]
    if m == n_seen:
        return idx, dist
    redo = np.flatnonzero(d[:, k - 1] * (1 + 1e-9) + 1e-12 >= d[:, -1])
    if len(redo) == 0:
        return idx, dist
    balls = tree.query_ball_point(occ[redo], d[redo, k - 1] * (1 + 1e-9) + 1e-12)
    for r, ball in zip(redo, balls):
        c = np.sort(np.asarray(ball, dtype=np.int64))
        dc = np.sqrt(((seen[c] - occ[r]) ** 2).sum(-1))
        sel = np.lexsort((c, dc))[:k]
        idx[r], dist[r] = c[sel], dc[sel]
    return idx, dist
