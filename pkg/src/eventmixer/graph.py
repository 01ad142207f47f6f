"""Normalized 3D event graphs and their index structures.

A graph's node positions are ``[x/X, y/Y, (t - t0)/T]``, so every
coordinate lies in [0, 1] and the three axes carry equal weight in
distance computations. All neighbor comparisons use squared Euclidean
distance (the ordering is identical to Euclidean and avoids sqrt
rounding). Neighbor rows are ordered by the canonical key

    (squared distance, t, x, y, node index)

which makes index maps deterministic and stable under node relabeling
wherever positions are distinct. kNN has two implementations that must
return identical maps: a brute-force reference and a uniform-grid
accelerated search with an expanding ring bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .events import EventWindow, SensorGeometry

_QUERY_BLOCK = 512  # bounds memory of pairwise distance blocks


@dataclass(slots=True)
class EventGraph:
    """One window's events as normalized 3D points with optional labels."""

    positions: np.ndarray  # (n, 3) float64, each coordinate in [0, 1]
    labels: np.ndarray | None = None  # (n,) int64
    source: EventWindow | None = None

    def __len__(self) -> int:
        return len(self.positions)


@dataclass(slots=True)
class IndexMap:
    """Per-query neighbor lists, each row ordered by the canonical key.

    ``rows`` has shape (n_queries, min(k, domain_size)); entries index
    into the reference node set of size ``domain_size``.
    """

    k: int
    domain_size: int
    rows: np.ndarray

    def __post_init__(self) -> None:
        self.rows = np.asarray(self.rows, dtype=np.int64)

    @property
    def n_queries(self) -> int:
        return self.rows.shape[0]

    @property
    def row_length(self) -> int:
        return self.rows.shape[1]


@dataclass(slots=True)
class InverseIndexMap:
    """For each reference node j, the queries i whose rows contain j.

    Stored in CSR form: list j is ``values[starts[j]:starts[j+1]]``,
    sorted ascending. Lists may be empty when the map was built against
    a sampled query subset.
    """

    domain_size: int
    starts: np.ndarray  # (domain_size + 1,)
    values: np.ndarray  # (total entries,)

    def counts(self) -> np.ndarray:
        return np.diff(self.starts)

    def list_for(self, j: int) -> np.ndarray:
        return self.values[self.starts[j] : self.starts[j + 1]]

    def empty_mask(self) -> np.ndarray:
        return self.counts() == 0


@dataclass(slots=True)
class KnnPyramid:
    """Index maps for an increasing family of k values on one node set.

    Levels are nested: the k1 rows are prefixes of the k2 rows for k1 < k2.
    """

    k_set: tuple[int, ...]
    levels: list[IndexMap]

    def level_for(self, k: int) -> IndexMap:
        return self.levels[self.k_set.index(k)]


def build_graph(window: EventWindow, geometry: SensorGeometry) -> EventGraph:
    """Normalize a window's events into graph node positions."""
    if len(window.events) == 0:
        raise DataError("cannot build a graph from an empty window")
    n = len(window.events)
    positions = np.empty((n, 3), dtype=np.float64)
    have_labels = all(e.label is not None for e in window.events)
    labels = np.empty(n, dtype=np.int64) if have_labels else None
    for i, e in enumerate(window.events):
        positions[i, 0] = e.x / geometry.width
        positions[i, 1] = e.y / geometry.height
        positions[i, 2] = (e.t - window.t0) / window.duration
        if labels is not None:
            labels[i] = e.label
    return EventGraph(positions, labels, window)


# ---------------------------------------------------------------------------
# Distance and ordering primitives
# ---------------------------------------------------------------------------


def _sqdist_block(queries: np.ndarray, refs: np.ndarray) -> np.ndarray:
    """Pairwise squared distances, computed per coordinate pair.

    The elementwise formulation gives bitwise-identical values for a pair
    no matter which subset or block it appears in, which is what makes
    the brute-force and grid searches agree exactly.
    """
    d = queries[:, None, :] - refs[None, :, :]
    dd = d * d
    return dd[..., 0] + dd[..., 1] + dd[..., 2]


def canonical_rank(positions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Total order of nodes by (t, x, y, index).

    Returns (perm, rank): ``perm`` lists node indices in canonical order
    and ``rank`` is its inverse. Used as the distance tie-break and for
    order-canonical processing inside the network forward pass.
    """
    t, x, y = positions[:, 2], positions[:, 0], positions[:, 1]
    perm = np.lexsort((y, x, t))
    rank = np.empty(len(perm), dtype=np.int64)
    rank[perm] = np.arange(len(perm))
    return perm, rank


def _order_candidates(d2_rows: np.ndarray, cand_ranks: np.ndarray) -> np.ndarray:
    """Per-row argsort of candidates by (squared distance, canonical rank)."""
    return np.lexsort((cand_ranks, d2_rows), axis=-1)


def _knn_exact_block(
    queries: np.ndarray,
    refs_by_rank: np.ndarray,
    perm: np.ndarray,
    k: int,
    exclude: np.ndarray | None,
    prioritize: np.ndarray | None,
) -> np.ndarray:
    """Brute-force kNN for one query block against rank-ordered references.

    ``refs_by_rank`` holds reference positions already permuted into
    canonical rank order, so a stable sort on distance alone realizes the
    full canonical key. ``exclude`` masks one reference (original index)
    per query row (self-exclusion); ``prioritize`` pins one reference to
    the front of its row (self-inclusion must survive duplicate
    positions, where several nodes tie at distance zero).
    """
    n_ref = refs_by_rank.shape[0]
    d2 = _sqdist_block(queries, refs_by_rank)
    if exclude is not None or prioritize is not None:
        rank_of = np.empty(n_ref, dtype=np.int64)
        rank_of[perm] = np.arange(n_ref)
    if exclude is not None:
        d2[np.arange(len(queries)), rank_of[exclude]] = np.inf
        n_avail = n_ref - 1
    else:
        n_avail = n_ref
    if prioritize is not None:
        d2[np.arange(len(queries)), rank_of[prioritize]] = -1.0
    L = min(k, n_avail)
    if L == n_avail or L >= n_ref - 1:
        order = np.argsort(d2, axis=1, kind="stable")[:, :L]
        return perm[order]

    part = np.argpartition(d2, L - 1, axis=1)[:, :L]
    vals = np.take_along_axis(d2, part, axis=1)
    kth = vals.max(axis=1)
    n_le = (d2 <= kth[:, None]).sum(axis=1)
    spill = n_le > L  # ties at the boundary; resolve those rows exactly

    order = np.lexsort((part, vals), axis=-1)
    rows = np.take_along_axis(part, order, axis=1)
    if np.any(spill):
        for r in np.flatnonzero(spill):
            cand = np.flatnonzero(d2[r] <= kth[r])
            local = np.lexsort((cand, d2[r][cand]))
            rows[r] = cand[local][:L]
    return perm[rows]


def _knn_brute(
    queries: np.ndarray,
    refs: np.ndarray,
    k: int,
    exclude: np.ndarray | None = None,
    prioritize: np.ndarray | None = None,
) -> np.ndarray:
    perm, _ = canonical_rank(refs)
    refs_by_rank = refs[perm]
    out = []
    for lo in range(0, len(queries), _QUERY_BLOCK):
        hi = min(lo + _QUERY_BLOCK, len(queries))
        out.append(
            _knn_exact_block(
                queries[lo:hi],
                refs_by_rank,
                perm,
                k,
                exclude[lo:hi] if exclude is not None else None,
                prioritize[lo:hi] if prioritize is not None else None,
            )
        )
    return np.concatenate(out, axis=0)


class _UniformGrid:
    """Points bucketed on a uniform grid over the unit cube."""

    def __init__(self, positions: np.ndarray, k_hint: int):
        n = len(positions)
        # Aim for ring-1 neighborhoods (27 cells) holding a few times k points.
        target = max(4.0 * k_hint, 8.0)
        edge = (target / (27.0 * max(n, 1))) ** (1.0 / 3.0)
        self.n_cells = max(1, min(64, int(round(1.0 / max(edge, 1e-6)))))
        self.edge = 1.0 / self.n_cells
        cells = np.minimum((positions * self.n_cells).astype(np.int64), self.n_cells - 1)
        cells = np.maximum(cells, 0)
        self.cell_ids = (cells[:, 0] * self.n_cells + cells[:, 1]) * self.n_cells + cells[:, 2]
        self.order = np.argsort(self.cell_ids, kind="stable")
        sorted_ids = self.cell_ids[self.order]
        self.unique_ids, starts = np.unique(sorted_ids, return_index=True)
        self.starts = np.append(starts, len(sorted_ids))
        self._slot = {int(cid): i for i, cid in enumerate(self.unique_ids)}

    def cell_coords(self, point: np.ndarray) -> tuple[int, int, int]:
        c = np.minimum((point * self.n_cells).astype(np.int64), self.n_cells - 1)
        c = np.maximum(c, 0)
        return int(c[0]), int(c[1]), int(c[2])

    def points_in_ring(self, cx: int, cy: int, cz: int, r: int) -> np.ndarray:
        """Original indices of points within Chebyshev cell distance r."""
        chunks = []
        m = self.n_cells
        for ix in range(max(0, cx - r), min(m, cx + r + 1)):
            for iy in range(max(0, cy - r), min(m, cy + r + 1)):
                base = (ix * m + iy) * m
                for iz in range(max(0, cz - r), min(m, cz + r + 1)):
                    slot = self._slot.get(base + iz)
                    if slot is not None:
                        chunks.append(self.order[self.starts[slot] : self.starts[slot + 1]])
        if not chunks:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(chunks)


def _knn_grid(
    queries: np.ndarray,
    refs: np.ndarray,
    k: int,
    exclude: np.ndarray | None = None,
    prioritize: np.ndarray | None = None,
) -> np.ndarray:
    """Grid-accelerated exact kNN.

    Queries sharing a grid cell are processed together with an expanding
    ring search. The ring stops once every query's kth candidate distance
    is strictly inside the guaranteed bound (r * edge)^2, with a relative
    margin so boundary ties can never be missed; candidates are then
    ordered by the same canonical key as the brute-force path.
    """
    n_ref = len(refs)
    n_avail = n_ref - (1 if exclude is not None else 0)
    L = min(k, n_avail)
    if L == 0:
        return np.empty((len(queries), 0), dtype=np.int64)
    grid = _UniformGrid(refs, k)
    _, rank = canonical_rank(refs)

    qcells = np.minimum((queries * grid.n_cells).astype(np.int64), grid.n_cells - 1)
    qcells = np.maximum(qcells, 0)
    qids = (qcells[:, 0] * grid.n_cells + qcells[:, 1]) * grid.n_cells + qcells[:, 2]
    qorder = np.argsort(qids, kind="stable")
    out = np.empty((len(queries), L), dtype=np.int64)

    lo = 0
    max_ring = grid.n_cells  # searching this far covers the whole cube
    while lo < len(qorder):
        hi = lo + 1
        while hi < len(qorder) and qids[qorder[hi]] == qids[qorder[lo]]:
            hi += 1
        qidx = qorder[lo:hi]
        qpos = queries[qidx]
        cx, cy, cz = grid.cell_coords(qpos[0])

        r = 1
        while True:
            cand = grid.points_in_ring(cx, cy, cz, r)
            full = len(cand) == n_ref or r >= max_ring
            need = L + (1 if exclude is not None else 0)
            if len(cand) < need and not full:
                r += 1
                continue
            d2 = _sqdist_block(qpos, refs[cand])
            if exclude is not None:
                mask = cand[None, :] == exclude[qidx][:, None]
                d2[mask] = np.inf
            if prioritize is not None:
                mask = cand[None, :] == prioritize[qidx][:, None]
                d2[mask] = -1.0
            if full:
                break
            kth = np.partition(d2, L - 1, axis=1)[:, L - 1]
            bound = (r * grid.edge) ** 2 * (1.0 - 1e-9)
            if np.all(kth < bound):
                break
            r += 1

        order = _order_candidates(d2, rank[cand][None, :].repeat(len(qidx), axis=0))
        out[qidx] = cand[order[:, :L]]
        lo = hi
    return out


def _resolve_method(method: str, n_ref: int) -> str:
    if method == "auto":
        return "grid" if n_ref > 256 else "brute"
    if method not in ("brute", "grid"):
        raise ConfigError(f"unknown knn method {method!r}")
    return method


def knn(graph: EventGraph, k: int, method: str = "auto", include_self: bool = True) -> IndexMap:
    """k nearest nodes of every node, in canonical order.

    With ``include_self`` (default) each row starts with the query itself
    (pinned first even among duplicate positions at distance zero); rows
    have min(k, n) entries. Disabling self-inclusion (an ablation switch)
    drops the query from its own row.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    pos = graph.positions
    n = len(pos)
    if n == 0:
        raise DataError("knn on an empty graph")
    identity = np.arange(n, dtype=np.int64)
    exclude = None if include_self else identity
    prioritize = identity if include_self else None
    impl = _knn_brute if _resolve_method(method, n) == "brute" else _knn_grid
    rows = impl(pos, pos, k, exclude, prioritize)
    return IndexMap(k=k, domain_size=n, rows=rows)


def knn_pyramid(
    graph: EventGraph,
    k_set: tuple[int, ...] | list[int],
    method: str = "auto",
    include_self: bool = True,
) -> KnnPyramid:
    """Index maps for all k in ``k_set`` from one sorted pass per query.

    ``k_set`` must be strictly increasing; each level's rows are prefixes
    of the largest level's rows, which realizes the nesting invariant by
    construction.
    """
    ks = tuple(int(k) for k in k_set)
    if not ks or any(b <= a for a, b in zip(ks, ks[1:])):
        raise ConfigError(f"k_set must be strictly increasing, got {ks}")
    top = knn(graph, ks[-1], method=method, include_self=include_self)
    levels = []
    for k in ks:
        L = min(k, top.rows.shape[1])
        levels.append(IndexMap(k=k, domain_size=top.domain_size, rows=top.rows[:, :L]))
    return KnnPyramid(k_set=ks, levels=levels)


def knn_cross(
    sampled_indices: np.ndarray,
    graph: EventGraph,
    k: int,
    method: str = "auto",
) -> IndexMap:
    """Neighbors of each sampled node among the full node set."""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    pos = graph.positions
    sampled_indices = np.asarray(sampled_indices, dtype=np.int64)
    if len(pos) == 0:
        raise DataError("knn_cross on an empty graph")
    if sampled_indices.min(initial=0) < 0 or sampled_indices.max(initial=-1) >= len(pos):
        raise DataError("sampled indices outside graph")
    impl = _knn_brute if _resolve_method(method, len(pos)) == "brute" else _knn_grid
    rows = impl(pos[sampled_indices], pos, k, None)
    return IndexMap(k=k, domain_size=len(pos), rows=rows)


def cross_pyramid(
    sampled_indices: np.ndarray,
    graph: EventGraph,
    k_set: tuple[int, ...],
    method: str = "auto",
) -> list[IndexMap]:
    """knn_cross at every level of a strictly increasing k_set (nested rows)."""
    ks = tuple(int(k) for k in k_set)
    if not ks or any(b <= a for a, b in zip(ks, ks[1:])):
        raise ConfigError(f"k_set must be strictly increasing, got {ks}")
    top = knn_cross(sampled_indices, graph, ks[-1], method=method)
    return [
        IndexMap(k=k, domain_size=top.domain_size, rows=top.rows[:, : min(k, top.rows.shape[1])])
        for k in ks
    ]


def farthest_point_sample(graph: EventGraph | np.ndarray, m: int) -> np.ndarray:
    """Greedy farthest point sampling of m node indices.

    Starts at the node nearest the centroid (correctly rounded mean via
    fsum); each subsequent pick maximizes the minimum squared distance to
    the chosen set, ties broken by ascending node index.
    """
    pos = graph.positions if isinstance(graph, EventGraph) else np.asarray(graph)
    n = len(pos)
    if not 1 <= m <= n:
        raise ConfigError(f"sample size {m} outside [1, {n}]")
    centroid = np.array([math.fsum(pos[:, c]) / n for c in range(3)])
    d = pos - centroid
    dd = d * d
    d2c = dd[:, 0] + dd[:, 1] + dd[:, 2]
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = int(np.argmin(d2c))
    min_d2 = _sqdist_block(pos[chosen[0]][None, :], pos)[0]
    min_d2[chosen[0]] = -1.0  # never re-pick
    for i in range(1, m):
        nxt = int(np.argmax(min_d2))
        chosen[i] = nxt
        d2 = _sqdist_block(pos[nxt][None, :], pos)[0]
        np.minimum(min_d2, d2, out=min_d2)
        min_d2[nxt] = -1.0
    return chosen


def nearest_reference(
    query_positions: np.ndarray,
    ref_positions: np.ndarray,
    method: str = "auto",
) -> np.ndarray:
    """Index of the nearest reference position for every query position."""
    queries = np.asarray(query_positions, dtype=np.float64)
    refs = np.asarray(ref_positions, dtype=np.float64)
    if len(refs) == 0:
        raise DataError("nearest_reference needs at least one reference")
    impl = _knn_brute if _resolve_method(method, len(refs)) == "brute" else _knn_grid
    return impl(queries, refs, 1, None)[:, 0]


def invert_index_map(index_map: IndexMap, domain_size: int) -> InverseIndexMap:
    """Exact inversion: j in rows[i] iff i in inverse list j (lists ascending)."""
    rows = index_map.rows
    if rows.size and (rows.min() < 0 or rows.max() >= domain_size):
        raise DataError(
            f"index {rows.max()} outside domain of size {domain_size}"
        )
    flat = rows.ravel()
    queries = np.repeat(np.arange(rows.shape[0], dtype=np.int64), rows.shape[1])
    order = np.argsort(flat, kind="stable")  # stable keeps queries ascending per j
    values = queries[order]
    counts = np.bincount(flat, minlength=domain_size)
    starts = np.zeros(domain_size + 1, dtype=np.int64)
    np.cumsum(counts, out=starts[1:])
    return InverseIndexMap(domain_size=domain_size, starts=starts, values=values)


def dump_graph(graph: EventGraph, maps: list[IndexMap]) -> str:
    """Debug dump: one `i,xn,yn,tn,label` line per node, then `M k i: ...` rows."""
    lines = []
    for i, p in enumerate(graph.positions):
        label = int(graph.labels[i]) if graph.labels is not None else -1
        lines.append(f"{i},{p[0]:.6f},{p[1]:.6f},{p[2]:.6f},{label}")
    for m in maps:
        for i in range(m.n_queries):
            row = " ".join(str(int(j)) for j in m.rows[i])
            lines.append(f"M {m.k} {i}: {row}")
    return "\n".join(lines) + "\n"
