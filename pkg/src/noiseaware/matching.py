"""Minimum-weight perfect matching decoder on a detector graph.

Decoding reduces to matching flipped detectors ("defects") in pairs or to the
boundary, with costs equal to shortest-path distances in the graph. Defects
split into clusters: ``i`` and ``j`` are linked when pairing them is cheaper
than sending both to the boundary, and no optimal matching pairs defects from
different clusters. Each cluster is solved exactly by a bitmask dynamic
program; clusters above ``MAX_DP_DEFECTS`` go to a compiled blossom matcher.

Ties in the dynamic program prefer the boundary, then the lowest-index
partner, which makes the output deterministic.

Bulk decoding uses PyMatching when it is installed. It minimises the same
objective on the same graph, so it differs from the exact decoder only in how
it breaks ties between equal-weight matchings.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .blossom import max_weight_matching
from .dem import DetectorErrorModel

MAX_DP_DEFECTS = 10
WEIGHT_SCALE = float(1 << 20)


@dataclass(frozen=True)
class GraphStats:
    hyperedges: int = 0
    decomposed: int = 0
    dropped: int = 0
    logical_mismatch: int = 0
    conflicting_parallel: int = 0


@dataclass(frozen=True)
class MatchingGraph:
    """Detector graph with one virtual boundary node (index ``n_detectors``).

    ``edges`` maps ``(u, v)`` with ``u < v`` to ``(probability, logical)``.
    """

    n_detectors: int
    edges: dict[tuple[int, int], tuple[float, bool]]
    stats: GraphStats = field(default_factory=GraphStats)

    @property
    def boundary(self) -> int:
        return self.n_detectors

    def weight(self, u: int, v: int) -> float:
        p, _ = self.edges[(min(u, v), max(u, v))]
        return edge_weight(p)

    def to_arrays(self):
        keys = np.array(list(self.edges.keys()), dtype=np.intp).reshape(-1, 2)
        vals = list(self.edges.values())
        probs = np.array([p for p, _ in vals])
        logical = np.array([l for _, l in vals], dtype=bool)
        return keys, probs, logical

    @property
    def distances(self) -> "PathTables":
        # Computed lazily and memoised on the frozen instance.
        cached = self.__dict__.get("_paths")
        if cached is None:
            cached = PathTables.build(self)
            object.__setattr__(self, "_paths", cached)
        return cached

    def to_pymatching(self):
        """Equivalent ``pymatching.Matching``; fault id 0 is the logical observable."""
        cached = self.__dict__.get("_pymatching")
        if cached is None:
            import pymatching

            cached = pymatching.Matching()
            b = self.boundary
            for (u, v), (p, logical) in self.edges.items():
                ids = {0} if logical else set()
                w = float(edge_weight(p))
                if v == b:
                    cached.add_boundary_edge(u, fault_ids=ids, weight=w, error_probability=p)
                else:
                    cached.add_edge(u, v, fault_ids=ids, weight=w, error_probability=p)
            cached.ensure_num_fault_ids(1)
            object.__setattr__(self, "_pymatching", cached)
        return cached


def edge_weight(p):
    """``log((1 - p) / p)``, clamped to a small positive value for p >= 1/2."""
    p = np.asarray(p, dtype=float)
    w = np.log1p(-p) - np.log(p)
    return np.maximum(w, 1e-9) if w.ndim else max(float(w), 1e-9)


def dem_to_matching_graph(dem: DetectorErrorModel) -> MatchingGraph:
    """Reduce a DEM to a graph; hyperedges are split into existing edges.

    A mechanism flipping three or more detectors is replaced by edges of the
    graph (built from the one- and two-detector mechanisms) whose symmetric
    difference reproduces its detectors, preferring a split whose logical
    flags also match. Each part inherits the full mechanism probability.
    """
    n = dem.n_detectors
    b = n
    # (u, v) -> logical -> merged probability
    parts: dict[tuple[int, int], dict[bool, float]] = {}

    def add(key, logical, p):
        slot = parts.setdefault(key, {})
        q = slot.get(logical, 0.0)
        slot[logical] = q * (1 - p) + p * (1 - q)

    hyper = []
    for p, dets, log in zip(dem.probabilities, dem.detectors, dem.logical):
        if len(dets) == 0:
            continue  # logical-only flip: invisible to the decoder
        if len(dets) == 1:
            add((dets[0], b), bool(log), float(p))
        elif len(dets) == 2:
            add((dets[0], dets[1]), bool(log), float(p))
        else:
            hyper.append((float(p), dets, bool(log)))

    base = {key: max(slot, key=slot.get) for key, slot in parts.items()}
    decomposed = dropped = mismatch = 0
    for p, dets, log in hyper:
        split = _decompose(dets, log, base, b)
        if split is None:
            dropped += 1
            continue
        keys, exact = split
        decomposed += 1
        mismatch += not exact
        for key in keys:
            add(key, base[key], p)

    edges = {}
    conflicts = 0
    for key, slot in parts.items():
        if len(slot) > 1:
            conflicts += 1
        logical = max(slot, key=slot.get)
        edges[key] = (slot[logical], logical)
    stats = GraphStats(len(hyper), decomposed, dropped, mismatch, conflicts)
    return MatchingGraph(n, dict(sorted(edges.items())), stats)


def _decompose(dets, logical, base, boundary):
    """Split ``dets`` into existing edges; returns (keys, logical_matches)."""
    dets = tuple(sorted(dets))
    fallback = None
    # Candidate parts: existing pairs inside dets and boundary singles.
    cands = [(u, v) for u, v in itertools.combinations(dets, 2) if (u, v) in base]
    cands += [(u, boundary) for u in dets if (u, boundary) in base]

    def search(remaining, chosen):
        nonlocal fallback
        if not remaining:
            parity = False
            for key in chosen:
                parity ^= base[key]
            if parity == logical:
                return list(chosen)
            if fallback is None:
                fallback = list(chosen)
            return None
        first = remaining[0]
        for key in cands:
            if first not in key:
                continue
            covered = {x for x in key if x != boundary}
            if not covered <= set(remaining):
                continue
            found = search(tuple(x for x in remaining if x not in covered), chosen + [key])
            if found is not None:
                return found
        return None

    found = search(dets, [])
    if found is not None:
        return found, True
    if fallback is not None:
        return fallback, False
    return None


@dataclass(frozen=True)
class PathTables:
    """All-pairs shortest-path distances and path logical parities."""

    dist: np.ndarray  # (n + 1, n + 1)
    parity: np.ndarray  # (n + 1, n + 1) uint8

    @classmethod
    def build(cls, graph: MatchingGraph) -> PathTables:
        n = graph.n_detectors + 1
        keys, probs, logical = graph.to_arrays()
        if keys.size == 0:
            dist = np.full((n, n), np.inf)
            np.fill_diagonal(dist, 0)
            return cls(dist, np.zeros((n, n), dtype=np.uint8))
        w = edge_weight(probs)
        u, v = keys[:, 0], keys[:, 1]
        adj = csr_matrix((np.concatenate([w, w]), (np.concatenate([u, v]), np.concatenate([v, u]))), shape=(n, n))
        dist, pred = dijkstra(adj, directed=False, return_predecessors=True)
        lmat = np.zeros((n, n), dtype=np.uint8)
        lmat[u, v] = logical
        lmat[v, u] = logical
        # Pointer doubling along predecessor trees: parity[s, t] = XOR of edge
        # flags on the path from s to t.
        rows = np.arange(n)[:, None]
        ptr = np.where(pred < 0, np.arange(n)[None, :], pred)
        acc = lmat[ptr, np.arange(n)[None, :]]
        acc[pred < 0] = 0
        for _ in range(int(np.ceil(np.log2(max(n, 2)))) + 1):
            acc = acc ^ acc[rows, ptr]
            ptr = ptr[rows, ptr]
        return cls(dist, acc.astype(np.uint8))


@dataclass(frozen=True)
class Correction:
    pairs: tuple[tuple[int, int], ...]  # (defect, partner); partner == boundary for boundary matches
    logical: bool
    weight: float


@numba.njit(cache=True)
def _solve_cluster(dist, parity, nodes, boundary):
    """Exact matching of ``nodes`` (defects) with boundary option, bitmask DP."""
    k = nodes.size
    size = 1 << k
    cost = np.empty(size)
    choice = np.empty(size, dtype=np.int64)
    cost[0] = 0.0
    choice[0] = -1
    for mask in range(1, size):
        i = 0
        while not (mask >> i) & 1:
            i += 1
        rest = mask ^ (1 << i)
        best = dist[nodes[i], boundary] + cost[rest]
        arg = -1
        j = i + 1
        while j < k:
            if (rest >> j) & 1:
                c = dist[nodes[i], nodes[j]] + cost[rest ^ (1 << j)]
                if c < best - 1e-9:
                    best = c
                    arg = j
            j += 1
        cost[mask] = best
        choice[mask] = arg
    # Reconstruct.
    partners = np.empty(k, dtype=np.int64)
    mask = size - 1
    par = 0
    while mask:
        i = 0
        while not (mask >> i) & 1:
            i += 1
        j = choice[mask]
        if j < 0:
            partners[i] = -1
            par ^= parity[nodes[i], boundary]
            mask ^= 1 << i
        else:
            partners[i] = j
            partners[j] = i
            par ^= parity[nodes[i], nodes[j]]
            mask ^= (1 << i) | (1 << j)
    return cost[size - 1], par, partners


@numba.njit(cache=True)
def _clusters(dist, defects, boundary):
    """Label defects by cluster (union-find on beneficial pairs)."""
    k = defects.size
    parent = np.arange(k)
    for a in range(k):
        for c in range(a + 1, k):
            u, v = defects[a], defects[c]
            if dist[u, v] < dist[u, boundary] + dist[v, boundary] - 1e-9:
                ra = a
                while parent[ra] != ra:
                    ra = parent[ra]
                rc = c
                while parent[rc] != rc:
                    rc = parent[rc]
                if ra != rc:
                    parent[max(ra, rc)] = min(ra, rc)
    labels = np.empty(k, dtype=np.int64)
    for a in range(k):
        r = a
        while parent[r] != r:
            r = parent[r]
        labels[a] = r
    return labels


@numba.njit(cache=True)
def _blossom_cluster(dist, parity, nodes, boundary):
    """Exact matching of a cluster via blossom.

    Shortest paths may run through the boundary node, so ``dist[i, j]`` is
    never more than sending both ``i`` and ``j`` to the boundary. A perfect
    matching on the defects (plus one boundary vertex when their number is
    odd) therefore covers every boundary assignment. Distances are quantised
    to multiples of ``1 / WEIGHT_SCALE``; the result is optimal for the
    quantised weights.
    """
    k = nodes.size
    n = k + (k % 2)
    cost = np.zeros((n, n), dtype=np.int64)
    for a in range(k):
        for c in range(a + 1, k):
            w = dist[nodes[a], nodes[c]]
            if np.isfinite(w):
                cost[a, c] = np.int64(w * WEIGHT_SCALE + 0.5) + 1
        if n > k:
            wb = dist[nodes[a], boundary]
            if np.isfinite(wb):
                cost[a, k] = np.int64(wb * WEIGHT_SCALE + 0.5) + 1
    w_max = max(1, cost.max())
    # Offset so that every maximum-weight matching is perfect.
    big = (n // 2 + 1) * w_max + 1
    weights = np.zeros((n, n), dtype=np.int64)
    for a in range(n):
        for c in range(a + 1, n):
            if cost[a, c] > 0:
                weights[a, c] = big - cost[a, c]
                weights[c, a] = weights[a, c]
    mate = max_weight_matching(weights)
    partners = np.full(k, -1, dtype=np.int64)
    total = 0.0
    par = 0
    for a in range(k):
        m = mate[a]
        if m < 0:
            total = np.inf
        elif m < k:
            partners[a] = m
            if a < m:
                total += dist[nodes[a], nodes[m]]
                par ^= parity[nodes[a], nodes[m]]
        else:
            total += dist[nodes[a], boundary]
            par ^= parity[nodes[a], boundary]
    return total, par, partners


@numba.njit(cache=True)
def _solve(dist, parity, nodes, boundary, max_dp):
    if nodes.size <= max_dp:
        return _solve_cluster(dist, parity, nodes, boundary)
    return _blossom_cluster(dist, parity, nodes, boundary)


@numba.njit(cache=True)
def _decode_batch(dist, parity, syndromes, boundary, max_dp):
    """Predicted logical parity and matching weight per shot."""
    shots = syndromes.shape[0]
    out = np.zeros(shots, dtype=np.int8)
    weights = np.zeros(shots)
    for s in range(shots):
        defects = np.flatnonzero(syndromes[s])
        if defects.size == 0:
            continue
        labels = _clusters(dist, defects, boundary)
        par = 0
        total = 0.0
        for root in np.unique(labels):
            nodes = defects[labels == root]
            c, p, _ = _solve(dist, parity, nodes, boundary, max_dp)
            total += c
            par ^= p
        out[s] = par
        weights[s] = total
    return out, weights


def decode(graph: MatchingGraph, syndrome) -> Correction:
    """Minimum-weight correction for one syndrome (iterable of defect ids or bool mask)."""
    tables = graph.distances
    syndrome = np.asarray(syndrome)
    if syndrome.dtype == bool:
        defects = np.flatnonzero(syndrome)
    else:
        defects = np.unique(syndrome.astype(np.int64))
    if defects.size and (defects.min() < 0 or defects.max() >= graph.n_detectors):
        raise ValueError("detector id out of range")
    b = graph.boundary
    if defects.size == 0:
        return Correction((), False, 0.0)
    labels = _clusters(tables.dist, defects.astype(np.int64), b)
    pairs, total, par = [], 0.0, 0
    for root in np.unique(labels):
        nodes = defects[labels == root].astype(np.int64)
        c, p, partners = _solve(tables.dist, tables.parity, nodes, b, MAX_DP_DEFECTS)
        total += c
        par ^= int(p)
        for a, partner in enumerate(partners):
            if partner < 0:
                pairs.append((int(nodes[a]), b))
            elif a < partner:
                pairs.append((int(nodes[a]), int(nodes[partner])))
    if not np.isfinite(total):
        warnings.warn("syndrome has no finite-weight matching", RuntimeWarning)
    return Correction(tuple(sorted(pairs)), bool(par), float(total))


def _have_pymatching() -> bool:
    try:
        import pymatching  # noqa: F401
    except ImportError:
        return False
    return True


def decode_batch(graph: MatchingGraph, syndromes: np.ndarray, backend: str = "auto") -> np.ndarray:
    """Predicted logical flips for a ``(shots, n_detectors)`` boolean array.

    ``backend`` is ``"exact"`` (the compiled decoder of this module),
    ``"pymatching"`` or ``"auto"`` (PyMatching if importable).
    """
    syndromes = np.ascontiguousarray(syndromes, dtype=np.bool_)
    if syndromes.ndim != 2 or syndromes.shape[1] != graph.n_detectors:
        raise ValueError("syndrome width does not match the graph")
    if backend == "auto":
        backend = "pymatching" if _have_pymatching() else "exact"
    if backend == "pymatching":
        if syndromes.shape[0] == 0:
            return np.zeros(0, dtype=bool)
        matcher = graph.to_pymatching()
        width = matcher.num_detectors
        if np.any(syndromes[:, width:]):
            raise ValueError("defect on a detector with no incident edge")
        pred = matcher.decode_batch(syndromes[:, :width].view(np.uint8))
        if pred.shape[1] == 0:
            return np.zeros(syndromes.shape[0], dtype=bool)
        return pred[:, 0].astype(bool)
    if backend != "exact":
        raise ValueError(f"unknown backend {backend!r}")
    tables = graph.distances
    out, _ = _decode_batch(tables.dist, tables.parity, syndromes, graph.boundary, MAX_DP_DEFECTS)
    return out.astype(bool)
