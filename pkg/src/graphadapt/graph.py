"""Graphs, shift operators, permutations, and stochastic perturbations.

The graph shift operator (GSO) is stored in compressed sparse row form.
Multiplying a signal by it is one round of neighbor exchange, the primitive
every other module builds on. All graphs here are undirected, so the GSO is
symmetric; backward passes elsewhere rely on that.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Graph",
    "PermutationMap",
    "GenerationError",
    "PowerIterationError",
    "SHIFT_COUNTER",
    "graph_from_edges",
    "sbm_generate",
    "knn_geometric",
    "normalize_gso",
    "spectral_radius",
    "shift",
    "shift_stack",
    "permute",
    "permute_signal",
    "sample_link_loss",
    "inf_norm_max_power",
    "is_connected",
    "save_edge_list",
    "load_edge_list",
    "load_coords",
]

# Fixed internal stream for the power-iteration start vector; keeps
# normalization deterministic without threading a seed through every caller.
_POWER_ITERATION_SEED = 0x5EED


class GenerationError(RuntimeError):
    """Random graph generation could not satisfy its constraints."""


class PowerIterationError(RuntimeError):
    """Power iteration did not converge; carries the last iterate."""

    def __init__(self, message: str, last_eigenvalue: float, last_vector: np.ndarray):
        super().__init__(message)
        self.last_eigenvalue = last_eigenvalue
        self.last_vector = last_vector


class _ShiftCounter:
    """Counts sparse one-hop shifts, one unit per shifted signal column."""

    def __init__(self) -> None:
        self.count = 0

    def reset(self) -> None:
        self.count = 0

    def add(self, n: int) -> None:
        self.count += n


SHIFT_COUNTER = _ShiftCounter()


@dataclass(frozen=True)
class Graph:
    """Undirected weighted graph together with its shift operator.

    Immutable after construction: safe to share across concurrent readers.
    ``edges`` holds each undirected pair once as (i, j) with i < j, rows
    sorted lexicographically; ``gso`` stores both directions.
    """

    n: int
    edges: np.ndarray                       # (M, 2) int64
    weights: np.ndarray                     # (M,) float64
    neighbor_lists: tuple[np.ndarray, ...]  # sorted, self excluded
    gso: sp.csr_matrix                      # symmetric, sparsity matches edges
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def m(self) -> int:
        return int(self.edges.shape[0])

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.array([nb.size for nb in self.neighbor_lists], dtype=np.int64)

    def unweighted_adjacency(self) -> sp.csr_matrix:
        """0/1 adjacency over the edge set (diagonal excluded)."""
        key = "unweighted_adjacency"
        if key not in self._cache:
            indptr = np.zeros(self.n + 1, dtype=np.int64)
            degs = self.degrees
            np.cumsum(degs, out=indptr[1:])
            if self.m:
                indices = np.concatenate(self.neighbor_lists)
            else:
                indices = np.zeros(0, dtype=np.int64)
            data = np.ones(indices.shape[0], dtype=np.float64)
            self._cache[key] = sp.csr_matrix((data, indices, indptr), shape=(self.n, self.n))
        return self._cache[key]


def _build_neighbor_lists(n: int, edges: np.ndarray) -> tuple[np.ndarray, ...]:
    adj: list[list[int]] = [[] for _ in range(n)]
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    return tuple(np.array(sorted(nb), dtype=np.int64) for nb in adj)


def graph_from_edges(n: int, edges, weights=None) -> Graph:
    """Build a graph from an undirected edge list, canonicalizing edge order."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    m = edges.shape[0]
    if weights is None:
        weights = np.ones(m, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (m,):
        raise ValueError(f"expected {m} weights, got shape {weights.shape}")
    if not np.all(np.isfinite(weights)):
        raise ValueError("edge weights must be finite")
    if m:
        if edges.min() < 0 or edges.max() >= n:
            raise ValueError("edge endpoint out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise ValueError("self loops are not allowed")
        lo = edges.min(axis=1)
        hi = edges.max(axis=1)
        edges = np.column_stack((lo, hi))
        order = np.lexsort((edges[:, 1], edges[:, 0]))
        edges = edges[order]
        weights = weights[order]
        dup = np.all(edges[1:] == edges[:-1], axis=1)
        if np.any(dup):
            raise ValueError("duplicate edges")

    rows = np.concatenate((edges[:, 0], edges[:, 1]))
    cols = np.concatenate((edges[:, 1], edges[:, 0]))
    vals = np.concatenate((weights, weights))
    gso = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    gso.sort_indices()
    return Graph(n=n, edges=edges, weights=weights,
                 neighbor_lists=_build_neighbor_lists(n, edges), gso=gso)


def is_connected(graph: Graph) -> bool:
    if graph.n == 0:
        return True
    seen = np.zeros(graph.n, dtype=bool)
    stack = [0]
    seen[0] = True
    count = 1
    while stack:
        i = stack.pop()
        for j in graph.neighbor_lists[i]:
            if not seen[j]:
                seen[j] = True
                count += 1
                stack.append(int(j))
    return count == graph.n


def sbm_generate(n: int, c: int, p: float, q: float, seed,
                 max_attempts: int = 50) -> tuple[Graph, np.ndarray]:
    """Connected stochastic block model with ``c`` equal communities.

    Redraws until the sampled graph is connected, up to ``max_attempts``
    times; community labels are returned per node.
    """
    if c < 1 or n < 1:
        raise ValueError("need n >= 1 and c >= 1")
    if n % c != 0:
        raise ValueError(f"n={n} not divisible by c={c}")
    if not (0.0 <= q <= p <= 1.0) or p <= 0.0:
        raise ValueError(f"need 0 <= q <= p <= 1 and p > 0, got p={p}, q={q}")
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(c, dtype=np.int64), n // c)
    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(labels[iu] == labels[ju], p, q)
    for _ in range(max_attempts):
        keep = rng.random(prob.shape[0]) < prob
        graph = graph_from_edges(n, np.column_stack((iu[keep], ju[keep])))
        if is_connected(graph):
            return graph, labels
    raise GenerationError(
        f"SBM(n={n}, c={c}, p={p}, q={q}) produced {max_attempts} disconnected draws")


def knn_geometric(coords, k: int) -> Graph:
    """k-nearest-neighbor geometric graph with Gaussian distance weights.

    Directed nearest-neighbor picks are symmetrized by union; each retained
    edge gets weight exp(-d^2 / sigma^2) with sigma^2 the mean squared
    distance over retained edges.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ValueError("coords must be (N, 2)")
    if not np.all(np.isfinite(coords)):
        raise ValueError("coordinates must be finite")
    n = coords.shape[0]
    if not (1 <= k < n):
        raise ValueError(f"need 1 <= k < N, got k={k}, N={n}")
    diff = coords[:, None, :] - coords[None, :, :]
    d2 = np.sum(diff * diff, axis=2)
    masked = d2.copy()
    np.fill_diagonal(masked, np.inf)
    # stable argsort: equidistant neighbors resolved by lowest index
    nearest = np.argsort(masked, axis=1, kind="stable")[:, :k]
    pairs = set()
    for i in range(n):
        for j in nearest[i]:
            pairs.add((min(i, int(j)), max(i, int(j))))
    edges = np.array(sorted(pairs), dtype=np.int64)
    ed2 = d2[edges[:, 0], edges[:, 1]]
    sigma2 = float(ed2.mean())
    weights = np.exp(-ed2 / sigma2) if sigma2 > 0.0 else np.ones(ed2.shape[0])
    return graph_from_edges(n, edges, weights)


def spectral_radius(graph: Graph, tol: float = 1e-10, max_iter: int = 10000) -> float:
    """Largest absolute eigenvalue of the GSO via power iteration.

    Uses the norm-growth estimate ||Sx|| / ||x||, which also converges for
    spectra with +/- rho pairs (bipartite graphs).
    """
    if graph.m < 1:
        raise ValueError("spectral radius needs at least one edge")
    S = graph.gso
    rng = np.random.default_rng(_POWER_ITERATION_SEED)
    x = rng.standard_normal(graph.n)
    x /= np.linalg.norm(x)
    lam_prev = np.inf
    lam = 0.0
    for _ in range(max_iter):
        y = S @ x
        lam = float(np.linalg.norm(y))
        if lam == 0.0:
            x = rng.standard_normal(graph.n)
            x /= np.linalg.norm(x)
            lam_prev = np.inf
            continue
        x = y / lam
        if abs(lam - lam_prev) <= tol:
            return lam
        lam_prev = lam
    raise PowerIterationError(
        f"power iteration did not converge within {max_iter} iterations "
        f"(last estimate {lam})", lam, x)


def normalize_gso(graph: Graph) -> Graph:
    """Rescale the GSO by its largest absolute eigenvalue so rho(S) = 1."""
    lam = spectral_radius(graph)
    return graph_from_edges(graph.n, graph.edges, graph.weights / lam)


def shift(graph: Graph, x: np.ndarray) -> np.ndarray:
    """One-hop shift S x of a single graph signal."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (graph.n,):
        raise ValueError(f"signal shape {x.shape} does not match N={graph.n}")
    SHIFT_COUNTER.add(1)
    return graph.gso @ x


# Wide stacks on small dense-ish graphs shift faster through a BLAS product
# with the densified GSO. The cutoffs keep every graph small enough for the
# brute-force oracle comparisons (N <= 15) on the bitwise-reproducible CSR
# row-traversal path.
_DENSE_MIN_N = 24
_DENSE_MAX_N = 512
_DENSE_MIN_COLS = 8
_DENSE_MIN_DENSITY = 0.05


def _dense_gso(graph: Graph):
    key = "dense_gso"
    if key not in graph._cache:
        dense = None
        if _DENSE_MIN_N <= graph.n <= _DENSE_MAX_N:
            if graph.gso.nnz >= _DENSE_MIN_DENSITY * graph.n * graph.n:
                dense = graph.gso.toarray()
        graph._cache[key] = dense
    return graph._cache[key]


def shift_stack(graph: Graph, X: np.ndarray) -> np.ndarray:
    """One-hop shift of a column stack of signals, shape (N, C)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != graph.n:
        raise ValueError(f"stack shape {X.shape} does not match N={graph.n}")
    SHIFT_COUNTER.add(X.shape[1])
    if X.shape[1] >= _DENSE_MIN_COLS:
        dense = _dense_gso(graph)
        if dense is not None:
            return dense @ X
    return graph.gso @ X


@dataclass(frozen=True)
class PermutationMap:
    """Node relabeling: ``perm[i]`` is the new label of node i."""

    perm: np.ndarray

    def __post_init__(self):
        perm = np.asarray(self.perm, dtype=np.int64)
        object.__setattr__(self, "perm", perm)
        if perm.ndim != 1 or not np.array_equal(np.sort(perm), np.arange(perm.shape[0])):
            raise ValueError("perm must be a bijection of 0..N-1")

    @property
    def n(self) -> int:
        return int(self.perm.shape[0])

    def inverse(self) -> "PermutationMap":
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(self.n)
        return PermutationMap(inv)

    @staticmethod
    def identity(n: int) -> "PermutationMap":
        return PermutationMap(np.arange(n))

    @staticmethod
    def random(n: int, seed) -> "PermutationMap":
        rng = np.random.default_rng(seed)
        return PermutationMap(rng.permutation(n))


def permute_signal(x: np.ndarray, pmap: PermutationMap) -> np.ndarray:
    """Relabel a signal (rows of any (N, ...) array) consistently with P^T x."""
    x = np.asarray(x)
    if x.shape[0] != pmap.n:
        raise ValueError("signal/permutation size mismatch")
    out = np.empty_like(x)
    out[pmap.perm] = x
    return out


def permute(graph: Graph, pmap: PermutationMap) -> Graph:
    """Relabel all nodes; the new GSO is the conjugation P^T S P."""
    if pmap.n != graph.n:
        raise ValueError("graph/permutation size mismatch")
    return graph_from_edges(graph.n, pmap.perm[graph.edges], graph.weights.copy())


def sample_link_loss(graph: Graph, drop_prob: float, seed) -> Graph:
    """Remove each undirected edge independently with probability ``drop_prob``.

    The surviving GSO keeps the original weights; it is deliberately not
    re-normalized (live link failure: nodes cannot re-estimate the spectrum).
    """
    if not (0.0 <= drop_prob < 1.0):
        raise ValueError(f"drop_prob must be in [0, 1), got {drop_prob}")
    rng = np.random.default_rng(seed)
    keep = rng.random(graph.m) >= drop_prob
    return graph_from_edges(graph.n, graph.edges[keep], graph.weights[keep])


def inf_norm_max_power(graph: Graph, K: int) -> float:
    """max_{1 <= k <= K} of the infinity norm (max absolute row sum) of S^k."""
    if K < 1:
        raise ValueError("K must be >= 1")
    P = graph.gso.toarray()
    best = float(np.max(np.sum(np.abs(P), axis=1))) if graph.n else 0.0
    for _ in range(2, K + 1):
        P = graph.gso @ P
        best = max(best, float(np.max(np.sum(np.abs(P), axis=1))))
    return best


def save_edge_list(graph: Graph, path) -> None:
    """Write the `N M` header plus one `i j w` triple per line, 0-indexed."""
    lines = [f"{graph.n} {graph.m}"]
    for (i, j), w in zip(graph.edges, graph.weights):
        lines.append(f"{i} {j} {float(w)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_edge_list(path) -> Graph:
    tokens = Path(path).read_text().split("\n")
    rows = [ln.split() for ln in tokens if ln.strip()]
    if not rows or len(rows[0]) != 2:
        raise ValueError(f"{path}: missing `N M` header")
    n, m = int(rows[0][0]), int(rows[0][1])
    if len(rows) - 1 != m:
        raise ValueError(f"{path}: header says {m} edges, found {len(rows) - 1}")
    edges = np.array([[int(r[0]), int(r[1])] for r in rows[1:]], dtype=np.int64).reshape(-1, 2)
    weights = np.array([float(r[2]) for r in rows[1:]], dtype=np.float64)
    return graph_from_edges(n, edges, weights)


def load_coords(path) -> np.ndarray:
    """Read an `i x y` per line coordinates file covering nodes 0..N-1."""
    rows = [ln.split() for ln in Path(path).read_text().split("\n") if ln.strip()]
    n = len(rows)
    coords = np.full((n, 2), np.nan)
    for r in rows:
        i = int(r[0])
        if not (0 <= i < n):
            raise ValueError(f"{path}: node index {i} out of range for {n} rows")
        coords[i] = (float(r[1]), float(r[2]))
    if np.any(np.isnan(coords)):
        raise ValueError(f"{path}: node indices must cover 0..{n - 1} exactly")
    return coords
