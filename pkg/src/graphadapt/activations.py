"""Nonlinearities for graph networks.

Six kinds are supported:

* ``relu``: pointwise max(0, x).
* ``localized_max`` / ``localized_median``: trainable combination of raw
  signal values aggregated over k-hop neighborhood balls. These need k-hop
  information directly, so they are only distributable at resolution 1.
* ``ga_max`` / ``ga_median``: the graph-adaptive form. The signal is shifted
  k times (k rounds of one-hop exchange) and the shifted signal is then
  aggregated over the one-hop neighborhood, so any resolution remains
  distributable.
* ``ga_kernel``: same shift structure, but the aggregation is a Gaussian
  similarity between a node's shifted value and its neighbors' shifted
  values.

Empty neighborhoods (possible after link loss) contribute 0 for max/median
terms and 1 for kernel terms. Median of an even-size set is the mean of the
two middle values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import Graph, inf_norm_max_power, shift_stack

__all__ = [
    "ACTIVATION_KINDS",
    "ActivationParams",
    "KHopNeighborhoods",
    "relu",
    "khop_sets",
    "localized_activation",
    "shifted_localized_operator",
    "shifted_localized_graph_filter",
    "ga_localized_activation",
    "gaussian_kernel",
    "kernel_operator",
    "kernel_graph_filter",
    "ga_kernel_activation",
    "lipschitz_bound",
]

ACTIVATION_KINDS = (
    "relu",
    "localized_max",
    "localized_median",
    "ga_max",
    "ga_median",
    "ga_kernel",
)


@dataclass(frozen=True)
class ActivationParams:
    """Per-feature nonlinearity coefficients.

    ``beta`` scales the pointwise ReLU path and ``h_sigma`` weighs the
    neighborhood terms at resolutions 1..K. ``gamma`` is the (non-trained)
    Gaussian kernel width, used only by ``ga_kernel``.
    """

    kind: str
    beta: float = 1.0
    h_sigma: np.ndarray = field(default_factory=lambda: np.zeros(0))
    gamma: float = 0.1

    def __post_init__(self):
        if self.kind not in ACTIVATION_KINDS:
            raise ValueError(f"unknown activation kind {self.kind!r}")
        h = np.asarray(self.h_sigma, dtype=np.float64)
        object.__setattr__(self, "h_sigma", h)
        if h.ndim != 1 or not np.all(np.isfinite(h)):
            raise ValueError("h_sigma must be a finite 1-D vector")
        if self.kind == "relu":
            if h.shape[0] != 0:
                raise ValueError("relu takes no h_sigma coefficients")
        elif h.shape[0] < 1:
            raise ValueError(f"{self.kind} needs at least one h_sigma coefficient")
        if self.kind == "ga_kernel" and not self.gamma > 0.0:
            raise ValueError("gamma must be positive for ga_kernel")

    @property
    def resolution(self) -> int:
        return int(self.h_sigma.shape[0])


@dataclass(frozen=True)
class KHopNeighborhoods:
    """Per node i and hop k, the ball of nodes within <= k hops, excluding i.

    ``sets[k - 1][i]`` is the sorted node array for hop k, 1 <= k <= depth.
    """

    depth: int
    sets: tuple[tuple[np.ndarray, ...], ...]


def khop_sets(graph: Graph, K: int) -> KHopNeighborhoods:
    """Cumulative BFS balls up to depth K, cached on the graph."""
    if K < 1:
        raise ValueError("K must be >= 1")
    key = ("khop", K)
    if key in graph._cache:
        return graph._cache[key]
    per_hop: list[list[np.ndarray]] = [[] for _ in range(K)]
    for i in range(graph.n):
        dist = np.full(graph.n, -1, dtype=np.int64)
        dist[i] = 0
        frontier = [i]
        ball: list[int] = []
        for depth in range(1, K + 1):
            nxt: list[int] = []
            for u in frontier:
                for v in graph.neighbor_lists[u]:
                    if dist[v] < 0:
                        dist[v] = depth
                        nxt.append(int(v))
            ball.extend(nxt)
            per_hop[depth - 1].append(np.array(sorted(ball), dtype=np.int64))
            frontier = nxt
    hoods = KHopNeighborhoods(depth=K, sets=tuple(tuple(rows) for rows in per_hop))
    graph._cache[key] = hoods
    return hoods


# ---------------------------------------------------------------------------
# columnwise neighborhood reductions
#
# All operators accept a single signal (N,) or a column stack (N, C) and
# apply columnwise. The helpers below do the per-node aggregation and also
# report selection indices and tie margins for the gradient machinery.
# ---------------------------------------------------------------------------


def _as_columns(x: np.ndarray, n: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        if x.shape[0] != n:
            raise ValueError(f"signal shape {x.shape} does not match N={n}")
        return x[:, None], True
    if x.ndim == 2 and x.shape[0] == n:
        return x, False
    raise ValueError(f"signal shape {x.shape} does not match N={n}")


def _reduce_max(values: np.ndarray, lists,
                with_margin: bool = False) -> tuple[np.ndarray, np.ndarray, float]:
    """Per-node max over index sets. Returns (out, argnode, tie margin).

    ``argnode`` holds the lowest-index node attaining the max (-1 for empty
    sets, where the output is 0 by convention). The margin (gap between the
    winner and the runner-up, smallest over all nodes/columns) costs an
    extra partition pass, so it is only computed on request.
    """
    n, c = values.shape
    out = np.zeros((n, c))
    arg = np.full((n, c), -1, dtype=np.int64)
    cols = np.arange(c)
    margin = np.inf
    for i, nb in enumerate(lists):
        if nb.size == 0:
            continue
        block = values[nb, :]
        pos = np.argmax(block, axis=0)
        out[i] = block[pos, cols]
        arg[i] = nb[pos]
        if with_margin and nb.size >= 2:
            top2 = np.partition(block, nb.size - 2, axis=0)[nb.size - 2:]
            margin = min(margin, float(np.min(top2[1] - top2[0])))
    return out, arg, margin


def _reduce_median(values: np.ndarray, lists,
                   with_margin: bool = False) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Per-node median over index sets (even sets: mean of the two middles).

    Returns (out, lo_node, hi_node, tie margin); lo/hi are the selected
    order-statistic nodes (-1 for empty sets) and the optional margin
    measures the value gap around the selected middle positions.
    """
    n, c = values.shape
    out = np.zeros((n, c))
    lo = np.full((n, c), -1, dtype=np.int64)
    hi = np.full((n, c), -1, dtype=np.int64)
    cols = np.arange(c)
    margin = np.inf
    for i, nb in enumerate(lists):
        d = nb.size
        if d == 0:
            continue
        block = values[nb, :]
        order = np.argsort(block, axis=0, kind="stable")
        li, hi_i = (d - 1) // 2, d // 2
        lo_pos = order[li]
        hi_pos = order[hi_i]
        out[i] = 0.5 * (block[lo_pos, cols] + block[hi_pos, cols])
        lo[i] = nb[lo_pos]
        hi[i] = nb[hi_pos]
        if with_margin and d >= 2:
            srt = np.take_along_axis(block, order, axis=0)
            if li > 0:
                margin = min(margin, float(np.min(srt[li] - srt[li - 1])))
            if hi_i + 1 < d:
                margin = min(margin, float(np.min(srt[hi_i + 1] - srt[hi_i])))
    return out, lo, hi, margin


def _reduce_kernel(values: np.ndarray, lists, gamma: float) -> np.ndarray:
    """Per-node Gaussian similarity between own value and the set's values."""
    n, c = values.shape
    out = np.ones((n, c))
    for i, nb in enumerate(lists):
        if nb.size == 0:
            continue
        diffs = values[nb, :] - values[i][None, :]
        q = np.einsum("dc,dc->c", diffs, diffs)
        out[i] = np.exp(-q / (2.0 * gamma * gamma))
    return out


# ---------------------------------------------------------------------------
# public operators
# ---------------------------------------------------------------------------


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def localized_activation(graph: Graph, x: np.ndarray, params: ActivationParams,
                         hoods: KHopNeighborhoods) -> np.ndarray:
    """beta * ReLU(x) + sum_k h_k * f(raw x over the k-hop ball).

    This is the baseline nonlinearity: it aggregates raw signal values over
    k-hop sets and never shifts, which is why it cannot be distributed
    beyond resolution 1.
    """
    if params.kind not in ("localized_max", "localized_median"):
        raise ValueError(f"expected a localized kind, got {params.kind!r}")
    if hoods.depth < params.resolution:
        raise ValueError(f"neighborhoods depth {hoods.depth} < resolution {params.resolution}")
    vals, one_d = _as_columns(x, graph.n)
    out = params.beta * np.maximum(vals, 0.0)
    for k in range(1, params.resolution + 1):
        if params.kind == "localized_max":
            term, _, _ = _reduce_max(vals, hoods.sets[k - 1])
        else:
            term, _, _, _ = _reduce_median(vals, hoods.sets[k - 1])
        out += params.h_sigma[k - 1] * term
    return out[:, 0] if one_d else out


def shifted_localized_operator(graph: Graph, x: np.ndarray, k: int, kind: str) -> np.ndarray:
    """Shift k times, then take max/median of the shifted signal over each
    one-hop neighborhood. The k shifts are k rounds of one-hop exchange."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if kind not in ("max", "median"):
        raise ValueError(f"kind must be 'max' or 'median', got {kind!r}")
    cur, one_d = _as_columns(x, graph.n)
    for _ in range(k):
        cur = shift_stack(graph, cur)
    if kind == "max":
        out, _, _ = _reduce_max(cur, graph.neighbor_lists)
    else:
        out, _, _, _ = _reduce_median(cur, graph.neighbor_lists)
    return out[:, 0] if one_d else out


def shifted_localized_graph_filter(graph: Graph, x: np.ndarray, h_sigma,
                                   kind: str) -> np.ndarray:
    """Linear combination of shifted localized operators at resolutions 1..K."""
    h = np.asarray(h_sigma, dtype=np.float64)
    if h.ndim != 1 or h.shape[0] < 1:
        raise ValueError("h_sigma must be a nonempty 1-D vector")
    if kind not in ("max", "median"):
        raise ValueError(f"kind must be 'max' or 'median', got {kind!r}")
    cur, one_d = _as_columns(x, graph.n)
    out = np.zeros_like(cur)
    for k in range(1, h.shape[0] + 1):
        cur = shift_stack(graph, cur)
        if kind == "max":
            term, _, _ = _reduce_max(cur, graph.neighbor_lists)
        else:
            term, _, _, _ = _reduce_median(cur, graph.neighbor_lists)
        out += h[k - 1] * term
    return out[:, 0] if one_d else out


def ga_localized_activation(graph: Graph, z_in: np.ndarray,
                            params: ActivationParams) -> np.ndarray:
    """beta * ReLU(z) + shifted localized graph filter of z (max/median)."""
    if params.kind not in ("ga_max", "ga_median"):
        raise ValueError(f"expected ga_max or ga_median, got {params.kind!r}")
    vals, one_d = _as_columns(z_in, graph.n)
    kind = "max" if params.kind == "ga_max" else "median"
    out = params.beta * np.maximum(vals, 0.0)
    out += shifted_localized_graph_filter(graph, vals, params.h_sigma, kind)
    return out[:, 0] if one_d else out


def gaussian_kernel(a, b, gamma: float) -> float:
    """exp(-||a - b||^2 / (2 gamma^2)), always in (0, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if not gamma > 0.0:
        raise ValueError("gamma must be positive")
    d = (a - b).ravel()
    return float(np.exp(-np.dot(d, d) / (2.0 * gamma * gamma)))


def kernel_operator(graph: Graph, x: np.ndarray, k: int, gamma: float) -> np.ndarray:
    """Shift k times, then per node the Gaussian similarity between its own
    shifted value and its neighbors' shifted values."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not gamma > 0.0:
        raise ValueError("gamma must be positive")
    cur, one_d = _as_columns(x, graph.n)
    for _ in range(k):
        cur = shift_stack(graph, cur)
    out = _reduce_kernel(cur, graph.neighbor_lists, gamma)
    return out[:, 0] if one_d else out


def kernel_graph_filter(graph: Graph, x: np.ndarray, h_sigma, gamma: float) -> np.ndarray:
    """Linear combination of kernel operators at resolutions 1..K."""
    h = np.asarray(h_sigma, dtype=np.float64)
    if h.ndim != 1 or h.shape[0] < 1:
        raise ValueError("h_sigma must be a nonempty 1-D vector")
    if not gamma > 0.0:
        raise ValueError("gamma must be positive")
    cur, one_d = _as_columns(x, graph.n)
    out = np.zeros_like(cur)
    for k in range(1, h.shape[0] + 1):
        cur = shift_stack(graph, cur)
        out += h[k - 1] * _reduce_kernel(cur, graph.neighbor_lists, gamma)
    return out[:, 0] if one_d else out


def ga_kernel_activation(graph: Graph, z_in: np.ndarray,
                         params: ActivationParams) -> np.ndarray:
    """beta * ReLU(z) + kernel graph filter of z."""
    if params.kind != "ga_kernel":
        raise ValueError(f"expected ga_kernel, got {params.kind!r}")
    vals, one_d = _as_columns(z_in, graph.n)
    out = params.beta * np.maximum(vals, 0.0)
    out += kernel_graph_filter(graph, vals, params.h_sigma, params.gamma)
    return out[:, 0] if one_d else out


def lipschitz_bound(params: ActivationParams, graph: Graph, K: int | None = None) -> float:
    """|beta| + K C max_k ||S^k||_inf with C = max_k |h_k| (ga_max only)."""
    if params.kind != "ga_max":
        raise ValueError(f"Lipschitz bound is proven for ga_max only, got {params.kind!r}")
    if K is None:
        K = params.resolution
    if K < 1:
        raise ValueError("K must be >= 1")
    C = float(np.max(np.abs(params.h_sigma))) if params.resolution else 0.0
    return abs(params.beta) + K * C * inf_norm_max_power(graph, K)
