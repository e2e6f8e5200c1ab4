"""Dense brute-force reference implementations for the test suite.

Everything here works on a dense weight matrix with explicit Python loops
and neighborhood scans, independent of the package's sparse code paths.
Row sums run in ascending column order over nonzero entries, the same
well-defined order the CSR traversal uses, so max/median selections can be
compared exactly.
"""

import numpy as np


def dense_matrix(graph):
    """Rebuild the dense weight matrix from the edge list alone."""
    W = np.zeros((graph.n, graph.n))
    for (i, j), w in zip(graph.edges, graph.weights):
        W[i, j] = w
        W[j, i] = w
    return W


def neighbor_sets(W):
    n = W.shape[0]
    return [[j for j in range(n) if j != i and W[i, j] != 0.0] for i in range(n)]


def dense_shift(W, x):
    n = W.shape[0]
    y = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for j in range(n):
            if W[i, j] != 0.0:
                acc += W[i, j] * x[j]
        y[i] = acc
    return y


def dense_shift_k(W, x, k):
    cur = np.asarray(x, dtype=np.float64)
    for _ in range(k):
        cur = dense_shift(W, cur)
    return cur


def dense_convolution(W, x, h):
    y = h[0] * np.asarray(x, dtype=np.float64)
    cur = np.asarray(x, dtype=np.float64)
    for k in range(1, len(h)):
        cur = dense_shift(W, cur)
        y = y + h[k] * cur
    return y


def dense_bank(W, X, coeffs):
    """coeffs indexed [f_out][f_in][k]; X is (N, F_in)."""
    f_out = len(coeffs)
    f_in = len(coeffs[0])
    n = W.shape[0]
    Z = np.zeros((n, f_out))
    for f in range(f_out):
        for g in range(f_in):
            Z[:, f] += dense_convolution(W, X[:, g], coeffs[f][g])
    return Z


def khop_balls(W, K):
    """BFS balls: balls[k-1][i] = sorted nodes within <= k hops, excluding i."""
    n = W.shape[0]
    nbrs = neighbor_sets(W)
    balls = [[None] * n for _ in range(K)]
    for i in range(n):
        dist = {i: 0}
        frontier = [i]
        ball = []
        for depth in range(1, K + 1):
            nxt = []
            for u in frontier:
                for v in nbrs[u]:
                    if v not in dist:
                        dist[v] = depth
                        nxt.append(v)
            ball.extend(nxt)
            balls[depth - 1][i] = sorted(ball)
            frontier = nxt
    return balls


def set_max(values):
    return max(values) if len(values) else 0.0


def set_median(values):
    if not len(values):
        return 0.0
    srt = sorted(values)
    d = len(srt)
    return 0.5 * (srt[(d - 1) // 2] + srt[d // 2])


def brute_slo(W, x, k, kind):
    """Shift k times, then max/median of the shifted signal over one-hop sets."""
    s = dense_shift_k(W, x, k)
    nbrs = neighbor_sets(W)
    agg = set_max if kind == "max" else set_median
    return np.array([agg([s[j] for j in nbrs[i]]) for i in range(W.shape[0])])


def brute_slgf(W, x, h_sigma, kind):
    out = np.zeros(W.shape[0])
    for k, h in enumerate(h_sigma, start=1):
        out += h * brute_slo(W, x, k, kind)
    return out


def brute_ga_localized(W, z, beta, h_sigma, kind):
    return beta * np.maximum(z, 0.0) + brute_slgf(W, z, h_sigma, kind)


def brute_kernel_op(W, x, k, gamma):
    s = dense_shift_k(W, x, k)
    nbrs = neighbor_sets(W)
    out = np.ones(W.shape[0])
    for i in range(W.shape[0]):
        if not nbrs[i]:
            continue
        q = 0.0
        for j in nbrs[i]:
            q += (s[i] - s[j]) ** 2
        out[i] = np.exp(-q / (2.0 * gamma * gamma))
    return out


def brute_kernel_filter(W, x, h_sigma, gamma):
    out = np.zeros(W.shape[0])
    for k, h in enumerate(h_sigma, start=1):
        out += h * brute_kernel_op(W, x, k, gamma)
    return out


def brute_ga_kernel(W, z, beta, h_sigma, gamma):
    return beta * np.maximum(z, 0.0) + brute_kernel_filter(W, z, h_sigma, gamma)


def brute_localized(W, x, beta, h_sigma, kind, balls=None):
    """Baseline localized activation over raw values on k-hop balls."""
    K = len(h_sigma)
    if balls is None:
        balls = khop_balls(W, K)
    agg = set_max if kind == "max" else set_median
    out = beta * np.maximum(x, 0.0)
    for k in range(1, K + 1):
        out = out + h_sigma[k - 1] * np.array(
            [agg([x[j] for j in balls[k - 1][i]]) for i in range(W.shape[0])])
    return out


def brute_inf_norm_max_power(W, K):
    best = 0.0
    P = np.eye(W.shape[0])
    for _ in range(1, K + 1):
        P = W @ P
        best = max(best, float(np.max(np.sum(np.abs(P), axis=1))))
    return best
