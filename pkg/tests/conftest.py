import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from graphadapt import graph_from_edges, normalize_gso, sbm_generate


@pytest.fixture
def path3():
    """Path graph 1-2-3 (nodes 0-1-2), unit weights, unnormalized."""
    return graph_from_edges(3, [(0, 1), (1, 2)])


@pytest.fixture
def single_edge():
    return graph_from_edges(2, [(0, 1)])


def random_graph(rng, n_lo=4, n_hi=15, connected=False):
    """Small random graph for oracle comparisons; weights in (0.2, 1.2)."""
    while True:
        n = int(rng.integers(n_lo, n_hi + 1))
        mask = np.triu(rng.random((n, n)) < 0.45, k=1)
        ii, jj = np.nonzero(mask)
        if ii.size == 0:
            continue
        w = 0.2 + rng.random(ii.size)
        g = graph_from_edges(n, np.column_stack((ii, jj)), w)
        if not connected:
            return g
        from graphadapt import is_connected
        if is_connected(g):
            return g


def small_sbm(seed, n=10, c=2, normalized=True):
    g, labels = sbm_generate(n, c, 0.8, 0.3, seed)
    return (normalize_gso(g) if normalized else g), labels
