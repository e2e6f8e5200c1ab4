"""Graph convolutional filters and per-layer filter banks.

A graph convolution is a polynomial in the shift operator applied through
the shift recursion, so a filter of order K costs exactly K one-hop
exchanges per input signal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Graph, shift

__all__ = ["FilterTaps", "FilterBank", "graph_convolution", "filter_bank_apply"]


@dataclass(frozen=True)
class FilterTaps:
    """Polynomial filter coefficients [h_0, ..., h_K]."""

    h: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h, dtype=np.float64)
        object.__setattr__(self, "h", h)
        if h.ndim != 1 or h.shape[0] < 1:
            raise ValueError("taps must be a nonempty 1-D vector")
        if not np.all(np.isfinite(h)):
            raise ValueError("taps must be finite")

    @property
    def order(self) -> int:
        return int(self.h.shape[0] - 1)


@dataclass(frozen=True)
class FilterBank:
    """Rectangular bank of filters sharing one order: coeffs[f, g, k]."""

    coeffs: np.ndarray  # (F_out, F_in, K+1)
    layer: int = 0

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=np.float64)
        object.__setattr__(self, "coeffs", coeffs)
        if coeffs.ndim != 3 or coeffs.shape[2] < 1:
            raise ValueError("bank coefficients must have shape (F_out, F_in, K+1)")
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("bank coefficients must be finite")

    @property
    def f_out(self) -> int:
        return int(self.coeffs.shape[0])

    @property
    def f_in(self) -> int:
        return int(self.coeffs.shape[1])

    @property
    def order(self) -> int:
        return int(self.coeffs.shape[2] - 1)

    @staticmethod
    def from_taps(taps_grid, layer: int = 0) -> "FilterBank":
        """Assemble from an F_out x F_in grid of FilterTaps of uniform order."""
        rows = [[np.asarray(t.h, dtype=np.float64) for t in row] for row in taps_grid]
        orders = {h.shape[0] for row in rows for h in row}
        if len(orders) != 1:
            raise ValueError("all taps in a bank must share one order")
        return FilterBank(np.array(rows), layer=layer)


def graph_convolution(graph: Graph, x: np.ndarray, taps: FilterTaps) -> np.ndarray:
    """y = sum_k h_k S^k x via the shift recursion (exactly K shifts)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (graph.n,):
        raise ValueError(f"signal shape {x.shape} does not match N={graph.n}")
    h = taps.h
    y = h[0] * x
    cur = x
    for k in range(1, h.shape[0]):
        cur = shift(graph, cur)
        y = y + h[k] * cur
    return y


def filter_bank_apply(graph: Graph, X: np.ndarray, bank: FilterBank) -> np.ndarray:
    """Apply a bank to an (N, F_in) feature stack, producing (N, F_out).

    The shift recursion runs once per input feature and is shared across all
    output features, so the bank costs exactly K * F_in shifts. Accumulation
    order is fixed (input features ascending, shift order ascending inside)
    for bit-reproducibility.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape != (graph.n, bank.f_in):
        raise ValueError(
            f"feature stack shape {X.shape} does not match (N={graph.n}, F_in={bank.f_in})")
    coeffs = bank.coeffs
    Z = np.zeros((graph.n, bank.f_out))
    for g in range(bank.f_in):
        cur = X[:, g]
        Z += cur[:, None] * coeffs[:, g, 0][None, :]
        for k in range(1, bank.order + 1):
            cur = shift(graph, cur)
            Z += cur[:, None] * coeffs[:, g, k][None, :]
    return Z
