"""Reverse-mode differentiation for the network's operation set.

This is not a general autodiff system: forward functions for the handful of
primitives (filter banks, the six nonlinearities, the per-node readout)
return a typed record of saved intermediates, and a matching vjp_* function
turns an upstream gradient into input/parameter gradients. Batched tensors
are laid out (N, B, F): node axis first so one-hop shifts reshape to a
single sparse product.

Subgradient conventions at the nonsmooth points: ties in a max route the
gradient to the lowest-index attaining neighbor; an even-size median splits
it 0.5/0.5 across the two middle entries. Records carry a tie margin so the
finite-difference checker can re-sample inputs that sit on (or within a
step of) a kink.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import Graph, shift_stack
from .activations import (
    KHopNeighborhoods,
    _reduce_kernel,
    _reduce_max,
    _reduce_median,
)

__all__ = [
    "Param",
    "ParamStore",
    "Tape",
    "adam_step",
    "conv_forward",
    "vjp_graph_convolution",
    "filter_bank_forward",
    "vjp_filter_bank",
    "activation_forward",
    "activation_vjp",
    "vjp_relu",
    "vjp_ga_max",
    "vjp_ga_median",
    "vjp_ga_kernel",
    "vjp_localized",
    "loss_cross_entropy",
    "loss_mse",
    "loss_smooth_l1",
    "FdReport",
    "finite_difference_check",
]


class Param:
    """Named tensor with a gradient slot and ADAM moment slots."""

    __slots__ = ("name", "value", "grad", "m", "v")

    def __init__(self, name: str, value):
        self.name = name
        self.value = np.array(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)

    def __repr__(self) -> str:
        return f"Param({self.name!r}, shape={self.value.shape})"


class ParamStore:
    """Flat list of named parameters plus the shared ADAM step counter."""

    def __init__(self) -> None:
        self._params: list[Param] = []
        self._by_name: dict[str, Param] = {}
        self.t = 0

    def add(self, name: str, value) -> Param:
        if name in self._by_name:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Param(name, value)
        self._params.append(p)
        self._by_name[name] = p
        return p

    def __iter__(self):
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def __getitem__(self, name: str) -> Param:
        return self._by_name[name]

    def names(self) -> list[str]:
        return [p.name for p in self._params]

    def total_size(self) -> int:
        return sum(p.value.size for p in self._params)

    def zero_grad(self) -> None:
        for p in self._params:
            p.grad[...] = 0.0

    def state_copy(self) -> list[np.ndarray]:
        return [p.value.copy() for p in self._params]

    def load_values(self, values) -> None:
        if len(values) != len(self._params):
            raise ValueError("parameter count mismatch")
        for p, v in zip(self._params, values):
            if p.value.shape != v.shape:
                raise ValueError(f"shape mismatch for {p.name}")
            p.value[...] = v


def adam_step(store: ParamStore, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected ADAM update; gradients are zeroed after the step."""
    store.t += 1
    bc1 = 1.0 - beta1 ** store.t
    bc2 = 1.0 - beta2 ** store.t
    for p in store:
        g = p.grad
        p.m *= beta1
        p.m += (1.0 - beta1) * g
        p.v *= beta2
        p.v += (1.0 - beta2) * (g * g)
        p.value -= lr * (p.m / bc1) / (np.sqrt(p.v / bc2) + eps)
        g[...] = 0.0


# ---------------------------------------------------------------------------
# primitives: forward-with-record and vector-Jacobian products
# ---------------------------------------------------------------------------


def _shift3(graph: Graph, X: np.ndarray) -> np.ndarray:
    """One-hop shift along the node axis of an (N, B, F) tensor."""
    n, b, f = X.shape
    return shift_stack(graph, X.reshape(n, b * f)).reshape(n, b, f)


@dataclass
class ConvolutionRecord:
    graph: Graph
    x: np.ndarray      # (N,) or (N, B)
    taps: np.ndarray   # (K+1,)


def conv_forward(graph: Graph, x: np.ndarray, taps: np.ndarray):
    """Single graph convolution y = sum_k h_k S^k x, recording for backward."""
    x = np.asarray(x, dtype=np.float64)
    taps = np.asarray(taps, dtype=np.float64)
    squeeze = x.ndim == 1
    cur = x[:, None] if squeeze else x
    y = taps[0] * cur
    run = cur
    for k in range(1, taps.shape[0]):
        run = shift_stack(graph, run)
        y = y + taps[k] * run
    rec = ConvolutionRecord(graph, cur, taps)
    return (y[:, 0] if squeeze else y), rec


def vjp_graph_convolution(rec: ConvolutionRecord, gbar: np.ndarray):
    """Gradients of a recorded convolution: d/dh_k = <S^k x, g>, and
    d/dx = sum_k h_k S^k g. The GSO is symmetric, so both reduce to one
    shift chain over the upstream gradient (<S^k x, g> = <x, S^k g>)."""
    gbar = np.asarray(gbar, dtype=np.float64)
    squeeze = gbar.ndim == 1
    G = gbar[:, None] if squeeze else gbar
    taps = rec.taps
    gtaps = np.empty_like(taps)
    cur = G
    gtaps[0] = float(np.sum(rec.x * cur))
    gx = taps[0] * cur
    for k in range(1, taps.shape[0]):
        cur = shift_stack(rec.graph, cur)
        gtaps[k] = float(np.sum(rec.x * cur))
        gx = gx + taps[k] * cur
    return (gx[:, 0] if squeeze else gx), gtaps


@dataclass
class FilterBankRecord:
    graph: Graph
    x: np.ndarray       # (N, B, F_in)
    coeffs: np.ndarray  # (K+1, F_in, F_out)


def _feature_matmul(X: np.ndarray, M: np.ndarray) -> np.ndarray:
    """(N, B, F_in) @ (F_in, F_out) as one flat GEMM."""
    n, b, f = X.shape
    return (X.reshape(n * b, f) @ M).reshape(n, b, M.shape[1])


def filter_bank_forward(graph: Graph, X: np.ndarray, coeffs: np.ndarray):
    """Bank application Z = sum_k (S^k X) @ coeffs[k] on an (N, B, F_in) batch."""
    cur = X
    Z = _feature_matmul(cur, coeffs[0])
    for k in range(1, coeffs.shape[0]):
        cur = _shift3(graph, cur)
        Z += _feature_matmul(cur, coeffs[k])
    return Z, FilterBankRecord(graph, X, coeffs)


def vjp_filter_bank(rec: FilterBankRecord, G: np.ndarray):
    """Gradients for a recorded bank application.

    Shifted inputs are not saved: with a symmetric GSO, both the tap
    gradients <S^k x, G> = <x, S^k G> and the input gradient
    sum_k (S^k G) @ coeffs[k]^T come out of one shift chain over G, which
    also avoids holding a (K+1, N, B, F) stack for large orders.
    """
    coeffs = rec.coeffs
    n, b, f_in = rec.x.shape
    x_flat = rec.x.reshape(n * b, f_in)
    gcoeffs = np.empty_like(coeffs)
    cur = G
    gcoeffs[0] = x_flat.T @ cur.reshape(n * b, -1)
    gX = _feature_matmul(cur, coeffs[0].T)
    for k in range(1, coeffs.shape[0]):
        cur = _shift3(rec.graph, cur)
        gcoeffs[k] = x_flat.T @ cur.reshape(n * b, -1)
        gX += _feature_matmul(cur, coeffs[k].T)
    return gX, gcoeffs


def _cols(X: np.ndarray) -> np.ndarray:
    n, b, f = X.shape
    return X.reshape(n, b * f)


def _uncols(X2: np.ndarray, shape) -> np.ndarray:
    return X2.reshape(shape)


def _scatter_add(idx: np.ndarray, vals: np.ndarray) -> np.ndarray:
    """Scatter vals[i, c] into row idx[i, c] of a zero (N, C) array; idx -1 skipped."""
    out = np.zeros_like(vals)
    valid = idx >= 0
    if np.any(valid):
        cols = np.broadcast_to(np.arange(vals.shape[1]), vals.shape)
        np.add.at(out, (idx[valid], cols[valid]), vals[valid])
    return out


@dataclass
class ReluRecord:
    mask: np.ndarray
    margin: float


@dataclass
class GaMaxRecord:
    graph: Graph
    relu_part: np.ndarray      # (N, B, F)
    mask: np.ndarray
    beta: np.ndarray           # () or (F,)
    h_sigma: np.ndarray        # (K, F)
    slo: list                  # per k: (N, B, F) operator outputs
    arg: list                  # per k: (N, B, F) int64 attaining node (-1 empty)
    margin: float


@dataclass
class GaMedianRecord:
    graph: Graph
    relu_part: np.ndarray
    mask: np.ndarray
    beta: np.ndarray
    h_sigma: np.ndarray
    slo: list
    lo: list
    hi: list
    margin: float


@dataclass
class GaKernelRecord:
    graph: Graph
    relu_part: np.ndarray
    mask: np.ndarray
    beta: np.ndarray
    h_sigma: np.ndarray
    gamma: float
    shifted: list              # per k: (N, B, F) shifted signal
    kvals: list                # per k: (N, B, F) kernel values
    margin: float


@dataclass
class LocalizedRecord:
    graph: Graph
    kind: str                  # localized_max | localized_median
    relu_part: np.ndarray
    mask: np.ndarray
    beta: np.ndarray
    h_sigma: np.ndarray
    terms: list                # per k: (N, B, F) aggregation outputs
    sel: list                  # per k: (arg,) for max or (lo, hi) for median
    margin: float


def _kernel_values(graph: Graph, s2: np.ndarray, gamma: float) -> np.ndarray:
    """Columnwise Gaussian kernel over one-hop neighborhoods of (N, C) values.

    Uses the algebraic expansion sum_j (s_i - s_j)^2 = d_i s_i^2
    - 2 s_i (A s)_i + (A s^2)_i with the unweighted adjacency A; clamped at
    zero so cancellation can never push the kernel above 1.
    """
    A = graph.unweighted_adjacency()
    deg = graph.degrees.astype(np.float64)[:, None]
    As = A @ s2
    As2 = A @ (s2 * s2)
    q = deg * s2 * s2 - 2.0 * s2 * As + As2
    np.maximum(q, 0.0, out=q)
    return np.exp(-q / (2.0 * gamma * gamma))


def activation_forward(graph: Graph, Z: np.ndarray, kind: str, beta: np.ndarray,
                       h_sigma: np.ndarray, gamma: float = 0.1,
                       hoods: KHopNeighborhoods | None = None,
                       with_margin: bool = False):
    """Apply one activation layer to an (N, B, F) batch, recording for backward.

    ``beta`` broadcasts per feature (shape () or (F,)); ``h_sigma`` has shape
    (K, F). For the localized kinds, ``hoods`` must cover depth K. Tie
    margins (selection gaps and ReLU-kink proximity) are only measured when
    ``with_margin`` is set; the finite-difference checker needs them, the
    training loop does not.
    """
    n, b, f = Z.shape
    relu_part = np.maximum(Z, 0.0)
    kink = float(np.min(np.abs(Z))) if with_margin else np.inf
    if kind == "relu":
        return relu_part, ReluRecord(mask=Z > 0.0, margin=kink)

    mask = Z > 0.0
    margin = kink
    out = beta * relu_part
    K = h_sigma.shape[0]

    if kind in ("ga_max", "ga_median"):
        cur = Z
        slo, sel_a, sel_b = [], [], []
        for k in range(K):
            cur = _shift3(graph, cur)
            if kind == "ga_max":
                vals, arg, mrg = _reduce_max(_cols(cur), graph.neighbor_lists,
                                             with_margin)
                sel_a.append(_uncols(arg, (n, b, f)))
            else:
                vals, lo, hi, mrg = _reduce_median(_cols(cur), graph.neighbor_lists,
                                                   with_margin)
                sel_a.append(_uncols(lo, (n, b, f)))
                sel_b.append(_uncols(hi, (n, b, f)))
            vals = _uncols(vals, (n, b, f))
            slo.append(vals)
            out += h_sigma[k] * vals
            margin = min(margin, mrg)
        if kind == "ga_max":
            rec = GaMaxRecord(graph, relu_part, mask, beta, h_sigma, slo, sel_a, margin)
        else:
            rec = GaMedianRecord(graph, relu_part, mask, beta, h_sigma, slo, sel_a, sel_b, margin)
        return out, rec

    if kind == "ga_kernel":
        cur = Z
        shifted, kvals = [], []
        for k in range(K):
            cur = _shift3(graph, cur)
            kv = _uncols(_kernel_values(graph, _cols(cur), gamma), (n, b, f))
            shifted.append(cur)
            kvals.append(kv)
            out += h_sigma[k] * kv
        return out, GaKernelRecord(graph, relu_part, mask, beta, h_sigma, gamma,
                                   shifted, kvals, margin)

    if kind in ("localized_max", "localized_median"):
        if hoods is None or hoods.depth < K:
            raise ValueError("localized activation needs k-hop neighborhoods of depth K")
        terms, sel = [], []
        zc = _cols(Z)
        for k in range(K):
            if kind == "localized_max":
                vals, arg, mrg = _reduce_max(zc, hoods.sets[k], with_margin)
                sel.append((_uncols(arg, (n, b, f)),))
            else:
                vals, lo, hi, mrg = _reduce_median(zc, hoods.sets[k], with_margin)
                sel.append((_uncols(lo, (n, b, f)), _uncols(hi, (n, b, f))))
            vals = _uncols(vals, (n, b, f))
            terms.append(vals)
            out += h_sigma[k] * vals
            margin = min(margin, mrg)
        return out, LocalizedRecord(graph, kind, relu_part, mask, beta, h_sigma,
                                    terms, sel, margin)

    raise ValueError(f"unknown activation kind {kind!r}")


def vjp_relu(rec: ReluRecord, G: np.ndarray) -> np.ndarray:
    return np.where(rec.mask, G, 0.0)


def _relu_path_grads(rec, G):
    """Shared ReLU-path pieces: (gz from the relu path, per-feature gbeta)."""
    gz = np.where(rec.mask, rec.beta * G, 0.0)
    gbeta = np.einsum("nbf,nbf->f", rec.relu_part, G)
    return gz, gbeta


def vjp_ga_max(rec: GaMaxRecord, G: np.ndarray):
    """Gradients for the graph-adaptive max activation.

    Each node's upstream gradient is routed through h_k to the attaining
    neighbor's shifted entry, then back through S^k (Horner over k).
    Returns (gz, gbeta per feature, gh of shape (K, F)).
    """
    gz, gbeta = _relu_path_grads(rec, G)
    K = rec.h_sigma.shape[0]
    gh = np.empty_like(rec.h_sigma)
    shape = G.shape
    acc = None
    for k in range(K - 1, -1, -1):
        gh[k] = np.einsum("nbf,nbf->f", rec.slo[k], G)
        u = _scatter_add(_cols(rec.arg[k]), _cols(rec.h_sigma[k] * G))
        acc = u if acc is None else _cols(_shift3(rec.graph, _uncols(acc, shape))) + u
    if acc is not None:
        gz += _shift3(rec.graph, _uncols(acc, shape))
    return gz, gbeta, gh


def vjp_ga_median(rec: GaMedianRecord, G: np.ndarray):
    """Like vjp_ga_max, with the gradient split 0.5/0.5 across the two
    middle entries (an odd-size set selects the same entry twice)."""
    gz, gbeta = _relu_path_grads(rec, G)
    K = rec.h_sigma.shape[0]
    gh = np.empty_like(rec.h_sigma)
    shape = G.shape
    acc = None
    for k in range(K - 1, -1, -1):
        gh[k] = np.einsum("nbf,nbf->f", rec.slo[k], G)
        half = _cols(0.5 * rec.h_sigma[k] * G)
        u = _scatter_add(_cols(rec.lo[k]), half) + _scatter_add(_cols(rec.hi[k]), half)
        acc = u if acc is None else _cols(_shift3(rec.graph, _uncols(acc, shape))) + u
    if acc is not None:
        gz += _shift3(rec.graph, _uncols(acc, shape))
    return gz, gbeta, gh


def vjp_ga_kernel(rec: GaKernelRecord, G: np.ndarray):
    """Smooth chain rule through the Gaussian kernel terms and back through
    S^k. With s = S^k z and kernel value kv at node i:
    d kv_i / d s_i = -kv_i (d_i s_i - sum_j s_j) / gamma^2 and
    d kv_i / d s_j = kv_i (s_i - s_j) / gamma^2 for each neighbor j."""
    gz, gbeta = _relu_path_grads(rec, G)
    K = rec.h_sigma.shape[0]
    gh = np.empty_like(rec.h_sigma)
    graph = rec.graph
    A = graph.unweighted_adjacency()
    deg = graph.degrees.astype(np.float64)[:, None]
    g2 = rec.gamma * rec.gamma
    shape = G.shape
    acc = None
    for k in range(K - 1, -1, -1):
        gh[k] = np.einsum("nbf,nbf->f", rec.kvals[k], G)
        s = _cols(rec.shifted[k])
        w = _cols(rec.h_sigma[k] * G * rec.kvals[k]) / g2
        # own-value path plus the neighbor path gathered from the reverse
        # direction (the graph is undirected)
        gs = -w * (deg * s - A @ s) + (A @ (w * s) - s * (A @ w))
        acc = gs if acc is None else _cols(_shift3(graph, _uncols(acc, shape))) + gs
    if acc is not None:
        gz += _shift3(graph, _uncols(acc, shape))
    return gz, gbeta, gh


def vjp_localized(rec: LocalizedRecord, G: np.ndarray):
    """Gradients for the localized baseline: the aggregation reads raw input
    values, so selections scatter straight back without any shift chain."""
    gz, gbeta = _relu_path_grads(rec, G)
    K = rec.h_sigma.shape[0]
    gh = np.empty_like(rec.h_sigma)
    shape = G.shape
    for k in range(K):
        gh[k] = np.einsum("nbf,nbf->f", rec.terms[k], G)
        if rec.kind == "localized_max":
            (arg,) = rec.sel[k]
            u = _scatter_add(_cols(arg), _cols(rec.h_sigma[k] * G))
        else:
            lo, hi = rec.sel[k]
            half = _cols(0.5 * rec.h_sigma[k] * G)
            u = _scatter_add(_cols(lo), half) + _scatter_add(_cols(hi), half)
        gz += _uncols(u, shape)
    return gz, gbeta, gh


_ACTIVATION_VJPS = {
    ReluRecord: lambda rec, G: (vjp_relu(rec, G), None, None),
    GaMaxRecord: vjp_ga_max,
    GaMedianRecord: vjp_ga_median,
    GaKernelRecord: vjp_ga_kernel,
    LocalizedRecord: vjp_localized,
}


def activation_vjp(rec, G: np.ndarray):
    """Dispatch to the right activation VJP; returns (gz, gbeta, gh)."""
    return _ACTIVATION_VJPS[type(rec)](rec, G)


@dataclass
class Tape:
    """Ordered record of one forward pass, replayable in reverse exactly once."""

    entries: list = field(default_factory=list)
    margin: float = np.inf
    consumed: bool = False


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def loss_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean softmax cross-entropy over all leading axes of (..., C) logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    c = logits.shape[-1]
    if labels.shape != logits.shape[:-1]:
        raise ValueError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError("label out of range")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    expo = np.exp(shifted)
    denom = expo.sum(axis=-1, keepdims=True)
    logprob = shifted - np.log(denom)
    picked = np.take_along_axis(logprob, labels[..., None], axis=-1)[..., 0]
    count = max(labels.size, 1)
    loss = float(-picked.sum() / count)
    grad = expo / denom
    np.subtract.at(grad.reshape(-1, c),
                   (np.arange(labels.size), labels.reshape(-1)), 1.0)
    return loss, grad / count


def loss_mse(pred: np.ndarray, target: np.ndarray):
    """Mean squared error over all entries."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    d = pred - target
    count = max(d.size, 1)
    return float(np.sum(d * d) / count), 2.0 * d / count


def loss_smooth_l1(pred: np.ndarray, target: np.ndarray):
    """Smooth l1 (Huber with transition point 1.0), mean over all entries."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    d = pred - target
    a = np.abs(d)
    small = a <= 1.0
    per = np.where(small, 0.5 * d * d, a - 0.5)
    count = max(d.size, 1)
    return float(per.sum() / count), np.where(small, d, np.sign(d)) / count


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------


@dataclass
class FdReport:
    max_rel_error: float
    worst_param: str
    worst_index: int
    num_probed: int
    input_seed: int
    resamples: int

    def __str__(self) -> str:
        return (f"max rel error {self.max_rel_error:.3e} at "
                f"{self.worst_param}[{self.worst_index}] "
                f"({self.num_probed} probes, {self.resamples} resamples)")


def finite_difference_check(loss_and_grad, loss_only, store: ParamStore,
                            probe_seed: int = 0, num_probes: int = 200,
                            step: float = 1e-5, tie_tol: float = 1e-7,
                            max_resamples: int = 25) -> FdReport:
    """Central-difference check of the recorded gradients.

    ``loss_and_grad(input_seed)`` must build a probe input from the seed,
    run forward+backward (accumulating into ``store``), and return
    (loss, tie margin); ``loss_only(input_seed)`` the same without the
    backward pass. Up to ``num_probes`` randomly chosen parameter entries
    are probed; inputs are re-sampled whenever any evaluation sits within
    ``tie_tol`` of a max/median tie or a ReLU kink.
    """
    rng = np.random.default_rng(probe_seed)
    sizes = [p.value.size for p in store]
    total = sum(sizes)
    if total <= num_probes:
        probes = [(pi, fi) for pi, s in enumerate(sizes) for fi in range(s)]
    else:
        flat = rng.choice(total, size=num_probes, replace=False)
        bounds = np.cumsum(sizes)
        probes = []
        for fl in sorted(int(v) for v in flat):
            pi = int(np.searchsorted(bounds, fl, side="right"))
            prev = 0 if pi == 0 else int(bounds[pi - 1])
            probes.append((pi, fl - prev))

    input_seed = probe_seed
    for attempt in range(max_resamples):
        store.zero_grad()
        _, margin = loss_and_grad(input_seed)
        if margin < tie_tol:
            input_seed += 1
            continue
        analytic = [p.grad.copy() for p in store]
        params = list(store)
        worst = (0.0, "", 0)
        tie_hit = False
        for pi, fi in probes:
            flat = params[pi].value.reshape(-1)
            orig = flat[fi]
            flat[fi] = orig + step
            lp, m1 = loss_only(input_seed)
            flat[fi] = orig - step
            lm, m2 = loss_only(input_seed)
            flat[fi] = orig
            if min(m1, m2) < tie_tol:
                tie_hit = True
                break
            fd = (lp - lm) / (2.0 * step)
            an = analytic[pi].reshape(-1)[fi]
            rel = abs(fd - an) / max(abs(fd) + abs(an), 1e-8)
            if rel > worst[0]:
                worst = (rel, params[pi].name, fi)
        if not tie_hit:
            store.zero_grad()
            return FdReport(max_rel_error=worst[0], worst_param=worst[1],
                            worst_index=worst[2], num_probed=len(probes),
                            input_seed=input_seed, resamples=attempt)
        input_seed += 1
    raise RuntimeError(f"no tie-free probe input found in {max_resamples} attempts")
