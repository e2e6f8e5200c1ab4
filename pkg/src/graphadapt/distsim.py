"""Round-based one-hop message-passing execution of the GCNN forward pass.

Every node holds only its own scalars and the GSO row it owns; in each
lockstep round it sends one scalar per incident edge and updates from its
inbox. A filter of order K costs K rounds per input feature. A non-relu
activation of resolution K costs K shift rounds plus one trailing
aggregation round per output feature: the exchange in round r delivers the
(r-1)-shifted neighbor values needed for resolution r-1, and the trailing
round delivers the K-shifted values for the final resolution. The localized
baseline reads its raw neighbor values from round 1 and is rejected beyond
resolution 1, since higher resolutions would need non-neighbor values.

Per-node sums run in ascending neighbor order, so the simulated output
matches the centralized forward pass to floating-point reassociation error.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import Graph
from .model import GcnnConfig, GcnnModel

__all__ = [
    "MessageLog",
    "NodeState",
    "NotDistributableError",
    "run_distributed_forward",
    "round_count",
    "message_count",
]


class NotDistributableError(ValueError):
    """The model configuration cannot run on one-hop exchanges."""


@dataclass
class MessageLog:
    """Per-round message counts and payload volume (scalars)."""

    rounds: list[tuple[int, int, int]] = field(default_factory=list)

    def record_round(self, messages: int, payload_scalars: int) -> None:
        self.rounds.append((len(self.rounds) + 1, messages, payload_scalars))

    @property
    def num_rounds(self) -> int:
        return len(self.rounds)

    @property
    def total_messages(self) -> int:
        return sum(r[1] for r in self.rounds)

    @property
    def total_payload(self) -> int:
        return sum(r[2] for r in self.rounds)

    def to_csv(self, path) -> None:
        lines = ["round,messages,payload_scalars"]
        lines += [f"{r},{m},{p}" for r, m, p in self.rounds]
        Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class NodeState:
    """Local knowledge of one node: its id, its GSO row, and scalar memory."""

    node: int
    neighbors: np.ndarray            # sorted neighbor ids
    row: list[tuple[int, float]]     # (j, s_ij) ascending j, including any diagonal
    features: list[float] = field(default_factory=list)
    inbox: dict[int, float] = field(default_factory=dict)

    def weighted_inbox_sum(self, own: float) -> float:
        """sum_j s_ij * inbox_j in ascending column order (diagonal uses own)."""
        acc = 0.0
        for j, w in self.row:
            acc += w * (own if j == self.node else self.inbox[j])
        return acc


class _Fabric:
    """Lockstep exchange fabric; every message is checked against the edge set."""

    def __init__(self, graph: Graph, log: MessageLog):
        self.graph = graph
        self.log = log
        self._neighbor_sets = [set(int(j) for j in nb) for nb in graph.neighbor_lists]

    def send(self, src: int, dst: int, value: float, inboxes: list[dict[int, float]]) -> None:
        if dst not in self._neighbor_sets[src]:
            raise RuntimeError(f"message from {src} to non-neighbor {dst}")
        inboxes[dst][src] = value

    def exchange(self, outbox: list[float]) -> list[dict[int, float]]:
        """One round: every node sends its scalar to each of its neighbors."""
        inboxes: list[dict[int, float]] = [{} for _ in range(self.graph.n)]
        messages = 0
        for i in range(self.graph.n):
            for j in self.graph.neighbor_lists[i]:
                self.send(i, int(j), outbox[i], inboxes)
                messages += 1
        self.log.record_round(messages, messages)
        return inboxes


def _check_distributable(config: GcnnConfig) -> None:
    for l, (kind, res) in enumerate(zip(config.activations, config.resolutions)):
        if kind in ("localized_max", "localized_median") and res >= 2:
            raise NotDistributableError(
                f"layer {l}: {kind} with resolution {res} needs {res}-hop "
                f"information and cannot run on one-hop exchanges")


def round_count(config: GcnnConfig) -> int:
    """Closed-form number of lockstep rounds for one forward pass."""
    _check_distributable(config)
    total = 0
    for l in range(config.num_layers):
        total += config.filter_orders[l] * config.features[l]
        if config.activations[l] != "relu":
            total += (config.resolutions[l] + 1) * config.features[l + 1]
    return total


def message_count(config: GcnnConfig, graph: Graph) -> int:
    """Closed-form message total: every round carries one scalar per
    directed edge, i.e. 2M messages."""
    return round_count(config) * 2 * graph.m


def _aggregate(kind: str, values: list[float], own: float, gamma: float) -> float:
    """One node's local nonlinear aggregation over received values."""
    if not values:
        return 1.0 if kind == "ga_kernel" else 0.0
    if kind in ("ga_max", "localized_max"):
        return max(values)
    if kind in ("ga_median", "localized_median"):
        srt = sorted(values)
        d = len(srt)
        return 0.5 * (srt[(d - 1) // 2] + srt[d // 2])
    q = 0.0
    for v in values:
        q += (own - v) * (own - v)
    return float(np.exp(-q / (2.0 * gamma * gamma)))


def run_distributed_forward(graph: Graph, model: GcnnModel, x: np.ndarray):
    """Execute the full forward pass on the message-passing fabric.

    Returns the (N, F_o) outputs and the populated MessageLog. Raises
    NotDistributableError for localized kinds beyond resolution 1.
    """
    cfg = model.config
    _check_distributable(cfg)
    X = np.asarray(x, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape != (graph.n, cfg.features[0]):
        raise ValueError(f"input shape {X.shape} does not match "
                         f"(N={graph.n}, F_0={cfg.features[0]})")

    log = MessageLog()
    fabric = _Fabric(graph, log)
    gso = graph.gso
    nodes = []
    for i in range(graph.n):
        lo, hi = gso.indptr[i], gso.indptr[i + 1]
        row = [(int(j), float(w)) for j, w in zip(gso.indices[lo:hi], gso.data[lo:hi])]
        nodes.append(NodeState(node=i, neighbors=graph.neighbor_lists[i], row=row,
                               features=[float(v) for v in X[i]]))

    for l in range(cfg.num_layers):
        f_in, f_out = cfg.features[l], cfg.features[l + 1]
        order = cfg.filter_orders[l]
        coeffs = model.banks[l]                      # (K+1, F_in, F_out)
        acc = [[0.0] * f_out for _ in range(graph.n)]
        for g in range(f_in):
            val = [nd.features[g] for nd in nodes]
            for i in range(graph.n):
                for f in range(f_out):
                    acc[i][f] += coeffs[0, g, f] * val[i]
            for k in range(1, order + 1):
                inboxes = fabric.exchange(val)
                new_val = []
                for i, nd in enumerate(nodes):
                    nd.inbox = inboxes[i]
                    new_val.append(nd.weighted_inbox_sum(own=val[i]))
                val = new_val
                for i in range(graph.n):
                    for f in range(f_out):
                        acc[i][f] += coeffs[k, g, f] * val[i]

        kind = cfg.activations[l]
        if kind == "relu":
            for nd, row_acc in zip(nodes, acc):
                nd.features = [v if v > 0.0 else 0.0 for v in row_acc]
            continue

        res = cfg.resolutions[l]
        beta = np.broadcast_to(model.betas[l], (f_out,))
        h_sig = model.h_sigmas[l]                    # (res, F_out)
        is_ga = kind.startswith("ga_")
        outputs = [[0.0] * f_out for _ in range(graph.n)]
        for f in range(f_out):
            s_prev = [acc[i][f] for i in range(graph.n)]
            total = [beta[f] * (z if z > 0.0 else 0.0) for z in s_prev]
            for r in range(1, res + 1):
                inboxes = fabric.exchange(s_prev)
                for i, nd in enumerate(nodes):
                    nd.inbox = inboxes[i]
                if is_ga and r >= 2:
                    # round r delivers the (r-1)-shifted neighbor values
                    for i, nd in enumerate(nodes):
                        vals = [nd.inbox[int(j)] for j in nd.neighbors]
                        total[i] += h_sig[r - 2, f] * _aggregate(kind, vals, s_prev[i], cfg.gamma)
                if not is_ga and r == 1:
                    # localized baseline: raw neighbor values, resolution 1 only
                    for i, nd in enumerate(nodes):
                        vals = [nd.inbox[int(j)] for j in nd.neighbors]
                        total[i] += h_sig[0, f] * _aggregate(kind, vals, s_prev[i], cfg.gamma)
                s_prev = [nd.weighted_inbox_sum(own=s_prev[i])
                          for i, nd in enumerate(nodes)]
            # trailing aggregation round ships the fully shifted value
            inboxes = fabric.exchange(s_prev)
            if is_ga:
                for i, nd in enumerate(nodes):
                    nd.inbox = inboxes[i]
                    vals = [nd.inbox[int(j)] for j in nd.neighbors]
                    total[i] += h_sig[res - 1, f] * _aggregate(kind, vals, s_prev[i], cfg.gamma)
            for i in range(graph.n):
                outputs[i][f] = total[i]
        for nd, row_out in zip(nodes, outputs):
            nd.features = list(row_out)

    readout = model.readout                         # (F_o, F_L)
    out = np.empty((graph.n, cfg.f_out))
    for i, nd in enumerate(nodes):
        chi = nd.features
        for o in range(cfg.f_out):
            s = 0.0
            for f, v in enumerate(chi):
                s += readout[o, f] * v
            out[i, o] = s
    return out, log
