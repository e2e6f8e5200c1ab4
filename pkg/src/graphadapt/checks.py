"""Programmatic property checks: equivariance, Lipschitz stability,
distributed equivalence, gradient correctness, kernel unit values.

These back the CLI's proptest/gradcheck/distcheck subcommands and the
acceptance suite. Each report function returns plain data; callers decide
the tolerances to enforce.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .activations import ActivationParams, ga_localized_activation, gaussian_kernel, kernel_operator, lipschitz_bound
from .distsim import (
    NotDistributableError,
    message_count,
    round_count,
    run_distributed_forward,
)
from .graph import normalize_gso, sbm_generate
from .model import GcnnConfig, GcnnModel, equivariance_test, forward, gradient_check

__all__ = [
    "ALL_KINDS",
    "equivariance_report",
    "lipschitz_report",
    "distributed_report",
    "gradcheck_report",
    "kernel_unit_report",
]

ALL_KINDS = ("relu", "localized_max", "localized_median",
             "ga_max", "ga_median", "ga_kernel")


def _connected_sbm(n: int, seed: int):
    graph, _ = sbm_generate(n, 2, 0.8, 0.3, seed=seed)
    return normalize_gso(graph)


def _kind_model(kind: str, resolution: int, seed: int, features: int = 3,
                filter_order: int = 2) -> GcnnModel:
    res = 0 if kind == "relu" else resolution
    cfg = GcnnConfig(features=(1, features, features),
                     filter_orders=(filter_order, filter_order),
                     activations=(kind, kind), resolutions=(res, res),
                     f_out=2, loss="mse", seed=seed)
    model = GcnnModel.initialize(cfg)
    model.randomize(seed + 1000)
    return model


def equivariance_report(seed: int = 0, graphs: int = 10, trials: int = 20,
                        sizes=(10, 20), resolution: int = 2) -> dict[str, float]:
    """Worst model-level equivariance deviation per activation kind over
    random connected SBM graphs and random permutations."""
    rng = np.random.default_rng(seed)
    worst = {}
    for kind in ALL_KINDS:
        model = _kind_model(kind, resolution, seed=seed + 7)
        dev = 0.0
        for gi in range(graphs):
            graph = _connected_sbm(sizes[gi % len(sizes)], seed=seed + 31 * gi)
            x = rng.standard_normal((graph.n, 1))
            dev = max(dev, equivariance_test(model, graph, x, trials=trials,
                                             seed=seed + gi))
        worst[kind] = dev
    return worst


@dataclass
class LipschitzReport:
    pairs: int
    violations: int
    max_excess: float  # max of ||dz||_inf - bound * ||dx||_inf over all pairs


def lipschitz_report(seed: int = 0, pairs: int = 10_000, graphs: int = 4,
                     slack: float = 1e-12) -> LipschitzReport:
    """Check the ga_max stability bound on random coefficient draws
    (|h_sigma| <= 1) over normalized SBM graphs."""
    rng = np.random.default_rng(seed)
    per_graph = -(-pairs // graphs)
    total = 0
    violations = 0
    max_excess = -np.inf
    for gi in range(graphs):
        graph = _connected_sbm(10 if gi % 2 == 0 else 20, seed=seed + 97 * gi)
        K = int(rng.integers(1, 4))
        params = ActivationParams("ga_max", beta=float(rng.uniform(-2, 2)),
                                  h_sigma=rng.uniform(-1, 1, size=K))
        bound = lipschitz_bound(params, graph)
        X = rng.standard_normal((graph.n, per_graph))
        scale = rng.uniform(1e-3, 3.0, size=per_graph)
        Xt = X + rng.standard_normal((graph.n, per_graph)) * scale
        za = ga_localized_activation(graph, X, params)
        zb = ga_localized_activation(graph, Xt, params)
        lhs = np.max(np.abs(zb - za), axis=0)
        rhs = bound * np.max(np.abs(Xt - X), axis=0)
        excess = lhs - rhs
        violations += int(np.sum(excess > slack))
        max_excess = max(max_excess, float(np.max(excess)))
        total += per_graph
    return LipschitzReport(pairs=total, violations=violations, max_excess=max_excess)


@dataclass
class DistributedReport:
    runs: int
    max_deviation: float
    count_mismatches: int
    rejects_multihop_localized: bool


def distributed_report(seed: int = 0, num_models: int = 10,
                       num_graphs: int = 5) -> DistributedReport:
    """Distributed-vs-centralized forward equivalence over random models and
    graphs covering every distributable kind, with exact cost accounting."""
    rng = np.random.default_rng(seed)
    max_dev = 0.0
    mismatches = 0
    runs = 0
    graphs = [_connected_sbm(2 * int(rng.integers(3, 7)), seed=seed + 11 * g)
              for g in range(num_graphs)]
    for mi in range(num_models):
        kind = ALL_KINDS[mi % len(ALL_KINDS)]
        if kind == "relu":
            res = 0
        elif kind.startswith("localized"):
            res = 1
        else:
            res = int(rng.integers(1, 4))
        L = int(rng.integers(1, 3))
        feats = tuple(int(rng.integers(1, 4)) for _ in range(L + 1))
        orders = tuple(int(rng.integers(0, 4)) for _ in range(L))
        cfg = GcnnConfig(features=feats, filter_orders=orders,
                         activations=(kind,) * L, resolutions=(res,) * L,
                         f_out=2, loss="mse", seed=seed + mi)
        model = GcnnModel.initialize(cfg)
        model.randomize(seed + 500 + mi)
        for graph in graphs:
            x = rng.standard_normal((graph.n, feats[0]))
            dist, log = run_distributed_forward(graph, model, x)
            cent, _ = forward(model, graph, x)
            max_dev = max(max_dev, float(np.max(np.abs(dist - cent))))
            if log.num_rounds != round_count(cfg):
                mismatches += 1
            if log.total_messages != message_count(cfg, graph):
                mismatches += 1
            runs += 1
    cfg_bad = GcnnConfig(features=(1, 2), filter_orders=(1,),
                         activations=("localized_max",), resolutions=(2,),
                         f_out=1, loss="mse")
    bad_model = GcnnModel.initialize(cfg_bad)
    try:
        run_distributed_forward(graphs[0], bad_model,
                                np.zeros((graphs[0].n, 1)))
        rejected = False
    except NotDistributableError:
        rejected = True
    return DistributedReport(runs=runs, max_deviation=max_dev,
                             count_mismatches=mismatches,
                             rejects_multihop_localized=rejected)


def gradcheck_report(seed: int = 0, n: int = 8, features: int = 4,
                     filter_order: int = 2, resolution: int = 2,
                     num_probes: int = 200) -> dict[str, float]:
    """Worst finite-difference relative error of the full-model gradients,
    per activation kind (two layers, all-node regression loss)."""
    graph = _connected_sbm(n, seed=seed + 3)
    out = {}
    for kind in ALL_KINDS:
        res = 0 if kind == "relu" else resolution
        cfg = GcnnConfig(features=(1, features, features),
                         filter_orders=(filter_order, filter_order),
                         activations=(kind, kind), resolutions=(res, res),
                         f_out=2, loss="mse", seed=seed)
        model = GcnnModel.initialize(cfg)
        model.randomize(seed + 2000)
        report = gradient_check(model, graph, probe_seed=seed + 5, batch=3,
                                num_probes=num_probes)
        out[kind] = report.max_rel_error
    return out


@dataclass
class KernelUnitReport:
    unit_error: float
    min_value: float
    max_value: float


def kernel_unit_report(seed: int = 0, samples: int = 200) -> KernelUnitReport:
    """exp(-1/2) at distance gamma, plus sampled range of kernel outputs.

    Sampling keeps the exponent well inside f64 range so the mathematical
    output interval (0, 1] is observable without underflow.
    """
    rng = np.random.default_rng(seed)
    unit_err = 0.0
    for _ in range(samples):
        gamma = float(rng.uniform(0.05, 2.0))
        d = int(rng.integers(1, 6))
        direction = rng.standard_normal(d)
        direction *= gamma / np.linalg.norm(direction)
        a = rng.standard_normal(d)
        unit_err = max(unit_err, abs(gaussian_kernel(a, a + direction, gamma)
                                     - np.exp(-0.5)))
    lo, hi = np.inf, -np.inf
    for gi in range(4):
        graph = _connected_sbm(12, seed=seed + 13 * gi)
        x = rng.uniform(-2, 2, size=(graph.n, 50))
        for k in (1, 2):
            vals = kernel_operator(graph, x, k, gamma=float(rng.uniform(0.5, 1.5)))
            lo = min(lo, float(np.min(vals)))
            hi = max(hi, float(np.max(vals)))
    return KernelUnitReport(unit_error=unit_err, min_value=lo, max_value=hi)
