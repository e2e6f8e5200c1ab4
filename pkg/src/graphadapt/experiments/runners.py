"""Experiment orchestration: spec resolution, runners, and CSV emission.

Every run directory gets metrics.csv, history.csv, config.echo.json, and
(when certification is enabled) messages.csv from a distributed-execution
check of one trained model. Metrics rows carry full provenance
(experiment, seed, graph seed, split seed, config hash), and identical
specs reproduce identical bytes.

Desk-scale defaults keep runtimes in minutes; ``paper_scale`` restores the
published protocol sizes (more graphs, splits, epochs, and sweep points).
"""

from __future__ import annotations

import hashlib
import json
import warnings
import zlib
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from ..autograd import ParamStore, adam_step, conv_forward, loss_mse, vjp_graph_convolution
from ..distsim import run_distributed_forward, message_count, round_count
from ..graph import Graph, knn_geometric, normalize_gso, sample_link_loss, sbm_generate
from ..model import Dataset, GcnnConfig, GcnnModel, evaluate, forward, train
from . import datasets as ds

__all__ = [
    "SPEC_VERSION",
    "SpecError",
    "default_spec",
    "resolve_spec",
    "config_hash",
    "run_experiment",
    "run_source_localization",
    "run_consensus",
    "run_regression",
    "run_recsys",
    "run_sweep",
]

SPEC_VERSION = 1

METRICS_HEADER = ["experiment", "seed", "graph_seed", "split_seed", "config_hash",
                  "method", "F", "K", "K_sigma", "axis", "axis_value",
                  "metric", "value"]
HISTORY_HEADER = ["run", "epoch", "train_loss", "val_metric"]

ALL_KINDS = ["relu", "localized_max", "localized_median",
             "ga_max", "ga_median", "ga_kernel"]


class SpecError(ValueError):
    """Invalid experiment specification."""


_DESK = {
    "source_loc": {
        "graph": {"n": 40, "communities": 4, "p": 0.8, "q": 0.1},
        "data": {"draws_per_node": 30, "t_max": 30},
        "sweep": {"kinds": list(ALL_KINDS), "features": [4],
                  "resolutions": [2], "kernel_resolutions": [1]},
        "model": {"filter_order": 5, "gamma": 0.1},
        "train": {"epochs": 100, "batch_size": 100, "lr": 1e-3},
        "counts": {"graphs": 3, "splits": 3},
        "certify": True,
    },
    "consensus": {
        "graph": {"n": 100, "communities": 5, "p": 0.8, "q": 0.1},
        "data": {"samples": 1000},
        "sweep": {"kinds": ["relu", "ga_max", "ga_median"], "filter_orders": [20],
                  "link_loss": [0.025, 0.05, 0.075, 0.1, 0.125, 0.15]},
        "model": {"features": 32, "resolution": 1, "gamma": 0.1},
        "train": {"epochs": 60, "batch_size": 100, "lr": 1e-3},
        "counts": {"graphs": 3, "splits": 1, "link_loss_draws": 10},
        "fir_baseline": True,
        "certify": True,
    },
    "regression": {
        "data": {"source": "synthetic", "stations": 32, "samples": 744, "knn": 10,
                 "snr_db": 3.0, "lowpass_taps": [1.0, 0.7, 0.4, 0.2],
                 "measurements_file": None, "coords_file": None},
        "sweep": {"kinds": ["relu", "ga_max", "ga_median"], "features": [4],
                  "filter_orders": [1], "snr_db": [3.0]},
        "model": {"resolution": 1, "gamma": 0.1},
        "train": {"epochs": 100, "batch_size": 100, "lr": 1e-3},
        "counts": {"splits": 3},
        "fir_baseline": True,
        "certify": True,
    },
    "recsys": {
        "data": {"source": "synthetic", "users": 60, "movies": 40, "rank": 3,
                 "density": 0.5, "ratings_file": None},
        "movies": [0, 1],
        "sweep": {"kinds": list(ALL_KINDS)},
        "model": {"features": 32, "filter_order": 5, "resolution": 1,
                  "knn_movies": 10, "gamma": 0.1},
        "train": {"epochs": 30, "batch_size": 5, "lr": 1e-3},
        "counts": {"splits": 5},
        "certify": True,
    },
}

# published protocol sizes restored by --paper-scale
_PAPER = {
    "source_loc": {
        "sweep": {"features": [2, 4, 8], "resolutions": [1, 2]},
        "train": {"epochs": 400},
        "counts": {"graphs": 10, "splits": 10},
    },
    "consensus": {
        "data": {"samples": 2500},
        "sweep": {"kinds": list(ALL_KINDS), "filter_orders": [20, 25, 30, 35]},
        "train": {"epochs": 400},
        "counts": {"graphs": 10, "splits": 10},
    },
    "regression": {
        "sweep": {"kinds": list(ALL_KINDS), "features": [1, 2, 4],
                  "filter_orders": [1, 2, 4, 8], "snr_db": [0.0, 3.0, 6.0, 9.0]},
        "train": {"epochs": 500},
        "counts": {"splits": 20},
    },
    "recsys": {
        # MovieLens-100k item ids: Toy Story, Contact, Return of the Jedi
        "movies": [1, 227, 181],
        "counts": {"splits": 5},
    },
}

_META_KEYS = ("version", "experiment", "seed", "paper_scale", "out_dir")


def _deep_merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], val)
        else:
            out[key] = val
    return out


def default_spec(experiment: str, paper_scale: bool = False) -> dict:
    if experiment not in _DESK:
        raise SpecError(f"unknown experiment {experiment!r}; "
                        f"choose from {sorted(_DESK)}")
    body = _DESK[experiment]
    if paper_scale:
        body = _deep_merge(body, _PAPER[experiment])
    return {"version": SPEC_VERSION, "experiment": experiment, "seed": 0,
            "paper_scale": paper_scale, "out_dir": None, **_copy(body)}


def _copy(obj):
    return json.loads(json.dumps(obj))


def resolve_spec(raw: dict) -> dict:
    """Merge a user spec over the experiment defaults and validate it."""
    if not isinstance(raw, dict):
        raise SpecError("spec must be a JSON object")
    experiment = raw.get("experiment")
    if experiment not in _DESK:
        raise SpecError(f"spec needs an 'experiment' in {sorted(_DESK)}")
    version = raw.get("version", SPEC_VERSION)
    if version != SPEC_VERSION:
        raise SpecError(f"unsupported spec version {version!r}")
    paper_scale = bool(raw.get("paper_scale", False))
    spec = default_spec(experiment, paper_scale)
    known = set(spec) | set(_META_KEYS)
    unknown = set(raw) - known
    if unknown:
        raise SpecError(f"unknown spec keys {sorted(unknown)}")
    spec = _deep_merge(spec, {k: v for k, v in raw.items() if k not in ("version",)})
    spec["version"] = SPEC_VERSION
    _validate_spec(spec)
    return spec


def _validate_spec(spec: dict) -> None:
    if not isinstance(spec.get("seed"), int):
        raise SpecError("seed must be an integer")
    sweep = spec.get("sweep", {})
    for axis, values in sweep.items():
        if axis == "link_loss":
            continue  # empty disables the robustness sweep
        if not isinstance(values, list) or not values:
            raise SpecError(f"sweep axis {axis!r} must be a nonempty list")
    for kind in sweep.get("kinds", []):
        if kind not in ALL_KINDS:
            raise SpecError(f"unknown activation kind {kind!r}")


def config_hash(spec: dict) -> str:
    blob = json.dumps(spec, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _model_seed(*parts) -> int:
    return zlib.crc32(":".join(str(p) for p in parts).encode())


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_csv(path, header, rows) -> None:
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")


class _Emitter:
    """Accumulates provenance-stamped metric and history rows."""

    def __init__(self, spec: dict):
        self.spec = spec
        self.hash = config_hash(spec)
        self.metrics: list[list] = []
        self.history: list[list] = []

    def metric(self, graph_seed, split_seed, method, F, K, K_sigma, metric, value,
               axis=None, axis_value=None):
        self.metrics.append([self.spec["experiment"], self.spec["seed"], graph_seed,
                             split_seed, self.hash, method, F, K, K_sigma,
                             axis, axis_value, metric, value])

    def hist(self, run: str, history) -> None:
        for epoch, train_loss, val in history:
            self.history.append([run, epoch, train_loss, val])

    def write(self, out_dir: Path) -> None:
        _write_csv(out_dir / "metrics.csv", METRICS_HEADER, self.metrics)
        _write_csv(out_dir / "history.csv", HISTORY_HEADER, self.history)
        echo = dict(self.spec)
        echo["config_hash"] = self.hash
        (out_dir / "config.echo.json").write_text(
            json.dumps(echo, indent=2, sort_keys=True) + "\n")


def _certify(emitter: _Emitter, out_dir: Path, graph: Graph, model: GcnnModel,
             x: np.ndarray, graph_seed, split_seed) -> None:
    """Run one distributed forward pass, compare against the centralized
    output, check the closed-form cost formulas, and export messages.csv."""
    dist, log = run_distributed_forward(graph, model, x)
    cent, _ = forward(model, graph, x)
    dev = float(np.max(np.abs(dist - cent)))
    if log.num_rounds != round_count(model.config):
        raise RuntimeError("message log disagrees with the round-count formula")
    if log.total_messages != message_count(model.config, graph):
        raise RuntimeError("message log disagrees with the message-count formula")
    log.to_csv(out_dir / "messages.csv")
    emitter.metric(graph_seed, split_seed, "certification", None, None, None,
                   "distributed_max_abs_diff", dev)
    emitter.metric(graph_seed, split_seed, "certification", None, None, None,
                   "rounds", log.num_rounds)
    emitter.metric(graph_seed, split_seed, "certification", None, None, None,
                   "messages", log.total_messages)


def _resolutions_for(kind: str, sweep: dict) -> list[int]:
    if kind == "relu":
        return [0]
    if kind == "ga_kernel":
        return [int(r) for r in sweep.get("kernel_resolutions", sweep.get("resolutions", [1]))]
    return [int(r) for r in sweep.get("resolutions", [1])]


# ---------------------------------------------------------------------------
# FIR graph-filter baseline (a single trained tap vector, no nonlinearity)
# ---------------------------------------------------------------------------


def _fir_predict(graph: Graph, taps: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    X = inputs[:, :, 0].T
    y, _ = conv_forward(graph, X, taps)
    return y.T[:, :, None]


def _fir_rmse(graph: Graph, taps: np.ndarray, inputs: np.ndarray,
              targets: np.ndarray) -> float:
    d = _fir_predict(graph, taps, inputs) - targets
    return float(np.sqrt(np.mean(d * d)))


def _train_fir(graph: Graph, data: Dataset, order: int, epochs: int,
               batch_size: int, lr: float, seed: int):
    """Train the taps of one graph convolution with ADAM, selecting the best
    validation epoch like the GCNN trainer."""
    rng = np.random.default_rng(seed)
    store = ParamStore()
    bound = 1.0 / np.sqrt(order + 1)
    taps = store.add("taps", rng.uniform(-bound, bound, size=order + 1))
    history = []
    best = (np.inf, None)
    for epoch in range(1, epochs + 1):
        idx = data.train_idx[rng.permutation(data.train_idx.shape[0])]
        total, seen = 0.0, 0
        for s in range(0, idx.shape[0], batch_size):
            batch = idx[s:s + batch_size]
            X = data.inputs[batch][:, :, 0].T
            T = data.targets[batch][:, :, 0].T
            y, rec = conv_forward(graph, X, taps.value)
            loss, gbar = loss_mse(y, T)
            _, gtaps = vjp_graph_convolution(rec, gbar)
            taps.grad += gtaps
            adam_step(store, lr=lr)
            total += loss * batch.shape[0]
            seen += batch.shape[0]
        val = _fir_rmse(graph, taps.value, data.inputs[data.val_idx],
                        data.targets[data.val_idx])
        history.append((epoch, total / max(seen, 1), val))
        if val < best[0]:
            best = (val, taps.value.copy())
    if best[1] is not None:
        taps.value[...] = best[1]
    return taps.value.copy(), history


# ---------------------------------------------------------------------------
# experiment runners
# ---------------------------------------------------------------------------


def run_source_localization(spec: dict, out_dir) -> Path:
    """Diffused-delta community classification, Table-1 style."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    em = _Emitter(spec)
    seed = spec["seed"]
    gp, dp, sw, mp, tp, cp = (spec["graph"], spec["data"], spec["sweep"],
                              spec["model"], spec["train"], spec["counts"])
    order = int(mp["filter_order"])
    cells: dict[tuple, list[float]] = {}
    cert_ctx = None
    for gi in range(cp["graphs"]):
        graph_seed = seed + 101 * (gi + 1)
        graph, labels = sbm_generate(gp["n"], gp["communities"], gp["p"], gp["q"],
                                     seed=graph_seed)
        graph = normalize_gso(graph)
        inputs, y, readout = ds.gen_source_localization(
            graph, labels, seed=graph_seed + 17,
            draws_per_node=dp["draws_per_node"], t_max=dp["t_max"])
        n_class = int(labels.max()) + 1
        for si in range(cp["splits"]):
            split_seed = seed + 7919 * (gi * cp["splits"] + si + 1)
            data = ds.make_dataset(inputs, y, split_seed)
            for kind in sw["kinds"]:
                for F in sw["features"]:
                    for res in _resolutions_for(kind, sw):
                        cfg = GcnnConfig(
                            features=(1, F, F), filter_orders=(order, order),
                            activations=(kind, kind), resolutions=(res, res),
                            f_out=n_class, readout=readout, loss="cross_entropy",
                            epochs=tp["epochs"], batch_size=tp["batch_size"],
                            lr=tp["lr"], gamma=mp["gamma"],
                            seed=_model_seed(seed, gi, si, kind, F, res))
                        model = GcnnModel.initialize(cfg)
                        result = train(model, graph, data)
                        acc = evaluate(model, graph, data.inputs[data.test_idx],
                                       data.targets[data.test_idx], "accuracy")
                        em.metric(graph_seed, split_seed, kind, F, order, res,
                                  "accuracy", acc)
                        em.hist(f"{kind}|F{F}|Ks{res}|g{gi}|s{si}", result.history)
                        cells.setdefault((kind, res, F), []).append(acc)
                        if cert_ctx is None and spec.get("certify"):
                            cert_ctx = (graph, model,
                                        data.inputs[data.test_idx[0]],
                                        graph_seed, split_seed)
    table = [["nonlinearity"] + [f"F={F}" for F in sw["features"]]]
    for kind in sw["kinds"]:
        for res in _resolutions_for(kind, sw):
            label = kind if kind == "relu" else f"{kind}({res})"
            row = [label]
            for F in sw["features"]:
                vals = cells.get((kind, res, F), [])
                mean, std = float(np.mean(vals)), float(np.std(vals))
                em.metric(None, None, kind, F, order, res, "accuracy_mean", mean)
                em.metric(None, None, kind, F, order, res, "accuracy_std", std)
                row.append(f"{100 * mean:.1f} (+-{100 * std:.1f})%")
            table.append(row)
    _write_csv(out_dir / "table.csv", table[0], table[1:])
    if cert_ctx is not None:
        _certify(em, out_dir, cert_ctx[0], cert_ctx[1], cert_ctx[2],
                 cert_ctx[3], cert_ctx[4])
    em.write(out_dir)
    return out_dir


def run_consensus(spec: dict, out_dir) -> Path:
    """Finite-time averaging against the trained FIR baseline, plus an
    optional link-loss robustness sweep on each method's best order."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    em = _Emitter(spec)
    seed = spec["seed"]
    gp, dp, sw, mp, tp, cp = (spec["graph"], spec["data"], spec["sweep"],
                              spec["model"], spec["train"], spec["counts"])
    F = int(mp["features"])
    res = int(mp["resolution"])
    cert_ctx = None
    for gi in range(cp["graphs"]):
        graph_seed = seed + 101 * (gi + 1)
        graph, _ = sbm_generate(gp["n"], gp["communities"], gp["p"], gp["q"],
                                seed=graph_seed)
        graph = normalize_gso(graph)
        inputs, targets = ds.gen_consensus(gp["n"], dp["samples"], seed=graph_seed + 17)
        for si in range(cp["splits"]):
            split_seed = seed + 7919 * (gi * cp["splits"] + si + 1)
            data = ds.make_dataset(inputs, targets, split_seed)
            test_in = data.inputs[data.test_idx]
            test_tg = data.targets[data.test_idx]
            trained: dict[tuple, tuple] = {}
            for K in sw["filter_orders"]:
                K = int(K)
                for kind in sw["kinds"]:
                    k_res = 0 if kind == "relu" else res
                    cfg = GcnnConfig(
                        features=(1, F, F), filter_orders=(K, K),
                        activations=(kind, kind), resolutions=(k_res, k_res),
                        f_out=1, readout=None, loss="mse",
                        epochs=tp["epochs"], batch_size=tp["batch_size"],
                        lr=tp["lr"], gamma=mp["gamma"],
                        seed=_model_seed(seed, gi, si, kind, K))
                    model = GcnnModel.initialize(cfg)
                    result = train(model, graph, data)
                    rmse = evaluate(model, graph, test_in, test_tg, "rmse")
                    em.metric(graph_seed, split_seed, kind, F, K, k_res, "rmse", rmse)
                    em.hist(f"{kind}|K{K}|g{gi}|s{si}", result.history)
                    trained[(kind, K)] = ("gcnn", model, rmse)
                    if cert_ctx is None and spec.get("certify"):
                        cert_ctx = (graph, model, test_in[0], graph_seed, split_seed)
                if spec.get("fir_baseline", True):
                    taps, fhist = _train_fir(graph, data, K, tp["epochs"],
                                             tp["batch_size"], tp["lr"],
                                             _model_seed(seed, gi, si, "fir", K))
                    rmse = _fir_rmse(graph, taps, test_in, test_tg)
                    em.metric(graph_seed, split_seed, "fir", 1, K, None, "rmse", rmse)
                    em.hist(f"fir|K{K}|g{gi}|s{si}", fhist)
                    trained[("fir", K)] = ("fir", taps, rmse)
            zero_rmse = float(np.sqrt(np.mean(test_tg * test_tg)))
            em.metric(graph_seed, split_seed, "zero", None, None, None,
                      "rmse", zero_rmse)

            drops = sw.get("link_loss", [])
            if drops:
                methods = sorted({m for m, _ in trained})
                for method in methods:
                    best_k = min((k for m, k in trained if m == method),
                                 key=lambda k: trained[(method, k)][2])
                    flavor, payload, _ = trained[(method, best_k)]
                    for drop in drops:
                        vals = []
                        for draw in range(cp["link_loss_draws"]):
                            g2 = sample_link_loss(
                                graph, float(drop),
                                seed=_model_seed(seed, gi, si, "loss", draw, drop))
                            if flavor == "gcnn":
                                vals.append(evaluate(payload, g2, test_in, test_tg, "rmse"))
                            else:
                                vals.append(_fir_rmse(g2, payload, test_in, test_tg))
                        em.metric(graph_seed, split_seed, method, F, best_k, None,
                                  "rmse", float(np.mean(vals)),
                                  axis="link_loss", axis_value=float(drop))
    if cert_ctx is not None:
        _certify(em, out_dir, cert_ctx[0], cert_ctx[1], cert_ctx[2],
                 cert_ctx[3], cert_ctx[4])
    em.write(out_dir)
    return out_dir


def _regression_graph_and_signals(spec: dict):
    dp = spec["data"]
    seed = spec["seed"]
    if dp["source"] == "molene-file":
        if not dp.get("measurements_file") or not dp.get("coords_file"):
            raise SpecError("molene-file source needs measurements_file and coords_file")
        signals, coords, _ = ds.load_molene(dp["measurements_file"], dp["coords_file"])
    elif dp["source"] == "synthetic":
        coords = ds.random_coords(dp["stations"], seed + 3)
        signals = None
    else:
        raise SpecError(f"unknown regression data source {dp['source']!r}")
    graph = normalize_gso(knn_geometric(coords, dp["knn"]))
    if signals is None:
        signals = ds.gen_smooth_signals(graph, dp["samples"], seed + 5,
                                        tuple(dp["lowpass_taps"]))
    return graph, signals


def run_regression(spec: dict, out_dir) -> Path:
    """Denoising of smooth graph signals at a configured SNR, with an SNR
    sweep at filter order 1."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    em = _Emitter(spec)
    seed = spec["seed"]
    dp, sw, mp, tp, cp = (spec["data"], spec["sweep"], spec["model"],
                          spec["train"], spec["counts"])
    graph, clean = _regression_graph_and_signals(spec)
    em.metric(None, None, "dataset", None, None, None, "stations", graph.n)
    clean3 = clean[:, :, None]
    base_snr = float(dp["snr_db"])
    res = int(mp["resolution"])
    snr_points = [base_snr] + [float(s) for s in sw["snr_db"] if float(s) != base_snr]
    cert_ctx = None
    for snr in snr_points:
        noisy = ds.add_noise_snr(clean, snr, seed=_model_seed(seed, "noise", snr))
        noisy3 = noisy[:, :, None]
        if snr == base_snr:
            grid = [(kind, int(F), int(K)) for kind in sw["kinds"]
                    for F in sw["features"] for K in sw["filter_orders"]]
        else:
            F_snr = int(sw["features"][-1])
            grid = [(kind, F_snr, 1) for kind in sw["kinds"]]
        for si in range(cp["splits"]):
            split_seed = seed + 7919 * (si + 1)
            data = ds.make_dataset(noisy3, clean3, split_seed)
            test_in = data.inputs[data.test_idx]
            test_tg = data.targets[data.test_idx]
            noisy_rmse = float(np.sqrt(np.mean((test_in - test_tg) ** 2)))
            em.metric(None, split_seed, "noisy_input", None, None, None, "rmse",
                      noisy_rmse, axis="snr_db", axis_value=snr)
            for kind, F, K in grid:
                k_res = 0 if kind == "relu" else res
                cfg = GcnnConfig(
                    features=(1, F), filter_orders=(K,), activations=(kind,),
                    resolutions=(k_res,), f_out=1, readout=None, loss="mse",
                    epochs=tp["epochs"], batch_size=tp["batch_size"], lr=tp["lr"],
                    gamma=mp["gamma"], seed=_model_seed(seed, si, kind, F, K, snr))
                model = GcnnModel.initialize(cfg)
                result = train(model, graph, data)
                rmse = evaluate(model, graph, test_in, test_tg, "rmse")
                em.metric(None, split_seed, kind, F, K, k_res, "rmse", rmse,
                          axis="snr_db", axis_value=snr)
                em.hist(f"{kind}|F{F}|K{K}|snr{snr}|s{si}", result.history)
                if cert_ctx is None and spec.get("certify"):
                    cert_ctx = (graph, model, test_in[0], None, split_seed)
            if spec.get("fir_baseline", True):
                for K in sorted({k for _, _, k in grid}):
                    taps, fhist = _train_fir(graph, data, K, tp["epochs"],
                                             tp["batch_size"], tp["lr"],
                                             _model_seed(seed, si, "fir", K, snr))
                    rmse = _fir_rmse(graph, taps, test_in, test_tg)
                    em.metric(None, split_seed, "fir", 1, K, None, "rmse", rmse,
                              axis="snr_db", axis_value=snr)
                    em.hist(f"fir|K{K}|snr{snr}|s{si}", fhist)
    if cert_ctx is not None:
        _certify(em, out_dir, cert_ctx[0], cert_ctx[1], cert_ctx[2],
                 cert_ctx[3], cert_ctx[4])
    em.write(out_dir)
    return out_dir


def run_recsys(spec: dict, out_dir) -> Path:
    """Rating prediction on a movie-similarity graph, smooth-l1 at the
    target movie node, averaged over user splits."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    em = _Emitter(spec)
    seed = spec["seed"]
    dp, sw, mp, tp, cp = (spec["data"], spec["sweep"], spec["model"],
                          spec["train"], spec["counts"])
    if dp["source"] == "file":
        if not dp.get("ratings_file"):
            raise SpecError("file source needs ratings_file")
        ratings = ds.load_movielens(dp["ratings_file"])
        movie_cols = [int(m) - 1 for m in spec["movies"]]  # 1-indexed item ids
    elif dp["source"] == "synthetic":
        ratings, _ = ds.synthetic_ratings(dp["users"], dp["movies"], dp["rank"],
                                          dp["density"], seed + 11)
        movie_cols = [int(m) for m in spec["movies"]]
    else:
        raise SpecError(f"unknown recsys data source {dp['source']!r}")
    em.metric(None, None, "dataset", None, None, None, "ratings", ratings.num_ratings)
    order = int(mp["filter_order"])
    res = int(mp["resolution"])
    F = int(mp["features"])
    cells: dict[tuple, list[float]] = {}
    cert_ctx = None
    for si in range(cp["splits"]):
        split_seed = seed + 7919 * (si + 1)
        rng = np.random.default_rng(split_seed)
        perm = rng.permutation(ratings.num_users)
        n_train = int(round(0.9 * ratings.num_users))
        train_users, test_users = perm[:n_train], perm[n_train:]
        graph, kept = ds.movie_graph(ratings.values[train_users],
                                     knn=mp["knn_movies"])
        col_to_node = {int(c): i for i, c in enumerate(kept)}
        values_kept = ratings.values[:, kept]
        for movie in movie_cols:
            if movie not in col_to_node:
                warnings.warn(f"target movie column {movie} has no training "
                              f"ratings in split {si}; skipped")
                continue
            node = col_to_node[movie]
            tr_users, tr_in, tr_tg = ds.recsys_samples(values_kept, train_users, node)
            te_users, te_in, te_tg = ds.recsys_samples(values_kept, test_users, node)
            if tr_in.shape[0] < 2 or te_in.shape[0] == 0:
                warnings.warn(f"movie column {movie}: not enough rated users "
                              f"in split {si}; skipped")
                continue
            n_val = max(1, int(round(0.1 * tr_in.shape[0])))
            inputs = np.concatenate([tr_in, te_in])
            targets = np.concatenate([tr_tg, te_tg])
            idx = np.arange(inputs.shape[0])
            data = Dataset(inputs, targets,
                           train_idx=idx[:tr_in.shape[0] - n_val],
                           val_idx=idx[tr_in.shape[0] - n_val:tr_in.shape[0]],
                           test_idx=idx[tr_in.shape[0]:])
            for kind in sw["kinds"]:
                k_res = 0 if kind == "relu" else res
                cfg = GcnnConfig(
                    features=(1, F), filter_orders=(order,), activations=(kind,),
                    resolutions=(k_res,), f_out=1, readout=(node,),
                    loss="smooth_l1", epochs=tp["epochs"],
                    batch_size=tp["batch_size"], lr=tp["lr"], gamma=mp["gamma"],
                    seed=_model_seed(seed, si, kind, movie))
                model = GcnnModel.initialize(cfg)
                result = train(model, graph, data)
                rmse = evaluate(model, graph, data.inputs[data.test_idx],
                                data.targets[data.test_idx], "rmse")
                em.metric(None, split_seed, kind, F, order, k_res, "rmse", rmse,
                          axis="movie", axis_value=movie)
                em.hist(f"{kind}|m{movie}|s{si}", result.history)
                cells.setdefault((kind, movie), []).append(rmse)
                if cert_ctx is None and spec.get("certify"):
                    cert_ctx = (graph, model, data.inputs[data.test_idx[0]],
                                None, split_seed)
    for (kind, movie), vals in sorted(cells.items()):
        em.metric(None, None, kind, F, order, None, "rmse_mean",
                  float(np.mean(vals)), axis="movie", axis_value=movie)
        em.metric(None, None, kind, F, order, None, "rmse_std",
                  float(np.std(vals)), axis="movie", axis_value=movie)
    if cert_ctx is not None:
        _certify(em, out_dir, cert_ctx[0], cert_ctx[1], cert_ctx[2],
                 cert_ctx[3], cert_ctx[4])
    em.write(out_dir)
    return out_dir


_RUNNERS = {
    "source_loc": run_source_localization,
    "consensus": run_consensus,
    "regression": run_regression,
    "recsys": run_recsys,
}


def run_experiment(spec: dict, out_dir) -> Path:
    return _RUNNERS[spec["experiment"]](spec, out_dir)


def _deep_set(spec: dict, dotted: str, value) -> dict:
    out = _copy(spec)
    node = out
    parts = dotted.split(".")
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise SpecError(f"unknown spec path {dotted!r}")
        node = node[part]
    if parts[-1] not in node:
        raise SpecError(f"unknown spec path {dotted!r}")
    node[parts[-1]] = value
    return out


def run_sweep(spec: dict, axis: str, values, out_root, threads: int = 1) -> list[Path]:
    """Run one experiment per axis value, each in its own subdirectory."""
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    jobs = []
    for i, value in enumerate(values):
        point = resolve_spec(_deep_set(spec, axis, value))
        safe = str(value).replace("/", "_").replace(" ", "")
        jobs.append((point, out_root / f"point_{i}_{safe}"))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(run_experiment, sp, od) for sp, od in jobs]
            return [f.result() for f in futures]
    return [run_experiment(sp, od) for sp, od in jobs]
