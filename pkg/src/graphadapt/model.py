"""GCNN assembly: filter banks, activations, per-node readout, training.

The network is a pure graph-to-graph map: forward always produces outputs
at every node, and tasks mask to their readout node(s) in the loss. The
trainable state lives in a ParamStore so the parameter count never depends
on the graph size.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .activations import ACTIVATION_KINDS, khop_sets
from .autograd import (
    ParamStore,
    Tape,
    activation_forward,
    activation_vjp,
    adam_step,
    filter_bank_forward,
    finite_difference_check,
    loss_cross_entropy,
    loss_mse,
    loss_smooth_l1,
    vjp_filter_bank,
)
from .graph import Graph, PermutationMap, permute, permute_signal

__all__ = [
    "GcnnConfig",
    "GcnnModel",
    "Dataset",
    "TrainResult",
    "CheckpointError",
    "forward",
    "predict",
    "train",
    "evaluate",
    "checkpoint_save",
    "checkpoint_load",
    "checkpoint_header",
    "equivariance_test",
    "gradient_check",
]

LOSS_KINDS = ("cross_entropy", "mse", "smooth_l1")
CHECKPOINT_VERSION = 1
_EVAL_CHUNK = 256


class CheckpointError(RuntimeError):
    """Checkpoint file is corrupt, truncated, or of an unsupported version."""


@dataclass(frozen=True)
class GcnnConfig:
    """Architecture plus training hyperparameters.

    ``features`` is the chain [F_0, ..., F_L]; per layer there is a filter
    order, an activation kind, and a nonlinearity resolution (0 for relu).
    ``readout`` selects the node(s) whose outputs feed the loss; None means
    all nodes.
    """

    features: tuple[int, ...]
    filter_orders: tuple[int, ...]
    activations: tuple[str, ...]
    resolutions: tuple[int, ...]
    f_out: int
    readout: tuple[int, ...] | None = None
    loss: str = "mse"
    epochs: int = 100
    batch_size: int = 100
    lr: float = 1e-3
    seed: int = 0
    beta_scope: str = "per_layer_feature"
    gamma: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(int(v) for v in self.features))
        object.__setattr__(self, "filter_orders", tuple(int(v) for v in self.filter_orders))
        object.__setattr__(self, "activations", tuple(self.activations))
        object.__setattr__(self, "resolutions", tuple(int(v) for v in self.resolutions))
        if self.readout is not None:
            object.__setattr__(self, "readout", tuple(int(v) for v in self.readout))
        L = len(self.features) - 1
        if L < 1 or any(f < 1 for f in self.features):
            raise ValueError("features must list F_0..F_L with positive entries")
        if len(self.filter_orders) != L or any(k < 0 for k in self.filter_orders):
            raise ValueError("need one filter order >= 0 per layer")
        if len(self.activations) != L or any(a not in ACTIVATION_KINDS for a in self.activations):
            raise ValueError("need one known activation kind per layer")
        if len(self.resolutions) != L:
            raise ValueError("need one resolution per layer")
        for kind, res in zip(self.activations, self.resolutions):
            if kind == "relu" and res != 0:
                raise ValueError("relu layers take resolution 0")
            if kind != "relu" and res < 1:
                raise ValueError(f"{kind} needs resolution >= 1")
        if self.f_out < 1:
            raise ValueError("f_out must be >= 1")
        if self.readout is not None and len(self.readout) == 0:
            raise ValueError("readout node list must be nonempty (or None for all nodes)")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if not (np.isfinite(self.lr) and self.lr >= 0.0):
            raise ValueError("lr must be finite and >= 0")
        if self.beta_scope not in ("per_layer_feature", "global"):
            raise ValueError(f"unknown beta_scope {self.beta_scope!r}")
        if not self.gamma > 0.0:
            raise ValueError("gamma must be positive")

    @property
    def num_layers(self) -> int:
        return len(self.features) - 1

    def to_dict(self) -> dict:
        return {
            "features": list(self.features),
            "filter_orders": list(self.filter_orders),
            "activations": list(self.activations),
            "resolutions": list(self.resolutions),
            "f_out": self.f_out,
            "readout": None if self.readout is None else list(self.readout),
            "loss": self.loss,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "seed": self.seed,
            "beta_scope": self.beta_scope,
            "gamma": self.gamma,
        }

    @staticmethod
    def from_dict(d: dict) -> "GcnnConfig":
        d = dict(d)
        ro = d.get("readout")
        d["readout"] = None if ro is None else tuple(ro)
        return GcnnConfig(**d)


class GcnnModel:
    """Parameter container bound to a GcnnConfig.

    Declaration order of the parameters (which also fixes the checkpoint
    block order): per layer taps, beta, h_sigma; then the global beta if
    configured; then the readout matrix.
    """

    def __init__(self, config: GcnnConfig, store: ParamStore, banks, betas,
                 h_sigmas, readout: np.ndarray):
        self.config = config
        self.store = store
        self.banks = banks          # per layer (K+1, F_in, F_out)
        self.betas = betas          # per layer (F,), () for global scope, None for relu
        self.h_sigmas = h_sigmas    # per layer (K_sigma, F) or None for relu
        self.readout = readout      # (F_o, F_L)

    @classmethod
    def initialize(cls, config: GcnnConfig) -> "GcnnModel":
        """Fresh model: taps and readout uniform in +/- 1/sqrt(fan_in);
        beta = 1 and h_sigma = 0 so every model starts as a ReLU GCNN."""
        rng = np.random.default_rng(config.seed)
        store = ParamStore()
        banks, betas, h_sigmas = [], [], []
        for l in range(config.num_layers):
            f_in, f_out = config.features[l], config.features[l + 1]
            order = config.filter_orders[l]
            bound = 1.0 / np.sqrt(f_in * (order + 1))
            taps = rng.uniform(-bound, bound, size=(order + 1, f_in, f_out))
            banks.append(store.add(f"layer{l}.taps", taps).value)
            kind = config.activations[l]
            if kind == "relu":
                betas.append(None)
                h_sigmas.append(None)
                continue
            if config.beta_scope == "per_layer_feature":
                betas.append(store.add(f"layer{l}.beta", np.ones(f_out)).value)
            else:
                betas.append(None)  # filled below from the shared scalar
            h_sigmas.append(store.add(f"layer{l}.h_sigma",
                                      np.zeros((config.resolutions[l], f_out))).value)
        if config.beta_scope == "global" and any(b is None and h is not None
                                                 for b, h in zip(betas, h_sigmas)):
            shared = store.add("beta", np.array(1.0)).value
            betas = [shared if (b is None and h is not None) else b
                     for b, h in zip(betas, h_sigmas)]
        fl = config.features[-1]
        bound = 1.0 / np.sqrt(fl)
        readout = store.add("readout", rng.uniform(-bound, bound,
                                                   size=(config.f_out, fl))).value
        return cls(config, store, banks, betas, h_sigmas, readout)

    def param_count(self) -> int:
        return self.store.total_size()

    def randomize(self, seed) -> None:
        """Draw every parameter from a moderate-scale distribution.

        Fresh models start as ReLU GCNNs (h_sigma = 0); property probes use
        this to exercise the nonlinear paths with nontrivial coefficients.
        """
        rng = np.random.default_rng(seed)
        for p in self.store:
            if p.name.endswith("h_sigma"):
                p.value[...] = rng.uniform(-0.9, 0.9, size=p.value.shape)
            elif p.name.endswith("beta"):
                p.value[...] = rng.uniform(-1.25, 1.25, size=p.value.shape)
            else:
                p.value[...] = rng.uniform(-0.7, 0.7, size=p.value.shape)


@dataclass
class ReadoutRecord:
    chi: np.ndarray  # (N, B, F_L) final convolutional features


def _forward_batch(model: GcnnModel, graph: Graph, X: np.ndarray,
                   with_margin: bool = False) -> tuple[np.ndarray, Tape]:
    """Forward an (N, B, F_0) batch; returns (N, B, F_o) outputs and the tape."""
    cfg = model.config
    tape = Tape()
    cur = X
    for l in range(cfg.num_layers):
        Z, brec = filter_bank_forward(graph, cur, model.banks[l])
        kind = cfg.activations[l]
        hoods = None
        if kind in ("localized_max", "localized_median"):
            hoods = khop_sets(graph, cfg.resolutions[l])
        cur, arec = activation_forward(graph, Z, kind, model.betas[l],
                                       model.h_sigmas[l], cfg.gamma, hoods,
                                       with_margin)
        tape.entries.append((l, brec, arec))
        tape.margin = min(tape.margin, arec.margin)
    out = cur @ model.readout.T
    tape.entries.append(ReadoutRecord(chi=cur))
    return out, tape


def _backward_batch(model: GcnnModel, tape: Tape, gout: np.ndarray) -> np.ndarray:
    """Replay the tape in reverse, accumulating parameter gradients.

    Returns the gradient with respect to the network input.
    """
    if tape.consumed:
        raise RuntimeError("tape already replayed")
    tape.consumed = True
    cfg = model.config
    rr: ReadoutRecord = tape.entries[-1]
    model.store["readout"].grad += np.tensordot(gout, rr.chi, axes=([0, 1], [0, 1]))
    G = gout @ model.readout
    for l, brec, arec in reversed(tape.entries[:-1]):
        gz, gbeta, gh = activation_vjp(arec, G)
        if gh is not None:
            model.store[f"layer{l}.h_sigma"].grad += gh
            if cfg.beta_scope == "per_layer_feature":
                model.store[f"layer{l}.beta"].grad += gbeta
            else:
                model.store["beta"].grad += gbeta.sum()
        G, gcoeffs = vjp_filter_bank(brec, gz)
        model.store[f"layer{l}.taps"].grad += gcoeffs
    return G


def forward(model: GcnnModel, graph: Graph, x: np.ndarray):
    """Forward one input stack (N, F_0) -> ((N, F_o) outputs, tape)."""
    X = np.asarray(x, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape != (graph.n, model.config.features[0]):
        raise ValueError(f"input shape {X.shape} does not match "
                         f"(N={graph.n}, F_0={model.config.features[0]})")
    out, tape = _forward_batch(model, graph, X[:, None, :])
    return out[:, 0, :], tape


def predict(model: GcnnModel, graph: Graph, inputs: np.ndarray) -> np.ndarray:
    """Outputs for a (B, N, F_0) batch, evaluated in memory-bounded chunks."""
    inputs = np.asarray(inputs, dtype=np.float64)
    outs = []
    for s in range(0, inputs.shape[0], _EVAL_CHUNK):
        chunk = inputs[s:s + _EVAL_CHUNK].transpose(1, 0, 2)
        out, _ = _forward_batch(model, graph, chunk)
        outs.append(out.transpose(1, 0, 2))
    return np.concatenate(outs, axis=0) if outs else np.zeros(
        (0, graph.n, model.config.f_out))


def _loss_and_grad(model: GcnnModel, graph: Graph, X: np.ndarray, targets,
                   need_grad: bool, with_margin: bool = False) -> tuple[float, float]:
    """Batch loss (and gradient accumulation when requested).

    ``X`` is (N, B, F_0). Target layout depends on the configured loss and
    readout: class labels (B,) for cross-entropy, (B, N, F_o) for all-node
    regression, (B, F_o) for readout-node regression (broadcast across the
    readout nodes).
    """
    cfg = model.config
    out, tape = _forward_batch(model, graph, X, with_margin)
    margin = tape.margin
    nodes = None if cfg.readout is None else np.asarray(cfg.readout, dtype=np.int64)
    if cfg.loss == "cross_entropy":
        labels = np.asarray(targets)
        sel = out if nodes is None else out[nodes]
        tiled = np.broadcast_to(labels[None, :], sel.shape[:2])
        loss, gsel = loss_cross_entropy(sel, tiled)
    else:
        loss_fn = loss_mse if cfg.loss == "mse" else loss_smooth_l1
        if nodes is None:
            T = np.asarray(targets, dtype=np.float64).transpose(1, 0, 2)
            sel = out
        else:
            T = np.broadcast_to(np.asarray(targets, dtype=np.float64)[None, :, :],
                                (nodes.shape[0],) + np.asarray(targets).shape)
            sel = out[nodes]
        loss, gsel = loss_fn(sel, T)
        if cfg.loss == "smooth_l1" and with_margin:
            margin = min(margin, float(np.min(np.abs(np.abs(sel - T) - 1.0))))
    if need_grad:
        if nodes is None:
            gout = gsel
        else:
            gout = np.zeros_like(out)
            gout[nodes] = gsel
        _backward_batch(model, tape, gout)
    return loss, margin


@dataclass
class Dataset:
    """Sample collection plus a train/val/test split over sample indices."""

    inputs: np.ndarray   # (S, N, F_0)
    targets: np.ndarray  # (S,) labels | (S, N, F_o) | (S, F_o)
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray


@dataclass
class TrainResult:
    history: list[tuple[int, float, float]] = field(default_factory=list)
    best_epoch: int = -1
    best_val_metric: float = np.nan


def train(model: GcnnModel, graph: Graph, data: Dataset) -> TrainResult:
    """Mini-batch ADAM with per-epoch shuffling and best-validation selection.

    The model is left holding the parameters of the best validation epoch
    (ties resolved to the earlier epoch). History rows are
    (epoch, mean train loss, validation metric).
    """
    cfg = model.config
    metric = "accuracy" if cfg.loss == "cross_entropy" else "rmse"
    higher_better = metric == "accuracy"
    rng = np.random.default_rng(cfg.seed)
    model.store.zero_grad()
    result = TrainResult()
    best_state = None
    for epoch in range(1, cfg.epochs + 1):
        order = data.train_idx[rng.permutation(data.train_idx.shape[0])]
        total, seen = 0.0, 0
        for s in range(0, order.shape[0], cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            X = data.inputs[idx].transpose(1, 0, 2)
            loss, _ = _loss_and_grad(model, graph, X, data.targets[idx], need_grad=True)
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"non-finite training loss at epoch {epoch}, "
                    f"batch {s // cfg.batch_size} (loss={loss})")
            adam_step(model.store, lr=cfg.lr)
            total += loss * idx.shape[0]
            seen += idx.shape[0]
        train_loss = total / max(seen, 1)
        val = evaluate(model, graph, data.inputs[data.val_idx],
                       data.targets[data.val_idx], metric)
        result.history.append((epoch, train_loss, val))
        if (best_state is None
                or (val > result.best_val_metric if higher_better
                    else val < result.best_val_metric)):
            result.best_val_metric = val
            result.best_epoch = epoch
            best_state = model.store.state_copy()
    if best_state is not None:
        model.store.load_values(best_state)
    return result


def evaluate(model: GcnnModel, graph: Graph, inputs: np.ndarray, targets,
             metric: str) -> float:
    """Accuracy (argmax match rate at the readout nodes) or RMSE."""
    if metric not in ("accuracy", "rmse"):
        raise ValueError(f"unknown metric {metric!r}")
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.shape[0] == 0:
        raise ValueError("cannot evaluate on an empty set")
    cfg = model.config
    nodes = None if cfg.readout is None else np.asarray(cfg.readout, dtype=np.int64)
    num, den = 0.0, 0
    for s in range(0, inputs.shape[0], _EVAL_CHUNK):
        chunk = inputs[s:s + _EVAL_CHUNK]
        out, _ = _forward_batch(model, graph, chunk.transpose(1, 0, 2))
        if metric == "accuracy":
            labels = np.asarray(targets)[s:s + _EVAL_CHUNK]
            sel = out if nodes is None else out[nodes]
            pred = np.argmax(sel, axis=-1)
            num += float(np.sum(pred == labels[None, :]))
            den += pred.size
        else:
            if nodes is None:
                T = np.asarray(targets, dtype=np.float64)[s:s + _EVAL_CHUNK]
                d = out - T.transpose(1, 0, 2)
            else:
                T = np.asarray(targets, dtype=np.float64)[s:s + _EVAL_CHUNK]
                d = out[nodes] - T[None, :, :]
            num += float(np.sum(d * d))
            den += d.size
    return num / den if metric == "accuracy" else float(np.sqrt(num / den))


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------


def checkpoint_save(model: GcnnModel, path) -> None:
    """Single-file container: u64-LE header length, JSON header (config,
    shapes, format version), then f64-LE parameter blocks in declaration
    order. Round-trips bit-exactly."""
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "params": [{"name": p.name, "shape": list(p.value.shape)}
                   for p in model.store],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for p in model.store:
            fh.write(np.ascontiguousarray(p.value, dtype="<f8").tobytes())


def checkpoint_header(path) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read(8)
        if len(raw) != 8:
            raise CheckpointError("truncated checkpoint: missing header length")
        (hlen,) = struct.unpack("<Q", raw)
        blob = fh.read(hlen)
    if len(blob) != hlen:
        raise CheckpointError("truncated checkpoint: incomplete header")
    try:
        header = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    version = header.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version!r}")
    return header


def checkpoint_load(path) -> GcnnModel:
    header = checkpoint_header(path)
    model = GcnnModel.initialize(GcnnConfig.from_dict(header["config"]))
    declared = [(p.name, list(p.value.shape)) for p in model.store]
    from_file = [(d["name"], list(d["shape"])) for d in header["params"]]
    if declared != from_file:
        raise CheckpointError("checkpoint parameter layout does not match its config")
    with open(path, "rb") as fh:
        (hlen,) = struct.unpack("<Q", fh.read(8))
        fh.seek(8 + hlen)
        for p in model.store:
            raw = fh.read(p.value.size * 8)
            if len(raw) != p.value.size * 8:
                raise CheckpointError(f"truncated checkpoint: block {p.name} incomplete")
            p.value[...] = np.frombuffer(raw, dtype="<f8").reshape(p.value.shape)
        if fh.read(1):
            raise CheckpointError("corrupt checkpoint: trailing bytes")
    return model


# ---------------------------------------------------------------------------
# property probes
# ---------------------------------------------------------------------------


def equivariance_test(model: GcnnModel, graph: Graph, x: np.ndarray,
                      trials: int, seed=0) -> float:
    """Max deviation of Phi(P^T x; P^T S P) from P^T Phi(x; S) over random P."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    X = np.asarray(x, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    base, _ = forward(model, graph, X)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        pmap = PermutationMap(rng.permutation(graph.n))
        out, _ = forward(model, permute(graph, pmap), permute_signal(X, pmap))
        worst = max(worst, float(np.max(np.abs(out - permute_signal(base, pmap)))))
    return worst


def gradient_check(model: GcnnModel, graph: Graph, probe_seed: int = 0,
                   batch: int = 3, num_probes: int = 200, step: float = 1e-5,
                   tie_tol: float = 1e-7):
    """Finite-difference check of the full model gradient on random probe
    batches (inputs and targets drawn from the seed)."""
    cfg = model.config
    n, f0 = graph.n, cfg.features[0]

    def build(seed):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((n, batch, f0))
        if cfg.loss == "cross_entropy":
            T = rng.integers(0, cfg.f_out, size=batch)
        elif cfg.readout is None:
            T = rng.standard_normal((batch, n, cfg.f_out))
        else:
            T = rng.standard_normal((batch, cfg.f_out))
        return X, T

    def loss_and_grad(seed):
        X, T = build(seed)
        return _loss_and_grad(model, graph, X, T, need_grad=True, with_margin=True)

    def loss_only(seed):
        X, T = build(seed)
        return _loss_and_grad(model, graph, X, T, need_grad=False, with_margin=True)

    return finite_difference_check(loss_and_grad, loss_only, model.store,
                                   probe_seed=probe_seed, num_probes=num_probes,
                                   step=step, tie_tol=tie_tol)
