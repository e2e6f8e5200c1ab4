"""Data generation and loading for the four experiment protocols."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..graph import Graph, graph_from_edges, knn_geometric, normalize_gso
from ..model import Dataset

__all__ = [
    "split_indices",
    "make_dataset",
    "gen_source_localization",
    "gen_consensus",
    "random_coords",
    "gen_smooth_signals",
    "add_noise_snr",
    "load_molene",
    "RatingsMatrix",
    "load_movielens",
    "synthetic_ratings",
    "movie_graph",
    "recsys_samples",
]


def split_indices(num: int, seed, fractions=(0.8, 0.1, 0.1)):
    """Random train/val/test index split with the given fractions."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(num)
    n_tr = int(round(fractions[0] * num))
    n_val = int(round(fractions[1] * num))
    return perm[:n_tr], perm[n_tr:n_tr + n_val], perm[n_tr + n_val:]


def make_dataset(inputs, targets, seed, fractions=(0.8, 0.1, 0.1)) -> Dataset:
    tr, va, te = split_indices(inputs.shape[0], seed, fractions)
    return Dataset(inputs=inputs, targets=targets, train_idx=tr, val_idx=va, test_idx=te)


def gen_source_localization(graph: Graph, labels: np.ndarray, seed,
                            draws_per_node: int = 30, t_max: int = 30):
    """Diffused-delta classification set.

    For every node c, ``draws_per_node`` diffusion times t are drawn
    uniformly from the integers 0..t_max and the sample is S^t delta_c with
    label community(c). Readout nodes are the highest-degree node of each
    community (ties to the lowest index).

    Returns (inputs (S, N, 1), labels (S,), readout_nodes).
    """
    n = graph.n
    mats = [np.eye(n)]
    for _ in range(t_max):
        mats.append(graph.gso @ mats[-1])
    rng = np.random.default_rng(seed)
    inputs = np.empty((n * draws_per_node, n, 1))
    y = np.empty(n * draws_per_node, dtype=np.int64)
    s = 0
    for c in range(n):
        for t in rng.integers(0, t_max + 1, size=draws_per_node):
            inputs[s, :, 0] = mats[t][:, c]
            y[s] = labels[c]
            s += 1
    communities = np.unique(labels)
    degrees = graph.degrees
    readout = []
    for comm in communities:
        members = np.nonzero(labels == comm)[0]
        readout.append(int(members[np.argmax(degrees[members])]))
    return inputs, y, tuple(readout)


def gen_consensus(n: int, samples: int, seed):
    """Standard-normal node signals; the target is the mean at every node."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((samples, n))
    T = np.repeat(X.mean(axis=1, keepdims=True), n, axis=1)
    return X[:, :, None], T[:, :, None]


def random_coords(n: int, seed) -> np.ndarray:
    return np.random.default_rng(seed).random((n, 2))


def gen_smooth_signals(graph: Graph, samples: int, seed,
                       lowpass_taps=(1.0, 0.7, 0.4, 0.2)) -> np.ndarray:
    """Low-pass filtered white noise, rescaled to unit mean power."""
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((graph.n, samples))
    taps = np.asarray(lowpass_taps, dtype=np.float64)
    out = taps[0] * W
    cur = W
    for k in range(1, taps.shape[0]):
        cur = graph.gso @ cur
        out = out + taps[k] * cur
    out /= np.sqrt(np.mean(out * out))
    return out.T  # (samples, N)


def add_noise_snr(clean: np.ndarray, snr_db: float, seed) -> np.ndarray:
    """Additive zero-mean Gaussian noise scaled so the empirical
    signal-to-noise power ratio is exactly 10^(snr_db / 10)."""
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(clean.shape)
    p_sig = float(np.mean(clean * clean))
    p_target = p_sig / (10.0 ** (snr_db / 10.0))
    noise *= np.sqrt(p_target / np.mean(noise * noise))
    return clean + noise


def _read_csv_rows(path, expected_cols: int):
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not any(cell.strip() for cell in row):
                continue
            if len(row) != expected_cols:
                raise ValueError(f"{path}:{lineno}: expected {expected_cols} columns")
            rows.append([cell.strip() for cell in row])
    return rows


def load_molene(measurements_path, coords_path):
    """Hourly temperature table.

    Measurements: CSV ``station_id,timestamp,temperature_C`` (optional header).
    Coordinates: CSV ``station_id,x,y``. Every station must report at every
    timestamp. Returns (signals (T, N), coords (N, 2), station_ids).
    """
    def is_header(row):
        try:
            float(row[-1])
            return False
        except ValueError:
            return True

    mrows = _read_csv_rows(measurements_path, 3)
    if mrows and is_header(mrows[0]):
        mrows = mrows[1:]
    crows = _read_csv_rows(coords_path, 3)
    if crows and is_header(crows[0]):
        crows = crows[1:]
    coords_by_station = {r[0]: (float(r[1]), float(r[2])) for r in crows}
    stations = sorted(coords_by_station)
    station_pos = {s: i for i, s in enumerate(stations)}
    by_time: dict[str, dict[str, float]] = {}
    for sid, ts, temp in mrows:
        if sid not in station_pos:
            raise ValueError(f"measurement for unknown station {sid!r}")
        by_time.setdefault(ts, {})[sid] = float(temp)
    times = sorted(by_time)
    signals = np.empty((len(times), len(stations)))
    for t_i, ts in enumerate(times):
        got = by_time[ts]
        if len(got) != len(stations):
            missing = sorted(set(stations) - set(got))
            raise ValueError(f"timestamp {ts!r} missing stations {missing}")
        for sid, temp in got.items():
            signals[t_i, station_pos[sid]] = temp
    coords = np.array([coords_by_station[s] for s in stations])
    return signals, coords, stations


@dataclass(frozen=True)
class RatingsMatrix:
    """User-by-movie ratings in {1..5}; 0 means unrated."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.ndim != 2:
            raise ValueError("ratings must be a 2-D user x movie matrix")
        if not np.all(np.isin(np.unique(values), [0, 1, 2, 3, 4, 5])):
            raise ValueError("ratings must lie in {0, 1, 2, 3, 4, 5}")

    @property
    def num_users(self) -> int:
        return int(self.values.shape[0])

    @property
    def num_movies(self) -> int:
        return int(self.values.shape[1])

    @property
    def num_ratings(self) -> int:
        return int(np.count_nonzero(self.values))


def load_movielens(path) -> RatingsMatrix:
    """Tab-separated ``user item rating timestamp`` file with 1-indexed ids."""
    users, items, ratings = [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 whitespace-separated fields")
            users.append(int(parts[0]))
            items.append(int(parts[1]))
            ratings.append(float(parts[2]))
    values = np.zeros((max(users), max(items)))
    values[np.array(users) - 1, np.array(items) - 1] = ratings
    return RatingsMatrix(values)


def synthetic_ratings(users: int, movies: int, rank: int, density: float, seed):
    """Low-rank ratings at a given fill density.

    The underlying real-valued matrix is a positive rank-``rank`` product
    scaled into [1, 5]; ratings are its rounded values where the density
    mask hits. Returns (RatingsMatrix, real_matrix).
    """
    if not (1 <= rank <= min(users, movies)):
        raise ValueError("rank out of range")
    if not (0 < density <= 1):
        raise ValueError("density must be in (0, 1]")
    rng = np.random.default_rng(seed)
    A = rng.uniform(0.2, 1.0, size=(users, rank))
    B = rng.uniform(0.2, 1.0, size=(rank, movies))
    real = A @ B
    real *= 5.0 / real.max()
    np.clip(real, 1.0, 5.0, out=real)
    mask = rng.random((users, movies)) < density
    values = np.where(mask, np.clip(np.round(real), 1, 5), 0.0)
    return RatingsMatrix(values), real


def movie_graph(train_values: np.ndarray, knn: int = 10):
    """Movie similarity graph from training-user rating columns.

    Movies without any training rating are excluded (with a warning).
    Pearson correlations between the remaining columns are sparsified to
    each movie's top ``knn`` positive correlations, symmetrized by union,
    and the resulting GSO is normalized.

    Returns (graph, kept) where ``kept`` maps graph nodes to column indices.
    """
    rated = np.count_nonzero(train_values, axis=0) > 0
    if not np.all(rated):
        dropped = np.nonzero(~rated)[0]
        warnings.warn(f"excluding {dropped.size} movie(s) with no training "
                      f"ratings: {dropped.tolist()[:10]}")
    kept = np.nonzero(rated)[0]
    cols = train_values[:, kept]
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.corrcoef(cols, rowvar=False)
    corr = np.nan_to_num(corr, nan=0.0)
    np.fill_diagonal(corr, 0.0)
    m = kept.shape[0]
    pairs = {}
    for i in range(m):
        order = np.argsort(-corr[i], kind="stable")[:knn]
        for j in order:
            if corr[i, j] > 0.0:
                key = (min(i, int(j)), max(i, int(j)))
                pairs.setdefault(key, corr[i, j])
    edges = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
    weights = np.array([pairs[tuple(e)] for e in edges])
    graph = normalize_gso(graph_from_edges(m, edges, weights))
    return graph, kept


def recsys_samples(values: np.ndarray, user_idx: np.ndarray, movie_col: int):
    """Rating-prediction samples for one target movie column.

    Only users (rows of ``values``, already restricted to kept movies) who
    rated the movie qualify; the input is the user's rating row with the
    target column zeroed and the target is the held-out rating.
    """
    rated = user_idx[values[user_idx, movie_col] > 0]
    inputs = values[rated].copy()
    targets = inputs[:, movie_col].copy()[:, None]
    inputs[:, movie_col] = 0.0
    return rated, inputs[:, :, None], targets
