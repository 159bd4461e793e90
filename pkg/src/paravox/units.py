"""Discrete linguistic units: per-frame spectral features clustered by k-means."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import store
from .audio import FRAME_S, AudioBuffer, deltas, frame_params, mfcc
from .errors import DimensionMismatch, EmptySignal, FormatError, InsufficientData, IoError

log = logging.getLogger(__name__)

FORMAT = "paravox-units"
VERSION = 1
N_MFCC = 13


@dataclass(frozen=True, eq=False)
class UnitCodebook:
    centroids: np.ndarray
    seed: int = 0
    history: tuple = ()

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.centroids.shape[1]


def extract_features(buffer: AudioBuffer) -> np.ndarray:
    """13 MFCCs plus their deltas on the 20 ms / 5 ms grid (T x 26)."""
    frame_len, _ = frame_params(buffer.sample_rate)
    if len(buffer) < frame_len:
        raise EmptySignal(f"need at least {FRAME_S * 1000:.0f} ms of audio")
    c = mfcc(buffer, N_MFCC)
    return np.hstack([c, deltas(c)])


def _sq_dists(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _nearest(x: np.ndarray, centroids: np.ndarray, chunk: int = 4096):
    labels = np.empty(len(x), dtype=np.int64)
    dist = np.empty(len(x))
    for lo in range(0, len(x), chunk):
        d = _sq_dists(x[lo:lo + chunk], centroids)
        labels[lo:lo + chunk] = np.argmin(d, axis=1)
        dist[lo:lo + chunk] = d[np.arange(len(d)), labels[lo:lo + chunk]]
    return labels, dist


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    centers = [x[rng.integers(n)]]
    closest = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            raise InsufficientData(f"fewer than {k} distinct feature frames")
        idx = int(np.searchsorted(np.cumsum(closest), rng.uniform(0.0, total), side="right"))
        idx = min(idx, n - 1)
        centers.append(x[idx])
        closest = np.minimum(closest, np.sum((x - x[idx]) ** 2, axis=1))
    return np.array(centers)


def _reseed_empty(centroids, empty, x, dist, labels):
    """Move each empty cluster onto the point currently farthest from its centroid."""
    dist = dist.copy()
    for c in empty:
        far = int(np.argmax(dist))
        centroids[c] = x[far]
        dist[far] = 0.0
        labels[far] = c


def train_units(features, k: int = 100, batch: int = 1024, iters: int = 100,
                seed: int = 0, on_iter=None) -> UnitCodebook:
    """Mini-batch k-means with k-means++ seeding.

    Each centroid moves toward its batch members with learning rate
    1/count, where count is the number of points it has absorbed so far;
    a centroid is therefore the running mean of everything assigned to it.
    When ``batch`` covers the whole dataset this reduces to Lloyd's
    algorithm and stops once assignments no longer change.

    ``history`` on the result holds the inertia measured at each iteration
    (on the batch, before the update).
    """
    x = np.concatenate([np.asarray(f, dtype=np.float64) for f in features]) if len(features) else np.zeros((0, 0))
    n = len(x)
    if n < k:
        raise InsufficientData(f"{n} frames for k={k}")
    if not np.all(np.isfinite(x)):
        raise InsufficientData("features contain non-finite values")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(x, k, rng)
    history = []

    if batch >= n:
        prev = None
        for it in range(iters):
            labels, dist = _nearest(x, centroids)
            inertia = float(dist.sum())
            history.append(inertia)
            if on_iter is not None:
                on_iter(it + 1, inertia)
            if prev is not None and np.array_equal(labels, prev):
                break
            prev = labels
            counts = np.bincount(labels, minlength=k)
            empty = np.nonzero(counts == 0)[0]
            if empty.size:
                _reseed_empty(centroids, empty, x, dist, labels)
                counts = np.bincount(labels, minlength=k)
            sums = np.zeros_like(centroids)
            np.add.at(sums, labels, x)
            filled = counts > 0
            centroids[filled] = sums[filled] / counts[filled, None]
        return UnitCodebook(centroids, seed, tuple(history))

    seen = np.zeros(k)
    for it in range(iters):
        b = x[rng.choice(n, size=batch, replace=False)]
        labels, dist = _nearest(b, centroids)
        inertia = float(dist.sum())
        history.append(inertia)
        if on_iter is not None:
            on_iter(it + 1, inertia)
        counts = np.bincount(labels, minlength=k).astype(np.float64)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, b)
        hit = counts > 0
        seen[hit] += counts[hit]
        centroids[hit] += (sums[hit] - counts[hit, None] * centroids[hit]) / seen[hit, None]
        empty = np.nonzero(seen == 0)[0]
        if empty.size:
            _reseed_empty(centroids, empty, b, dist, labels)
    return UnitCodebook(centroids, seed, tuple(history))


def assign_units(codebook: UnitCodebook, features: np.ndarray) -> np.ndarray:
    """Nearest centroid per row; ties go to the lowest index."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[1] != codebook.feature_dim:
        raise DimensionMismatch(
            f"features have shape {f.shape}, codebook expects D={codebook.feature_dim}")
    return _nearest(f, codebook.centroids)[0]


def save_codebook(codebook: UnitCodebook, path, extra: dict | None = None) -> None:
    obj = {
        "format": FORMAT,
        "version": VERSION,
        "k": codebook.k,
        "feature_dim": codebook.feature_dim,
        "seed": codebook.seed,
        "centroids": store.encode_array(codebook.centroids),
    }
    if extra:
        obj["config"] = extra
    store.save(obj, path)


def load_codebook(path) -> UnitCodebook:
    obj = store.load(path, FORMAT, VERSION)
    c = store.decode_array(obj["centroids"])
    if c.shape != (obj["k"], obj["feature_dim"]):
        raise DimensionMismatch(f"{path}: centroid matrix {c.shape} does not match header")
    return UnitCodebook(c.copy(), obj["seed"])


def read_feature_csv(path) -> np.ndarray:
    """Externally computed features: first line ``T,D``, then T rows of D numbers."""
    try:
        lines = Path(path).read_text(encoding="utf-8").strip().splitlines()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    try:
        t, d = (int(v) for v in lines[0].split(","))
        data = np.array([[float(v) for v in row.split(",")] for row in lines[1:]])
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: bad feature file: {exc}") from exc
    if data.shape != (t, d) and not (t == 0 and data.size == 0):
        raise DimensionMismatch(f"{path}: header says {t}x{d}, found {data.shape}")
    return data.reshape(t, d)


def write_feature_csv(features: np.ndarray, path) -> None:
    t, d = features.shape
    rows = [f"{t},{d}"] + [",".join(repr(float(v)) for v in row) for row in features]
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")
