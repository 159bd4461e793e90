"""VQ pitch codec: pitch contour -> 128-d latents -> codebook indices.

The encoder is an MLP over a window of 2W+1 frames of (normalized log2 f0,
voicing bit). Latents snap to the nearest codebook row; the decoder maps a
code vector back to the centre frame's normalized log2 f0. Training uses the
straight-through estimator, a commitment penalty and an EMA codebook.
Backpropagation is written out by hand (numpy only).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import store
from .errors import DimensionMismatch, EmptyDataset, IndexOutOfRange, ModelUntrained
from .pitch import PitchTrack

log = logging.getLogger(__name__)

FORMAT = "paravox-vq"
VERSION = 1

ENC_KEYS = ("enc_w1", "enc_b1", "enc_w2", "enc_b2", "enc_w3", "enc_b3")
DEC_KEYS = ("dec_w1", "dec_b1", "dec_w2", "dec_b2", "dec_w3", "dec_b3")


@dataclass(frozen=True)
class VqConfig:
    window: int = 4
    hidden: tuple = (256, 256)
    latent_dim: int = 128
    codebook_size: int = 64
    commitment_weight: float = 0.25
    ema_decay: float = 0.99

    @property
    def input_dim(self) -> int:
        return 2 * (2 * self.window + 1)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    learning_rate: float = 1e-3
    batch_size: int = 256
    seed: int = 0


@dataclass(eq=False)
class VqPitchModel:
    config: VqConfig
    params: dict
    seed: int = 0
    trained: bool = False
    train_config: TrainConfig | None = None

    @property
    def codebook(self) -> np.ndarray:
        return self.params["codebook"]

    def shapes(self) -> dict:
        c = self.config
        h1, h2 = c.hidden
        return {
            "enc_w1": (c.input_dim, h1), "enc_b1": (h1,),
            "enc_w2": (h1, h2), "enc_b2": (h2,),
            "enc_w3": (h2, c.latent_dim), "enc_b3": (c.latent_dim,),
            "dec_w1": (c.latent_dim, h1), "dec_b1": (h1,),
            "dec_w2": (h1, h2), "dec_b2": (h2,),
            "dec_w3": (h2, 1), "dec_b3": (1,),
            "codebook": (c.codebook_size, c.latent_dim),
        }


def init_model(config: VqConfig | None = None, seed: int = 0) -> VqPitchModel:
    """Randomly initialised (untrained) model; Glorot-uniform weights, zero biases."""
    config = config or VqConfig()
    rng = np.random.default_rng(seed)
    model = VqPitchModel(config, {}, seed)
    for name, shape in model.shapes().items():
        if name == "codebook":
            model.params[name] = rng.normal(0.0, 0.1, shape)
        elif len(shape) == 2:
            lim = np.sqrt(6.0 / (shape[0] + shape[1]))
            model.params[name] = rng.uniform(-lim, lim, shape)
        else:
            model.params[name] = np.zeros(shape)
    return model


# --------------------------------------------------------------------------
# Input preparation

def normalize_pitch(track: PitchTrack):
    """Per-utterance z-score of voiced log2 f0.

    Returns (values, voicing, (mu, sigma)); unvoiced frames hold 0. A constant
    contour maps to all zeros with sigma 1.
    """
    voiced = track.voiced
    values = np.zeros(len(track))
    if not voiced.any():
        return values, voiced.astype(np.float64), (0.0, 1.0)
    logf = np.log2(track.f0[voiced])
    if np.ptp(logf) == 0.0:
        return values, voiced.astype(np.float64), (float(logf[0]), 1.0)
    mu = float(logf.mean())
    sigma = float(logf.std())
    values[voiced] = (logf - mu) / sigma
    return values, voiced.astype(np.float64), (mu, sigma)


def context_windows(values: np.ndarray, voicing: np.ndarray, window: int) -> np.ndarray:
    """Rows of 2W+1 (value, voicing) pairs centred on each frame; edges zero-padded."""
    n = len(values)
    feats = np.stack([values, voicing], axis=1)
    padded = np.concatenate([np.zeros((window, 2)), feats, np.zeros((window, 2))])
    idx = np.arange(n)[:, None] + np.arange(2 * window + 1)[None, :]
    return padded[idx].reshape(n, -1)


def _prepare(tracks, window):
    xs, ys, ms = [], [], []
    for tr in tracks:
        v, vb, _ = normalize_pitch(tr)
        xs.append(context_windows(v, vb, window))
        ys.append(v)
        ms.append(vb)
    return np.concatenate(xs), np.concatenate(ys), np.concatenate(ms)


# --------------------------------------------------------------------------
# Forward / backward

def _encode_fwd(p, x):
    z1 = np.tanh(x @ p["enc_w1"] + p["enc_b1"])
    z2 = np.tanh(z1 @ p["enc_w2"] + p["enc_b2"])
    h = z2 @ p["enc_w3"] + p["enc_b3"]
    return h, (x, z1, z2)


def _decode_fwd(p, e):
    d1 = np.tanh(e @ p["dec_w1"] + p["dec_b1"])
    d2 = np.tanh(d1 @ p["dec_w2"] + p["dec_b2"])
    y = (d2 @ p["dec_w3"] + p["dec_b3"])[:, 0]
    return y, (e, d1, d2)


def nearest_codes(latents: np.ndarray, codebook: np.ndarray, chunk: int = 1024) -> np.ndarray:
    """Index of the nearest codebook row per latent; ties go to the lowest index."""
    out = np.empty(len(latents), dtype=np.int64)
    for lo in range(0, len(latents), chunk):
        diff = latents[lo:lo + chunk, None, :] - codebook[None, :, :]
        out[lo:lo + chunk] = np.argmin(np.sum(diff * diff, axis=2), axis=1)
    return out


def _loss_and_grads(p, x, y, mask, beta, quantize=True, codes=None):
    """Loss and parameter gradients for one batch.

    With ``quantize`` the decoder sees codebook rows and the gradient passes
    straight through to the encoder. Without it the decoder sees the latents
    directly (the differentiable path used for gradient checking); ``codes``
    then fixes the commitment targets.
    """
    h, (x_, z1, z2) = _encode_fwd(p, x)
    if codes is None:
        codes = nearest_codes(h, p["codebook"])
    e = p["codebook"][codes]
    dec_in = e if quantize else h
    yhat, (_, d1, d2) = _decode_fwd(p, dec_in)

    n_voiced = max(mask.sum(), 1.0)
    err = (yhat - y) * mask
    recon = float(np.sum(err * err) / n_voiced)
    diff = h - e
    commit = float(np.mean(diff * diff))
    loss = recon + beta * commit

    g = {}
    gy = (2.0 * err / n_voiced)[:, None]
    g["dec_w3"] = d2.T @ gy
    g["dec_b3"] = gy.sum(axis=0)
    ga = (gy @ p["dec_w3"].T) * (1.0 - d2 * d2)
    g["dec_w2"] = d1.T @ ga
    g["dec_b2"] = ga.sum(axis=0)
    ga = (ga @ p["dec_w2"].T) * (1.0 - d1 * d1)
    g["dec_w1"] = dec_in.T @ ga
    g["dec_b1"] = ga.sum(axis=0)
    gh = ga @ p["dec_w1"].T + beta * 2.0 * diff / diff.size

    g["enc_w3"] = z2.T @ gh
    g["enc_b3"] = gh.sum(axis=0)
    ga = (gh @ p["enc_w3"].T) * (1.0 - z2 * z2)
    g["enc_w2"] = z1.T @ ga
    g["enc_b2"] = ga.sum(axis=0)
    ga = (ga @ p["enc_w2"].T) * (1.0 - z1 * z1)
    g["enc_w1"] = x_.T @ ga
    g["enc_b1"] = ga.sum(axis=0)
    return loss, {"recon": recon, "commit": commit}, g, h, codes


# --------------------------------------------------------------------------
# Public operations

def _require_trained(model: VqPitchModel):
    if not model.trained:
        raise ModelUntrained("VQ pitch model has not been trained")


def encode(model: VqPitchModel, track: PitchTrack) -> np.ndarray:
    """Codebook index per frame of ``track``."""
    _require_trained(model)
    v, vb, _ = normalize_pitch(track)
    if len(track) == 0:
        return np.zeros(0, dtype=np.int64)
    h, _ = _encode_fwd(model.params, context_windows(v, vb, model.config.window))
    return nearest_codes(h, model.codebook)


def decode(model: VqPitchModel, codes, voicing, stats) -> PitchTrack:
    """Rebuild an f0 contour from codes; unvoiced frames are forced to 0."""
    _require_trained(model)
    codes = np.asarray(codes, dtype=np.int64)
    voicing = np.asarray(voicing, dtype=bool)
    if codes.shape != voicing.shape:
        raise DimensionMismatch("codes and voicing differ in length")
    if codes.size and (codes.min() < 0 or codes.max() >= model.config.codebook_size):
        raise IndexOutOfRange(f"codes must lie in [0, {model.config.codebook_size})")
    mu, sigma = stats
    if codes.size == 0:
        return PitchTrack(np.zeros(0), voicing)
    y, _ = _decode_fwd(model.params, model.codebook[codes])
    f0 = np.where(voicing, 2.0 ** (y * sigma + mu), 0.0)
    return PitchTrack(f0, voicing)


def reconstruction_mse(model: VqPitchModel, tracks) -> tuple[float, float]:
    """(codec MSE, mean-predictor MSE) on voiced frames in the normalized domain."""
    _require_trained(model)
    x, y, m = _prepare(tracks, model.config.window)
    h, _ = _encode_fwd(model.params, x)
    yhat, _ = _decode_fwd(model.params, model.codebook[nearest_codes(h, model.codebook)])
    sel = m > 0
    return float(np.mean((yhat[sel] - y[sel]) ** 2)), float(np.var(y[sel]))


@dataclass
class _Adam:
    lr: float
    b1: float = 0.9
    b2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def train(dataset, config: TrainConfig | None = None, model_config: VqConfig | None = None,
          on_epoch=None) -> VqPitchModel:
    """Fit encoder, decoder and EMA codebook on unmodified contours.

    ``on_epoch(record)`` is called with a dict of per-epoch statistics.
    """
    config = config or TrainConfig()
    tracks = [t for t in dataset if len(t) and t.voiced.any()]
    if not tracks:
        raise EmptyDataset("need at least one track with a voiced frame")
    model = init_model(model_config, config.seed)
    mc = model.config
    p = model.params
    rng = np.random.default_rng(config.seed + 1)
    x, y, m = _prepare(tracks, mc.window)
    n = len(x)
    C = mc.codebook_size

    # Seed the codebook with latents of distinct random frames.
    h0, _ = _encode_fwd(p, x)
    pick = rng.choice(n, size=C, replace=n < C)
    p["codebook"] = h0[pick] + rng.normal(0.0, 1e-3, (C, mc.latent_dim))
    cluster_size = np.ones(C)
    embed_sum = p["codebook"].copy()

    opt = _Adam(config.learning_rate)
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        usage = np.zeros(C, dtype=np.int64)
        tot = {"recon": 0.0, "commit": 0.0}
        voiced_seen = 0.0
        last_h = None
        for lo in range(0, n, config.batch_size):
            b = order[lo:lo + config.batch_size]
            _, parts, grads, h, codes = _loss_and_grads(
                p, x[b], y[b], m[b], mc.commitment_weight)
            opt.step(p, grads)

            counts = np.bincount(codes, minlength=C).astype(np.float64)
            sums = np.zeros((C, mc.latent_dim))
            np.add.at(sums, codes, h)
            d = mc.ema_decay
            cluster_size = d * cluster_size + (1.0 - d) * counts
            embed_sum = d * embed_sum + (1.0 - d) * sums
            total = cluster_size.sum()
            smoothed = (cluster_size + 1e-5) / (total + C * 1e-5) * total
            p["codebook"] = embed_sum / smoothed[:, None]

            usage += counts.astype(np.int64)
            nv = float(m[b].sum())
            tot["recon"] += parts["recon"] * max(nv, 1.0)
            tot["commit"] += parts["commit"] * len(b)
            voiced_seen += max(nv, 1.0)
            last_h = h

        probs = usage / usage.sum()
        nz = probs[probs > 0]
        record = {
            "epoch": epoch + 1,
            "recon_mse": tot["recon"] / voiced_seen,
            "commitment": tot["commit"] / n,
            "perplexity": float(np.exp(-np.sum(nz * np.log(nz)))),
            "codes_used": int(np.count_nonzero(usage)),
        }
        dead = np.nonzero(usage == 0)[0]
        if dead.size:
            src = rng.choice(len(last_h), size=dead.size, replace=len(last_h) < dead.size)
            fresh = last_h[src] + rng.normal(0.0, 1e-3, (dead.size, mc.latent_dim))
            p["codebook"][dead] = fresh
            embed_sum[dead] = fresh
            cluster_size[dead] = 1.0
        record["reseeded"] = int(dead.size)
        history.append(record)
        log.info("vq epoch %d: %s", epoch + 1, record)
        if on_epoch is not None:
            on_epoch(record)

    model.trained = True
    model.train_config = config
    model.history = history
    return model


def gradient_check(model: VqPitchModel, sample: PitchTrack, epsilon: float = 1e-5,
                   n_params: int = 120, seed: int = 0, keys=None) -> float:
    """Max relative error between backprop and central differences.

    Uses the differentiable path (decoder fed the latents, commitment targets
    frozen) and ``n_params`` randomly chosen encoder/decoder parameters.
    """
    mc = model.config
    v, vb, _ = normalize_pitch(sample)
    x = context_windows(v, vb, mc.window)
    y, mask = v, vb
    p = {k: a.copy() for k, a in model.params.items()}
    beta = mc.commitment_weight
    _, _, grads, _, codes = _loss_and_grads(p, x, y, mask, beta, quantize=False)

    rng = np.random.default_rng(seed)
    keys = list(keys or (ENC_KEYS + DEC_KEYS))
    sizes = np.array([p[k].size for k in keys])
    worst = 0.0
    for _ in range(n_params):
        k = keys[rng.choice(len(keys), p=sizes / sizes.sum())]
        i = int(rng.integers(p[k].size))
        flat = p[k].reshape(-1)
        orig = flat[i]
        flat[i] = orig + epsilon
        lp = _loss_and_grads(p, x, y, mask, beta, quantize=False, codes=codes)[0]
        flat[i] = orig - epsilon
        lm = _loss_and_grads(p, x, y, mask, beta, quantize=False, codes=codes)[0]
        flat[i] = orig
        num = (lp - lm) / (2.0 * epsilon)
        ana = grads[k].reshape(-1)[i]
        rel = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
        worst = max(worst, rel)
    return worst


# --------------------------------------------------------------------------
# Persistence

def to_dict(model: VqPitchModel) -> dict:
    c = model.config
    out = {
        "format": FORMAT,
        "version": VERSION,
        "dims": {
            "window": c.window, "hidden": list(c.hidden), "latent_dim": c.latent_dim,
            "codebook_size": c.codebook_size,
        },
        "commitment_weight": c.commitment_weight,
        "ema_decay": c.ema_decay,
        "seed": model.seed,
        "trained": model.trained,
        "params": {k: store.encode_array(model.params[k]) for k in sorted(model.params)},
    }
    if model.train_config is not None:
        tc = model.train_config
        out["train_config"] = {"epochs": tc.epochs, "learning_rate": tc.learning_rate,
                               "batch_size": tc.batch_size, "seed": tc.seed}
    return out


def save_model(model: VqPitchModel, path) -> None:
    store.save(to_dict(model), path)


def load_model(path) -> VqPitchModel:
    obj = store.load(path, FORMAT, VERSION)
    d = obj["dims"]
    config = VqConfig(window=d["window"], hidden=tuple(d["hidden"]), latent_dim=d["latent_dim"],
                      codebook_size=d["codebook_size"],
                      commitment_weight=obj["commitment_weight"], ema_decay=obj["ema_decay"])
    model = VqPitchModel(config, {}, obj["seed"], obj["trained"])
    for name, shape in model.shapes().items():
        if name not in obj["params"]:
            raise DimensionMismatch(f"{path}: missing parameter {name}")
        arr = store.decode_array(obj["params"][name])
        if arr.shape != shape:
            raise DimensionMismatch(f"{path}: {name} has shape {arr.shape}, expected {shape}")
        model.params[name] = arr.copy()
    if "train_config" in obj:
        model.train_config = TrainConfig(**obj["train_config"])
    return model


# --------------------------------------------------------------------------
# Synthetic data

def synthetic_contours(n: int, seed: int = 0, n_frames: int = 197) -> list[PitchTrack]:
    """Smooth vibrato/glide contours with a few unvoiced gaps, for toy training."""
    rng = np.random.default_rng(seed)
    t = np.arange(n_frames) * 0.005
    out = []
    for _ in range(n):
        base = rng.uniform(90.0, 250.0)
        depth = rng.uniform(0.05, 0.4)
        rate = rng.uniform(1.0, 6.0)
        phase = rng.uniform(0.0, 2 * np.pi)
        slope = rng.uniform(-0.5, 0.5)
        f0 = base * 2.0 ** (depth * np.sin(2 * np.pi * rate * t + phase) + slope * t)
        voiced = np.ones(n_frames, dtype=bool)
        for _ in range(rng.integers(0, 3)):
            start = int(rng.integers(0, n_frames - 10))
            voiced[start:start + int(rng.integers(5, 25))] = False
        out.append(PitchTrack(np.where(voiced, f0, 0.0), voiced))
    return out
