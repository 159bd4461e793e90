"""NCCF pitch tracker with dynamic-programming path selection.

Frames follow the 20 ms / 5 ms grid used everywhere else, so a track of a
signal always has exactly ``num_frames(len, frame_len, hop)`` entries.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.fft import irfft, next_fast_len, rfft
from scipy.signal import butter, sosfiltfilt

from .audio import FRAME_S, HOP_S, AudioBuffer, frame_params, num_frames
from .errors import EmptySignal, ValidationError

N_CANDIDATES = 8
# Bias toward short lags; keeps period multiples from winning on stationary input.
LAG_WEIGHT = 0.1
LOWPASS_HZ = 1000.0


@dataclass(frozen=True)
class TrackerConfig:
    f0_min: float = 60.0
    f0_max: float = 400.0
    voicing_threshold: float = 0.3
    transition_cost: float = 0.35

    def validate(self, sample_rate: int):
        if not (0 < self.f0_min < self.f0_max < sample_rate / 2):
            raise ValidationError(
                f"need 0 < f0_min < f0_max < rate/2, got {self.f0_min}, {self.f0_max}")
        if not 0 < self.voicing_threshold < 1:
            raise ValidationError("voicing_threshold must lie in (0, 1)")
        if self.transition_cost < 0:
            raise ValidationError("transition_cost must be >= 0")


@dataclass(frozen=True, eq=False)
class PitchTrack:
    f0: np.ndarray
    voiced: np.ndarray
    hop_s: float = HOP_S
    frame_s: float = FRAME_S
    f0_range: tuple = field(default=(60.0, 400.0))

    def __post_init__(self):
        f0 = np.asarray(self.f0, dtype=np.float64).copy()
        voiced = np.asarray(self.voiced, dtype=bool).copy()
        if f0.shape != voiced.shape or f0.ndim != 1:
            raise ValidationError("f0 and voiced must be 1-D of equal length")
        if not np.all(np.isfinite(f0)):
            raise ValidationError("f0 contains non-finite values")
        if np.any(f0[~voiced] != 0):
            raise ValidationError("unvoiced frames must have f0 == 0")
        if np.any(f0[voiced] <= 0):
            raise ValidationError("voiced frames must have positive f0")
        f0.setflags(write=False)
        voiced.setflags(write=False)
        object.__setattr__(self, "f0", f0)
        object.__setattr__(self, "voiced", voiced)

    def __len__(self):
        return len(self.f0)

    @property
    def times(self) -> np.ndarray:
        """Frame-centre times in seconds."""
        return np.arange(len(self)) * self.hop_s + self.frame_s / 2

    def with_f0(self, f0) -> "PitchTrack":
        return replace(self, f0=f0)

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["frame_index", "time_s", "f0_hz", "voiced"])
        for i, (t, f, v) in enumerate(zip(self.times, self.f0, self.voiced)):
            w.writerow([i, f"{t:.6f}", f"{f:.6f}", int(v)])
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str, hop_s: float = HOP_S, frame_s: float = FRAME_S) -> "PitchTrack":
        rows = list(csv.DictReader(io.StringIO(text)))
        f0 = [float(r["f0_hz"]) for r in rows]
        voiced = [bool(int(r["voiced"])) for r in rows]
        return cls(np.array(f0), np.array(voiced, dtype=bool), hop_s, frame_s)


def lowpass(x: np.ndarray, rate: int, cutoff: float = LOWPASS_HZ) -> np.ndarray:
    """Zero-phase 4th-order Butterworth low-pass (no-op when cutoff >= Nyquist)."""
    if cutoff >= rate / 2 or len(x) < 16:
        return np.asarray(x, dtype=np.float64)
    sos = butter(4, cutoff, fs=rate, output="sos")
    return sosfiltfilt(sos, x, padlen=min(len(x) - 1, 3 * 13))


def nccf(x: np.ndarray, frame_len: int, hop: int, lag_min: int, lag_max: int) -> np.ndarray:
    """Normalized cross-correlation per frame for lags ``lag_min..lag_max``.

    Frame t correlates x[t*hop : t*hop+frame_len] with the same-length window
    ``lag`` samples later; the signal is zero-extended past its end.
    Returns shape (T, lag_max - lag_min + 1).
    """
    n_frames = num_frames(len(x), frame_len, hop)
    seg_len = frame_len + lag_max
    xp = np.concatenate([x, np.zeros(seg_len)])
    idx = np.arange(n_frames)[:, None] * hop
    segs = xp[idx + np.arange(seg_len)[None, :]]
    frames = segs[:, :frame_len]
    nfft = next_fast_len(seg_len + frame_len)
    cross = irfft(rfft(segs, nfft, axis=1) * np.conj(rfft(frames, nfft, axis=1)), nfft, axis=1)
    cross = cross[:, lag_min:lag_max + 1]
    sq = np.concatenate([np.zeros((n_frames, 1)), np.cumsum(segs ** 2, axis=1)], axis=1)
    lags = np.arange(lag_min, lag_max + 1)
    e_lag = sq[:, lags + frame_len] - sq[:, lags]
    e0 = sq[:, frame_len][:, None]
    denom = np.sqrt(np.maximum(e0 * e_lag, 0.0))
    # Relative floor so scaling the input never changes which frames count as empty.
    floor = 1e-20 * float(np.max(e0)) if e0.size else 0.0
    out = np.where(denom > floor, cross / np.where(denom > floor, denom, 1.0), 0.0)
    return np.clip(out, -1.0, 1.0)


def _candidates(row: np.ndarray, lag_lo: int, lags: np.ndarray, n_best: int):
    """Local maxima of one NCCF row, refined by parabolic interpolation.

    ``row`` spans lags[0]..lags[-1] and includes one guard lag on each side of
    the admissible range; peaks on the guards are not reported.
    """
    interior = (row[1:-1] > row[:-2]) & (row[1:-1] >= row[2:]) & (row[1:-1] > 0)
    idx = np.nonzero(interior)[0] + 1
    if idx.size == 0:
        return np.empty(0), np.empty(0)
    if idx.size > n_best:
        idx = idx[np.argsort(-row[idx], kind="stable")[:n_best]]
        idx.sort()
    a, b, c = row[idx - 1], row[idx], row[idx + 1]
    den = a - 2 * b + c
    delta = np.where(den < 0, 0.5 * (a - c) / np.where(den < 0, den, -1.0), 0.0)
    delta = np.clip(delta, -0.5, 0.5)
    peak = b - 0.25 * (a - c) * delta
    return lags[idx] + delta, np.minimum(peak, 1.0)


def track_pitch(buffer: AudioBuffer, config: TrackerConfig | None = None,
                frame_s: float = FRAME_S, hop_s: float = HOP_S) -> PitchTrack:
    config = config or TrackerConfig()
    rate = buffer.sample_rate
    config.validate(rate)
    frame_len, hop = frame_params(rate, frame_s, hop_s)
    if len(buffer) < frame_len:
        raise EmptySignal(f"{len(buffer)} samples is shorter than one {frame_len}-sample frame")
    x = lowpass(buffer.samples, rate)

    lag_lo = int(np.floor(rate / config.f0_max))
    lag_hi = int(np.ceil(rate / config.f0_min))
    lags = np.arange(lag_lo - 1, lag_hi + 2)
    phi = nccf(x, frame_len, hop, lags[0], lags[-1])
    n = len(phi)

    cand_lag, cand_val = [], []
    for t in range(n):
        lg, val = _candidates(phi[t], lag_lo, lags, N_CANDIDATES)
        keep = (lg >= rate / config.f0_max) & (lg <= rate / config.f0_min)
        cand_lag.append(lg[keep])
        cand_val.append(val[keep])

    voiced = np.array([v.size > 0 and v.max() >= config.voicing_threshold for v in cand_val])
    f0 = np.zeros(n)

    span = lag_hi - lag_lo
    t = 0
    while t < n:
        if not voiced[t]:
            t += 1
            continue
        end = t
        while end < n and voiced[end]:
            end += 1
        f0[t:end] = _viterbi(cand_lag[t:end], cand_val[t:end], rate, lag_lo, span,
                             config.transition_cost)
        t = end

    f0[voiced] = np.clip(f0[voiced], config.f0_min, config.f0_max)
    return PitchTrack(f0, voiced, hop_s, frame_s, (config.f0_min, config.f0_max))


def _viterbi(lags_seq, vals_seq, rate, lag_lo, span, transition_cost):
    """Lowest-cost path of candidate lags through one voiced run; returns f0 in Hz."""
    local = [1.0 - v * (1.0 - LAG_WEIGHT * (lg - lag_lo) / span)
             for lg, v in zip(lags_seq, vals_seq)]
    logf = [np.log2(rate / lg) for lg in lags_seq]
    cost = local[0]
    back = []
    for i in range(1, len(lags_seq)):
        trans = transition_cost * np.abs(logf[i][:, None] - logf[i - 1][None, :])
        total = cost[None, :] + trans
        best = np.argmin(total, axis=1)
        back.append(best)
        cost = total[np.arange(len(best)), best] + local[i]
    path = np.empty(len(lags_seq), dtype=int)
    path[-1] = int(np.argmin(cost))
    for i in range(len(lags_seq) - 1, 0, -1):
        path[i - 1] = back[i - 1][path[i]]
    return np.array([rate / lags_seq[i][k] for i, k in enumerate(path)])


def median_smooth(track: PitchTrack, width: int) -> PitchTrack:
    """Median filter of ``width`` frames applied within each voiced run."""
    if width < 1 or width % 2 == 0:
        raise ValidationError("width must be odd and >= 1")
    if width == 1:
        return track
    half = width // 2
    f0 = track.f0.copy()
    v = track.voiced
    t = 0
    while t < len(v):
        if not v[t]:
            t += 1
            continue
        end = t
        while end < len(v) and v[end]:
            end += 1
        run = track.f0[t:end]
        for i in range(len(run)):
            f0[t + i] = np.median(run[max(0, i - half):i + half + 1])
        t = end
    return track.with_f0(f0)
