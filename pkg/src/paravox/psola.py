"""TD-PSOLA: pitch marks, time-varying time-scale and pitch-scale modification.

Grains are cut around analysis marks with an asymmetric Hann window whose
left half spans back to the previous mark and whose right half spans forward
to the next one. Re-placing the grains at the original marks therefore sums
to exactly the input, which keeps identity curves lossless.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import AudioBuffer, frame_params
from .curves import RATIO_MAX, RATIO_MIN, ControlCurve, sample
from .errors import CurveOutOfRange, ValidationError
from .pitch import PitchTrack, lowpass

UNVOICED_SPACING_S = 0.010
# Half-width of the search window around the expected next mark, in periods.
SEARCH_FRACTION = 0.3


@dataclass(frozen=True, eq=False)
class EpochMarks:
    positions: np.ndarray
    voiced_span: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.int64)
        voiced = np.asarray(self.voiced_span, dtype=bool)
        if pos.shape != voiced.shape:
            raise ValidationError("positions and voiced_span differ in length")
        if pos.size > 1 and np.any(np.diff(pos) <= 0):
            raise ValidationError("epoch positions must be strictly increasing")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "voiced_span", voiced)

    def __len__(self):
        return len(self.positions)


def _sample_track(track: PitchTrack, n: int, rate: int):
    """Per-sample voicing and f0 from the nearest frame centre."""
    frame_len, hop = frame_params(rate, track.frame_s, track.hop_s)
    if len(track) == 0:
        return np.zeros(n, dtype=bool), np.zeros(n)
    idx = np.clip(np.round((np.arange(n) - frame_len / 2) / hop), 0, len(track) - 1).astype(int)
    return track.voiced[idx], track.f0[idx]


def detect_epochs(buffer: AudioBuffer, track: PitchTrack) -> EpochMarks:
    """Pitch-synchronous marks at low-passed signal maxima, one local period apart.

    Unvoiced stretches get synthetic marks every 10 ms.
    """
    n = len(buffer)
    rate = buffer.sample_rate
    voiced, f0 = _sample_track(track, n, rate)
    lp = lowpass(buffer.samples, rate)
    marks: list[int] = []
    flags: list[bool] = []

    start = 0
    regions = []
    while start < n:
        if not voiced[start]:
            start += 1
            continue
        end = start
        while end < n and voiced[end]:
            end += 1
        regions.append((start, end))
        start = end

    spacing = max(1, int(round(UNVOICED_SPACING_S * rate)))

    def fill(lo, hi):
        # Unvoiced marks on [lo, hi), keeping half a spacing clear of hi.
        pos = lo
        while pos < hi:
            marks.append(pos)
            flags.append(False)
            pos += spacing

    for a, b in regions:
        period0 = rate / f0[a]
        first = a + int(np.argmax(lp[a:min(b, a + int(np.ceil(period0)))]))
        fill(marks[-1] + spacing if marks else 0, first - spacing // 2)
        m = first
        marks.append(m)
        flags.append(True)
        while True:
            period = rate / f0[m]
            expected = m + period
            half = SEARCH_FRACTION * period
            if expected >= b:
                break
            lo_s = int(np.ceil(expected - half))
            hi_s = int(np.floor(expected + half)) + 1
            lo_s = max(lo_s, m + 1)
            hi_s = min(hi_s, n)
            m = lo_s + int(np.argmax(lp[lo_s:hi_s]))
            marks.append(m)
            flags.append(True)
    fill(marks[-1] + spacing if marks else 0, n)
    return EpochMarks(np.array(marks, dtype=np.int64), np.array(flags, dtype=bool))


def _check_range(curve: ControlCurve):
    vals = curve.values
    if np.any(vals < RATIO_MIN) or np.any(vals > RATIO_MAX):
        raise CurveOutOfRange(f"curve values must lie in [{RATIO_MIN}, {RATIO_MAX}]")


def _grain_extents(marks: np.ndarray, n: int):
    """Left/right half-widths of the grain at each mark (to the neighbouring marks)."""
    left = np.empty_like(marks)
    right = np.empty_like(marks)
    left[1:] = np.diff(marks)
    right[:-1] = np.diff(marks)
    left[0] = marks[0]
    right[-1] = n - marks[-1]
    return left, right


def _half_windows(length: int):
    k = np.arange(length)
    rise = 0.5 * (1.0 - np.cos(np.pi * k / length))
    fall = 0.5 * (1.0 + np.cos(np.pi * k / length))
    return rise, fall


def _overlap_add(x: np.ndarray, marks: np.ndarray, plan, out_len: int) -> np.ndarray:
    """Place the grain of analysis mark ``j`` at output sample ``s`` for each (s, j)."""
    n = len(x)
    left, right = _grain_extents(marks, n)
    last = len(marks) - 1
    out = np.zeros(out_len)
    wsum = np.zeros(out_len)
    cache = {}
    for s, j in plan:
        a = int(marks[j])
        L, R = int(left[j]), int(right[j])
        key = (L, R, j == 0, j == last)
        if key not in cache:
            rise, _ = _half_windows(L)
            _, fall = _half_windows(R)
            # The signal edges have no neighbouring grain to cross-fade with.
            if j == 0:
                rise = np.ones(L)
            if j == last:
                fall = np.ones(R)
            cache[key] = np.concatenate([rise, fall])
        w = cache[key]
        lo = s - L
        src_lo = a - L
        o0, o1 = max(lo, 0), min(s + R, out_len)
        if o1 <= o0:
            continue
        seg = slice(src_lo + (o0 - lo), src_lo + (o1 - lo))
        wseg = w[o0 - lo:o1 - lo]
        out[o0:o1] += x[seg] * wseg
        wsum[o0:o1] += wseg
    return out / np.maximum(wsum, 1.0)


def _nearest(marks: np.ndarray, pos: float) -> int:
    i = int(np.searchsorted(marks, pos))
    if i == 0:
        return 0
    if i >= len(marks):
        return len(marks) - 1
    return i if marks[i] - pos < pos - marks[i - 1] else i - 1


def _spacing(marks: np.ndarray, j: int, default: int) -> int:
    if j + 1 < len(marks):
        return int(marks[j + 1] - marks[j])
    if j > 0:
        return int(marks[j] - marks[j - 1])
    return default


def output_time_map(n: int, speed_curve: ControlCurve) -> np.ndarray:
    """Output position of each input sample boundary 0..n under speed curve s(t).

    Output time advances by 1/s per input sample, so the total output length
    is the integral of 1/s over the input.
    """
    t = np.arange(n) / max(n - 1, 1)
    inv = 1.0 / sample(speed_curve, t)
    return np.concatenate([[0.0], np.cumsum(inv)])


def time_scale(buffer: AudioBuffer, marks: EpochMarks, track: PitchTrack,
               speed_curve: ControlCurve) -> AudioBuffer:
    """Change duration by the time-varying speed factor (s > 1 is faster); pitch is kept.

    ``track`` is the analysis the marks came from; grain spacing is read off
    the marks themselves.
    """
    _check_range(speed_curve)
    x = buffer.samples
    n = len(x)
    if n == 0 or len(marks) == 0:
        return AudioBuffer(np.zeros(0), buffer.sample_rate)
    pos = marks.positions
    omap = output_time_map(n, speed_curve)
    out_len = int(round(omap[-1]))
    default = int(round(UNVOICED_SPACING_S * buffer.sample_rate))
    inputs = np.arange(n + 1, dtype=np.float64)

    plan = []
    s_pos = float(omap[pos[0]])
    tau = float(pos[0])
    while s_pos < out_len:
        j = _nearest(pos, tau)
        plan.append((int(round(s_pos)), j))
        s_pos += _spacing(pos, j, default)
        tau = float(np.interp(s_pos, omap, inputs))
    return AudioBuffer(_overlap_add(x, pos, plan, out_len), buffer.sample_rate)


def pitch_scale(buffer: AudioBuffer, marks: EpochMarks, track: PitchTrack,
                pitch_curve: ControlCurve) -> AudioBuffer:
    """Multiply f0 by the time-varying ratio r(t); duration is unchanged.

    Unvoiced grains are re-placed at their original spacing.
    """
    _check_range(pitch_curve)
    x = buffer.samples
    n = len(x)
    if n == 0 or len(marks) == 0:
        return AudioBuffer(np.zeros(n), buffer.sample_rate)
    pos = marks.positions
    default = int(round(UNVOICED_SPACING_S * buffer.sample_rate))
    denom = max(n - 1, 1)

    plan = []
    s_pos = float(pos[0])
    while s_pos < n:
        j = _nearest(pos, s_pos)
        plan.append((int(round(s_pos)), j))
        step = _spacing(pos, j, default)
        if marks.voiced_span[j]:
            step = step / sample(pitch_curve, min(s_pos / denom, 1.0))
        s_pos += step
    return AudioBuffer(_overlap_add(x, pos, plan, n), buffer.sample_rate)
