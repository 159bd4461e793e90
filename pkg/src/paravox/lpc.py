"""LPC analysis and the P-LPC baseline converter.

Cross-synthesis whitens each source frame with its own LPC inverse filter
and re-colours the residual with the envelope of a target frame, so pitch
and content come from the source and the spectral envelope from the target.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import get_window, lfilter

from .audio import AudioBuffer
from .curves import ControlCurve
from .errors import EmptySignal, OrderTooHigh, RateMismatch, ValidationError
from .pitch import PitchTrack, TrackerConfig, track_pitch
from .psola import EpochMarks, detect_epochs, pitch_scale, time_scale

LPC_ORDER = 18
FRAME_LEN = 480
HOP = 120
PREEMPHASIS = 0.97
# Target frames below this fraction of the loudest frame's energy carry no
# usable envelope.
ACTIVE_ENERGY_RATIO = 1e-3


@dataclass(frozen=True, eq=False)
class LpcFrame:
    """Prediction coefficients a_1..a_p with x_t ~ sum_i a_i x_{t-i}."""

    coefficients: np.ndarray
    reflection: np.ndarray
    gain: float
    frame_len: int = FRAME_LEN
    hop: int = HOP

    @property
    def order(self) -> int:
        return len(self.coefficients)

    @property
    def inverse_filter(self) -> np.ndarray:
        return np.concatenate([[1.0], -self.coefficients])


def levinson_durbin(r: np.ndarray, order: int):
    """Solve the normal equations for autocorrelation ``r[0..order]``.

    Returns (a, k, err) where a are prediction coefficients, k the reflection
    coefficients and err the final prediction-error energy.
    """
    a = np.zeros(order)
    k = np.zeros(order)
    err = r[0]
    for i in range(order):
        acc = r[i + 1] - np.dot(a[:i], r[i:0:-1])
        ki = acc / err
        k[i] = ki
        a_prev = a[:i].copy()
        a[i] = ki
        a[:i] = a_prev - ki * a_prev[::-1]
        err *= 1.0 - ki * ki
    return a, k, err


def autocorrelation(x: np.ndarray, max_lag: int) -> np.ndarray:
    n = len(x)
    full = np.correlate(x, x, mode="full")
    return full[n - 1:n + max_lag]


def lpc_analyze(frame: np.ndarray, order: int = LPC_ORDER) -> LpcFrame:
    """Autocorrelation-method LPC of an already windowed frame."""
    x = np.asarray(frame, dtype=np.float64)
    if len(x) <= order:
        raise OrderTooHigh(f"order {order} needs more than {order} samples, got {len(x)}")
    r = autocorrelation(x, order)
    if r[0] <= 0.0:
        return LpcFrame(np.zeros(order), np.zeros(order), 0.0, len(x))
    # White-noise correction keeps the recursion strictly stable for
    # near-singular (e.g. pure tone) frames.
    r = r.copy()
    r[0] *= 1.0 + 1e-9
    a, k, err = levinson_durbin(r, order)
    if np.any(np.abs(k) >= 1.0):
        raise ValidationError("Levinson recursion produced an unstable filter")
    return LpcFrame(a, k, float(np.sqrt(max(err, 0.0) / len(x))), len(x))


def residual(frame: np.ndarray, lpc: LpcFrame) -> np.ndarray:
    """Inverse filtering: e_t = x_t - sum_i a_i x_{t-i} (zero initial state)."""
    return lfilter(lpc.inverse_filter, [1.0], np.asarray(frame, dtype=np.float64))


def synthesize(excitation: np.ndarray, lpc: LpcFrame) -> np.ndarray:
    """All-pole synthesis filter 1/A(z); exact inverse of :func:`residual`."""
    return lfilter([1.0], lpc.inverse_filter, np.asarray(excitation, dtype=np.float64))


def lpc_envelope_db(lpc: LpcFrame, n_freq: int = 257) -> np.ndarray:
    """LPC spectral envelope in dB on ``n_freq`` points from 0 to Nyquist."""
    w = np.linspace(0.0, np.pi, n_freq)
    a = lpc.inverse_filter
    resp = np.exp(-1j * np.outer(w, np.arange(len(a)))) @ a
    return 20.0 * np.log10(max(lpc.gain, 1e-300) / np.maximum(np.abs(resp), 1e-300))


def log_spectral_distance(a_db: np.ndarray, b_db: np.ndarray, match_gain: bool = True) -> float:
    """RMS difference of two dB spectra; with ``match_gain`` the mean offset is removed."""
    d = np.asarray(a_db) - np.asarray(b_db)
    if match_gain:
        d = d - d.mean()
    return float(np.sqrt(np.mean(d * d)))


def preemphasize(x: np.ndarray, coef: float = PREEMPHASIS) -> np.ndarray:
    return lfilter([1.0, -coef], [1.0], x)


def deemphasize(x: np.ndarray, coef: float = PREEMPHASIS) -> np.ndarray:
    return lfilter([1.0], [1.0, -coef], x)


def _padded_frames(x: np.ndarray, frame_len: int, hop: int):
    """Zero-pad so every sample is covered by frame_len // hop windows; return (frames, pad)."""
    pad = frame_len - hop
    n_frames = int(np.ceil((len(x) + pad) / hop))
    total = (n_frames - 1) * hop + frame_len
    xp = np.concatenate([np.zeros(pad), x, np.zeros(total - pad - len(x))])
    idx = np.arange(n_frames)[:, None] * hop + np.arange(frame_len)[None, :]
    return xp[idx], pad, total


def envelope_frames(buffer: AudioBuffer, order: int = LPC_ORDER, frame_len: int = FRAME_LEN,
                    hop: int = HOP, preemph: float = PREEMPHASIS) -> list[LpcFrame]:
    """LPC envelopes of the speech-active frames of ``buffer`` (Hann-windowed, pre-emphasized)."""
    frames, _, _ = _padded_frames(preemphasize(buffer.samples, preemph), frame_len, hop)
    win = get_window("hann", frame_len)
    windowed = frames * win
    energy = np.sum(windowed ** 2, axis=1)
    if energy.size == 0 or energy.max() <= 0.0:
        return []
    keep = energy > ACTIVE_ENERGY_RATIO * energy.max()
    return [lpc_analyze(f, order) for f in windowed[keep]]


def cross_synthesize(source: AudioBuffer, target: AudioBuffer, order: int = LPC_ORDER,
                     frame_len: int = FRAME_LEN, hop: int = HOP,
                     preemph: float = PREEMPHASIS) -> AudioBuffer:
    """Source excitation through the target's LPC envelopes, frame by frame.

    Target envelopes are stretched over the source by nearest-index mapping
    and each output frame keeps the source frame's energy. Frames are
    windowed at analysis and again after synthesis, then overlap-added with
    squared-window normalization.
    """
    if source.sample_rate != target.sample_rate:
        raise RateMismatch(f"source {source.sample_rate} Hz vs target {target.sample_rate} Hz")
    if len(source) == 0:
        raise EmptySignal("empty source")
    if len(target) == 0:
        raise EmptySignal("empty target")
    envelopes = envelope_frames(target, order, frame_len, hop, preemph)
    n = len(source)
    if not np.any(source.samples):
        return AudioBuffer(np.zeros(n), source.sample_rate)
    if not envelopes:
        raise EmptySignal("target has no speech-active frames")

    frames, pad, total = _padded_frames(preemphasize(source.samples, preemph), frame_len, hop)
    win = get_window("hann", frame_len)
    n_frames = len(frames)
    out = np.zeros(total)
    wsum = np.zeros(total)
    last = len(envelopes) - 1
    for f in range(n_frames):
        g = int(round(f * last / (n_frames - 1))) if n_frames > 1 else 0
        sw = frames[f] * win
        lo = f * hop
        wsum[lo:lo + frame_len] += win * win
        src = lpc_analyze(sw, order)
        if src.gain == 0.0:
            continue
        # Tapering again after synthesis hides the truncated filter tail.
        y = synthesize(residual(sw, src), envelopes[g]) * win
        ref = sw * win
        e_src, e_out = np.dot(ref, ref), np.dot(y, y)
        if e_out > 0.0:
            y *= np.sqrt(e_src / e_out)
        out[lo:lo + frame_len] += y
    y = out / np.maximum(wsum, 1e-8)
    y = deemphasize(y, preemph)[pad:pad + n]
    return AudioBuffer(y, source.sample_rate)


@dataclass(frozen=True, eq=False)
class PlpcResult:
    output: AudioBuffer
    speed_modified: AudioBuffer
    pitch_modified: AudioBuffer
    source_track: PitchTrack
    speed_track: PitchTrack
    source_marks: EpochMarks
    speed_marks: EpochMarks


def plpc_stages(source: AudioBuffer, target: AudioBuffer, speed_curve: ControlCurve,
                pitch_curve: ControlCurve, tracker: TrackerConfig | None = None,
                order: int = LPC_ORDER) -> PlpcResult:
    """Run the baseline and keep every intermediate.

    Pitch analysis for the pitch stage runs on the speed-modified signal, so
    the pitch curve's normalized time refers to the output timeline.
    """
    track = track_pitch(source, tracker)
    marks = detect_epochs(source, track)
    fast = time_scale(source, marks, track, speed_curve)
    fast_track = track_pitch(fast, tracker)
    fast_marks = detect_epochs(fast, fast_track)
    shifted = pitch_scale(fast, fast_marks, fast_track, pitch_curve)
    out = cross_synthesize(shifted, target, order)
    return PlpcResult(out, fast, shifted, track, fast_track, marks, fast_marks)


def p_lpc_convert(source: AudioBuffer, target: AudioBuffer, speed_curve: ControlCurve,
                  pitch_curve: ControlCurve, tracker: TrackerConfig | None = None,
                  order: int = LPC_ORDER) -> AudioBuffer:
    return plpc_stages(source, target, speed_curve, pitch_curve, tracker, order).output
