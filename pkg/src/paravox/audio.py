"""Audio buffers, WAV I/O, resampling, framing, mel/MFCC features and test signals."""
from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.fft import dct, rfft
from scipy.signal import firwin, get_window, kaiserord, resample_poly

from .errors import (
    EmptySignal,
    InvalidFrequency,
    IoError,
    MalformedWav,
    UnsupportedEncoding,
    ValidationError,
)

SAMPLE_RATE = 16000
FRAME_S = 0.020
HOP_S = 0.005

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    """Mono float64 samples at a fixed sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise ValidationError(f"audio must be mono (1-D), got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValidationError("audio contains NaN or Inf")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ValidationError(f"invalid sample rate {self.sample_rate}")
        x = x.copy()
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


def frame_params(sample_rate: int, frame_s: float = FRAME_S, hop_s: float = HOP_S):
    """Frame length and hop in samples for the analysis grid at ``sample_rate``."""
    return int(round(frame_s * sample_rate)), int(round(hop_s * sample_rate))


def num_frames(length: int, frame_len: int, hop: int) -> int:
    if length < frame_len:
        return 0
    return (length - frame_len) // hop + 1


# --------------------------------------------------------------------------
# WAV I/O

def _parse_riff(data: bytes):
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedWav("missing RIFF/WAVE header")
    pos = 12
    fmt = None
    payload = None
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8:pos + 8 + size]
        if cid == b"fmt ":
            if len(body) < 16:
                raise MalformedWav("truncated fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
            if fmt[0] == WAVE_FORMAT_EXTENSIBLE:
                if len(body) < 26:
                    raise MalformedWav("truncated extensible fmt chunk")
                (sub,) = struct.unpack_from("<H", body, 24)
                fmt = (sub,) + fmt[1:]
        elif cid == b"data":
            if fmt is None:
                raise MalformedWav("data chunk before fmt chunk")
            if len(body) < size:
                # Tolerate streams whose header overstates the data length,
                # but never a partial sample frame.
                size = len(body)
            payload = body[:size]
            break
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise MalformedWav("no fmt chunk")
    if payload is None:
        raise MalformedWav("no data chunk")
    return fmt, payload


def read_wav(path) -> AudioBuffer:
    """Read a PCM16 or float32 WAV file; stereo is averaged down to mono."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    (tag, channels, rate, _, _, bits), payload = _parse_riff(data)
    if channels not in (1, 2):
        raise UnsupportedEncoding(f"{channels} channels not supported")
    if tag == WAVE_FORMAT_PCM and bits == 16:
        dtype, scale = np.dtype("<i2"), 1.0 / 32768.0
    elif tag == WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        dtype, scale = np.dtype("<f4"), 1.0
    else:
        raise UnsupportedEncoding(f"format tag {tag:#06x} with {bits} bits not supported")
    width = dtype.itemsize * channels
    usable = len(payload) - len(payload) % width
    x = np.frombuffer(payload[:usable], dtype=dtype).astype(np.float64) * scale
    x = x.reshape(-1, channels).mean(axis=1)
    if rate <= 0:
        raise MalformedWav("zero sample rate")
    return AudioBuffer(x, rate)


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")


def write_wav(buffer: AudioBuffer, path) -> None:
    """Write ``buffer`` as 16-bit PCM mono (samples clipped to [-1, 1))."""
    try:
        with open(path, "wb") as fh, wave.open(fh, "wb") as w:
            w.setnchannels(1)
            w.setsampwidth(2)
            w.setframerate(buffer.sample_rate)
            w.writeframes(to_pcm16(buffer.samples).tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


# --------------------------------------------------------------------------
# Resampling

@lru_cache(maxsize=16)
def _resampling_filter(up: int, down: int) -> np.ndarray:
    # Passband edge at 0.8 and stopband edge at 1.0 of the lower Nyquist,
    # relative to the upsampled rate's Nyquist.
    nyq = 1.0 / max(up, down)
    numtaps, beta = kaiserord(80.0, 0.2 * nyq)
    numtaps |= 1
    return firwin(numtaps, 0.9 * nyq, window=("kaiser", beta))


def resample(buffer: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Band-limited polyphase resampling with a Kaiser-windowed sinc filter."""
    if int(target_rate) != target_rate or target_rate <= 0:
        raise ValidationError(f"invalid target rate {target_rate}")
    target_rate = int(target_rate)
    if target_rate == buffer.sample_rate:
        return AudioBuffer(buffer.samples, target_rate)
    ratio = Fraction(target_rate, buffer.sample_rate)
    n_out = int(round(len(buffer) * target_rate / buffer.sample_rate))
    if len(buffer) == 0:
        return AudioBuffer(np.zeros(0), target_rate)
    h = _resampling_filter(ratio.numerator, ratio.denominator)
    y = resample_poly(buffer.samples, ratio.numerator, ratio.denominator, window=h)
    if len(y) >= n_out:
        y = y[:n_out]
    else:
        y = np.concatenate([y, np.zeros(n_out - len(y))])
    return AudioBuffer(y, target_rate)


# --------------------------------------------------------------------------
# Framing and spectral features

def frame_signal(buffer, frame_len: int, hop: int) -> np.ndarray:
    """Split into overlapping frames (rows). The trailing partial frame is dropped."""
    if frame_len < 1 or hop < 1:
        raise ValidationError("frame_len and hop must be positive")
    x = buffer.samples if isinstance(buffer, AudioBuffer) else np.asarray(buffer, dtype=np.float64)
    if len(x) < frame_len:
        raise EmptySignal(f"signal of {len(x)} samples is shorter than one frame ({frame_len})")
    view = np.lib.stride_tricks.sliding_window_view(x, frame_len)[::hop]
    return np.array(view)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=32)
def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int,
                   f_min: float = 0.0, f_max: float | None = None) -> np.ndarray:
    """HTK-scale triangular filterbank, shape (n_mels, n_fft // 2 + 1)."""
    f_max = sample_rate / 2.0 if f_max is None else f_max
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (center - lower)
    falling = (upper - freqs) / (upper - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb.setflags(write=False)
    return fb


def mel_band_edges(n_mels: int, sample_rate: int, f_min: float = 0.0, f_max: float | None = None):
    f_max = sample_rate / 2.0 if f_max is None else f_max
    return mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))


@dataclass(frozen=True, eq=False)
class MelSpectrogram:
    frames: np.ndarray  # (T', n_mels)
    frame_len: int
    hop: int
    n_mels: int


def magnitude_stft(x: np.ndarray, frame_len: int, hop: int, n_fft: int | None = None) -> np.ndarray:
    frames = frame_signal(x, frame_len, hop)
    win = get_window("hann", frame_len)
    return np.abs(rfft(frames * win, n=n_fft or frame_len, axis=1))


def mel_spectrogram(buffer: AudioBuffer, n_mels: int = 80, frame_len: int = 1024,
                    hop: int = 256) -> MelSpectrogram:
    mag = magnitude_stft(buffer.samples, frame_len, hop)
    fb = mel_filterbank(n_mels, frame_len, buffer.sample_rate)
    return MelSpectrogram(mag @ fb.T, frame_len, hop, n_mels)


LOG_FLOOR = 1e-10


def mfcc(buffer: AudioBuffer, n_mfcc: int = 13, n_mels: int = 40,
         frame_s: float = FRAME_S, hop_s: float = HOP_S) -> np.ndarray:
    """MFCCs on the pitch grid: mel power -> log -> orthonormal DCT-II, first ``n_mfcc``."""
    frame_len, hop = frame_params(buffer.sample_rate, frame_s, hop_s)
    n_fft = 1 << (frame_len - 1).bit_length()
    power = magnitude_stft(buffer.samples, frame_len, hop, n_fft) ** 2
    fb = mel_filterbank(n_mels, n_fft, buffer.sample_rate)
    logmel = np.log(np.maximum(power @ fb.T, LOG_FLOOR))
    return dct(logmel, type=2, norm="ortho", axis=1)[:, :n_mfcc]


def deltas(features: np.ndarray, width: int = 2) -> np.ndarray:
    """Regression deltas over +-``width`` frames with edge replication."""
    n = len(features)
    padded = np.pad(features, ((width, width), (0, 0)), mode="edge")
    num = np.zeros_like(features, dtype=np.float64)
    for k in range(1, width + 1):
        num += k * (padded[width + k:width + k + n] - padded[width - k:width - k + n])
    return num / (2 * sum(k * k for k in range(1, width + 1)))


# --------------------------------------------------------------------------
# Synthetic signals

SIGNAL_KINDS = ("sine", "sawtooth", "pulse-train", "chirp")


def _cycles(f0_start: float, f0_end: float, duration: float, t: np.ndarray) -> np.ndarray:
    """Elapsed cycle count at times ``t`` for a log-linear frequency sweep."""
    if f0_start == f0_end:
        return f0_start * t
    lr = np.log(f0_end / f0_start)
    return f0_start * duration / lr * np.expm1(lr * t / duration)


def _cycle_times(f0_start, f0_end, duration, k):
    if f0_start == f0_end:
        return k / f0_start
    lr = np.log(f0_end / f0_start)
    return duration * np.log1p(k * lr / (f0_start * duration)) / lr


def instantaneous_frequency(f0_start: float, f0_end: float, duration: float, t):
    return f0_start * (f0_end / f0_start) ** (np.asarray(t) / duration)


def synth_signal(kind: str, f0_start: float, f0_end: float, duration: float,
                 rate: int = SAMPLE_RATE, amplitude: float = 0.5) -> AudioBuffer:
    """Deterministic test signal whose frequency sweeps log-linearly f0_start -> f0_end.

    ``sawtooth`` is synthesised additively below 0.45 * rate so it is alias free;
    ``pulse-train`` puts a single-sample impulse at the start of every cycle.
    """
    if kind not in SIGNAL_KINDS:
        raise ValidationError(f"unknown signal kind {kind!r}")
    for f in (f0_start, f0_end):
        if not 0 < f < rate / 2:
            raise InvalidFrequency(f"frequency {f} outside (0, {rate / 2})")
    n = int(round(duration * rate))
    t = np.arange(n) / rate
    if kind == "pulse-train":
        x = np.zeros(n)
        total = _cycles(f0_start, f0_end, duration, np.array([duration]))[0]
        k = np.arange(int(np.ceil(total)) + 1, dtype=np.float64)
        pos = np.round(_cycle_times(f0_start, f0_end, duration, k) * rate).astype(int)
        x[pos[(pos >= 0) & (pos < n)]] = amplitude
        return AudioBuffer(x, rate)
    phase = 2.0 * np.pi * _cycles(f0_start, f0_end, duration, t)
    if kind in ("sine", "chirp"):
        return AudioBuffer(amplitude * np.sin(phase), rate)
    n_harm = max(1, int(0.45 * rate / max(f0_start, f0_end)))
    x = np.zeros(n)
    for k in range(1, n_harm + 1):
        x += (-1.0) ** (k + 1) * np.sin(k * phase) / k
    return AudioBuffer(amplitude * (2.0 / np.pi) * x, rate)
