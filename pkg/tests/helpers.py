"""Synthetic-signal oracles shared by the test modules."""
import numpy as np
from scipy.signal import lfilter

from paravox.audio import AudioBuffer, synth_signal
from paravox.lpc import LpcFrame

RATE = 16000

VOWELS = {
    "a": (730, 1090, 2440),
    "i": (270, 2290, 3010),
    "u": (300, 870, 2240),
    "e": (530, 1840, 2480),
    "o": (570, 840, 2410),
}


def formant_poly(formants, bandwidths=None, rate=RATE):
    """Denominator A(z) of an all-pole resonator cascade."""
    bandwidths = bandwidths or [60 + 0.05 * f for f in formants]
    a = np.array([1.0])
    for f, bw in zip(formants, bandwidths):
        r = np.exp(-np.pi * bw / rate)
        theta = 2 * np.pi * f / rate
        a = np.convolve(a, [1.0, -2 * r * np.cos(theta), r * r])
    return a


def true_envelope_db(a_poly, n_freq=257):
    w = np.linspace(0.0, np.pi, n_freq)
    resp = np.exp(-1j * np.outer(w, np.arange(len(a_poly)))) @ a_poly
    return -20 * np.log10(np.abs(resp))


def as_lpc(a_poly):
    return LpcFrame(-np.asarray(a_poly[1:]), np.zeros(len(a_poly) - 1), 1.0)


def voice(a_poly, f0_start, f0_end=None, duration=1.0, kind="pulse-train", peak=0.5):
    """Excitation (pulse train by default) through the all-pole filter, peak-normalized."""
    exc = synth_signal(kind, f0_start, f0_end or f0_start, duration, RATE).samples
    y = lfilter([1.0], a_poly, exc)
    return AudioBuffer(peak * y / np.max(np.abs(y)), RATE)


def tone_with_step(f0, duration, split, lo=0.3, hi=0.8):
    """Sawtooth whose amplitude steps from ``lo`` to ``hi`` at time ``split`` (seconds)."""
    x = synth_signal("sawtooth", f0, f0, duration, RATE, amplitude=1.0).samples
    env = np.where(np.arange(len(x)) < int(split * RATE), lo, hi)
    return AudioBuffer(x * env, RATE)


def step_time(buffer, win=160):
    """Time (s) where short-time RMS first crosses midway between its two plateaus."""
    x = buffer.samples
    rms = np.sqrt(np.convolve(x * x, np.ones(win) / win, mode="same"))
    inner = rms[win:-win]
    lo, hi = np.percentile(inner, 10), np.percentile(inner, 90)
    idx = np.nonzero(inner > 0.5 * (lo + hi))[0][0] + win
    return idx / buffer.sample_rate
