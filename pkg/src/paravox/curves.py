"""Control curves: positive ratios over normalized utterance time.

A curve is a list of breakpoints ``(t, value)`` with t strictly increasing
from 0 to 1. Between breakpoints the value is interpolated linearly in the
log domain, so a straight segment is a constant rate of change in cents.

Text format, one breakpoint per line::

    # comment
    0 1.0
    0.5 1.2
    1 1.5

or a single ``preset:<name>`` directive.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

from .errors import DomainError, MissingEndpoints, ParseError
from .pitch import PitchTrack

RATIO_MIN = 0.25
RATIO_MAX = 4.0

# Shapes follow the verbal descriptions of the evaluation curves; the numbers
# are chosen inside the range PSOLA handles cleanly. Bump PRESET_VERSION when
# any of them change.
PRESET_VERSION = 1
PRESETS = {
    "rising": ((0.0, 1.0), (1.0, 1.5)),
    "stressing": ((0.0, 1.0), (0.15, 1.5), (1.0, 1.0)),
    "speed-up": ((0.0, 0.8), (1.0, 1.4)),
    "slow-down": ((0.0, 1.25), (1.0, 0.7)),
    "parabola": ((0.0, 1.3), (0.5, 0.7), (1.0, 1.3)),
}
PITCH_PRESETS = ("stressing", "rising")
SPEED_PRESETS = ("parabola", "speed-up", "slow-down")

# Width of the ramp that stands in for the jump a circular shift creates when
# a curve's endpoint values differ.
WRAP_EPS = 1e-9


@dataclass(frozen=True)
class ControlCurve:
    breakpoints: tuple

    def __post_init__(self):
        pts = tuple((float(t), float(v)) for t, v in self.breakpoints)
        _validate(pts)
        object.__setattr__(self, "breakpoints", pts)

    @property
    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.breakpoints])

    @property
    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.breakpoints])

    def is_identity(self) -> bool:
        return all(v == 1.0 for _, v in self.breakpoints)


def _validate(pts):
    if len(pts) < 2:
        raise MissingEndpoints("a curve needs breakpoints at t=0 and t=1")
    for t, v in pts:
        if not (math.isfinite(t) and math.isfinite(v)):
            raise DomainError(f"non-finite breakpoint ({t}, {v})")
        if not 0.0 <= t <= 1.0:
            raise DomainError(f"t={t} outside [0, 1]")
        if not RATIO_MIN <= v <= RATIO_MAX:
            raise DomainError(f"value {v} outside [{RATIO_MIN}, {RATIO_MAX}]")
    ts = [t for t, _ in pts]
    for a, b in zip(ts, ts[1:]):
        if not b > a:
            raise DomainError(f"breakpoint times must be strictly increasing ({a} then {b})")
    if ts[0] != 0.0 or ts[-1] != 1.0:
        raise MissingEndpoints("curve must start at t=0 and end at t=1")


IDENTITY = ControlCurve(((0.0, 1.0), (1.0, 1.0)))


def preset(name: str) -> ControlCurve:
    try:
        return ControlCurve(PRESETS[name])
    except KeyError:
        raise ParseError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def parse_curve(text: str) -> ControlCurve:
    pts = []
    directive = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("preset:"):
            if directive is not None or pts:
                raise ParseError(f"line {lineno}: preset directive must be the only entry")
            directive = line[len("preset:"):].strip()
            continue
        if directive is not None:
            raise ParseError(f"line {lineno}: preset directive must be the only entry")
        fields = line.split()
        if len(fields) != 2:
            raise ParseError(f"line {lineno}: expected 't value', got {raw!r}")
        try:
            pts.append((float(fields[0]), float(fields[1])))
        except ValueError:
            raise ParseError(f"line {lineno}: not a number in {raw!r}") from None
    if directive is not None:
        return preset(directive)
    if not pts:
        raise MissingEndpoints("empty curve")
    return ControlCurve(tuple(pts))


def render_curve(curve: ControlCurve, comments=()) -> str:
    lines = [f"# {c}" for c in comments]
    lines += [f"{t:.6f} {v:.6f}" for t, v in curve.breakpoints]
    return "\n".join(lines) + "\n"


def sample(curve: ControlCurve, t):
    """Curve value at normalized time(s) ``t``; exact at breakpoints."""
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if np.any(~np.isfinite(t)) or np.any(t < 0.0) or np.any(t > 1.0):
        raise DomainError("sample time outside [0, 1]")
    ts, vs = curve.times, curve.values
    out = np.exp(np.interp(t, ts, np.log(vs)))
    idx = np.searchsorted(ts, t)
    on_knot = (idx < len(ts)) & (ts[np.minimum(idx, len(ts) - 1)] == t)
    out[on_knot] = vs[idx[on_knot]]
    return float(out[0]) if scalar else out


def frame_times(n: int) -> np.ndarray:
    """Normalized time of each of ``n`` frames: i / (n - 1), or 0 for a single frame."""
    if n <= 1:
        return np.zeros(n)
    return np.arange(n) / (n - 1)


def apply_to_pitch(track: PitchTrack, curve: ControlCurve) -> PitchTrack:
    """Multiply every frame's f0 by the curve value at that frame's normalized time."""
    ratio = sample(curve, frame_times(len(track)))
    return track.with_f0(np.where(track.voiced, track.f0 * ratio, 0.0))


def fake_curve(curve: ControlCurve, mode: str, shift_amount: float | None = None,
               seed: int = 0) -> ControlCurve:
    """Decoy curve for controllability tests: time-reversed or circularly shifted.

    ``shift`` gives value'(t) = value((t + shift_amount) mod 1). When no amount
    is supplied one is drawn uniformly from [0.1, 0.9] with ``seed``.
    """
    if mode == "flip":
        return ControlCurve(tuple((1.0 - t, v) for t, v in reversed(curve.breakpoints)))
    if mode != "shift":
        raise ParseError(f"unknown fake-curve mode {mode!r}")
    if shift_amount is None:
        shift_amount = float(np.random.default_rng(seed).uniform(0.1, 0.9))
    a = float(shift_amount)
    if not 0.0 < a < 1.0:
        raise DomainError(f"shift amount must lie in (0, 1), got {a}")

    knots = {}
    for t, v in curve.breakpoints[1:-1]:
        knots[(t - a) % 1.0] = v
    wrap = 1.0 - a
    v_first, v_last = curve.breakpoints[0][1], curve.breakpoints[-1][1]
    knots[wrap] = v_first
    if v_last != v_first and wrap - WRAP_EPS > 0.0:
        knots.setdefault(wrap - WRAP_EPS, v_last)
    knots[0.0] = knots[1.0] = sample(curve, a)
    return ControlCurve(tuple(sorted(knots.items())))


def render_samples(curve: ControlCurve, n: int) -> list[tuple[float, float]]:
    ts = np.linspace(0.0, 1.0, n) if n > 1 else np.zeros(1)
    return list(zip(ts.tolist(), np.atleast_1d(sample(curve, ts)).tolist()))


def duration_factor(curve: ControlCurve, n: int = 20001) -> float:
    """Mean of 1/s(t) over [0, 1]: output duration / input duration under speed curve s."""
    t = np.linspace(0.0, 1.0, n)
    return float(trapezoid(1.0 / sample(curve, t), t))
