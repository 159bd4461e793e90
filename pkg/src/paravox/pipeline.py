"""Stage wiring behind the CLI: conversion, analysis bundles, training runs."""
from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import store, units, vq
from .audio import FRAME_S, HOP_S, SAMPLE_RATE, AudioBuffer, read_wav, resample, write_wav
from .curves import IDENTITY, PRESET_VERSION, ControlCurve, duration_factor, parse_curve
from .errors import (DimensionMismatch, EmptyDataset, IoError, ModelUntrained, ParseError,
                     ValidationError)
from .evaluation import speaker_embedding
from .lpc import LPC_ORDER, plpc_stages
from .pitch import PitchTrack, TrackerConfig, track_pitch

log = logging.getLogger(__name__)

BUNDLE_FORMAT = "paravox-bundle"
BUNDLE_VERSION = 1
SIDECAR_VERSION = 1
SEED_ENV = "PARAVOX_SEED"


@dataclass(frozen=True)
class PipelineConfig:
    sample_rate: int = SAMPLE_RATE
    frame_s: float = FRAME_S
    hop_s: float = HOP_S
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    vq_model: str | None = None
    unit_codebook: str | None = None
    lpc_order: int = LPC_ORDER
    seed: int = 0
    vq_epochs: int = 30
    vq_batch: int = 256
    vq_learning_rate: float = 1e-3
    units_k: int = 100
    units_batch: int = 1024
    units_iters: int = 100

    def __post_init__(self):
        if abs(self.frame_s / self.hop_s - 4.0) > 1e-9:
            raise ValidationError("frame_s must be exactly four hops")
        if self.sample_rate != SAMPLE_RATE:
            raise ValidationError(f"only {SAMPLE_RATE} Hz processing is supported")
        self.tracker.validate(self.sample_rate)


def load_config(path=None, env=None) -> PipelineConfig:
    """Defaults, overridden by a JSON file, then by ``PARAVOX_SEED``."""
    env = os.environ if env is None else env
    values = {}
    if path is not None:
        try:
            values = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise IoError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ParseError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(values, dict):
            raise ParseError(f"config {path} must hold a JSON object")
    known = {f.name for f in fields(PipelineConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ParseError(f"unknown config key(s): {', '.join(unknown)}")
    if "tracker" in values:
        try:
            values["tracker"] = TrackerConfig(**values["tracker"])
        except TypeError as exc:
            raise ParseError(f"bad tracker config: {exc}") from exc
    if env.get(SEED_ENV):
        try:
            values["seed"] = int(env[SEED_ENV])
        except ValueError:
            raise ParseError(f"{SEED_ENV} must be an integer") from None
    return PipelineConfig(**values)


def config_dict(config: PipelineConfig) -> dict:
    return asdict(config)


def load_audio(path, rate: int = SAMPLE_RATE) -> AudioBuffer:
    buf = read_wav(path)
    return buf if buf.sample_rate == rate else resample(buf, rate)


def load_curve(spec: str | None) -> ControlCurve:
    """A ``preset:<name>`` string or a path to a curve file; None means identity."""
    if spec is None:
        return IDENTITY
    if spec.startswith("preset:"):
        return parse_curve(spec)
    try:
        text = Path(spec).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read curve file {spec}: {exc}") from exc
    return parse_curve(text)


def _f0_summary(track: PitchTrack) -> dict:
    f = track.f0[track.voiced]
    if f.size == 0:
        return {"frames": len(track), "voiced_frames": 0}
    return {
        "frames": len(track),
        "voiced_frames": int(f.size),
        "median_hz": round(float(np.median(f)), 4),
        "min_hz": round(float(f.min()), 4),
        "max_hz": round(float(f.max()), 4),
    }


def convert(source_path, target_path, speed_curve: ControlCurve, pitch_curve: ControlCurve,
            out_path, config: PipelineConfig, engine: str = "plpc") -> dict:
    """Speed control, pitch control, then synthesis; writes WAV plus sidecar JSON."""
    if engine != "plpc":
        raise ValidationError(f"unknown engine {engine!r}; available: plpc")
    src = load_audio(source_path)
    tgt = load_audio(target_path)
    res = plpc_stages(src, tgt, speed_curve, pitch_curve, config.tracker, config.lpc_order)
    out_path = Path(out_path)
    write_wav(res.output, out_path)
    out_track = track_pitch(res.output, config.tracker)
    rate = src.sample_rate
    sidecar = {
        "version": SIDECAR_VERSION,
        "engine": engine,
        "sample_rate": rate,
        "preset_version": PRESET_VERSION,
        "curves": {
            "speed": [list(p) for p in speed_curve.breakpoints],
            "pitch": [list(p) for p in pitch_curve.breakpoints],
        },
        "stages": ["speed:td-psola", "track:speed_modified", "pitch:td-psola",
                   "synthesis:lpc-cross"],
        "pitch_analysis_input": "speed_modified",
        "durations_s": {
            "source": len(src) / rate,
            "target": len(tgt) / rate,
            "expected_output": len(src) * duration_factor(speed_curve) / rate,
            "speed_modified": len(res.speed_modified) / rate,
            "output": len(res.output) / rate,
        },
        "f0": {
            "source": _f0_summary(res.source_track),
            "speed_modified": _f0_summary(res.speed_track),
            "output": _f0_summary(out_track),
        },
        "config": config_dict(config),
    }
    out_path.with_suffix(".json").write_text(store.dumps(sidecar), encoding="utf-8")
    return sidecar


def baseline(source_path, target_path, out_path, config: PipelineConfig,
             speed_curve: ControlCurve = IDENTITY, pitch_curve: ControlCurve = IDENTITY) -> AudioBuffer:
    """The baseline converter alone: WAV out, no sidecar."""
    res = plpc_stages(load_audio(source_path), load_audio(target_path), speed_curve, pitch_curve,
                      config.tracker, config.lpc_order)
    write_wav(res.output, out_path)
    return res.output


def _require(path, what: str) -> Path:
    if path is None:
        raise ModelUntrained(f"no {what} configured")
    p = Path(path)
    if not p.is_file():
        raise ModelUntrained(f"{what} not found at {p}")
    return p


def analyze(source_path, target_path, out_path, config: PipelineConfig) -> dict:
    """Write the (z_p, z_l, z_s) bundle for an external vocoder.

    Container: JSON; arrays are base64 little-endian (int32 codes, float64
    speaker vector). z_p and z_l share the 5 ms frame grid; z_s is stored
    once and flagged for broadcast over all T frames.
    """
    model = vq.load_model(_require(config.vq_model, "VQ pitch model"))
    codebook = units.load_codebook(_require(config.unit_codebook, "unit codebook"))
    src = load_audio(source_path)
    tgt = load_audio(target_path)
    track = track_pitch(src, config.tracker)
    z_p = vq.encode(model, track)
    _, _, stats = vq.normalize_pitch(track)
    z_l = units.assign_units(codebook, units.extract_features(src))
    if len(z_p) != len(z_l):
        raise DimensionMismatch(f"pitch codes ({len(z_p)}) and units ({len(z_l)}) differ in length")
    z_s = speaker_embedding(tgt)
    bundle = {
        "format": BUNDLE_FORMAT,
        "version": BUNDLE_VERSION,
        "byte_order": "little",
        "T": int(len(z_p)),
        "grid": {"sample_rate": src.sample_rate, "frame_s": config.frame_s, "hop_s": config.hop_s},
        "dims": {"pitch_codes": model.config.codebook_size, "units": codebook.k,
                 "speaker": int(len(z_s))},
        "speaker_broadcast": True,
        "pitch_stats": {"log2_mean": stats[0], "log2_std": stats[1]},
        "z_p": store.encode_array(z_p, "i4"),
        "z_l": store.encode_array(z_l, "i4"),
        "z_s": store.encode_array(z_s),
        "voicing": store.encode_array(track.voiced.astype(np.int32), "i4"),
    }
    store.save(bundle, out_path)
    return bundle


def read_bundle(path) -> dict:
    obj = store.load(path, BUNDLE_FORMAT, BUNDLE_VERSION)
    for key in ("z_p", "z_l", "z_s", "voicing"):
        obj[key] = store.decode_array(obj[key])
    return obj


def corpus_files(corpus_dir) -> list[Path]:
    d = Path(corpus_dir)
    if not d.is_dir():
        raise IoError(f"corpus directory {d} does not exist")
    return sorted(d.glob("*.wav"))


def _write_log(rows: list[dict], path) -> None:
    if not rows:
        Path(path).write_text("", encoding="utf-8")
        return
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def train_vq(corpus_dir, out_path, log_path, config: PipelineConfig) -> vq.VqPitchModel:
    files = corpus_files(corpus_dir)
    tracks = [track_pitch(load_audio(f), config.tracker) for f in files]
    if not any(t.voiced.any() for t in tracks):
        raise EmptyDataset(f"no voiced audio found in {corpus_dir}")
    rows: list[dict] = []
    tc = vq.TrainConfig(config.vq_epochs, config.vq_learning_rate, config.vq_batch, config.seed)
    model = vq.train(tracks, tc, on_epoch=rows.append)
    vq.save_model(model, out_path)
    _write_log(rows, log_path)
    return model


def train_units(corpus_dir, out_path, log_path, config: PipelineConfig) -> units.UnitCodebook:
    files = corpus_files(corpus_dir)
    feats = [units.extract_features(load_audio(f)) for f in files]
    if not feats:
        raise EmptyDataset(f"no WAV files in {corpus_dir}")
    rows: list[dict] = []
    cb = units.train_units(feats, config.units_k, config.units_batch, config.units_iters,
                           config.seed, on_iter=lambda i, v: rows.append({"iter": i, "inertia": v}))
    units.save_codebook(cb, out_path, extra={"k": config.units_k, "batch": config.units_batch,
                                             "iters": config.units_iters})
    _write_log(rows, log_path)
    return cb


def with_overrides(config: PipelineConfig, **kw) -> PipelineConfig:
    return replace(config, **{k: v for k, v in kw.items() if v is not None})
