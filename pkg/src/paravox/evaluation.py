"""Objective metrics: WER, speaker similarity, mel L1, and manifest reports."""
from __future__ import annotations

import csv
import json
import re
import unicodedata
from dataclasses import dataclass, asdict
from pathlib import Path

import numba
import numpy as np

from .audio import AudioBuffer, LOG_FLOOR, mel_spectrogram, mfcc, read_wav, resample
from .errors import EmptyReference, IoError, ManifestError, ParavoxError, RateMismatch, TooShort
from .pitch import track_pitch

EMBED_DIM = 256
MIN_EMBED_S = 0.5
N_MELS = 80
SETTINGS = ("no-control", "pitch-only", "speed-only", "pitch+speed")
MANIFEST_COLUMNS = ("converted", "target", "ref_transcript", "hyp_transcript", "setting")
# Relative block weights: the MFCC means track the vocal-tract filter most
# reliably; spreads and pitch mostly reflect the sentence, not the speaker.
BLOCK_WEIGHTS = {"ltas": 1.0, "spread": 0.3, "mfcc_mean": 3.0, "mfcc_var": 0.3, "pitch": 0.3}


# --------------------------------------------------------------------------
# Speaker similarity

def _unit(v: np.ndarray) -> np.ndarray:
    # Blocks live on a log scale of order one; a norm this small is rounding
    # residue (e.g. centring a constant spectrum), not signal.
    n = np.linalg.norm(v)
    return v / n if n > 1e-9 else np.zeros_like(v)


def speaker_embedding(buffer: AudioBuffer) -> np.ndarray:
    """256-d spectral-statistics vector with unit norm.

    Blocks: gain-centred long-term log-mel spectrum, per-band log-mel spread,
    MFCC means (c0 dropped for gain invariance) and variances, and voiced
    log2-f0 median and IQR. Each block is scaled to unit norm and then by
    its weight in ``BLOCK_WEIGHTS``; the concatenation is zero-padded and
    normalized.
    """
    if buffer.duration < MIN_EMBED_S:
        raise TooShort(f"need at least {MIN_EMBED_S} s of audio, got {buffer.duration:.3f} s")
    logmel = np.log(np.maximum(mel_spectrogram(buffer, N_MELS).frames, LOG_FLOOR))
    energy = logmel.max(axis=1)
    active = energy > energy.max() - np.log(1e3)
    lm = logmel[active]
    ltas = lm.mean(axis=0)
    ltas -= ltas.mean()
    spread = lm.std(axis=0)

    c = mfcc(buffer)
    c_mean = c.mean(axis=0)
    c_mean[0] = 0.0
    c_var = c.var(axis=0)

    track = track_pitch(buffer)
    if track.voiced.any():
        lf = np.log2(track.f0[track.voiced])
        q1, med, q3 = np.percentile(lf, [25, 50, 75])
        pitch = np.array([med - 7.0, q3 - q1])  # 7.0 ~ log2(128 Hz)
    else:
        pitch = np.zeros(2)

    parts = {"ltas": ltas, "spread": spread, "mfcc_mean": c_mean, "mfcc_var": c_var, "pitch": pitch}
    v = np.concatenate([BLOCK_WEIGHTS[k] * _unit(b) for k, b in parts.items()])
    v = np.concatenate([v, np.zeros(EMBED_DIM - len(v))])
    if not np.any(v):
        # Featureless input (e.g. digital silence) gets a fixed vector in the
        # padding space, orthogonal to every real embedding.
        v[-1] = 1.0
    return _unit(v)


def cosine_similarity(a: np.ndarray, b: np.ndarray, raw: bool = False):
    """Cosine of two embeddings on the 0..1 scale (negatives clamp to 0).

    With ``raw`` returns (clamped, unclamped).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if np.array_equal(a, b) and np.any(a):
        c = 1.0
    else:
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        c = float(np.dot(a, b) / (na * nb)) if na > 0 and nb > 0 else 0.0
    clamped = min(max(c, 0.0), 1.0)
    return (clamped, c) if raw else clamped


# --------------------------------------------------------------------------
# Word error rate

@dataclass(frozen=True)
class WerBreakdown:
    substitutions: int
    deletions: int
    insertions: int
    ref_len: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        return self.errors / self.ref_len


_PUNCT = re.compile(r"[^\w\s']|(?<!\w)'|'(?!\w)")


def tokenize(text: str) -> list[str]:
    """Case-folded words with punctuation removed (inner apostrophes kept)."""
    text = unicodedata.normalize("NFKC", text).casefold()
    return _PUNCT.sub(" ", text).split()


@numba.njit(cache=True)
def edit_counts(ref, hyp):
    """(S, D, I) of a minimal alignment of two integer sequences.

    Backtrace order on ties: match/substitution, then deletion, then insertion.
    """
    n, m = len(ref), len(hyp)
    d = np.empty((n + 1, m + 1), dtype=np.int64)
    for i in range(n + 1):
        d[i, 0] = i
    for j in range(m + 1):
        d[0, j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = d[i - 1, j - 1] + (0 if ref[i - 1] == hyp[j - 1] else 1)
            dele = d[i - 1, j] + 1
            ins = d[i, j - 1] + 1
            best = sub
            if dele < best:
                best = dele
            if ins < best:
                best = ins
            d[i, j] = best
    s = de = ins_n = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            diff = 0 if ref[i - 1] == hyp[j - 1] else 1
            if d[i, j] == d[i - 1, j - 1] + diff:
                s += diff
                i -= 1
                j -= 1
                continue
        if i > 0 and d[i, j] == d[i - 1, j] + 1:
            de += 1
            i -= 1
        else:
            ins_n += 1
            j -= 1
    return s, de, ins_n


def wer(reference, hypothesis) -> WerBreakdown:
    """Word error rate; arguments are token lists or raw strings."""
    ref = tokenize(reference) if isinstance(reference, str) else list(reference)
    hyp = tokenize(hypothesis) if isinstance(hypothesis, str) else list(hypothesis)
    if not ref:
        raise EmptyReference("reference transcript has no words")
    vocab: dict = {}
    r = np.array([vocab.setdefault(w, len(vocab)) for w in ref], dtype=np.int64)
    h = np.array([vocab.setdefault(w, len(vocab)) for w in hyp], dtype=np.int64)
    s, d, i = edit_counts(r, h)
    return WerBreakdown(int(s), int(d), int(i), len(ref))


# --------------------------------------------------------------------------
# Mel L1

def mel_l1(x: AudioBuffer, y: AudioBuffer) -> float:
    """Mean absolute difference of 80-band mel magnitudes; shorter side zero-padded."""
    if x.sample_rate != y.sample_rate:
        raise RateMismatch(f"{x.sample_rate} Hz vs {y.sample_rate} Hz")
    a = mel_spectrogram(x, N_MELS).frames if len(x) else np.zeros((0, N_MELS))
    b = mel_spectrogram(y, N_MELS).frames if len(y) else np.zeros((0, N_MELS))
    t = max(len(a), len(b))
    if t == 0:
        return 0.0
    a = np.vstack([a, np.zeros((t - len(a), N_MELS))])
    b = np.vstack([b, np.zeros((t - len(b), N_MELS))])
    return float(np.mean(np.abs(a - b)))


# --------------------------------------------------------------------------
# Manifest evaluation

@dataclass
class RowResult:
    row: int
    converted: str
    setting: str
    sim: float | None = None
    sim_raw: float | None = None
    wer: float | None = None
    substitutions: int | None = None
    deletions: int | None = None
    insertions: int | None = None
    ref_len: int | None = None
    error: str | None = None


def read_manifest(path) -> list[dict]:
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            missing = [c for c in MANIFEST_COLUMNS if c not in header]
            if missing:
                raise ManifestError(f"manifest {path} is missing column(s): {', '.join(missing)}")
            return [dict(r) for r in reader]
    except OSError as exc:
        raise IoError(f"cannot read manifest {path}: {exc}") from exc


def _load_audio(path: Path) -> AudioBuffer:
    buf = read_wav(path)
    return buf if buf.sample_rate == 16000 else resample(buf, 16000)


def _read_line(path: Path) -> str:
    try:
        return path.read_text(encoding="utf-8").strip()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


def score_row(i: int, row: dict, base: Path) -> RowResult:
    res = RowResult(i, row["converted"], row["setting"])
    try:
        if row["setting"] not in SETTINGS:
            raise ManifestError(f"unknown setting {row['setting']!r}")
        conv = _load_audio(base / row["converted"])
        tgt = _load_audio(base / row["target"])
        res.sim, res.sim_raw = cosine_similarity(
            speaker_embedding(conv), speaker_embedding(tgt), raw=True)
        w = wer(_read_line(base / row["ref_transcript"]), _read_line(base / row["hyp_transcript"]))
        res.wer = w.wer
        res.substitutions, res.deletions, res.insertions = w.substitutions, w.deletions, w.insertions
        res.ref_len = w.ref_len
    except ParavoxError as exc:
        res.sim = res.sim_raw = res.wer = None
        res.error = f"{type(exc).__name__}: {exc}"
    return res


def eval_run(manifest, base_dir=None) -> dict:
    """Score every manifest row and aggregate by control setting.

    ``manifest`` is a CSV path or a list of row dicts; relative paths resolve
    against ``base_dir`` (default: the manifest's directory).
    """
    if isinstance(manifest, (str, Path)):
        base = Path(base_dir) if base_dir else Path(manifest).parent
        rows = read_manifest(manifest)
    else:
        base = Path(base_dir or ".")
        rows = list(manifest)
        for r in rows:
            missing = [c for c in MANIFEST_COLUMNS if c not in r]
            if missing:
                raise ManifestError(f"manifest row is missing column(s): {', '.join(missing)}")
    results = [score_row(i, r, base) for i, r in enumerate(rows)]

    groups = {}
    for tag in SETTINGS:
        ok = [r for r in results if r.setting == tag and r.error is None]
        if ok:
            groups[tag] = {
                "count": len(ok),
                "sim_mean": float(np.mean([r.sim for r in ok])),
                "sim_raw_mean": float(np.mean([r.sim_raw for r in ok])),
                "wer_mean": float(np.mean([r.wer for r in ok])),
                "wer_percent": round(100.0 * float(np.mean([r.wer for r in ok])), 2),
            }
    return {
        "rows": [asdict(r) for r in results],
        "groups": groups,
        "errors": [{"row": r.row, "error": r.error} for r in results if r.error],
    }


def write_report(report: dict, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out / "report.csv", out / "report.json"
    fields = list(RowResult.__dataclass_fields__)
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in report["rows"]:
            r = dict(r)
            if r["sim"] is not None:
                r["sim"] = f"{r['sim']:.4f}"
                r["sim_raw"] = f"{r['sim_raw']:.4f}"
                r["wer"] = f"{100.0 * r['wer']:.2f}"
            w.writerow(r)
    summary = {
        "groups": {k: {"count": g["count"], "sim": round(g["sim_mean"], 2),
                       "sim_raw": round(g["sim_raw_mean"], 4), "wer_percent": g["wer_percent"]}
                   for k, g in report["groups"].items()},
        "errors": report["errors"],
        "rows_scored": sum(1 for r in report["rows"] if r["error"] is None),
    }
    json_path.write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return csv_path, json_path
