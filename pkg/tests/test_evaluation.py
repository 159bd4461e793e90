import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from paravox.audio import AudioBuffer, mel_spectrogram, synth_signal, write_wav
from paravox.errors import EmptyReference, ManifestError, RateMismatch, TooShort
from paravox.evaluation import (EMBED_DIM, cosine_similarity, eval_run, mel_l1, speaker_embedding,
                                tokenize, wer, write_report)

from helpers import VOWELS, formant_poly, voice
from wer_oracle import bfs_distance, compare_all


def test_wer_examples():
    w = wer("the cat sat", "the cat sat")
    assert (w.substitutions, w.deletions, w.insertions, w.wer) == (0, 0, 0, 0.0)
    w = wer("the cat sat", "the cat sat on")
    assert w.insertions == 1 and w.wer == pytest.approx(1 / 3)


def test_tokenize():
    assert tokenize("The CAT, sat!  don't") == ["the", "cat", "sat", "don't"]
    assert wer("Hello, World.", "hello world").wer == 0.0


def test_prefers_substitution():
    w = wer("a b", "c d")
    assert (w.substitutions, w.deletions, w.insertions) == (2, 0, 0)


def test_empty_cases():
    with pytest.raises(EmptyReference):
        wer("", "x")
    with pytest.raises(EmptyReference):
        wer(" ,. ", "x")
    w = wer("one two three", "")
    assert w.deletions == 3 and w.wer == 1.0


def test_exhaustive_small_against_bfs():
    pairs, bad, bad_counts = compare_all(3, 5)
    n = sum(3 ** l for l in range(6))
    assert pairs == (n - 1) * n
    assert bad == 0 and bad_counts == 0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=6), st.lists(st.integers(0, 3), max_size=6))
def test_random_against_bfs(ref, hyp):
    w = wer([str(t) for t in ref], [str(t) for t in hyp])
    assert w.errors == bfs_distance(ref, hyp, 4, 6)


@given(st.lists(st.sampled_from(["a", "b", "c"]), min_size=1, max_size=10))
def test_wer_self_and_empty(ref):
    assert wer(ref, ref).wer == 0.0
    assert wer(ref, []).wer == 1.0


def test_cosine_rules():
    a = np.array([1.0, 0.0])
    assert cosine_similarity(a, a) == 1.0
    assert cosine_similarity(a, np.array([0.0, 1.0])) == 0.0
    assert cosine_similarity(a, -a) == 0.0
    assert cosine_similarity(a, -a, raw=True) == (0.0, -1.0)
    rng = np.random.default_rng(0)
    for _ in range(20):
        x, y = rng.normal(size=8), rng.normal(size=8)
        assert cosine_similarity(x, y) == cosine_similarity(y, x)


def test_embedding_contract():
    x = voice(formant_poly(VOWELS["a"]), 120, 140, 1.0)
    e = speaker_embedding(x)
    assert e.shape == (EMBED_DIM,) and abs(np.linalg.norm(e) - 1) < 1e-9
    assert np.array_equal(e, speaker_embedding(x))
    assert cosine_similarity(e, speaker_embedding(x)) == 1.0
    quiet = speaker_embedding(AudioBuffer(np.zeros(8000), 16000))
    assert abs(np.linalg.norm(quiet) - 1) < 1e-9 and cosine_similarity(quiet, e) == 0.0
    with pytest.raises(TooShort):
        speaker_embedding(AudioBuffer(np.zeros(7999), 16000))


def synthetic_speakers(n_sentences=4, seed=0):
    """Speaker = fixed vowel filter and pitch register; sentence = random contour."""
    rng = np.random.default_rng(seed)
    out = {}
    for name, formants in VOWELS.items():
        a = formant_poly(formants)
        base = rng.uniform(90, 200)
        out[name] = [speaker_embedding(voice(a, base * rng.uniform(0.85, 1.15),
                                             base * rng.uniform(0.85, 1.15),
                                             duration=rng.uniform(0.8, 1.4)))
                     for _ in range(n_sentences)]
    return out


def speaker_ordering_rate(embs):
    names = list(embs)
    same, cross = [], []
    for i, n in enumerate(names):
        for j, m in enumerate(names):
            for p, a in enumerate(embs[n]):
                for q, b in enumerate(embs[m]):
                    if (i, p) < (j, q):
                        (same if i == j else cross).append(cosine_similarity(a, b))
    same, cross = np.array(same), np.array(cross)
    return float(np.mean(same[:, None] > cross[None, :]))


def test_speaker_ordering():
    assert speaker_ordering_rate(synthetic_speakers()) >= 0.9


def test_mel_l1_rules():
    x = synth_signal("sawtooth", 150, 220, 0.5)
    y = synth_signal("sine", 300, 300, 0.5)
    silence = AudioBuffer(np.zeros(len(x)), 16000)
    assert mel_l1(x, x) == 0.0
    assert mel_l1(x, y) == mel_l1(y, x) > 0
    assert mel_l1(x, silence) == pytest.approx(np.mean(np.abs(mel_spectrogram(x).frames)))
    with pytest.raises(RateMismatch):
        mel_l1(x, AudioBuffer(x.samples, 8000))


def test_mel_l1_pads_shorter():
    x = synth_signal("sawtooth", 150, 150, 1.0)
    short = AudioBuffer(x.samples[:8000], 16000)
    a, b = mel_spectrogram(x).frames, mel_spectrogram(short).frames
    padded = np.vstack([b, np.zeros((len(a) - len(b), a.shape[1]))])
    assert mel_l1(x, short) == pytest.approx(np.mean(np.abs(a - padded)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_mel_l1_triangle_and_nonnegative(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (AudioBuffer(rng.normal(0, rng.uniform(0.01, 0.5), 4000), 16000) for _ in range(3))
    ab, bc, ac = mel_l1(a, b), mel_l1(b, c), mel_l1(a, c)
    assert min(ab, bc, ac) >= 0
    assert ac <= ab + bc + 1e-12


def make_manifest(tmp_path, rows):
    with (tmp_path / "m.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["converted", "target", "ref_transcript", "hyp_transcript", "setting"])
        w.writerows(rows)
    return tmp_path / "m.csv"


@pytest.fixture
def corpus(tmp_path):
    for i, v in enumerate(["a", "i", "u"]):
        write_wav(voice(formant_poly(VOWELS[v]), 110 + 30 * i, 130 + 20 * i, 1.0), tmp_path / f"{v}.wav")
    (tmp_path / "ref.txt").write_text("please call stella\n")
    (tmp_path / "hyp.txt").write_text("please call bella now\n")
    return tmp_path


def test_gt_manifest(corpus, tmp_path):
    rows = [[f"{v}.wav", f"{v}.wav", "ref.txt", "ref.txt", "no-control"] for v in "aiu"]
    rep = eval_run(make_manifest(tmp_path, rows))
    g = rep["groups"]["no-control"]
    assert g["count"] == 3 and g["sim_mean"] == 1.0 and g["wer_percent"] == 0.0
    csv_path, json_path = write_report(rep, tmp_path / "out")
    summary = json.loads(json_path.read_text())
    assert summary["groups"]["no-control"]["sim"] == 1.0
    assert summary["groups"]["no-control"]["wer_percent"] == 0.0
    assert len(csv_path.read_text().strip().splitlines()) == 4


def test_mixed_tags_and_errors(corpus, tmp_path):
    rows = [
        ["a.wav", "i.wav", "ref.txt", "hyp.txt", "pitch-only"],
        ["u.wav", "u.wav", "ref.txt", "ref.txt", "speed-only"],
        ["missing.wav", "u.wav", "ref.txt", "ref.txt", "speed-only"],
        ["a.wav", "a.wav", "ref.txt", "hyp.txt", "pitch+speed"],
    ]
    rep = eval_run(make_manifest(tmp_path, rows))
    assert set(rep["groups"]) == {"pitch-only", "speed-only", "pitch+speed"}
    assert len(rep["errors"]) == 1 and rep["errors"][0]["row"] == 2
    assert rep["groups"]["speed-only"]["count"] == 1
    # "please call stella" -> "please call bella now": one substitution, one insertion.
    assert rep["groups"]["pitch-only"]["wer_percent"] == pytest.approx(66.67)
    assert [r["row"] for r in rep["rows"]] == [0, 1, 2, 3]


def test_bad_tag_is_row_error(corpus, tmp_path):
    rep = eval_run(make_manifest(tmp_path, [["a.wav", "a.wav", "ref.txt", "ref.txt", "loud"]]))
    assert rep["groups"] == {} and len(rep["errors"]) == 1


def test_empty_manifest(tmp_path):
    rep = eval_run(make_manifest(tmp_path, []))
    assert rep["groups"] == {} and rep["rows"] == []


def test_missing_column(tmp_path):
    (tmp_path / "m.csv").write_text("converted,target,setting\n")
    with pytest.raises(ManifestError, match="ref_transcript"):
        eval_run(tmp_path / "m.csv")
