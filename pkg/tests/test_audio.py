import struct
import wave

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from paravox.audio import (AudioBuffer, frame_signal, hz_to_mel, instantaneous_frequency,
                           mel_band_edges, mel_filterbank, mel_spectrogram, mel_to_hz, mfcc,
                           num_frames, read_wav, resample, synth_signal, to_pcm16, write_wav)
from paravox.errors import (EmptySignal, InvalidFrequency, IoError, MalformedWav,
                            UnsupportedEncoding, ValidationError)


def riff(fmt_tag, channels, rate, bits, payload, extra=b""):
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", fmt_tag, channels, rate, rate * block, block, bits) + extra
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    return b"RIFF" + struct.pack("<I", len(body)) + body


def test_buffer_rejects_bad_input():
    with pytest.raises(ValidationError):
        AudioBuffer(np.zeros((2, 2)), 16000)
    with pytest.raises(ValidationError):
        AudioBuffer(np.array([0.0, np.nan]), 16000)
    with pytest.raises(ValidationError):
        AudioBuffer(np.zeros(4), 0)


def test_buffer_is_immutable_copy():
    x = np.zeros(10)
    b = AudioBuffer(x, 16000)
    x[0] = 1.0
    assert b.samples[0] == 0.0
    with pytest.raises(ValueError):
        b.samples[0] = 1.0


def test_read_one_second_pcm16(tmp_path):
    p = tmp_path / "a.wav"
    with wave.open(str(p), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(16000)
        w.writeframes(np.full(16000, 32767, dtype="<i2").tobytes())
    b = read_wav(p)
    assert len(b) == 16000 and b.sample_rate == 16000
    assert np.all(np.abs(b.samples - 1.0) <= 1 / 32768)


def test_read_float32_and_stereo_downmix(tmp_path):
    left = np.linspace(-0.5, 0.5, 100, dtype="<f4")
    right = np.full(100, 0.25, dtype="<f4")
    inter = np.stack([left, right], axis=1).reshape(-1)
    p = tmp_path / "f.wav"
    p.write_bytes(riff(3, 2, 22050, 32, inter.tobytes()))
    b = read_wav(p)
    assert b.sample_rate == 22050
    np.testing.assert_allclose(b.samples, (left.astype(float) + 0.25) / 2, atol=1e-7)


def test_read_extensible_pcm(tmp_path):
    guid = struct.pack("<H", 1) + b"\x00\x00\x00\x00\x10\x00\x80\x00\x00\xaa\x00\x38\x9b\x71"
    extra = struct.pack("<HHI", 22, 16, 4) + guid
    data = np.array([0, 16384, -16384], dtype="<i2").tobytes()
    p = tmp_path / "e.wav"
    p.write_bytes(riff(0xFFFE, 1, 16000, 16, data, extra))
    np.testing.assert_array_equal(read_wav(p).samples, [0.0, 0.5, -0.5])


def test_truncated_and_non_riff_files(tmp_path):
    p = tmp_path / "t.wav"
    p.write_bytes(b"RIFF\x10\x00\x00\x00WAVEfmt ")
    with pytest.raises(MalformedWav):
        read_wav(p)
    p.write_bytes(b"not a wav file at all")
    with pytest.raises(MalformedWav):
        read_wav(p)


def test_unsupported_codec(tmp_path):
    p = tmp_path / "alaw.wav"
    p.write_bytes(riff(6, 1, 8000, 8, bytes(10)))
    with pytest.raises(UnsupportedEncoding):
        read_wav(p)


def test_missing_file_is_io_error(tmp_path):
    with pytest.raises(IoError):
        read_wav(tmp_path / "nope.wav")


def test_sine_round_trip(tmp_path):
    x = synth_signal("sine", 440, 440, 1.0, amplitude=0.9)
    write_wav(x, tmp_path / "s.wav")
    y = read_wav(tmp_path / "s.wav")
    assert np.max(np.abs(y.samples - x.samples)) <= 2 / 32768


def test_empty_write_and_unwritable_path(tmp_path):
    write_wav(AudioBuffer(np.zeros(0), 16000), tmp_path / "e.wav")
    assert len(read_wav(tmp_path / "e.wav")) == 0
    with pytest.raises(IoError):
        write_wav(AudioBuffer(np.zeros(4), 16000), tmp_path / "missing_dir" / "x.wav")


def test_pcm16_clips():
    np.testing.assert_array_equal(to_pcm16(np.array([2.0, -2.0, 0.0])), [32767, -32768, 0])


def test_resample_length_and_identity():
    x = AudioBuffer(np.random.default_rng(0).normal(size=48000), 48000)
    assert len(resample(x, 16000)) == 16000
    y = resample(x, 48000)
    assert np.max(np.abs(y.samples - x.samples)) <= 1e-6


@pytest.mark.parametrize("f", [250.0, 1000.0, 5000.0])
def test_resample_keeps_tone_frequency(f):
    x = synth_signal("sine", f, f, 1.0, rate=48000)
    y = resample(x, 16000).samples
    spec = np.abs(np.fft.rfft(y * np.hanning(len(y)), 16 * len(y)))
    peak = np.argmax(spec) * 16000 / (16 * len(y))
    assert abs(peak - f) / f < 1e-3


def test_resample_attenuates_above_new_nyquist():
    x = synth_signal("sine", 12000, 12000, 0.5, rate=48000)
    y = resample(x, 16000).samples
    assert np.max(np.abs(y[200:-200])) < 1e-3


def test_frame_counts():
    assert len(frame_signal(AudioBuffer(np.zeros(16000), 16000), 320, 80)) == 197
    assert len(frame_signal(np.zeros(320), 320, 80)) == 1
    with pytest.raises(EmptySignal):
        frame_signal(np.zeros(319), 320, 80)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 400), st.integers(1, 100), st.integers(0, 2000))
def test_frame_count_formula(frame_len, hop, extra):
    n = frame_len + extra
    frames = frame_signal(np.arange(n, dtype=float), frame_len, hop)
    assert len(frames) == (n - frame_len) // hop + 1 == num_frames(n, frame_len, hop)
    np.testing.assert_array_equal(frames[-1], np.arange(n)[(len(frames) - 1) * hop:][:frame_len])


@given(st.floats(0.0, 8000.0))
def test_mel_round_trip(f):
    assert abs(mel_to_hz(hz_to_mel(f)) - f) < 1e-6 * max(f, 1.0)


def test_filterbank_shape():
    fb = mel_filterbank(80, 1024, 16000)
    assert fb.shape == (80, 513) and np.all(fb >= 0)
    assert np.all(fb.sum(axis=1) > 0)


def test_mel_spectrogram_properties():
    silence = mel_spectrogram(AudioBuffer(np.zeros(8000), 16000))
    assert np.all(silence.frames == 0.0)
    x = synth_signal("sawtooth", 150, 300, 1.0)
    a, b = mel_spectrogram(x), mel_spectrogram(x)
    assert np.array_equal(a.frames, b.frames) and np.all(a.frames >= 0)
    with pytest.raises(EmptySignal):
        mel_spectrogram(AudioBuffer(np.zeros(100), 16000))


def test_mel_peak_band_for_1khz():
    m = mel_spectrogram(synth_signal("sine", 1000, 1000, 1.0)).frames
    # Oracle: the band whose triangle peaks nearest to 1 kHz on the mel axis.
    edges = mel_band_edges(80, 16000)
    centres = hz_to_mel(edges[1:-1])
    expected = int(np.argmin(np.abs(centres - hz_to_mel(1000.0))))
    bands = np.argmax(m, axis=1)
    assert np.all(bands == bands[0]) and bands[0] == expected


def test_mfcc_grid():
    assert mfcc(synth_signal("sine", 200, 200, 1.0)).shape == (197, 13)


def test_synth_sine_peak():
    x = synth_signal("sine", 440, 440, 1.0)
    assert len(x) == 16000
    assert abs(np.argmax(np.abs(np.fft.rfft(x.samples))) - 440) <= 1


def test_pulse_positions():
    x = synth_signal("pulse-train", 100, 100, 0.5).samples
    np.testing.assert_array_equal(np.nonzero(x)[0], np.arange(0, 8000, 160))


def test_chirp_midpoint_frequency():
    assert instantaneous_frequency(100, 200, 1.0, 0.5) == pytest.approx(100 * 2 ** 0.5)
    x = synth_signal("chirp", 100, 200, 1.0).samples
    # Zero crossings around the midpoint give the local frequency.
    seg = x[7600:8400]
    up = np.nonzero((seg[:-1] < 0) & (seg[1:] >= 0))[0]
    assert abs(16000 / np.mean(np.diff(up)) - 141.42) < 1.5


def test_invalid_frequency():
    with pytest.raises(InvalidFrequency):
        synth_signal("sine", 0, 100, 1.0)
    with pytest.raises(InvalidFrequency):
        synth_signal("sine", 100, 9000, 1.0)
