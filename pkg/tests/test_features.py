import math
import struct

import numpy as np
import pytest

from edge_audit.errors import CorruptHeader, TooShort, UnsupportedFormat, WrongSampleRate
from edge_audit.features import (
    FLOOR_EPS,
    HOP_LENGTH,
    N_FFT,
    WIN_LENGTH,
    AudioSegment,
    extract_directory,
    frame_params,
    hz_to_mel,
    load_wav,
    log_mel,
    mel_center_frequencies,
    mel_filterbank,
    mel_to_hz,
    power_spectrogram,
    write_wav,
)
from oracles import direct_dft_power

SR = 44100


def segment(samples, sr=SR):
    return AudioSegment(np.asarray(samples, dtype=np.float64), sr)


def tone(freq, amp=0.5, seconds=1.0, sr=SR):
    t = np.arange(int(seconds * sr)) / sr
    return amp * np.sin(2 * np.pi * freq * t)


def raw_wav(fmt_tag=1, channels=1, rate=SR, bits=16, data=b"\x00\x00" * 10):
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", fmt_tag, channels, rate, rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(data)) + data
    return b"RIFF" + struct.pack("<I", len(body)) + body


class TestFrameParams:
    def test_44k1(self):
        assert frame_params(SR) == (WIN_LENGTH, HOP_LENGTH, N_FFT) == (1764, 882, 2048)

    def test_other_rate(self):
        assert frame_params(16000) == (640, 320, 1024)


class TestLogMel:
    def test_one_second_gives_40_by_51(self, rng):
        assert log_mel(segment(rng.uniform(-1, 1, SR))).shape == (40, 51)

    def test_silence_is_floor(self):
        f = log_mel(segment(np.zeros(SR)))
        np.testing.assert_array_equal(f, np.full((40, 51), math.log(FLOOR_EPS)))
        assert f[0, 0] == pytest.approx(-23.02585093)

    def test_tone_peaks_in_band_nearest_1khz(self):
        f = log_mel(segment(tone(1000.0)))
        centres = mel_center_frequencies()
        nearest = int(np.argmin(np.abs(centres - 1000.0)))
        assert (f.argmax(axis=0) == nearest).all()

    def test_power_spectrum_matches_direct_dft(self):
        x = tone(1000.0)
        frame_idx = 20
        padded = np.pad(x, N_FFT // 2, mode="reflect")
        frame = padded[frame_idx * HOP_LENGTH : frame_idx * HOP_LENGTH + N_FFT]
        n = np.arange(WIN_LENGTH)
        win = np.zeros(N_FFT)
        left = (N_FFT - WIN_LENGTH) // 2
        win[left : left + WIN_LENGTH] = 0.54 - 0.46 * np.cos(2 * np.pi * n / WIN_LENGTH)
        expected = direct_dft_power(frame * win)
        got = power_spectrogram(x)[:, frame_idx]
        np.testing.assert_allclose(got, expected, rtol=1e-9, atol=1e-6)
        peak_bin = int(np.argmax(expected))
        assert abs(peak_bin * SR / N_FFT - 1000.0) < SR / N_FFT

    def test_amplitude_scaling_shifts_by_twice_log(self, rng):
        x = rng.uniform(-0.2, 0.2, SR)
        a, b = log_mel(segment(x)), log_mel(segment(3.0 * x))
        np.testing.assert_allclose(b - a, 2 * math.log(3.0), atol=1e-6)

    def test_one_hop_shift_moves_frames(self, rng):
        x = rng.uniform(-0.5, 0.5, SR + HOP_LENGTH)
        a = log_mel(segment(x[:SR]))
        b = log_mel(segment(x[HOP_LENGTH:]))
        # frames clear of the reflect-padded edges
        np.testing.assert_allclose(b[:, 2:-3], a[:, 3:-2], atol=1e-9)

    def test_deterministic(self, rng):
        x = rng.uniform(-1, 1, SR)
        np.testing.assert_array_equal(log_mel(segment(x)), log_mel(segment(x.copy())))

    def test_too_short(self):
        with pytest.raises(TooShort):
            log_mel(segment(np.zeros(WIN_LENGTH - 1)))

    def test_wrong_rate(self):
        with pytest.raises(WrongSampleRate):
            log_mel(segment(np.zeros(16000), 16000))

    def test_resampling_on_request(self, rng):
        f = log_mel(segment(rng.uniform(-1, 1, 48000), 48000), resample=True)
        assert f.shape == (40, 51)


class TestMelScale:
    def test_linear_below_1khz(self):
        assert float(hz_to_mel(1000.0)) == pytest.approx(15.0)
        assert float(hz_to_mel(200.0)) == pytest.approx(3.0)

    def test_inverse(self, rng):
        hz = rng.uniform(0, 22050, 200)
        np.testing.assert_allclose(mel_to_hz(hz_to_mel(hz)), hz, rtol=1e-10)

    def test_filterbank_shape_and_span(self):
        fb = mel_filterbank()
        assert fb.shape == (40, N_FFT // 2 + 1)
        assert (fb >= 0).all()
        assert fb[:, 0].sum() == 0.0
        centres = mel_center_frequencies()
        assert 0 < centres[0] < centres[-1] < SR / 2

    def test_filters_have_unit_area(self):
        areas = mel_filterbank().sum(axis=1) * (SR / N_FFT)
        np.testing.assert_allclose(areas[5:], 1.0, atol=0.01)


class TestLoadWav:
    def test_mono_zeros(self, tmp_path):
        write_wav(tmp_path / "z.wav", np.zeros(SR))
        seg = load_wav(tmp_path / "z.wav")
        assert seg.sample_rate == SR
        assert seg.samples.shape == (SR,)
        assert not seg.samples.any()

    def test_stereo_is_averaged(self, tmp_path):
        write_wav(tmp_path / "s.wav", np.column_stack([np.full(100, 0.5), np.full(100, -0.5)]))
        seg = load_wav(tmp_path / "s.wav")
        np.testing.assert_array_equal(seg.samples, np.zeros(100))

    def test_most_negative_code_is_minus_one(self, tmp_path):
        (tmp_path / "m.wav").write_bytes(raw_wav(data=struct.pack("<h", -32768) * 4))
        assert load_wav(tmp_path / "m.wav").samples.tolist() == [-1.0] * 4

    def test_eight_bit_rejected(self, tmp_path):
        (tmp_path / "b.wav").write_bytes(raw_wav(bits=8, data=b"\x80" * 10))
        with pytest.raises(UnsupportedFormat):
            load_wav(tmp_path / "b.wav")

    def test_float_format_rejected(self, tmp_path):
        (tmp_path / "f.wav").write_bytes(raw_wav(fmt_tag=3, bits=32, data=b"\x00" * 16))
        with pytest.raises(UnsupportedFormat):
            load_wav(tmp_path / "f.wav")

    def test_garbage_header(self, tmp_path):
        (tmp_path / "g.wav").write_bytes(b"not a wav file at all")
        with pytest.raises(CorruptHeader):
            load_wav(tmp_path / "g.wav")

    def test_truncated_header(self, tmp_path):
        (tmp_path / "t.wav").write_bytes(raw_wav()[:20])
        with pytest.raises(CorruptHeader):
            load_wav(tmp_path / "t.wav")

    def test_round_trip_is_exact_on_pcm_grid(self, tmp_path, rng):
        codes = rng.integers(-32768, 32768, 500)
        write_wav(tmp_path / "r.wav", codes / 32768.0)
        np.testing.assert_array_equal(load_wav(tmp_path / "r.wav").samples, codes / 32768.0)


class TestExtractDirectory:
    def test_sorted_relative_paths(self, tmp_path, rng, monkeypatch):
        monkeypatch.setenv("EDGE_AUDIT_THREADS", "2")
        (tmp_path / "sub").mkdir()
        for name in ("b.wav", "a.wav", "sub/c.wav"):
            write_wav(tmp_path / name, rng.uniform(-0.5, 0.5, SR))
        (tmp_path / "notes.txt").write_text("ignored")
        items = extract_directory(tmp_path)
        assert [n for n, _ in items] == ["a.wav", "b.wav", "sub/c.wav"]
        assert all(m.shape == (40, 51) for _, m in items)
        np.testing.assert_array_equal(items[0][1], log_mel(load_wav(tmp_path / "a.wav")))
