"""WAV ingestion and log mel-band energy features.

At 44.1 kHz a 40 ms Hamming window (1764 samples) is zero-padded to a
2048-point FFT and hopped every 20 ms (882 samples). Frames are centred by
reflect-padding the signal with n_fft // 2 samples on each side, which gives
``floor(n / hop) + 1`` frames: 51 for one second of audio.
"""

from __future__ import annotations

import math
import os
import wave
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import CorruptHeader, TooShort, UnsupportedFormat, WrongSampleRate

SAMPLE_RATE = 44100
N_MELS = 40
N_FFT = 2048
WIN_LENGTH = 1764  # 40 ms
HOP_LENGTH = 882  # 20 ms, 50 % overlap
FLOOR_EPS = 1e-10


@dataclass(frozen=True)
class AudioSegment:
    samples: np.ndarray
    sample_rate: int

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def load_wav(path) -> AudioSegment:
    """Read a 16-bit PCM mono or stereo WAV file; stereo is averaged."""
    try:
        with wave.open(os.fspath(path), "rb") as wav:
            channels = wav.getnchannels()
            width = wav.getsampwidth()
            rate = wav.getframerate()
            raw = wav.readframes(wav.getnframes())
    except wave.Error as exc:
        msg = str(exc)
        if "unknown format" in msg:
            raise UnsupportedFormat(f"{path}: {msg}") from None
        raise CorruptHeader(f"{path}: {msg}") from None
    except EOFError:
        raise CorruptHeader(f"{path}: truncated header") from None
    if width != 2:
        raise UnsupportedFormat(f"{path}: {8 * width}-bit samples, only 16-bit PCM is supported")
    if channels not in (1, 2):
        raise UnsupportedFormat(f"{path}: {channels} channels, expected 1 or 2")
    usable = len(raw) - len(raw) % (2 * channels)
    pcm = np.frombuffer(raw[:usable], dtype="<i2").astype(np.float64) / 32768.0
    if channels == 2:
        pcm = pcm.reshape(-1, 2).mean(axis=1)
    return AudioSegment(pcm, rate)


def write_wav(path, samples, sample_rate: int = SAMPLE_RATE) -> None:
    """Write mono (1-D) or stereo ((n, 2)) samples in [-1, 1] as 16-bit PCM."""
    data = np.asarray(samples, dtype=np.float64)
    channels = 1 if data.ndim == 1 else data.shape[1]
    pcm = np.clip(np.round(data * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(os.fspath(path), "wb") as wav:
        wav.setnchannels(channels)
        wav.setsampwidth(2)
        wav.setframerate(sample_rate)
        wav.writeframes(pcm.tobytes())


def hz_to_mel(hz):
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    hz = np.asarray(hz, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = math.log(6.4) / 27.0
    mel = hz / f_sp
    return np.where(hz >= min_log_hz, min_log_mel + np.log(np.maximum(hz, 1e-12) / min_log_hz) / logstep, mel)


def mel_to_hz(mel):
    mel = np.asarray(mel, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = math.log(6.4) / 27.0
    return np.where(mel >= min_log_mel, min_log_hz * np.exp(logstep * (mel - min_log_mel)), f_sp * mel)


@lru_cache(maxsize=8)
def mel_filterbank(sample_rate: int = SAMPLE_RATE, n_fft: int = N_FFT, n_mels: int = N_MELS) -> np.ndarray:
    """Area-normalised triangular filters, shape ``(n_mels, n_fft // 2 + 1)``."""
    fft_freqs = np.linspace(0.0, sample_rate / 2, n_fft // 2 + 1)
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2), n_mels + 2))
    widths = np.diff(edges)
    ramps = edges[:, None] - fft_freqs[None, :]
    lower = -ramps[:-2] / widths[:-1, None]
    upper = ramps[2:] / widths[1:, None]
    fb = np.maximum(0.0, np.minimum(lower, upper))
    fb *= (2.0 / (edges[2:] - edges[:-2]))[:, None]
    fb.setflags(write=False)
    return fb


def mel_center_frequencies(sample_rate: int = SAMPLE_RATE, n_mels: int = N_MELS) -> np.ndarray:
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2), n_mels + 2))
    return edges[1:-1]


@lru_cache(maxsize=4)
def analysis_window(win_length: int = WIN_LENGTH, n_fft: int = N_FFT) -> np.ndarray:
    """Periodic Hamming window centred inside an ``n_fft`` frame."""
    n = np.arange(win_length)
    win = 0.54 - 0.46 * np.cos(2 * np.pi * n / win_length)
    left = (n_fft - win_length) // 2
    padded = np.zeros(n_fft)
    padded[left : left + win_length] = win
    padded.setflags(write=False)
    return padded


def frame_params(sample_rate: int = SAMPLE_RATE) -> tuple[int, int, int]:
    """(window, hop, n_fft) in samples: 40 ms, 20 ms, next power of two."""
    win = round(0.040 * sample_rate)
    hop = round(0.020 * sample_rate)
    return win, hop, 1 << (win - 1).bit_length()


def power_spectrogram(samples: np.ndarray, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """|STFT|^2 with shape ``(n_fft // 2 + 1, n_frames)``."""
    win, hop, n_fft = frame_params(sample_rate)
    x = np.asarray(samples, dtype=np.float64)
    if len(x) < win:
        raise TooShort(f"segment has {len(x)} samples, need at least {win}")
    padded = np.pad(x, n_fft // 2, mode="reflect")
    n_frames = 1 + (len(padded) - n_fft) // hop
    frames = np.lib.stride_tricks.sliding_window_view(padded, n_fft)[::hop][:n_frames]
    spec = np.fft.rfft(frames * analysis_window(win, n_fft), axis=1)
    return (spec.real**2 + spec.imag**2).T


def _resample(samples: np.ndarray, rate: int, target: int) -> np.ndarray:
    from scipy.signal import resample_poly

    g = math.gcd(rate, target)
    return resample_poly(samples, target // g, rate // g)


def log_mel(segment: AudioSegment, *, sample_rate: int = SAMPLE_RATE, resample: bool = False) -> np.ndarray:
    """Log mel-band energies, shape ``(40, n_frames)``; 40 x 51 for 1 s.

    Segments at another rate raise ``WrongSampleRate`` unless ``resample``.
    """
    samples = np.asarray(segment.samples, dtype=np.float64)
    if segment.sample_rate != sample_rate:
        if not resample:
            raise WrongSampleRate(f"sample rate {segment.sample_rate} Hz, expected {sample_rate} Hz")
        samples = _resample(samples, segment.sample_rate, sample_rate)
    power = power_spectrogram(samples, sample_rate)
    energies = mel_filterbank(sample_rate, frame_params(sample_rate)[2]) @ power
    return np.log(energies + FLOOR_EPS)


def _worker_count() -> int | None:
    value = os.environ.get("EDGE_AUDIT_THREADS")
    if not value:
        return None
    return max(1, int(value))


def extract_directory(
    wav_dir, *, sample_rate: int = SAMPLE_RATE, resample: bool = False
) -> list[tuple[str, np.ndarray]]:
    """Features for every ``*.wav`` under ``wav_dir``, ordered by relative path."""
    root = Path(wav_dir)
    files = sorted(p for p in root.rglob("*") if p.suffix.lower() == ".wav")

    def one(path: Path) -> tuple[str, np.ndarray]:
        feats = log_mel(load_wav(path), sample_rate=sample_rate, resample=resample)
        return path.relative_to(root).as_posix(), feats

    with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
        return list(pool.map(one, files))
