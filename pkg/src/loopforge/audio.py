"""WAV ingestion and per-bar mel features for audio correlation matrices."""

from __future__ import annotations

import struct

import numpy as np

STFT_WINDOW = 2048
STFT_HOP = 512
N_MELS = 64


class WavError(ValueError):
    pass


def read_wav(data: bytes) -> tuple[np.ndarray, int]:
    """Decode RIFF/WAVE PCM16 or IEEE float32; stereo is averaged to mono.

    Returns (samples in [-1, 1] as float64, sample_rate).
    """
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavError("not a RIFF/WAVE file")
    pos = 12
    fmt = None
    samples = None
    while pos + 8 <= len(data):
        cid = data[pos : pos + 4]
        (clen,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8 : pos + 8 + clen]
        if cid == b"fmt ":
            if len(body) < 16:
                raise WavError("fmt chunk too short")
            tag, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", body, 0)
            if tag == 0xFFFE and len(body) >= 40:  # WAVE_FORMAT_EXTENSIBLE
                (tag,) = struct.unpack_from("<H", body, 24)
            fmt = (tag, channels, rate, bits)
        elif cid == b"data":
            samples = body
        pos += 8 + clen + (clen & 1)  # chunks are word-aligned
    if fmt is None or samples is None:
        raise WavError("missing fmt or data chunk")
    tag, channels, rate, bits = fmt
    if channels < 1:
        raise WavError("zero channels")
    if tag == 1 and bits == 16:
        x = np.frombuffer(samples[: len(samples) // 2 * 2], dtype="<i2").astype(np.float64) / 32768.0
    elif tag == 3 and bits == 32:
        x = np.frombuffer(samples[: len(samples) // 4 * 4], dtype="<f4").astype(np.float64)
    else:
        raise WavError(f"unsupported format tag {tag} / {bits}-bit")
    if channels > 1:
        x = x[: len(x) // channels * channels].reshape(-1, channels).mean(axis=1)
    return x, int(rate)


def read_wav_file(path) -> tuple[np.ndarray, int]:
    with open(path, "rb") as f:
        return read_wav(f.read())


def write_wav(samples: np.ndarray, sample_rate: int) -> bytes:
    """Minimal mono PCM16 writer (test fixtures and demos)."""
    pcm = np.clip(np.asarray(samples, np.float64), -1.0, 1.0)
    raw = np.round(pcm * 32767.0).astype("<i2").tobytes()
    hdr = b"RIFF" + struct.pack("<I", 36 + len(raw)) + b"WAVE"
    fmt = b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, sample_rate,
                                sample_rate * 2, 2, 16)
    return hdr + fmt + b"data" + struct.pack("<I", len(raw)) + raw


def _hann(n: int) -> np.ndarray:
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / n))


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, np.float64) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: int, n_fft: int = STFT_WINDOW, n_mels: int = N_MELS) -> np.ndarray:
    """Triangular filters over [0, sr/2]; shape (n_mels, n_fft//2 + 1)."""
    n_bins = n_fft // 2 + 1
    freqs = np.linspace(0.0, sample_rate / 2.0, n_bins)
    edges = _mel_to_hz(np.linspace(_hz_to_mel(0.0), _hz_to_mel(sample_rate / 2.0), n_mels + 2))
    fb = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        up = (freqs - lo) / max(mid - lo, 1e-12)
        down = (hi - freqs) / max(hi - mid, 1e-12)
        fb[m] = np.clip(np.minimum(up, down), 0.0, None)
    return fb


def mel_frames(samples: np.ndarray, sample_rate: int,
               window: int = STFT_WINDOW, hop: int = STFT_HOP,
               n_mels: int = N_MELS) -> np.ndarray:
    """log1p mel magnitudes, one row per frame; (frames, n_mels)."""
    x = np.asarray(samples, np.float64)
    if x.size < window:
        x = np.pad(x, (0, window - x.size))
    n_frames = 1 + (x.size - window) // hop
    idx = np.arange(window)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[idx] * _hann(window)[None, :]
    mag = np.abs(np.fft.rfft(frames, axis=1))
    fb = mel_filterbank(sample_rate, window, n_mels)
    return np.log1p(mag @ fb.T)
