"""Log mel-spectrogram features with delta and delta-delta rows.

A feature matrix is a ``float32`` array of shape ``(192, n_frames)``: 64
log-mel rows, then their deltas, then the deltas of the deltas.
"""

from __future__ import annotations

import json
import struct
from functools import lru_cache
from pathlib import Path
from typing import Mapping

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .frontend import TARGET_RATE, AudioClip

WINDOW = 1024
HOP = 441
N_MELS = 64
N_FEATURES = 3 * N_MELS
LOG_FLOOR = 1e-10
DELTA_WIDTH = 2
FRAME_RATE = TARGET_RATE / HOP

CACHE_MAGIC = b"RVKF"
CACHE_VERSION = 1
_CACHE_HEADER = struct.Struct("<4sIII")


def n_frames(n_samples: int, window: int = WINDOW, hop: int = HOP) -> int:
    if n_samples < window:
        return 0
    return 1 + (n_samples - window) // hop


def stft_power(samples: np.ndarray, window: int = WINDOW, hop: int = HOP) -> np.ndarray:
    """Hann-windowed power spectrogram, shape ``(window // 2 + 1, n_frames)``.

    Frames start at sample 0 with no centring or padding.
    """
    x = np.asarray(samples.samples if isinstance(samples, AudioClip) else samples, dtype=np.float64)
    if len(x) < window:
        raise ValueError(f"need at least {window} samples, got {len(x)}")
    frames = sliding_window_view(x, window)[::hop]
    # periodic Hann, as used for spectral analysis
    hann = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(window) / window)
    spec = np.fft.rfft(frames * hann, n=window, axis=1)
    return (spec.real**2 + spec.imag**2).T


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def _filterbank(n_mels: int, n_fft: int, sample_rate: int, fmin: float, fmax: float) -> np.ndarray:
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb.setflags(write=False)
    return fb


def mel_filterbank(
    n_mels: int = N_MELS,
    n_fft: int = WINDOW,
    sample_rate: int = TARGET_RATE,
    fmin: float = 0.0,
    fmax: float | None = None,
) -> np.ndarray:
    """HTK-scale triangular filters with unit peaks, shape ``(n_mels, n_fft // 2 + 1)``."""
    if fmax is None:
        fmax = sample_rate / 2
    return _filterbank(n_mels, n_fft, sample_rate, float(fmin), float(fmax))


def mel_filter_edges(n_mels: int = N_MELS, sample_rate: int = TARGET_RATE, fmin: float = 0.0, fmax: float | None = None):
    if fmax is None:
        fmax = sample_rate / 2
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))


def mel_project(power: np.ndarray, n_mels: int = N_MELS, sample_rate: int = TARGET_RATE) -> np.ndarray:
    n_fft = 2 * (power.shape[0] - 1)
    return mel_filterbank(n_mels, n_fft, sample_rate) @ power


def log_compress(mel: np.ndarray, floor: float = LOG_FLOOR) -> np.ndarray:
    return np.log(np.maximum(mel, floor))


def deltas(x: np.ndarray, width: int = DELTA_WIDTH) -> np.ndarray:
    """Regression deltas along the time axis with edge frames replicated."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[1]
    padded = np.pad(x, ((0, 0), (width, width)), mode="edge")
    out = np.zeros_like(x)
    for k in range(1, width + 1):
        out += k * (padded[:, width + k : width + k + n] - padded[:, width - k : width - k + n])
    return out / (2 * sum(k * k for k in range(1, width + 1)))


def append_deltas(logmel: np.ndarray, width: int = DELTA_WIDTH) -> np.ndarray:
    d1 = deltas(logmel, width)
    d2 = deltas(d1, width)
    return np.vstack([logmel, d1, d2])


def extract_features(clip: AudioClip | np.ndarray) -> np.ndarray:
    """Full feature chain on an already gated 44.1 kHz clip."""
    if isinstance(clip, AudioClip) and clip.sample_rate != TARGET_RATE:
        raise ValueError(f"expected {TARGET_RATE} Hz audio, got {clip.sample_rate}")
    power = stft_power(clip)
    fm = append_deltas(log_compress(mel_project(power)))
    return fm.astype(np.float32)


def average_vector(fm: np.ndarray) -> np.ndarray:
    fm = np.asarray(fm)
    if fm.ndim != 2 or fm.shape[1] < 1:
        raise ValueError("feature matrix must be 2-D with at least one frame")
    return fm.mean(axis=1, dtype=np.float64)


# -- on-disk cache ------------------------------------------------------------


class CacheFormatError(ValueError):
    pass


def write_feature_cache(path: str | Path, fm: np.ndarray) -> None:
    fm = np.asarray(fm)
    if fm.ndim != 2:
        raise ValueError("feature matrix must be 2-D")
    rows, cols = fm.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".part")
    with tmp.open("wb") as fh:
        fh.write(_CACHE_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, rows, cols))
        fh.write(np.ascontiguousarray(fm, dtype="<f4").tobytes())
    tmp.replace(path)


def read_feature_cache(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _CACHE_HEADER.size:
        raise CacheFormatError(f"{path}: truncated header")
    magic, version, rows, cols = _CACHE_HEADER.unpack_from(raw)
    if magic != CACHE_MAGIC:
        raise CacheFormatError(f"{path}: bad magic {magic!r}")
    if version != CACHE_VERSION:
        raise CacheFormatError(f"{path}: unsupported version {version}")
    expected = _CACHE_HEADER.size + 4 * rows * cols
    if len(raw) != expected:
        raise CacheFormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=_CACHE_HEADER.size)
    return data.reshape(rows, cols).astype(np.float32)


def is_valid_cache(path: str | Path) -> bool:
    path = Path(path)
    if not path.is_file():
        return False
    try:
        with path.open("rb") as fh:
            head = fh.read(_CACHE_HEADER.size)
        magic, version, rows, cols = _CACHE_HEADER.unpack(head)
    except (OSError, struct.error):
        return False
    return (
        magic == CACHE_MAGIC
        and version == CACHE_VERSION
        and rows == N_FEATURES
        and cols > 0
        and path.stat().st_size == _CACHE_HEADER.size + 4 * rows * cols
    )


def cache_key(subject_id: str, sound: str) -> str:
    return f"{subject_id}/{sound}"


def cache_path(cache_dir: str | Path, subject_id: str, sound: str) -> Path:
    return Path(cache_dir) / subject_id / f"{sound}.rvkf"


def write_index(index: Mapping[str, str], path: str | Path) -> None:
    Path(path).write_text(json.dumps(dict(sorted(index.items())), indent=1) + "\n")


def read_index(path: str | Path) -> dict[str, str]:
    return json.loads(Path(path).read_text())
