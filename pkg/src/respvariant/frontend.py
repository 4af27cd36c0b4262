"""Audio decoding, resampling, peak normalisation and amplitude gating."""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import signal
from scipy.io import wavfile

TARGET_RATE = 44100
SAD_THRESHOLD = 0.01
MIN_DURATION = 0.5  # seconds of audio that must survive gating

# Resampling filter: Kaiser-windowed sinc, >= 64 taps per polyphase branch.
TAPS_PER_PHASE = 64
KAISER_BETA = 8.6
CUTOFF_FRACTION = 0.94


class AudioDecodeError(ValueError):
    pass


class TooShortError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    source_path: str = ""
    silent: bool = False

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self) -> int:
        return len(self.samples)


def _to_float(data: np.ndarray) -> np.ndarray:
    if data.dtype == np.uint8:
        return (data.astype(np.float64) - 128.0) / 128.0
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32768.0
    if data.dtype == np.int32:
        # scipy left-justifies 24-bit PCM into int32, so one scale covers both
        return data.astype(np.float64) / 2147483648.0
    if data.dtype in (np.float32, np.float64):
        return data.astype(np.float64)
    raise AudioDecodeError(f"unsupported sample type {data.dtype}")


def decode(path: str | Path) -> AudioClip:
    """Read a PCM WAV file as a mono float clip in [-1, 1]."""
    path = Path(path)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", wavfile.WavFileWarning)
            rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except (ValueError, EOFError, OSError, IndexError, struct.error) as exc:
        raise AudioDecodeError(f"{path}: {exc}") from exc
    if rate <= 0:
        raise AudioDecodeError(f"{path}: invalid sample rate {rate}")
    x = _to_float(np.asarray(data))
    if x.ndim == 2:
        x = x.mean(axis=1)
    if x.size == 0:
        raise AudioDecodeError(f"{path}: no audio samples")
    return AudioClip(x, int(rate), str(path))


@lru_cache(maxsize=16)
def _resampling_filter(up: int, down: int) -> np.ndarray:
    n_taps = TAPS_PER_PHASE * max(up, down) + 1
    cutoff = CUTOFF_FRACTION / max(up, down)
    return signal.firwin(n_taps, cutoff, window=("kaiser", KAISER_BETA))


def resample(clip: AudioClip, target_rate: int = TARGET_RATE) -> AudioClip:
    """Polyphase windowed-sinc rate conversion; identity when rates match."""
    if clip.sample_rate <= 0:
        raise ValueError("sample rate must be positive")
    if clip.sample_rate == target_rate:
        return clip
    g = math.gcd(target_rate, clip.sample_rate)
    up, down = target_rate // g, clip.sample_rate // g
    y = signal.resample_poly(clip.samples, up, down, window=_resampling_filter(up, down))
    return replace(clip, samples=y, sample_rate=target_rate)


def normalize(clip: AudioClip) -> AudioClip:
    peak = np.max(np.abs(clip.samples)) if len(clip) else 0.0
    if peak == 0:
        return replace(clip, silent=True)
    return replace(clip, samples=clip.samples / peak, silent=False)


def sad_gate(clip: AudioClip, threshold: float = SAD_THRESHOLD, min_duration: float = MIN_DURATION) -> AudioClip:
    """Drop every sample whose magnitude is below ``threshold`` and splice the rest.

    Raises :class:`TooShortError` when less than ``min_duration`` seconds remain.
    """
    kept = clip.samples[np.abs(clip.samples) >= threshold]
    if len(kept) < min_duration * clip.sample_rate:
        raise TooShortError(
            f"{clip.source_path or 'clip'}: {len(kept)} samples left after gating, "
            f"need {math.ceil(min_duration * clip.sample_rate)}"
        )
    return replace(clip, samples=kept)


def preprocess(path: str | Path, target_rate: int = TARGET_RATE, threshold: float = SAD_THRESHOLD) -> AudioClip:
    """decode -> resample -> normalize -> sad_gate."""
    clip = normalize(resample(decode(path), target_rate))
    return sad_gate(clip, threshold)


def write_wav(clip: AudioClip, path: str | Path) -> None:
    """Write a clip as 16-bit PCM (used for debug dumps and synthetic corpora)."""
    pcm = np.clip(np.round(clip.samples * 32767.0), -32768, 32767).astype(np.int16)
    wavfile.write(Path(path), clip.sample_rate, pcm)
