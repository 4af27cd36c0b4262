"""Synthetic labelled corpus with class-dependent spectral shape.

Every clip is coloured Gaussian noise under a slowly varying amplitude
envelope. Its spectral envelope is a modality-specific base shape plus a
class marker: delta subjects get extra energy in a low band, omicron
subjects in a high band, healthy subjects neither. Marker strength and a
random spectral tilt are drawn independently per subject and modality, so
modalities make independent errors and fusion can help.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .frontend import AudioClip, write_wav
from .ingest import SOUND_CATEGORIES, SYMPTOMS, Category, Severity, SoundCategory, SubjectRecord, write_manifest

DELTA_WINDOW = (dt.date(2021, 4, 1), dt.date(2021, 6, 30))
OMICRON_WINDOW = (dt.date(2022, 1, 1), dt.date(2022, 2, 28))
HEALTHY_WINDOW = (dt.date(2021, 3, 1), dt.date(2022, 3, 31))

# per-class symptom probabilities, indexed like SYMPTOMS
_SYMPTOM_P = {
    Category.HEALTHY: (0.05, 0.03, 0.05, 0.02, 0.01, 0.02, 0.01, 0.08, 0.05),
    Category.DELTA: (0.35, 0.35, 0.25, 0.35, 0.30, 0.20, 0.10, 0.25, 0.30),
    Category.OMICRON: (0.50, 0.45, 0.45, 0.45, 0.10, 0.08, 0.04, 0.35, 0.30),
}

# base spectral peak (Hz) per modality
_MODALITY_PEAK = {
    SoundCategory.BREATHING_DEEP: 600.0,
    SoundCategory.BREATHING_SHALLOW: 800.0,
    SoundCategory.COUGH_HEAVY: 1500.0,
    SoundCategory.COUGH_SHALLOW: 1800.0,
    SoundCategory.COUNTING_FAST: 1100.0,
    SoundCategory.COUNTING_NORMAL: 1000.0,
    SoundCategory.VOWEL_A: 900.0,
    SoundCategory.VOWEL_E: 1300.0,
    SoundCategory.VOWEL_O: 700.0,
}

_MARKER_BAND = {Category.DELTA: 350.0, Category.OMICRON: 4500.0}


@dataclass(frozen=True)
class SynthConfig:
    subjects_per_class: int = 200
    modalities: tuple[str, ...] = tuple(s.value for s in SOUND_CATEGORIES)
    seed: int = 0
    sample_rate: int = 48000
    duration: tuple[float, float] = (0.9, 1.3)
    separation_db: float = 8.0
    jitter_db: float = 2.5
    n_excluded: int = 3


def _date_in(window: tuple[dt.date, dt.date], rng: np.random.Generator) -> dt.date:
    span = (window[1] - window[0]).days
    return window[0] + dt.timedelta(days=int(rng.integers(0, span + 1)))


def _envelope_db(freqs: np.ndarray, modality: SoundCategory, category: Category, rng: np.random.Generator, cfg: SynthConfig) -> np.ndarray:
    logf = np.log2(np.maximum(freqs, 20.0))
    base = -6.0 * (logf - np.log2(_MODALITY_PEAK[modality])) ** 2 / 2.0
    tilt = rng.normal(0.0, 1.5) * (logf - np.log2(1000.0))
    env = base + tilt
    if category in _MARKER_BAND:
        level = cfg.separation_db + rng.normal(0.0, cfg.jitter_db)
        centre = np.log2(_MARKER_BAND[category])
        env = env + level * np.exp(-0.5 * ((logf - centre) / 0.35) ** 2)
    return env


def synth_clip(modality: SoundCategory, category: Category, rng: np.random.Generator, cfg: SynthConfig) -> AudioClip:
    n = int(round(rng.uniform(*cfg.duration) * cfg.sample_rate))
    freqs = np.fft.rfftfreq(n, 1.0 / cfg.sample_rate)
    env = 10.0 ** (_envelope_db(freqs, modality, category, rng, cfg) / 20.0)
    spec = (rng.normal(size=len(freqs)) + 1j * rng.normal(size=len(freqs))) * env
    x = np.fft.irfft(spec, n=n)
    t = np.arange(n) / cfg.sample_rate
    am = 0.65 + 0.35 * np.sin(2 * np.pi * rng.uniform(0.5, 2.0) * t + rng.uniform(0, 2 * np.pi))
    x = x * am
    x = 0.8 * x / np.max(np.abs(x))
    return AudioClip(x, cfg.sample_rate)


def generate_corpus(out_dir: str | Path, cfg: SynthConfig = SynthConfig()) -> Path:
    """Write WAV files and ``manifest.csv`` under ``out_dir``; return the manifest path."""
    out_dir = Path(out_dir)
    audio_dir = out_dir / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)
    modalities = [SoundCategory(m) for m in cfg.modalities]

    plan: list[tuple[str, Category, bool]] = []
    for cat, tag in ((Category.HEALTHY, "h"), (Category.DELTA, "d"), (Category.OMICRON, "o")):
        plan += [(f"{tag}{i:04d}", cat, True) for i in range(cfg.subjects_per_class)]
    plan += [(f"x{i:04d}", Category.HEALTHY, False) for i in range(cfg.n_excluded)]

    records = []
    for k, (sid, cat, eligible) in enumerate(plan):
        rng = np.random.default_rng([cfg.seed, k])
        positive = cat is not Category.HEALTHY
        window = {Category.DELTA: DELTA_WINDOW, Category.OMICRON: OMICRON_WINDOW}.get(cat, HEALTHY_WINDOW)
        symptoms = frozenset(s for s, p in zip(SYMPTOMS, _SYMPTOM_P[cat]) if rng.random() < p)
        age = int(rng.integers(18, 80))
        country = "India"
        reason = -1
        if not eligible:
            # one reason per excluded subject: too young, abroad, or flagged audio
            reason = k % 3
            age = 12 if reason == 0 else age
            country = "Elsewhere" if reason == 1 else country
        paths = {}
        for j, mod in enumerate(modalities):
            clip = synth_clip(mod, cat, np.random.default_rng([cfg.seed, k, j, 7]), cfg)
            p = audio_dir / sid / f"{mod.value}.wav"
            p.parent.mkdir(exist_ok=True)
            write_wav(clip, p)
            paths[mod] = p
        records.append(
            SubjectRecord(
                subject_id=sid,
                category=Category.POSITIVE if positive else Category.HEALTHY,
                age=age,
                gender=("male", "female")[int(rng.integers(0, 2))],
                country=country,
                severity=list(Severity)[int(rng.integers(0, 3))] if positive else None,
                symptoms=symptoms,
                record_timestamp=_date_in(window, rng),
                quality_ok=eligible or reason != 2,
                sound_paths=paths,
            )
        )
    manifest = out_dir / "manifest.csv"
    write_manifest(records, manifest)
    return manifest


def modality_list(spec: str | Sequence[str]) -> tuple[str, ...]:
    if isinstance(spec, str):
        if spec == "all":
            return tuple(s.value for s in SOUND_CATEGORIES)
        spec = [s.strip() for s in spec.split(",") if s.strip()]
    return tuple(SoundCategory(s).value for s in spec)
