"""
Feature vectors and population statistics
=========================================

Generate a few synthetic recordings per class, turn each into a 192-row
log-mel + delta + delta-delta matrix, average over time, and ask whether
the classes differ dimension by dimension.

Run with ``python demos/01_features_and_statistics.py``.
"""

import tempfile
from pathlib import Path

import numpy as np

from respvariant import features as ft
from respvariant.frontend import preprocess
from respvariant.ingest import load_manifest
from respvariant.stats import compare_populations, disjoint_halves, hmp, mann_whitney_u
from respvariant.synth import SynthConfig, generate_corpus

# a small corpus: 40 subjects per class, one sound type
work = Path(tempfile.mkdtemp())
manifest = generate_corpus(work, SynthConfig(subjects_per_class=40, modalities=("vowel-a",), seed=3))
records, _ = load_manifest(manifest)
print(f"{len(records)} subjects written to {work}")

# decode, resample to 44.1 kHz, normalise, drop silence, then extract
rec = records[0]
clip = preprocess(next(iter(rec.sound_paths.values())))
fm = ft.extract_features(clip)
print(f"{rec.subject_id}: {clip.samples.size} samples at {clip.sample_rate} Hz -> feature matrix {fm.shape}")

# one average vector per subject; prefixes h/d/o encode the generated class
vectors = {}
for r in records:
    vectors[r.subject_id] = ft.average_vector(ft.extract_features(preprocess(next(iter(r.sound_paths.values())))))
groups = {tag: np.array([v for k, v in vectors.items() if k.startswith(tag)]) for tag in "hdo"}

# %%
# The rank test on its own, for one dimension. A single coefficient may
# or may not separate the classes; the summary below pools all of them.
x, y = groups["h"][:, 5], groups["o"][:, 5]
r = mann_whitney_u(x, y)
print(f"dimension 5, healthy vs omicron: U={r.u_statistic:.0f}, p={r.p_value:.3g} ({r.method})")

# %%
# Summarise all 192 p-values with their harmonic mean.  Two halves of the
# healthy pool should look alike; the variant groups should not.
i, j = disjoint_halves(len(groups["h"]), seed=0)
pairs = {
    "H vs H*": (groups["h"][i], groups["h"][j]),
    "H vs Delta": (groups["h"], groups["d"]),
    "H vs Omicron": (groups["h"], groups["o"]),
    "Delta vs Omicron": (groups["d"], groups["o"]),
}
for name, (a, b) in pairs.items():
    comp = compare_populations(a, b)
    flag = "significant" if comp.significant else "not significant"
    print(f"{name:18s} -log10 HMP = {comp.neg_log10_hmp:6.2f}  ({flag})")

# the harmonic mean sits between min and mean and is dominated by small p
print("HMP of 0.01 and 0.04:", hmp([0.01, 0.04]))
