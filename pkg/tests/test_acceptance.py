"""Acceptance criteria, one pass/fail line each (printed in the terminal summary).

Criterion 7 and 9 share one generated corpus of 200 subjects per class and
run the whole CLI pipeline on it; the rest are self-contained.
"""

import itertools
import json
import os
import statistics
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from respvariant import cli
from respvariant import features as ft
from respvariant.evaluation import roc_auc
from respvariant.frontend import preprocess
from respvariant.ingest import Category, filter_subjects, label_variants, load_manifest
from respvariant.neural import BlstmModel, segment_file
from respvariant.stats import hmp, mann_whitney_u
from respvariant.synth import SynthConfig, generate_corpus

MODS = ("counting-fast", "breathing-deep")
MAIN_SEEDS = "0,1,2"
CONTROL_SEEDS = ",".join(str(s) for s in range(10))
# desk-scale model: the full 128-cell width is available but too slow for CI
TRAIN = {"hidden_size": 16, "ff_size": 16, "learning_rate": 0.003, "max_epochs": 12, "patience": 4, "batch_size": 64}


def verdict(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# -- oracles ----------------------------------------------------------------------


def enumeration_oracle(x, y):
    n, m = len(x), len(y)
    pooled = sorted(list(x) + list(y))
    rank = {v: i + 1 for i, v in enumerate(pooled)}
    u_obs = sum(rank[v] for v in x) - n * (n + 1) // 2
    us = [sum(c) - n * (n + 1) // 2 for c in itertools.combinations(range(1, n + m + 1), n)]
    lower = sum(u <= u_obs for u in us)
    upper = sum(u >= u_obs for u in us)
    return u_obs, min(1.0, 2 * min(lower, upper) / len(us))


def pair_count_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    return sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg) / (len(pos) * len(neg))


# -- self-contained criteria --------------------------------------------------------


def test_criterion_1_mann_whitney_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    mismatches = 0
    cases = 0
    while cases < 1200:
        n, m = int(rng.integers(1, 8)), int(rng.integers(1, 8))
        values = rng.permutation(n + m) + rng.uniform(0, 0.9)
        x, y = values[:n], values[n:]
        r = mann_whitney_u(x, y)
        u, p = enumeration_oracle(x, y)
        mismatches += (r.u_statistic != u) or (r.p_value != p) or (r.method != "exact")
        cases += 1
    worst = 0.0
    for _ in range(200):
        x, y = rng.normal(size=8), rng.normal(size=8)
        _, exact = enumeration_oracle(x, y)
        worst = max(worst, abs(mann_whitney_u(x, y, exact=False).p_value - exact))
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and worst <= 0.03 and elapsed < 60
    verdict(1, ok, f"{cases} tie-free cases n,m<=7, {mismatches} mismatches; n=m=8 worst |approx-exact|={worst:.4f} (<=0.03); {elapsed:.1f}s")


def test_criterion_2_hmp():
    two = hmp([0.01, 0.04])
    rng = np.random.default_rng(7)
    worst = 0.0
    for p0 in rng.uniform(1e-8, 1.0, 100):
        worst = max(worst, abs(hmp([p0] * int(rng.integers(1, 300))) - p0) / p0)
    ok = abs(two - 0.016) <= 1e-12 and worst <= 1e-12
    verdict(2, ok, f"HMP(0.01,0.04)={two!r}; equal-p identity worst relative error {worst:.1e} over 100 draws")


def test_criterion_3_auc_dual_definition():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(1000):
        k = int(rng.integers(2, 80))
        scores = rng.integers(0, int(rng.integers(2, 30)), k) / 7.0  # small alphabets force ties
        labels = rng.integers(0, 2, k)
        labels[:2] = [0, 1]
        worst = max(worst, abs(roc_auc(scores, labels).auc - pair_count_auc(scores, labels)))
    example = roc_auc([0.8, 0.4, 0.6, 0.2], [1, 1, 0, 0]).auc
    ok = worst <= 1e-12 and example == 0.75
    verdict(3, ok, f"1000 tied score sets, worst |trapezoid-pairs|={worst:.1e}; AUC({{.8,.4}} vs {{.6,.2}})={example!r}")


def test_criterion_4_gradient_check():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    shapes = BlstmModel.shapes(4, 2, 2, 3)
    model = BlstmModel({k: rng.uniform(-0.6, 0.6, s) for k, s in shapes.items()}, 4, 2, 2, 3)
    x = rng.normal(size=(6, 4, 3))
    y = np.array([1, 0, 0, 1, 1, 0])
    _, grads = model.loss_and_grads(x, y)
    h = 1e-5
    worst, worst_name = 0.0, ""
    for name, p in model.params.items():
        for i in np.ndindex(p.shape):
            old = p[i]
            p[i] = old + h
            lp, _ = model.loss_and_grads(x, y)
            p[i] = old - h
            lm, _ = model.loss_and_grads(x, y)
            p[i] = old
            num = (lp - lm) / (2 * h)
            a = grads[name][i]
            rel = abs(a - num) / max(abs(a), abs(num), 1e-6)
            if rel > worst:
                worst, worst_name = rel, f"{name}{list(i)}"
    elapsed = time.perf_counter() - t0
    n_params = sum(p.size for p in model.params.values())
    verdict(4, worst < 1e-4 and elapsed < 60, f"{n_params} parameters, worst relative error {worst:.2e} at {worst_name}; {elapsed:.1f}s")


def test_criterion_5_segmentation():
    counts = {n: segment_file(np.zeros((192, n))).shape for n in (101, 51, 30)}
    ok = counts[101] == (6, 192, 51) and counts[51] == (1, 192, 51) and counts[30] == (1, 192, 51)
    verdict(5, ok, f"segment array shapes {counts}")


# -- end-to-end -----------------------------------------------------------------------


def _cli(stage, cfg_args, *extra):
    code = cli.main([stage, *cfg_args, *extra])
    if code != 0:
        raise RuntimeError(f"{stage} exited with {code}")


def _run_pipeline(manifest, cache, out, *extra):
    args = ["--manifest", str(manifest), "--cache-dir", str(cache), "--output-dir", str(out), "--modalities", ",".join(MODS)]
    args += ["--set", "filter.require_all_sounds=false"]
    args += [item for k, v in TRAIN.items() for item in ("--set", f"train.{k}={v}")]
    args += list(extra)
    for stage in ("ingest", "split", "extract", "stats", "train", "evaluate", "report"):
        _cli(stage, args)
    (run,) = Path(out).glob("run-*")
    return run


@pytest.fixture(scope="module")
def e2e(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    t0 = time.perf_counter()
    manifest = generate_corpus(root / "corpus", SynthConfig(subjects_per_class=200, modalities=MODS, seed=0))
    run1 = _run_pipeline(manifest, root / "cache1", root / "out1", "--task", "hierarchical", "--seeds", MAIN_SEEDS)
    main_seconds = time.perf_counter() - t0
    control = _run_pipeline(manifest, root / "cache1", root / "control", "--task", "pos-h", "--seeds", CONTROL_SEEDS, "--set", "shuffle_labels=true")
    pipeline_seconds = time.perf_counter() - t0
    return {"root": root, "manifest": manifest, "run1": run1, "control": control, "main_seconds": main_seconds, "seconds": pipeline_seconds}


def test_criterion_6_feature_shape_and_determinism(e2e):
    cache = e2e["root"] / "cache1"
    files = sorted(cache.glob("*/*.rvkf"))
    shapes_ok = all(ft.read_feature_cache(p).shape[0] == 192 for p in files)
    records, _ = load_manifest(e2e["manifest"])
    by_id = {r.subject_id: r for r in records}
    repeat_ok = roundtrip_ok = True
    sample = files[:: max(1, len(files) // 25)]
    for p in sample:
        rec = by_id[p.parent.name]
        audio = next(v for k, v in rec.sound_paths.items() if k.value == p.stem)
        a = ft.extract_features(preprocess(audio))
        b = ft.extract_features(preprocess(audio))
        repeat_ok &= a.tobytes() == b.tobytes() == ft.read_feature_cache(p).tobytes()
        tmp = e2e["root"] / "roundtrip.rvkf"
        ft.write_feature_cache(tmp, a)
        roundtrip_ok &= ft.read_feature_cache(tmp).tobytes() == a.tobytes()
    ok = bool(files) and shapes_ok and repeat_ok and roundtrip_ok
    verdict(6, ok, f"{len(files)} cached matrices all 192 rows={shapes_ok}; {len(sample)} re-extractions bit-identical={repeat_ok}; cache round-trip bit-exact={roundtrip_ok}")


def test_criterion_7_synthetic_end_to_end(e2e):
    run1, control = e2e["run1"], e2e["control"]
    stats_summary = json.loads((run1 / "stats_summary.json").read_text())
    null_ok = all(stats_summary[m]["H vs H*"]["neg_log10_hmp"] < 3 for m in MODS)
    separated = [(m, p) for m in MODS for p in stats_summary[m] if p != "H vs H*"]
    sep_ok = all(stats_summary[m][p]["neg_log10_hmp"] > 3 for m, p in separated)
    null_vals = {m: round(stats_summary[m]["H vs H*"]["neg_log10_hmp"], 2) for m in MODS}
    sep_min = min(stats_summary[m][p]["neg_log10_hmp"] for m, p in separated)

    report = json.loads((run1 / "report.json").read_text())
    aucs = {f"{t}/{m}": report["tasks"][t]["modalities"][m]["auc"] for t in ("pos-h", "omi-del") for m in MODS}
    auc_ok = all(a >= 0.90 for a in aucs.values())

    ctrl = json.loads((control / "report.json").read_text())["tasks"]["pos-h"]["seed_test_auc"]
    per_model = [a for m in MODS for a in ctrl[m]]
    ctrl_median = statistics.median(per_model)
    ctrl_ok = 0.4 <= ctrl_median <= 0.6

    cm = report["hierarchical"]["confusion"]
    cm_ok = cm["diagonally_dominant"]

    runtime_ok = e2e["seconds"] < 15 * 60
    ok = null_ok and sep_ok and auc_ok and ctrl_ok and cm_ok and runtime_ok
    detail = (
        f"(a) H vs H* -log10 HMP {null_vals} <3={null_ok}, separated pairs min {sep_min:.1f} >3={sep_ok}; "
        f"(b) min test AUC {min(aucs.values()):.3f} >=0.90={auc_ok}, shuffled-label control median of {len(per_model)} seed-model AUCs {ctrl_median:.3f} in [0.4,0.6]={ctrl_ok}; "
        f"(c) confusion {cm['counts']} diagonally dominant={cm_ok}; "
        f"pipeline time {e2e['seconds'] / 60:.1f} min (<15={runtime_ok})"
    )
    verdict(7, ok, detail)


@pytest.mark.skipif(not os.environ.get("RESPVARIANT_COSWARA_MANIFEST"), reason="needs the external Coswara corpus (set RESPVARIANT_COSWARA_MANIFEST)")
def test_criterion_8_full_data_reproduction():
    records, _ = load_manifest(os.environ["RESPVARIANT_COSWARA_MANIFEST"])
    pool = label_variants(filter_subjects(records))
    counts = {c: sum(r.category is c for r in pool) for c in (Category.HEALTHY, Category.DELTA, Category.OMICRON)}
    counts_ok = [counts[Category.HEALTHY], counts[Category.DELTA], counts[Category.OMICRON]] == [1169, 346, 214]
    detail = f"healthy/delta/omicron = {counts[Category.HEALTHY]}/{counts[Category.DELTA]}/{counts[Category.OMICRON]} (want 1169/346/214)"
    auc_ok = True
    report_path = os.environ.get("RESPVARIANT_FULL_REPORT")
    if report_path:
        report = json.loads(Path(report_path).read_text())
        fused = 100 * report["tasks"]["omi-del"]["fusion"]["auc"]
        auc_ok = abs(fused - 89.0) <= 7.0
        detail += f"; fusion Omi-vs-Del AUC {fused:.1f} (89.0 +- 7)"
    else:
        detail += "; fusion AUC not checked (set RESPVARIANT_FULL_REPORT to a full-run report.json)"
    verdict(8, counts_ok and auc_ok, detail)


def test_criterion_8_recorded_when_skipped():
    if os.environ.get("RESPVARIANT_COSWARA_MANIFEST"):
        pytest.skip("full-data check runs instead")
    ACCEPTANCE_LINES.append("criterion 8: SKIP | external Coswara corpus not available; documented in README")


def test_criterion_9_determinism(e2e):
    root = e2e["root"]
    run2 = _run_pipeline(e2e["manifest"], root / "cache2", root / "out2", "--task", "hierarchical", "--seeds", MAIN_SEEDS)
    run1 = e2e["run1"]
    # config.json records the (different) output and cache locations; run.log has timestamps
    skip = {"config.json", "run.log"}
    files1 = sorted(p.relative_to(run1) for p in run1.rglob("*") if p.is_file() and p.name not in skip)
    files2 = sorted(p.relative_to(run2) for p in run2.rglob("*") if p.is_file() and p.name not in skip)
    differing = [str(p) for p in files1 if p not in files2 or (run1 / p).read_bytes() != (run2 / p).read_bytes()]
    ok = run1.name == run2.name and files1 == files2 and not differing
    verdict(9, ok, f"run dirs {run1.name} vs {run2.name}; {len(files1)} output files compared, {len(differing)} differ {differing[:5]}")
