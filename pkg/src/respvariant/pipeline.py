"""End-to-end stages: ingest, split, extract, stats, train, evaluate, report.

Every stage takes a validated :class:`RunConfig` and writes under the run
directory ``<output_dir>/run-<config hash>``. Stages recompute the cheap
upstream pieces (subject pool, splits) in memory, so they can be invoked
in any order once features exist, and they skip work whose outputs are
already complete.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

from . import evaluation as ev
from . import features as ft
from . import ingest
from . import stats
from .frontend import AudioDecodeError, TooShortError, preprocess
from .ingest import Category, FilterConfig, SubjectRecord
from .neural import BlstmModel, SegmentSet, TrainConfig, TrainingDiverged, checkpoint_complete, load_checkpoint, read_checkpoint_sidecar, save_checkpoint, train
from .synth import modality_list

log = logging.getLogger(__name__)

BINARY_TASKS: dict[str, tuple[frozenset[Category], frozenset[Category]]] = {
    "omi-del": (frozenset({Category.OMICRON}), frozenset({Category.DELTA})),
    "del-h": (frozenset({Category.DELTA}), frozenset({Category.HEALTHY})),
    "omi-h": (frozenset({Category.OMICRON}), frozenset({Category.HEALTHY})),
    "pos-h": (frozenset({Category.DELTA, Category.OMICRON}), frozenset({Category.HEALTHY})),
}
TASKS = tuple(BINARY_TASKS) + ("hierarchical",)

STATS_PAIRS = (
    ("H", "H*"),
    ("Del", "H"),
    ("Omi", "H"),
    ("Omi", "Del"),
    ("Pos", "H"),
)


class ConfigError(ValueError):
    exit_code = 1


class DataError(RuntimeError):
    exit_code = 2


class NumericError(RuntimeError):
    exit_code = 3


# -- configuration ----------------------------------------------------------------


@dataclass
class RunConfig:
    manifest: str
    cache_dir: str
    output_dir: str
    task: str = "hierarchical"
    modalities: tuple[str, ...] = tuple(s.value for s in ingest.SOUND_CATEGORIES)
    seeds: tuple[int, ...] = tuple(range(10))
    train: dict = field(default_factory=dict)
    filter: dict = field(default_factory=dict)
    variant_cutoff: str = ingest.DEFAULT_VARIANT_CUTOFF.isoformat()
    stats_subsample: int = stats.SUBSAMPLE_SIZE
    stats_seed: int = 0
    shuffle_labels: bool = False
    jobs: int = 1

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        missing = [k for k in ("manifest", "cache_dir", "output_dir") if k not in data]
        if missing:
            raise ConfigError(f"missing config keys: {missing}")
        cfg = cls(**dict(data))
        cfg._normalise()
        return cfg

    def _normalise(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        try:
            self.modalities = modality_list(self.modalities)
        except ValueError as exc:
            raise ConfigError(f"bad modality selection: {exc}") from None
        if not self.modalities:
            raise ConfigError("no modalities selected")
        if isinstance(self.seeds, int):
            self.seeds = (self.seeds,)
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        train_keys = {f.name for f in dataclasses.fields(TrainConfig)} - {"seed"}
        bad = sorted(set(self.train) - train_keys)
        if bad:
            raise ConfigError(f"unknown train keys: {bad}")
        try:
            TrainConfig(**self.train)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid train settings: {exc}") from None
        filter_keys = {f.name for f in dataclasses.fields(FilterConfig)} - {"categories"}
        bad = sorted(set(self.filter) - filter_keys)
        if bad:
            raise ConfigError(f"unknown filter keys: {bad}")
        try:
            dt.date.fromisoformat(str(self.variant_cutoff))
        except ValueError:
            raise ConfigError(f"variant_cutoff is not an ISO date: {self.variant_cutoff!r}") from None
        self.variant_cutoff = str(self.variant_cutoff)
        if self.stats_subsample < 2:
            raise ConfigError("stats_subsample must be at least 2")
        if self.jobs < 1:
            raise ConfigError("jobs must be positive")

    def validate_paths(self) -> None:
        if not Path(self.manifest).is_file():
            raise ConfigError(f"manifest not found: {self.manifest}")

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["modalities"] = list(self.modalities)
        d["seeds"] = list(self.seeds)
        return d

    @property
    def filter_config(self) -> FilterConfig:
        return FilterConfig(**self.filter)

    @property
    def cutoff(self) -> dt.date:
        return dt.date.fromisoformat(self.variant_cutoff)

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(seed=seed, **self.train)

    @property
    def tasks(self) -> tuple[str, ...]:
        return ("pos-h", "omi-del") if self.task == "hierarchical" else (self.task,)

    def config_hash(self) -> str:
        """Hash of everything that can change results.

        Locations (output, cache, manifest path) and parallelism are left
        out; the manifest enters through its content.
        """
        d = self.as_dict()
        for k in ("output_dir", "cache_dir", "manifest", "jobs"):
            d.pop(k)
        mpath = Path(self.manifest)
        d["manifest_sha256"] = hashlib.sha256(mpath.read_bytes()).hexdigest() if mpath.is_file() else None
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    @property
    def run_dir(self) -> Path:
        return Path(self.output_dir) / f"run-{self.config_hash()[:12]}"


def load_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    data: dict[str, Any] = {}
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError("config file must contain a mapping")
        data.update(loaded)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if "." in key:
            section, sub = key.split(".", 1)
            data.setdefault(section, {})
            if not isinstance(data[section], dict):
                raise ConfigError(f"{section} is not a section")
            data[section] = {**data[section], sub: value}
        else:
            data[key] = value
    cfg = RunConfig.from_mapping(data)
    return cfg


def prepare_run_dir(cfg: RunConfig) -> Path:
    run = cfg.run_dir
    run.mkdir(parents=True, exist_ok=True)
    ev.write_json(cfg.as_dict() | {"config_hash": cfg.config_hash()}, run / "config.json")
    return run


# -- subject pool and splits --------------------------------------------------------


def subject_pool(cfg: RunConfig) -> tuple[list[SubjectRecord], list[ingest.RowError], list[SubjectRecord]]:
    """Filtered, variant-labelled subjects, the manifest row errors, and the full record list."""
    cfg.validate_paths()
    try:
        records, errors = ingest.load_manifest(cfg.manifest)
    except ingest.ManifestError as exc:
        raise DataError(str(exc)) from exc
    kept = ingest.filter_subjects(records, cfg.filter_config)
    pool = []
    for r in kept:
        try:
            pool.extend(ingest.label_variants([r], cfg.cutoff))
        except ingest.VariantAssignmentError as exc:
            log.warning("dropping subject: %s", exc)
    if not pool:
        raise DataError("no subjects left after filtering")
    return pool, errors, records


def make_all_splits(cfg: RunConfig, pool: list[SubjectRecord]) -> dict[int, ingest.SplitAssignment]:
    return {s: ingest.make_splits(pool, s) for s in cfg.seeds}


def task_label(task: str, category: Category) -> int | None:
    pos, neg = BINARY_TASKS[task]
    if category in pos:
        return 1
    if category in neg:
        return 0
    return None


def cmd_ingest(cfg: RunConfig) -> dict:
    run = prepare_run_dir(cfg)
    pool, errors, records = subject_pool(cfg)
    with (run / "ingest_errors.csv").open("w") as fh:
        fh.write("row,message\n")
        for e in errors:
            fh.write(f"{e.row},\"{e.message}\"\n")
    ev.write_json(
        [
            {
                "subject_id": r.subject_id,
                "category": r.category.value,
                "severity": r.severity.value if r.severity else None,
                "age": r.age,
                "gender": r.gender,
            }
            for r in pool
        ],
        run / "subjects.json",
    )
    targets = {
        "positive": lambda r: r.is_positive,
        "delta": lambda r: r.category is Category.DELTA,
        "omicron": lambda r: r.category is Category.OMICRON,
    }
    for name, pred in targets.items():
        ingest.write_odds_ratios(ingest.odds_ratios(pool, pred), run / f"odds_ratios_{name}.csv")
    meta = ingest.metadata_tables(pool)
    meta["manifest_rows"] = len(records) + len(errors)
    meta["row_errors"] = len(errors)
    meta["retained"] = len(pool)
    ev.write_json(meta, run / "metadata.json")
    return meta


def cmd_split(cfg: RunConfig) -> dict[int, ingest.SplitAssignment]:
    run = prepare_run_dir(cfg)
    pool, _, _ = subject_pool(cfg)
    splits = make_all_splits(cfg, pool)
    ingest.write_splits(splits.values(), run / "splits.json")
    return splits


# -- feature extraction -----------------------------------------------------------------


def _extract_one(job: tuple[str, str, str, str]) -> tuple[str, str, str | None]:
    sid, mod, audio, target = job
    try:
        fm = ft.extract_features(preprocess(audio))
    except (AudioDecodeError, TooShortError, FileNotFoundError, ValueError) as exc:
        return sid, mod, f"{type(exc).__name__}: {exc}"
    ft.write_feature_cache(target, fm)
    return sid, mod, None


def cmd_extract(cfg: RunConfig) -> dict:
    run = prepare_run_dir(cfg)
    pool, _, _ = subject_pool(cfg)
    cache = Path(cfg.cache_dir)
    cache.mkdir(parents=True, exist_ok=True)
    jobs, skipped, missing = [], 0, []
    for r in pool:
        for mod in cfg.modalities:
            target = ft.cache_path(cache, r.subject_id, mod)
            if ft.is_valid_cache(target):
                skipped += 1
                continue
            audio = r.sound_paths.get(ingest.SoundCategory(mod))
            if audio is None:
                missing.append({"subject_id": r.subject_id, "modality": mod, "error": "no audio path"})
                continue
            jobs.append((r.subject_id, mod, str(audio), str(target)))

    if cfg.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(cfg.jobs) as pool_exec:
            results = list(pool_exec.map(_extract_one, jobs, chunksize=8))
    else:
        results = [_extract_one(j) for j in jobs]
    failed = missing + [{"subject_id": s, "modality": m, "error": e} for s, m, e in results if e is not None]
    written = sum(1 for *_, e in results if e is None)
    for f in failed:
        log.warning("extraction failed for %s/%s: %s", f["subject_id"], f["modality"], f["error"])

    index = {}
    for r in pool:
        for mod in cfg.modalities:
            p = ft.cache_path(cache, r.subject_id, mod)
            if ft.is_valid_cache(p):
                index[ft.cache_key(r.subject_id, mod)] = p.relative_to(cache).as_posix()
    ft.write_index(index, cache / "index.json")
    summary = {"written": written, "skipped": skipped, "failed": failed}
    ev.write_json(summary, run / "extract_summary.json")
    return summary


def load_features(cfg: RunConfig, subject_ids, modality: str) -> dict[str, np.ndarray]:
    out = {}
    for sid in subject_ids:
        p = ft.cache_path(cfg.cache_dir, sid, modality)
        if ft.is_valid_cache(p):
            out[sid] = ft.read_feature_cache(p)
    return out


# -- statistics ----------------------------------------------------------------------------


def _population_groups(pool: list[SubjectRecord], vectors: Mapping[str, np.ndarray], seed: int) -> dict[str, np.ndarray]:
    def stack(ids):
        ids = [i for i in ids if i in vectors]
        return np.array([vectors[i] for i in ids]).reshape(len(ids), ft.N_FEATURES)

    healthy = [r.subject_id for r in pool if r.category is Category.HEALTHY]
    healthy = [i for i in healthy if i in vectors]
    first, second = stats.disjoint_halves(len(healthy), seed)
    return {
        "H": stack(healthy),
        "H_half": stack([healthy[i] for i in first]),
        "H*": stack([healthy[i] for i in second]),
        "Del": stack([r.subject_id for r in pool if r.category is Category.DELTA]),
        "Omi": stack([r.subject_id for r in pool if r.category is Category.OMICRON]),
        "Pos": stack([r.subject_id for r in pool if r.is_positive]),
    }


def cmd_stats(cfg: RunConfig) -> dict:
    run = prepare_run_dir(cfg)
    pool, _, _ = subject_pool(cfg)
    summary: dict[str, dict] = {}
    for mod in cfg.modalities:
        feats = load_features(cfg, [r.subject_id for r in pool], mod)
        vectors = {sid: ft.average_vector(fm) for sid, fm in feats.items()}
        groups = _population_groups(pool, vectors, cfg.stats_seed)
        out_dir = run / "stats" / mod
        out_dir.mkdir(parents=True, exist_ok=True)
        summary[mod] = {}
        for a, b in STATS_PAIRS:
            # the control compares two disjoint halves of the healthy pool
            xa = groups["H_half"] if (a, b) == ("H", "H*") else groups[a]
            xb = groups[b]
            if len(xa) < 2 or len(xb) < 2:
                raise DataError(f"{mod}: too few subjects for {a} vs {b} ({len(xa)}, {len(xb)})")
            comp = stats.compare_populations(xa, xb, a, b, cfg.stats_subsample, cfg.stats_seed)
            name = f"{a}_vs_{b}".replace("*", "star")
            stats.write_comparison_csv(comp, out_dir / f"{name}.csv")
            summary[mod][f"{a} vs {b}"] = comp.summary()
    ev.write_json(summary, run / "stats_summary.json")
    return summary


# -- training --------------------------------------------------------------------------------


def checkpoint_path(cfg: RunConfig, task: str, modality: str, seed: int) -> Path:
    return cfg.run_dir / "models" / task / modality / f"seed{seed}.rvkm"


def _labelled(pool: list[SubjectRecord], task: str, ids) -> list[tuple[str, int]]:
    cats = {r.subject_id: r.category for r in pool}
    out = []
    for sid in sorted(ids):
        y = task_label(task, cats[sid])
        if y is not None:
            out.append((sid, y))
    return out


def _shuffle(pairs: list[tuple[str, int]], seed) -> list[tuple[str, int]]:
    labels = np.array([y for _, y in pairs])
    labels = labels[np.random.default_rng(seed).permutation(len(labels))]
    return [(sid, int(y)) for (sid, _), y in zip(pairs, labels)]


def train_one(cfg: RunConfig, pool, split: ingest.SplitAssignment, task: str, modality: str, seed: int) -> dict:
    feats = load_features(cfg, split.train | split.val, modality)
    train_pairs = [(s, y) for s, y in _labelled(pool, task, split.train) if s in feats]
    val_pairs = [(s, y) for s, y in _labelled(pool, task, split.val) if s in feats]
    if cfg.shuffle_labels:
        train_pairs = _shuffle(train_pairs, [seed, 101])
        val_pairs = _shuffle(val_pairs, [seed, 102])
    if len({y for _, y in train_pairs}) < 2:
        raise DataError(f"{task}/{modality}: training split lacks one class")
    if not val_pairs:
        raise DataError(f"{task}/{modality}: empty validation split")

    tc = cfg.train_config(seed)
    train_set = SegmentSet.from_files([feats[s] for s, _ in train_pairs], [y for _, y in train_pairs], [s for s, _ in train_pairs])
    val_files = [(feats[s], y) for s, y in val_pairs]
    model = BlstmModel.init(ft.N_FEATURES, tc.hidden_size, tc.hidden_size, tc.ff_size, seed=seed, dtype=np.dtype(tc.dtype))
    path = checkpoint_path(cfg, task, modality, seed)
    try:
        best, history = train(model, train_set, val_files, tc)
    except TrainingDiverged as exc:
        save_checkpoint(exc.model, path.with_name(path.name + ".diverged"), tc, exc.history)
        raise NumericError(f"{task}/{modality}/seed {seed}: {exc}") from exc
    save_checkpoint(best, path, tc, history)
    return {"history": history}


def _best_val_auc(history: list[dict]) -> float | None:
    aucs = [h["val_auc"] for h in history if "val_auc" in h]
    return max(aucs) if aucs else None


def cmd_train(cfg: RunConfig) -> dict:
    run = prepare_run_dir(cfg)
    pool, _, _ = subject_pool(cfg)
    splits = make_all_splits(cfg, pool)
    summary: dict[str, dict] = {}
    for task in cfg.tasks:
        summary[task] = {}
        for mod in cfg.modalities:
            summary[task][mod] = {}
            for seed in cfg.seeds:
                path = checkpoint_path(cfg, task, mod, seed)
                if not checkpoint_complete(path):
                    log.info("training %s / %s / seed %d", task, mod, seed)
                    train_one(cfg, pool, splits[seed], task, mod, seed)
                history = read_checkpoint_sidecar(path)["history"]
                summary[task][mod][str(seed)] = {"best_val_auc": _best_val_auc(history), "epochs": len(history)}
    ev.write_json(summary, run / "train_summary.json")
    return summary


# -- evaluation ---------------------------------------------------------------------------------


def _score_subjects(model: BlstmModel, feats: Mapping[str, np.ndarray], ids, modality: str) -> dict[str, ev.FileScore]:
    return {sid: ev.score_file(model, feats[sid], sid, modality) for sid in sorted(ids) if sid in feats}


def cmd_evaluate(cfg: RunConfig) -> dict:
    run = prepare_run_dir(cfg)
    pool, _, _ = subject_pool(cfg)
    splits = make_all_splits(cfg, pool)
    cats = {r.subject_id: r.category for r in pool}
    test_ids = splits[cfg.seeds[0]].test

    # test_scores[task][modality][subject] -> seed-averaged FileScore
    test_scores: dict[str, dict[str, dict[str, ev.FileScore]]] = {}
    # val_scores[task][seed][modality][subject] -> probability under that seed's model
    val_scores: dict[str, dict[int, dict[str, dict[str, float]]]] = {}
    seed_aucs: dict[str, dict[str, list]] = {}
    for task in cfg.tasks:
        test_scores[task], val_scores[task], seed_aucs[task] = {}, {s: {} for s in cfg.seeds}, {}
        for mod in cfg.modalities:
            needed = set(test_ids)
            for s in cfg.seeds:
                needed |= splits[s].val
            feats = load_features(cfg, needed, mod)
            per_seed = []
            for s in cfg.seeds:
                path = checkpoint_path(cfg, task, mod, s)
                if not checkpoint_complete(path):
                    raise DataError(f"missing checkpoint {path}")
                model = load_checkpoint(path)
                per_seed.append(_score_subjects(model, feats, test_ids, mod))
                val_scores[task][s][mod] = {k: v.probability for k, v in _score_subjects(model, feats, splits[s].val, mod).items()}
            test_scores[task][mod] = {
                sid: ev.FileScore(sid, mod, float(np.mean([p[sid].probability for p in per_seed])), per_seed[0][sid].n_segments)
                for sid in per_seed[0]
            }
            seed_aucs[task][mod] = []
            for p in per_seed:
                pairs = [(p[sid].probability, task_label(task, cats[sid])) for sid in p if task_label(task, cats[sid]) is not None]
                seed_aucs[task][mod].append(_auc_or_none([a for a, _ in pairs], [b for _, b in pairs]))

    report: dict[str, Any] = {"config_hash": cfg.config_hash(), "tasks": {}}
    fused_test: dict[str, dict[str, float]] = {}
    for task in cfg.tasks:
        rows = []
        task_rep: dict[str, Any] = {"modalities": {}, "seed_test_auc": seed_aucs[task]}
        for mod in cfg.modalities:
            sc = test_scores[task][mod]
            ids = [sid for sid in sorted(sc) if task_label(task, cats[sid]) is not None]
            rep = _report_or_none([sc[i].probability for i in ids], [task_label(task, cats[i]) for i in ids], [sc[i] for i in ids])
            task_rep["modalities"][mod] = rep.as_dict() if rep else None
            for sid in sorted(sc):
                y = task_label(task, cats[sid])
                rows.append({"subject_id": sid, "category": cats[sid].value, "modality": mod, "probability": sc[sid].probability, "n_segments": sc[sid].n_segments, "label": "" if y is None else y})
        fused = ev.fuse_scores(fs for mod in cfg.modalities for fs in test_scores[task][mod].values())
        fused_test[task] = fused
        ids = [sid for sid in fused if task_label(task, cats[sid]) is not None]
        rep = _report_or_none([fused[i] for i in ids], [task_label(task, cats[i]) for i in ids])
        task_rep["fusion"] = rep.as_dict() if rep else None
        for sid in fused:
            y = task_label(task, cats[sid])
            rows.append({"subject_id": sid, "category": cats[sid].value, "modality": "fusion", "probability": fused[sid], "n_segments": sum(test_scores[task][m][sid].n_segments for m in cfg.modalities if sid in test_scores[task][m]), "label": "" if y is None else y})
        ev.write_scores_csv(rows, run / f"scores_{task}.csv")
        report["tasks"][task] = task_rep

    if cfg.task == "hierarchical":
        report["hierarchical"] = _hierarchical(cfg, splits, cats, val_scores, fused_test, test_ids)
    ev.write_json(report, run / "report.json")
    return report


def _auc_or_none(scores, labels):
    if len(set(labels)) < 2:
        return None
    return ev.roc_auc(scores, labels).auc


def _report_or_none(scores, labels, files=()):
    if len(set(labels)) < 2:
        return None
    return ev.roc_auc(scores, labels, files)


def _stage_threshold(task: str, fused_val: Mapping[str, float], cats) -> float | None:
    ids = [sid for sid in sorted(fused_val) if task_label(task, cats[sid]) is not None]
    labels = [task_label(task, cats[i]) for i in ids]
    if len(set(labels)) < 2:
        return None
    return ev.youden_threshold([fused_val[i] for i in ids], labels)


def _hierarchical(cfg, splits, cats, val_scores, fused_test, test_ids) -> dict:
    thresholds: dict[str, list] = {"pos-h": [], "omi-del": []}
    for task in ("pos-h", "omi-del"):
        for s in cfg.seeds:
            per_mod = val_scores[task][s]
            fused_val = ev.fuse_scores(ev.FileScore(sid, m, p, 1) for m, d in per_mod.items() for sid, p in d.items())
            thresholds[task].append(_stage_threshold(task, fused_val, cats))
    theta = {}
    for task, vals in thresholds.items():
        vals = [v for v in vals if v is not None]
        theta[task] = float(np.median(vals)) if vals else 0.5
    preds, truths, subjects = [], [], []
    for sid in sorted(test_ids):
        if sid not in fused_test["pos-h"] or sid not in fused_test["omi-del"]:
            continue
        preds.append(ev.hierarchical_classify(fused_test["pos-h"][sid], fused_test["omi-del"][sid], theta["pos-h"], theta["omi-del"]))
        truths.append(cats[sid])
        subjects.append(sid)
    cm = ev.confusion_3class(preds, truths)
    return {
        "thresholds": {"pos_vs_h": theta["pos-h"], "omi_vs_del": theta["omi-del"]},
        "per_seed_thresholds": thresholds,
        "confusion": cm.as_dict(),
        "predictions": {sid: p.value for sid, p in zip(subjects, preds)},
    }


# -- reporting --------------------------------------------------------------------------------------


def cmd_report(cfg: RunConfig) -> Path:
    """Markdown summary and SVG figures from the stage outputs present in the run directory."""
    from . import plots

    run = prepare_run_dir(cfg)
    lines = [f"# Run {cfg.config_hash()[:12]}", ""]
    report_path = run / "report.json"
    if report_path.is_file():
        report = json.loads(report_path.read_text())
        mods = list(cfg.modalities)
        lines += ["## Test AUC (%)", "", "| task | " + " | ".join(mods) + " | fusion (sens. at 95% spec.) |", "|" + "---|" * (len(mods) + 2)]
        for task, rep in report["tasks"].items():
            cells = [f"{100 * rep['modalities'][m]['auc']:.1f}" if rep["modalities"].get(m) else "-" for m in mods]
            fus = rep.get("fusion")
            fcell = f"{100 * fus['auc']:.1f} ({100 * fus['sensitivity_at_95_specificity']:.1f})" if fus else "-"
            lines.append(f"| {task} | " + " | ".join(cells) + f" | {fcell} |")
        lines.append("")
        if "hierarchical" in report:
            h = report["hierarchical"]
            cm = h["confusion"]
            lines += ["## Three-class confusion (rows: true, columns: predicted)", "", "| | " + " | ".join(cm["labels"]) + " |", "|---|---|---|---|"]
            for lab, row in zip(cm["labels"], cm["counts"]):
                lines.append(f"| {lab} | " + " | ".join(str(c) for c in row) + " |")
            lines += ["", f"Thresholds: {h['thresholds']}", f"Diagonally dominant: {cm['diagonally_dominant']}", ""]
        plots.roc_svg(report, run / "roc.svg")
    stats_path = run / "stats_summary.json"
    if stats_path.is_file():
        summary = json.loads(stats_path.read_text())
        lines += ["## -log10(HMP) per population pair", ""]
        pairs = [f"{a} vs {b}" for a, b in STATS_PAIRS]
        lines += ["| modality | " + " | ".join(pairs) + " |", "|" + "---|" * (len(pairs) + 1)]
        for mod, d in summary.items():
            lines.append(f"| {mod} | " + " | ".join(f"{d[p]['neg_log10_hmp']:.2f}" for p in pairs) + " |")
        lines.append("")
        plots.significance_svg(summary, run / "significance.svg")
    train_path = run / "train_summary.json"
    if train_path.is_file():
        plots.val_auc_boxplot(json.loads(train_path.read_text()), run / "val_auc.svg")
    out = run / "summary.md"
    out.write_text("\n".join(lines) + "\n")
    return out
