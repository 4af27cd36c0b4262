"""Stage commands and the CLI, on small generated corpora."""

import json
import shutil

import numpy as np
import pytest
import yaml

from respvariant import cli, pipeline
from respvariant import features as ft
from respvariant.ingest import load_manifest
from respvariant.neural import BlstmModel, save_checkpoint
from respvariant.synth import SynthConfig, generate_corpus

MODS = ("counting-fast", "vowel-a")
# the small corpora carry only some of the nine sounds
PARTIAL = {"require_all_sounds": False}
TINY_TRAIN = {"hidden_size": 2, "ff_size": 2, "max_epochs": 1, "patience": 1, "learning_rate": 0.01, "batch_size": 32}


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    return generate_corpus(root, SynthConfig(subjects_per_class=21, modalities=MODS, seed=5))


@pytest.fixture(scope="module")
def extracted(corpus, tmp_path_factory):
    cache = tmp_path_factory.mktemp("cache")
    cfg = pipeline.load_config(None, {"manifest": str(corpus), "cache_dir": str(cache), "output_dir": str(cache.parent / "unused"), "modalities": list(MODS), "filter": PARTIAL})
    pipeline.cmd_extract(cfg)
    return cache


def make_cfg(corpus, cache, out, **extra):
    data = {"manifest": str(corpus), "cache_dir": str(cache), "output_dir": str(out), "modalities": list(MODS), "train": dict(TINY_TRAIN), "filter": dict(PARTIAL)}
    data.update(extra)
    return pipeline.load_config(None, data)


def write_yaml(path, data):
    path.write_text(yaml.safe_dump(data))
    return path


class TestConfig:
    def test_unknown_key(self, corpus, tmp_path):
        with pytest.raises(pipeline.ConfigError, match="unknown config keys"):
            make_cfg(corpus, tmp_path, tmp_path, sedes=[1])

    def test_unknown_train_key(self, corpus, tmp_path):
        with pytest.raises(pipeline.ConfigError, match="unknown train keys"):
            make_cfg(corpus, tmp_path, tmp_path, train={"learning_rat": 0.1})

    def test_invalid_values(self, corpus, tmp_path):
        for bad in ({"task": "omi-x"}, {"seeds": []}, {"modalities": ["humming"]}, {"train": {"max_epochs": 0}}, {"variant_cutoff": "soon"}):
            with pytest.raises(pipeline.ConfigError):
                make_cfg(corpus, tmp_path, tmp_path, **bad)

    def test_yaml_with_dotted_override(self, corpus, tmp_path):
        p = write_yaml(tmp_path / "c.yaml", {"manifest": str(corpus), "cache_dir": "c", "output_dir": "o", "train": {"max_epochs": 3, "patience": 2}})
        cfg = pipeline.load_config(p, {"train.max_epochs": 7, "seeds": [1, 2]})
        assert cfg.train == {"max_epochs": 7, "patience": 2}
        assert cfg.seeds == (1, 2)
        assert cfg.modalities == tuple(s for s in cfg.modalities)
        assert len(cfg.modalities) == 9

    def test_hash_ignores_locations(self, corpus, tmp_path):
        a = make_cfg(corpus, tmp_path / "c1", tmp_path / "o1")
        b = make_cfg(corpus, tmp_path / "c2", tmp_path / "o2", jobs=4)
        c = make_cfg(corpus, tmp_path / "c1", tmp_path / "o1", seeds=[0, 1])
        assert a.config_hash() == b.config_hash()
        assert a.config_hash() != c.config_hash()
        assert a.run_dir.name == f"run-{a.config_hash()[:12]}"

    def test_hash_tracks_manifest_content(self, corpus, tmp_path):
        copy = tmp_path / "m.csv"
        shutil.copy(corpus, copy)
        before = make_cfg(copy, tmp_path, tmp_path).config_hash()
        copy.write_text(copy.read_text() + "\n")
        assert make_cfg(copy, tmp_path, tmp_path).config_hash() != before


class TestCliExitCodes:
    def test_unknown_config_key(self, corpus, tmp_path):
        p = write_yaml(tmp_path / "c.yaml", {"manifest": str(corpus), "cache_dir": "c", "output_dir": str(tmp_path), "bogus": 1})
        assert cli.main(["ingest", "--config", str(p)]) == 1

    def test_missing_manifest(self, tmp_path):
        assert cli.main(["ingest", "--manifest", str(tmp_path / "none.csv"), "--cache-dir", "c", "--output-dir", str(tmp_path)]) == 1

    def test_bad_task_choice(self, capsys):
        assert cli.main(["train", "--task", "nope"]) == 1

    def test_no_subcommand(self, capsys):
        assert cli.main([]) == 1

    def test_bad_set_syntax(self, corpus, tmp_path):
        assert cli.main(["ingest", "--manifest", str(corpus), "--cache-dir", "c", "--output-dir", str(tmp_path), "--set", "novalue"]) == 1

    def test_manifest_missing_columns_is_data_error(self, tmp_path):
        m = tmp_path / "m.csv"
        m.write_text("subject_id,category\na,healthy\n")
        assert cli.main(["ingest", "--manifest", str(m), "--cache-dir", "c", "--output-dir", str(tmp_path)]) == 2

    def test_missing_checkpoint_is_data_error(self, corpus, extracted, tmp_path):
        args = ["evaluate", "--manifest", str(corpus), "--cache-dir", str(extracted), "--output-dir", str(tmp_path), "--task", "del-h", "--modalities", "vowel-a", "--seeds", "0", "--set", "filter.require_all_sounds=false"]
        assert cli.main(args) == 2

    def test_divergence_is_numeric_failure(self, corpus, extracted, tmp_path):
        cache = tmp_path / "cache"
        shutil.copytree(extracted, cache)
        # poison every healthy training file so the first batch produces NaN
        for p in cache.glob("h*/vowel-a.rvkf"):
            fm = ft.read_feature_cache(p)
            fm[0, :] = np.nan
            ft.write_feature_cache(p, fm)
        args = ["train", "--manifest", str(corpus), "--cache-dir", str(cache), "--output-dir", str(tmp_path / "out"), "--task", "del-h", "--modalities", "vowel-a", "--seeds", "0", "--set", "filter.require_all_sounds=false"]
        args += [f"--set=train.{k}={v}" for k, v in TINY_TRAIN.items()]
        assert cli.main(args) == 3
        assert list((tmp_path / "out").glob("run-*/models/del-h/vowel-a/seed0.rvkm.diverged"))

    def test_synth_subcommand(self, tmp_path, capsys):
        assert cli.main(["synth", "--out", str(tmp_path / "s"), "--subjects-per-class", "1", "--modalities", "vowel-a"]) == 0
        records, errors = load_manifest(tmp_path / "s" / "manifest.csv")
        assert len(records) == 3 + SynthConfig.n_excluded and not errors

    def test_synth_bad_modality(self, tmp_path, capsys):
        assert cli.main(["synth", "--out", str(tmp_path), "--modalities", "humming"]) == 1

    def test_success_writes_log(self, corpus, tmp_path, capsys):
        assert cli.main(["ingest", "--manifest", str(corpus), "--cache-dir", "c", "--output-dir", str(tmp_path), "--set", "filter.require_all_sounds=false"]) == 0
        (run,) = tmp_path.glob("run-*")
        assert (run / "run.log").is_file()
        assert (run / "config.json").is_file()


class TestIngestAndSplit:
    def test_ingest_outputs(self, corpus, tmp_path):
        cfg = make_cfg(corpus, tmp_path / "c", tmp_path)
        meta = pipeline.cmd_ingest(cfg)
        assert meta["retained"] == 63
        assert meta["manifest_rows"] == 63 + SynthConfig.n_excluded
        assert meta["subjects"] == {"delta": 21, "healthy": 21, "omicron": 21}
        run = cfg.run_dir
        for name in ("subjects.json", "ingest_errors.csv", "metadata.json", "odds_ratios_positive.csv", "odds_ratios_delta.csv", "odds_ratios_omicron.csv"):
            assert (run / name).is_file()
        assert (run / "odds_ratios_delta.csv").read_text().startswith("symptom,a,b,c,d,odds_ratio\n")

    def test_split_test_set_shared(self, corpus, tmp_path):
        cfg = make_cfg(corpus, tmp_path / "c", tmp_path, seeds=[0, 1, 2])
        splits = pipeline.cmd_split(cfg)
        assert len({s.test for s in splits.values()}) == 1
        payload = json.loads((cfg.run_dir / "splits.json").read_text())
        assert sorted(payload) == ["0", "1", "2"]


class TestExtract:
    @pytest.fixture(scope="class")
    @classmethod
    def nine_modality_corpus(cls, tmp_path_factory):
        return generate_corpus(tmp_path_factory.mktemp("nine"), SynthConfig(subjects_per_class=1, n_excluded=0, seed=2))

    def test_counts_and_resume(self, nine_modality_corpus, tmp_path):
        cfg = pipeline.load_config(None, {"manifest": str(nine_modality_corpus), "cache_dir": str(tmp_path / "c"), "output_dir": str(tmp_path / "o"), "modalities": "all"})
        first = pipeline.cmd_extract(cfg)
        assert first["written"] == 27 and not first["failed"]
        assert len(list((tmp_path / "c").glob("*/*.rvkf"))) == 27
        assert len(ft.read_index(tmp_path / "c" / "index.json")) == 27
        second = pipeline.cmd_extract(cfg)
        assert second["written"] == 0 and second["skipped"] == 27

    def test_corrupt_wav_isolated(self, nine_modality_corpus, tmp_path):
        work = tmp_path / "corpus"
        shutil.copytree(nine_modality_corpus.parent, work)
        bad = work / "audio" / "d0000" / "cough-heavy.wav"
        bad.write_bytes(b"RIFF")
        cfg = pipeline.load_config(None, {"manifest": str(work / "manifest.csv"), "cache_dir": str(tmp_path / "c"), "output_dir": str(tmp_path / "o"), "modalities": "all"})
        summary = pipeline.cmd_extract(cfg)
        assert summary["written"] == 26
        assert [(f["subject_id"], f["modality"]) for f in summary["failed"]] == [("d0000", "cough-heavy")]
        assert (tmp_path / "c" / "d0000" / "vowel-a.rvkf").is_file()

    def test_parallel_matches_serial(self, nine_modality_corpus, tmp_path):
        base = {"manifest": str(nine_modality_corpus), "output_dir": str(tmp_path / "o"), "modalities": ["vowel-a", "cough-heavy"]}
        pipeline.cmd_extract(pipeline.load_config(None, base | {"cache_dir": str(tmp_path / "s")}))
        pipeline.cmd_extract(pipeline.load_config(None, base | {"cache_dir": str(tmp_path / "p"), "jobs": 2}))
        for p in (tmp_path / "s").glob("*/*.rvkf"):
            assert p.read_bytes() == (tmp_path / "p" / p.relative_to(tmp_path / "s")).read_bytes()


class TestTrainEvaluate:
    def test_ten_seeds_counted_and_resumable(self, corpus, extracted, tmp_path):
        cfg = make_cfg(corpus, extracted, tmp_path, task="del-h", modalities=["vowel-a"], seeds=list(range(10)))
        summary = pipeline.cmd_train(cfg)
        ckpts = sorted((cfg.run_dir / "models" / "del-h" / "vowel-a").glob("seed*.rvkm"))
        assert len(ckpts) == 10
        assert len(summary["del-h"]["vowel-a"]) == 10
        before = {p: p.stat().st_mtime_ns for p in ckpts}
        snapshot = (cfg.run_dir / "train_summary.json").read_bytes()

        # an interrupted run leaves a checkpoint without its sidecar
        victim = ckpts[3]
        original = victim.read_bytes()
        (victim.parent / (victim.name + ".json")).unlink()
        pipeline.cmd_train(cfg)
        assert victim.read_bytes() == original
        assert all(p.stat().st_mtime_ns == t for p, t in before.items() if p != victim)
        assert (cfg.run_dir / "train_summary.json").read_bytes() == snapshot

    def test_single_modality_fusion_equals_modality(self, corpus, extracted, tmp_path):
        cfg = make_cfg(corpus, extracted, tmp_path, task="omi-h", modalities=["counting-fast"], seeds=[0, 1])
        pipeline.cmd_train(cfg)
        report = pipeline.cmd_evaluate(cfg)
        rep = report["tasks"]["omi-h"]
        mod = rep["modalities"]["counting-fast"]
        for key in ("auc", "fpr", "tpr", "sensitivity_at_95_specificity"):
            assert rep["fusion"][key] == mod[key]
        assert len(rep["seed_test_auc"]["counting-fast"]) == 2
        assert (cfg.run_dir / "scores_omi-h.csv").is_file()

    def test_perfect_stub_models(self, corpus, tmp_path, monkeypatch):
        """Features encode the class in row 0; the stub reads it back."""
        cache = tmp_path / "cache"
        records, _ = load_manifest(corpus)
        code = {"h": 0.0, "d": 1.0, "o": 2.0}
        for r in records:
            for mod in MODS:
                fm = np.zeros((192, 60), np.float32)
                fm[0] = code.get(r.subject_id[0], 0.0)
                ft.write_feature_cache(ft.cache_path(cache, r.subject_id, mod), fm)
        cfg = make_cfg(corpus, cache, tmp_path / "out", task="hierarchical", seeds=[0, 1])
        for task in cfg.tasks:
            for mod in MODS:
                for s in cfg.seeds:
                    p = pipeline.checkpoint_path(cfg, task, mod, s)
                    save_checkpoint(BlstmModel.init(192, 1, 1, 1), p)
                    p.with_name(p.name + ".task").write_text(task)

        class Perfect:
            def __init__(self, task):
                self.task = task

            def predict(self, segs):
                c = segs[:, 0, 0]
                hit = c > 0 if self.task == "pos-h" else c > 1.5
                return np.where(hit, 0.9, 0.1)

        monkeypatch.setattr(pipeline, "load_checkpoint", lambda p: Perfect(p.with_name(p.name + ".task").read_text()))
        report = pipeline.cmd_evaluate(cfg)
        for task in ("pos-h", "omi-del"):
            assert report["tasks"][task]["fusion"]["auc"] == 1.0
        counts = np.array(report["hierarchical"]["confusion"]["counts"])
        assert np.count_nonzero(counts - np.diag(np.diag(counts))) == 0
        assert report["hierarchical"]["confusion"]["diagonally_dominant"]

    def test_stats_and_report(self, corpus, extracted, tmp_path):
        cfg = make_cfg(corpus, extracted, tmp_path, task="hierarchical", seeds=[0])
        summary = pipeline.cmd_stats(cfg)
        assert set(summary) == set(MODS)
        assert set(summary["vowel-a"]) == {"H vs H*", "Del vs H", "Omi vs H", "Omi vs Del", "Pos vs H"}
        assert len(list((cfg.run_dir / "stats" / "vowel-a").glob("*.csv"))) == 5
        pipeline.cmd_train(cfg)
        pipeline.cmd_evaluate(cfg)
        out = pipeline.cmd_report(cfg)
        text = out.read_text()
        assert "Test AUC" in text and "confusion" in text and "HMP" in text
        for svg in ("roc.svg", "significance.svg", "val_auc.svg"):
            assert (cfg.run_dir / svg).is_file()

    def test_stats_too_few_subjects(self, corpus, extracted, tmp_path):
        cfg = make_cfg(corpus, extracted, tmp_path, filter=PARTIAL | {"min_age": 79})
        with pytest.raises(pipeline.DataError):
            pipeline.cmd_stats(cfg)
