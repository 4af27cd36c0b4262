"""Command line entry point: ``respvariant <subcommand> [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure during training.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from . import pipeline
from .synth import SynthConfig, generate_corpus, modality_list

log = logging.getLogger("respvariant")

STAGES = {
    "ingest": pipeline.cmd_ingest,
    "split": pipeline.cmd_split,
    "extract": pipeline.cmd_extract,
    "stats": pipeline.cmd_stats,
    "train": pipeline.cmd_train,
    "evaluate": pipeline.cmd_evaluate,
    "report": pipeline.cmd_report,
}


def _parse_set(items: list[str]) -> dict:
    out = {}
    for item in items:
        if "=" not in item:
            raise pipeline.ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = yaml.safe_load(value)
    return out


def _stage_parser(sub, name: str) -> None:
    p = sub.add_parser(name, help=f"run the {name} stage")
    p.add_argument("--config", type=Path, help="YAML run configuration")
    p.add_argument("--manifest")
    p.add_argument("--cache-dir")
    p.add_argument("--output-dir")
    p.add_argument("--task", choices=pipeline.TASKS)
    p.add_argument("--modalities", help="comma-separated sound categories or 'all'")
    p.add_argument("--seeds", help="comma-separated integers")
    p.add_argument("--jobs", type=int)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key, e.g. train.max_epochs=5")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="respvariant", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labelled synthetic WAV corpus and manifest")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--subjects-per-class", type=int, default=SynthConfig.subjects_per_class)
    p.add_argument("--modalities", default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--separation-db", type=float, default=SynthConfig.separation_db)
    p.add_argument("--jitter-db", type=float, default=SynthConfig.jitter_db)

    for name in STAGES:
        _stage_parser(sub, name)
    return parser


def _config_from_args(args) -> pipeline.RunConfig:
    overrides = {
        "manifest": args.manifest,
        "cache_dir": args.cache_dir,
        "output_dir": args.output_dir,
        "task": args.task,
        "modalities": args.modalities,
        "seeds": [int(s) for s in args.seeds.split(",")] if args.seeds else None,
        "jobs": args.jobs,
    }
    overrides.update(_parse_set(args.set))
    return pipeline.load_config(args.config, overrides)


def _summarise(result) -> str:
    if isinstance(result, Path):
        return str(result)
    if isinstance(result, dict) and result and all(isinstance(k, int) for k in result):
        return json.dumps({str(k): {p: len(v) for p, v in s.as_dict().items()} for k, s in result.items()})
    text = json.dumps(result, sort_keys=True, default=str)
    return text if len(text) < 2000 else text[:2000] + " ..."


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")

    if args.command == "synth":
        try:
            cfg = SynthConfig(
                subjects_per_class=args.subjects_per_class,
                modalities=modality_list(args.modalities),
                seed=args.seed,
                separation_db=args.separation_db,
                jitter_db=args.jitter_db,
            )
        except ValueError as exc:
            print(f"usage error: {exc}", file=sys.stderr)
            return 1
        print(generate_corpus(args.out, cfg))
        return 0

    try:
        cfg = _config_from_args(args)
        cfg.validate_paths()
        run = pipeline.prepare_run_dir(cfg)
        handler = logging.FileHandler(run / "run.log")
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        logging.getLogger().addHandler(handler)
        try:
            result = STAGES[args.command](cfg)
        finally:
            logging.getLogger().removeHandler(handler)
            handler.close()
    except pipeline.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (pipeline.DataError, FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except pipeline.NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    print(f"run directory: {run}")
    print(_summarise(result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
