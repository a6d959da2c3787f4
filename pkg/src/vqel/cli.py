"""Command-line entry point: train, eval, sweep-candidates, grid, export-dataset-split."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import runner
from .config import ExperimentConfig
from .data import split
from .errors import ConfigError, NumericalError, ParameterError
from .games import evaluate
from .metrics import summarize

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("vqel")


def _coerce(name: str, raw: str):
    default = {f.name: f for f in dataclasses.fields(ExperimentConfig)}[name].default
    if name == "seeds":
        return [int(s) for s in raw.split(",") if s]
    if name in ("lr_mutual", "expiry_threshold"):
        return None if raw.lower() == "none" else float(raw)
    if isinstance(default, bool):
        if raw.lower() not in ("true", "false", "1", "0"):
            raise ConfigError(f"{name} expects true/false, got {raw!r}")
        return raw.lower() in ("true", "1")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON file of ExperimentConfig fields")
    for f in dataclasses.fields(ExperimentConfig):
        p.add_argument(f"--{f.name.replace('_', '-')}", dest=f"cfg_{f.name}", metavar="VALUE",
                       help=f"override {f.name}")


def _config_from(args) -> ExperimentConfig:
    overrides = {}
    for f in dataclasses.fields(ExperimentConfig):
        raw = getattr(args, f"cfg_{f.name}", None)
        if raw is not None:
            try:
                overrides[f.name] = _coerce(f.name, raw)
            except ValueError as exc:
                raise ConfigError(f"--{f.name.replace('_', '-')}: {exc}") from exc
    if args.config is not None:
        return ExperimentConfig.load(args.config, overrides)
    return ExperimentConfig.from_dict(overrides)


def cmd_train(args) -> int:
    cfg = _config_from(args)
    out = Path(cfg.output_dir)
    result = runner.run(cfg, cache_dir=args.cache_dir, checkpoint_dir=out / "checkpoints")
    paths = runner.export([result], out)
    print(runner.summary_csv([result]), end="")
    log.info("wrote %s and %s", paths["results"], paths["summary"])
    return EXIT_OK


def cmd_eval(args) -> int:
    pair, cfg, meta = runner.load_checkpoint(args.checkpoint)
    ids = split(cfg.split_seed).part(args.part)
    _, transcript = evaluate(pair.sender, pair.receiver, ids, args.candidates or cfg.eval_batch)
    metrics = summarize(transcript, cfg.K, cfg.topsim_sample, seed=meta["seed"])
    print(json.dumps(runner.to_jsonable(metrics), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_sweep(args) -> int:
    counts = [int(b) for b in args.candidates.split(",") if b]
    if args.checkpoint is not None:
        pair, cfg, _ = runner.load_checkpoint(args.checkpoint)
    else:
        cfg = _config_from(args)
        cfg = cfg.replace(seeds=cfg.seeds[:1])
        _, models = runner.run(cfg, cache_dir=args.cache_dir, keep_models=True)
        pair = models[0]
    rows = runner.sweep_candidates(pair, split(cfg.split_seed).test, counts)
    text = runner.candidates_csv(rows)
    if args.output is not None:
        runner.atomic_write_text(args.output, text)
    print(text, end="")
    return EXIT_OK


def cmd_grid(args) -> int:
    cfg = _config_from(args)
    grid = json.loads(args.grid.read_text(encoding="utf-8")) if args.grid else runner.default_grid()
    best, table = runner.grid_search(cfg, grid)
    out = Path(cfg.output_dir)
    runner.atomic_write_text(out / "grid.json", json.dumps(
        {"best": best.to_dict(), "table": runner.to_jsonable(table)}, indent=2, sort_keys=True))
    print(json.dumps(best.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_export_split(args) -> int:
    data = split(args.seed)
    data.export(args.output)
    print(args.output)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vqel", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run every seed of a config and export results")
    _add_config_flags(p)
    p.add_argument("--cache-dir", type=Path, help="reuse finished self-play phases from here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved checkpoint")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("--part", choices=("train", "valid", "test"), default="test")
    p.add_argument("--candidates", type=int, help="candidates per game (default: eval_batch)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-candidates", help="accuracy of one model at several candidate counts")
    _add_config_flags(p)
    p.add_argument("--checkpoint", type=Path, help="evaluate this model instead of training one")
    p.add_argument("--candidates", default="2,8,16,32,64,100")
    p.add_argument("--output", type=Path, help="also write the CSV here")
    p.add_argument("--cache-dir", type=Path)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("grid", help="grid search over config fields, selected by validation accuracy")
    _add_config_flags(p)
    p.add_argument("--grid", type=Path, help="JSON object mapping field names to value lists")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("export-dataset-split", help="write the train/valid/test ids as JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", type=Path, default=Path("split.json"))
    p.set_defaults(func=cmd_export_split)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
