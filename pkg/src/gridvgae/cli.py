"""Command-line entry point: ``gridvgae synth-data | train | generate | evaluate``.

Every command writes its outputs plus a ``manifest.json`` into ``--out``.
Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure, 5 I/O error. ``GRIDVGAE_WORKERS`` sets the spectrum worker count.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .config import (ConfigError, GEN_PRESETS, MODEL_PRESETS, dump_config, gen_preset,
                     load_gen_config, load_model_config, model_preset)
from .eigen import EigensolverError
from .generate import generate_graphs
from .graph import FEEDER_PRESETS, GraphFormatError, read_corpus, synthetic_corpus, write_corpus
from .metrics import compare_corpora, write_report
from .train import (CheckpointError, TrainingError, file_sha256, load_checkpoint, save_checkpoint,
                    train, write_loss_csv)

log = logging.getLogger("gridvgae")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4, 5
WORKERS_ENV = "GRIDVGAE_WORKERS"
CHECKPOINT_NAME = "checkpoint.gvgae"
MANIFEST_NAME = "manifest.json"


class _Run:
    """Collects manifest fields while a command runs."""

    def __init__(self, command: str, args: argparse.Namespace):
        self.command = command
        self.out = Path(args.out)
        self.started = datetime.now(timezone.utc)
        self.t0 = time.perf_counter()
        self.fields: dict = {"command": command, "tool_version": __version__,
                             "argv": sys.argv[1:], "inputs": {}, "outputs": {}}

    def finish(self):
        self.fields["started_utc"] = self.started.isoformat()
        self.fields["duration_s"] = round(time.perf_counter() - self.t0, 3)
        write_manifest(self.fields, self.out / MANIFEST_NAME)


def write_manifest(fields: dict, path: Path):
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(fields, fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _workers() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw is None or raw == "":
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}")
    return n


def _model_config(args):
    if args.config:
        return load_model_config(args.config), {"config_path": str(args.config)}
    return model_preset(args.preset), {"preset": args.preset}


def _gen_config(args):
    if args.config:
        return load_gen_config(args.config), {"config_path": str(args.config)}
    return gen_preset(args.preset), {"preset": args.preset}


def cmd_synth_data(args) -> _Run:
    if args.count < 1:
        raise ConfigError(f"--count must be positive, got {args.count}")
    run = _Run("synth-data", args)
    corpus = synthetic_corpus(args.preset, args.count, args.seed)
    write_corpus(corpus, run.out)
    run.fields.update(preset=args.preset, count=args.count, seeds={"corpus": args.seed})
    run.fields["outputs"] = {"corpus_dir": str(run.out), "graphs": len(corpus)}
    return run


def cmd_train(args) -> _Run:
    cfg, source = _model_config(args)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    corpus = read_corpus(args.corpus)
    run = _Run("train", args)
    run.out.mkdir(parents=True, exist_ok=True)
    ckpt, records = train(corpus, cfg)
    ckpt_path = run.out / CHECKPOINT_NAME
    digest = save_checkpoint(ckpt, ckpt_path)
    write_loss_csv(records, run.out / "losses.csv")
    dump_config(cfg, run.out / "config.json")
    run.fields.update(config=cfg.to_dict(), config_source=source, seeds={"train": cfg.seed},
                      final_loss=ckpt.final_loss)
    run.fields["inputs"] = {"corpus_dir": str(args.corpus), "graphs": len(corpus)}
    run.fields["outputs"] = {"checkpoint": str(ckpt_path), "checkpoint_sha256": digest,
                             "losses": str(run.out / "losses.csv")}
    return run


def cmd_generate(args) -> _Run:
    gen, source = _gen_config(args)
    if args.seed is not None:
        gen = gen.replace(seed=args.seed)
    if args.count is not None:
        gen = gen.replace(count=args.count)
    ckpt = load_checkpoint(args.checkpoint)
    run = _Run("generate", args)
    corpus = generate_graphs(ckpt, gen, name=f"synthetic-{gen.seed}")
    write_corpus(corpus, run.out)
    dump_config(gen, run.out / "generation.json")
    run.fields.update(config=gen.to_dict(), config_source=source, seeds={"generate": gen.seed},
                      model_config=ckpt.config.to_dict())
    run.fields["inputs"] = {"checkpoint": str(args.checkpoint),
                            "checkpoint_sha256": file_sha256(args.checkpoint)}
    run.fields["outputs"] = {"corpus_dir": str(run.out), "graphs": len(corpus)}
    return run


def cmd_evaluate(args) -> _Run:
    workers = _workers()
    real = read_corpus(args.real)
    synth = read_corpus(args.synth)
    if len(real) == 0 or len(synth) == 0:
        raise GraphFormatError("cannot evaluate an empty corpus")
    run = _Run("evaluate", args)
    report = compare_corpora(real, synth, workers=workers)
    paths = write_report(report, run.out)
    table = report.to_dict()["table"]
    for key, value in table.items():
        log.info("%s = %.6f", key, value)
    run.fields.update(workers=workers, table=table, seeds={})
    run.fields["inputs"] = {"real_dir": str(args.real), "synth_dir": str(args.synth)}
    run.fields["outputs"] = {p.stem: str(p) for p in paths}
    return run


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridvgae", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="write a synthetic radial-feeder corpus")
    p.add_argument("--preset", choices=sorted(FEEDER_PRESETS), default="homogeneous")
    p.add_argument("--count", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train a VGAE on a corpus directory")
    p.add_argument("--corpus", required=True)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--config", help="model config JSON file")
    group.add_argument("--preset", choices=sorted(MODEL_PRESETS), default="engage-like")
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample synthetic grids from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--config", help="generation config JSON file")
    group.add_argument("--preset", choices=sorted(GEN_PRESETS), default="engage-like")
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--count", type=int, default=None, help="overrides the config count")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="compare a real and a synthetic corpus")
    p.add_argument("--real", required=True)
    p.add_argument("--synth", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run = args.func(args)
        run.finish()
    except ConfigError as exc:
        print(f"gridvgae: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GraphFormatError, CheckpointError) as exc:
        print(f"gridvgae: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, EigensolverError, FloatingPointError) as exc:
        print(f"gridvgae: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"gridvgae: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # remaining value errors come from malformed inputs (empty corpus, bad counts)
        print(f"gridvgae: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
