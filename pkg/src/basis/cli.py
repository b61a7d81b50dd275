"""Command-line entry point: ``basis train|sweep|diagnose|audit``.

Exit codes: 0 success, 1 configuration or usage error, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from basis import config as cfgmod
from basis.data import CorpusError, load_char_corpus
from basis.diagnostics import memory_audit, render_checks, run_suite
from basis.models import NumericError
from basis.svg import loss_chart
from basis.train import FULL_SCALE_STEPS, build_model, run_rank_sweep, run_training

log = logging.getLogger("basis")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2
DEFAULT_AUDIT_VOCAB = 96


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="flat key = value config file")
    common.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--out", type=Path, help="output directory (overrides output.dir)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="basis", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    train = sub.add_parser("train", parents=[common], help="train one model")
    train.add_argument("--paper-scale", action="store_true", help=f"run {FULL_SCALE_STEPS} steps")
    sweep = sub.add_parser("sweep", parents=[common], help="exact baseline plus one run per rank")
    sweep.add_argument("--ranks", required=True, help="comma-separated ranks, e.g. 1,8,16,32,64")
    sweep.add_argument("--jobs", type=int, default=1, help="runs executed in parallel")
    sweep.add_argument("--paper-scale", action="store_true", help=f"run {FULL_SCALE_STEPS} steps")
    sub.add_parser("diagnose", parents=[common], help="verify estimator properties")
    sub.add_parser("audit", parents=[common], help="count cached activation floats")
    return p


class UsageError(Exception):
    pass


def _out_dir(args, cfg) -> Path:
    out = args.out or cfg.out_dir
    if out is None:
        raise cfgmod.ConfigError("output.dir: no output directory (set output.dir or pass --out)")
    if out.exists() and not out.is_dir():
        raise cfgmod.ConfigError(f"output.dir: {out} exists and is not a directory")
    return out


def _parse_ranks(text: str):
    items = [t.strip() for t in text.split(",") if t.strip()]
    if not items:
        raise UsageError("--ranks: empty rank list")
    try:
        ranks = [int(t) for t in items]
    except ValueError:
        raise UsageError(f"--ranks: not a list of integers: {text!r}") from None
    if min(ranks) < 1:
        raise UsageError("--ranks: ranks must be positive")
    return ranks


def _progress(config, rec):
    log.info("%s step %d train %.4f val %.4f", config.label, rec.step, rec.train_loss, rec.val_loss)


def cmd_train(args, cfg) -> int:
    corpus_path = cfg.require_corpus()
    out = _out_dir(args, cfg)
    train_cfg = replace(cfg.train, steps=FULL_SCALE_STEPS) if args.paper_scale else cfg.train
    corpus = load_char_corpus(corpus_path, cfg.split_fraction)
    report = run_training(train_cfg, corpus, progress=_progress)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "report.txt").write_text(report.render(), encoding="utf-8")
    (out / "loss.svg").write_text(loss_chart([report]), encoding="utf-8")
    print(f"final val loss {report.final.val_loss:.4f}; wrote {out}")
    return EXIT_OK


def cmd_sweep(args, cfg) -> int:
    ranks = _parse_ranks(args.ranks)
    if args.jobs < 1:
        raise UsageError("--jobs must be at least 1")
    corpus_path = cfg.require_corpus()
    out = _out_dir(args, cfg)
    base = replace(cfg.train, steps=FULL_SCALE_STEPS) if args.paper_scale else cfg.train
    corpus = load_char_corpus(corpus_path, cfg.split_fraction)
    result = run_rank_sweep(base, ranks, corpus, jobs=args.jobs)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_text(result.to_csv(), encoding="utf-8")
    (out / "table.txt").write_text(result.table(), encoding="utf-8")
    (out / "loss.svg").write_text(loss_chart(result.reports, "validation loss by rank"), encoding="utf-8")
    print(result.table(), end="")
    return EXIT_OK


def _vocab(cfg) -> int:
    if cfg.train.vocab_size:
        return cfg.train.vocab_size
    if cfg.corpus is not None:
        return load_char_corpus(cfg.require_corpus(), cfg.split_fraction).vocab_size
    return DEFAULT_AUDIT_VOCAB


def cmd_diagnose(args, cfg) -> int:
    out = _out_dir(args, cfg)
    checks = run_suite(cfg.diag, cfg.train, _vocab(cfg))
    text = render_checks(checks)
    out.mkdir(parents=True, exist_ok=True)
    (out / "diagnostics.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK if all(c.status != "FAIL" for c in checks) else EXIT_NUMERIC


def cmd_audit(args, cfg) -> int:
    out = _out_dir(args, cfg)
    t = cfg.train
    report = memory_audit(build_model(t, _vocab(cfg)), (t.batch_size, t.seq_len), seed=t.seed)
    header = (f"architecture: {t.model}, d_model={t.d_model}, n_layers={t.n_layers}, "
              f"batch={t.batch_size}, seq_len={t.seq_len}, mode={t.mode}, rank={t.rank}\n")
    text = header + report.render() + "\n"
    out.mkdir(parents=True, exist_ok=True)
    (out / "memory.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK if report.consistent else EXIT_NUMERIC


COMMANDS = {"train": cmd_train, "sweep": cmd_sweep, "diagnose": cmd_diagnose, "audit": cmd_audit}


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        cfg = cfgmod.load(args.config, args.override)
        return COMMANDS[args.command](args, cfg)
    except (cfgmod.ConfigError, CorpusError, UsageError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, FloatingPointError) as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
