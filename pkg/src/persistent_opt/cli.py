"""Command-line entry point: ``persistent-opt``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .harness import runner
from .harness.config import EXPERIMENTS, ConfigError, default_config, load_config

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2


def _error(kind: str, exc: BaseException, out_dir: Path | None = None) -> None:
    report = {"error": kind, "type": type(exc).__name__, "message": str(exc)}
    for attr in ("iteration", "step", "layer"):
        if getattr(exc, attr, None) is not None:
            report[attr] = getattr(exc, attr)
    text = json.dumps(report, sort_keys=True)
    print(text, file=sys.stderr)
    if out_dir is not None and out_dir.is_dir():
        (out_dir / "error.json").write_text(text + "\n")


def _load(args):
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "out", None):
        cfg = replace(cfg, output_dir=args.out)
    return cfg


def cmd_run(args) -> Path:
    cfg = _load(args)
    run_dir = runner.run_experiment(cfg, resume=args.resume)
    print((run_dir / "summary.json").read_text(), end="")
    return run_dir


def cmd_compare(args):
    cfg = _load(args)
    report = runner.compare_reinit(cfg, args.seeds)
    keys = ("best_reinit_train_loss", "best_persistent_train_loss",
            "reinit_kink_frequency", "persistent_kink_frequency")
    print(json.dumps({k: report[k] for k in keys}, indent=2))


def cmd_spectrum(args):
    rep = runner.spectrum_for_run(args.run, args.iteration, args.bulk_percentile)
    print(json.dumps({k: v for k, v in rep.to_json().items() if k != "eigenvalues"}, indent=2))


def cmd_saturation(args):
    rep = runner.saturation_for_run(args.run, args.threshold)
    for epoch, s in rep.rows():
        print(f"iteration {epoch} layer {s.layer}: p98={s.p98_abs_activation:.4f} "
              f"dead={s.dead_fraction:.4f}")


def cmd_init_config(args):
    cfg = default_config(args.experiment, args.seed or 0)
    text = cfg.dumps()
    if args.output:
        Path(args.output).write_text(text)
    else:
        print(text, end="")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="persistent-opt", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment from a JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--out", help="override the config's output directory")
    r.add_argument("--seed", type=int, help="override master_seed (sub-seeds re-derived)")
    r.add_argument("--resume", action="store_true", help="continue an interrupted run")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare-reinit", help="re-initialization vs persistent training")
    c.add_argument("--config", required=True)
    c.add_argument("--seeds", type=int, required=True)
    c.add_argument("--out")
    c.add_argument("--seed", type=int)
    c.set_defaults(func=cmd_compare)

    s = sub.add_parser("spectrum", help="Hessian spectrum of one iteration of a run")
    s.add_argument("--run", required=True)
    s.add_argument("--iteration", type=int, required=True)
    s.add_argument("--bulk-percentile", type=float, default=90.0)
    s.set_defaults(func=cmd_spectrum)

    t = sub.add_parser("saturation", help="activation saturation of every iteration of a run")
    t.add_argument("--run", required=True)
    t.add_argument("--threshold", type=float, default=0.98)
    t.set_defaults(func=cmd_saturation)

    i = sub.add_parser("init-config", help="write a default config for an experiment")
    i.add_argument("--experiment", choices=EXPERIMENTS, required=True)
    i.add_argument("--seed", type=int)
    i.add_argument("--output")
    i.set_defaults(func=cmd_init_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    out_dir = None
    try:
        if getattr(args, "config", None):
            try:
                out_dir = _load(args).resolved_output_dir()
            except ConfigError:
                pass
        args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        _error("config", exc, out_dir)
        return EXIT_CONFIG
    except (FloatingPointError, ArithmeticError) as exc:
        _error("numerical", exc, out_dir)
        return EXIT_NUMERICAL
    except ValueError as exc:
        _error("config", exc, out_dir)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
