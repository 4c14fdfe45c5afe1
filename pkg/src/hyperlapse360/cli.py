"""Command line interface: run the whole pipeline or one stage at a time.

Exit codes: 0 success, 2 input error (missing or malformed files, bad
configuration), 3 stage failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import PipelineConfig, apply_overrides, load_config
from .errors import Hyperlapse360Error, StageFailure
from .pipeline import STAGE_ORDER, RunContext, load_dataset, run_pipeline, run_stage
from .report import format_report, summarize_run
from .synth import SynthSceneSpec, spec_from_dict, synth_scene


def _add_run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", required=True, help="input directory (frames/ plus optional aux data)")
    p.add_argument("--out", required=True, help="output directory for artifacts")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="dotted config override, e.g. select.speedup=8 (repeatable)",
    )


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hyperlapse360", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log per-stage progress")
    sub = p.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute every stage in order")
    _add_run_args(run_p)
    for name in STAGE_ORDER:
        stage_p = sub.add_parser(name, help=f"run only the {name} stage")
        _add_run_args(stage_p)

    synth_p = sub.add_parser("synth", help="generate a synthetic test dataset")
    synth_p.add_argument("--spec", help="scene spec JSON (defaults when omitted)")
    synth_p.add_argument("--out", required=True, help="dataset directory to create")
    synth_p.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="spec field override, e.g. frame_count=120 (repeatable)",
    )

    report_p = sub.add_parser("report", help="summarize a completed run")
    report_p.add_argument("--run", required=True, help="run directory")
    report_p.add_argument("--json", action="store_true", help="emit machine-readable JSON")
    return p


def _load_cfg(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig().validate()
    return apply_overrides(cfg, args.overrides)


def _cmd_synth(args) -> int:
    data = {}
    if args.spec:
        with open(args.spec, encoding="utf-8") as fh:
            data = json.load(fh)
    for pair in args.overrides:
        key, sep, raw = pair.partition("=")
        if not sep:
            raise Hyperlapse360Error(f"override {pair!r} is not of the form key=value")
        try:
            data[key.strip()] = json.loads(raw.strip())
        except json.JSONDecodeError:
            data[key.strip()] = raw.strip()
    spec = spec_from_dict(data) if data else SynthSceneSpec()
    out = synth_scene(spec, args.out)
    print(f"{spec.frame_count} frames -> {out}")
    return 0


def _cmd_report(args) -> int:
    summary = summarize_run(args.run)
    if args.json:
        print(json.dumps(summary, indent=2, sort_keys=True))
    else:
        print(format_report(summary))
    return 0


def _cmd_run(args) -> int:
    cfg = _load_cfg(args)
    ctx = run_pipeline(args.input, args.out, cfg)
    print(f"{len(ctx.plan())} of {ctx.data.frame_count} frames -> {ctx.out}")
    return 0


def _cmd_stage(args, name: str) -> int:
    cfg = _load_cfg(args)
    data = load_dataset(args.input)
    ctx = RunContext(data, args.out, cfg)
    seconds = run_stage(ctx, name)
    print(f"{name}: {seconds:.2f}s -> {ctx.out}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command in STAGE_ORDER:
            return _cmd_stage(args, args.command)
        if args.command == "synth":
            return _cmd_synth(args)
        return _cmd_report(args)
    except StageFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (Hyperlapse360Error, FileNotFoundError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as exc:
        print(f"error: invalid JSON: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
