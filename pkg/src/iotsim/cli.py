"""Command-line entry points.

    iotsim run --config scenarios/smart-home.toml --ticks 500 --seed 42
    iotsim validate-rules rules.txt
    iotsim replay runs/smart-home/run.jsonl
    iotsim serve --config scenarios/smart-home.toml --port 8000

Exit codes: 0 ok, 1 validation errors, 2 runtime invariant violation.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import ConfigError, ScenarioConfig, ValidationErrors, parse_config
from .rules import RuleError, parse_rule_file
from .scenario import CorruptLog, replay, run_scenario


def _load_config(path: str) -> ScenarioConfig:
    try:
        return parse_config(path)
    except ValidationErrors as exc:
        for error in exc.errors:
            print(f"config error: {error}", file=sys.stderr)
        raise SystemExit(1)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        raise SystemExit(1)


def cmd_run(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    out_dir = args.out or f"runs/{config.name}"
    result = run_scenario(
        config, ticks=args.ticks, seed=args.seed, mode=args.mode, out_dir=out_dir
    )
    summary = result["summary"]
    print(json.dumps(summary, indent=2))
    print(f"log written to {out_dir}/run.jsonl", file=sys.stderr)
    return 2 if summary["violations"] else 0


def cmd_validate_rules(args: argparse.Namespace) -> int:
    try:
        with open(args.file, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        print(f"cannot read {args.file}: {exc}", file=sys.stderr)
        return 1
    try:
        rules = parse_rule_file(text)
    except RuleError as exc:
        print(f"{args.file}: {exc}", file=sys.stderr)
        return 1
    for line, rule in rules:
        print(f"line {line}: ok: {rule.text()}")
    return 0


def cmd_replay(args: argparse.Namespace) -> int:
    try:
        snapshot = replay(args.file)
    except CorruptLog as exc:
        print(f"replay failed: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"cannot read {args.file}: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(snapshot, indent=2))
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import os

    import uvicorn

    from .scenario import Runtime
    from .webapp import LiveRunner, make_app

    config = _load_config(args.config)
    runtime = Runtime(config)
    runner = LiveRunner(runtime, tick_rate=args.tick_rate)
    ui_dir = args.ui if args.ui and os.path.isdir(args.ui) else None
    if args.ui and ui_dir is None:
        print(f"ui directory {args.ui!r} not found; serving API only", file=sys.stderr)
    app = make_app(runtime, runner, ui_dir=ui_dir)
    runner.start()
    try:
        uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    finally:
        runner.stop()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iotsim")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a scenario to its horizon")
    run_p.add_argument("--config", required=True)
    run_p.add_argument("--ticks", type=int, default=None)
    run_p.add_argument("--seed", type=int, default=None)
    run_p.add_argument("--mode", choices=["centralized", "decentralized"], default=None)
    run_p.add_argument("--out", default=None, help="output directory (default runs/<name>)")
    run_p.set_defaults(fn=cmd_run)

    val_p = sub.add_parser("validate-rules", help="check a rule file")
    val_p.add_argument("file")
    val_p.set_defaults(fn=cmd_validate_rules)

    rep_p = sub.add_parser("replay", help="rebuild the final snapshot from a log")
    rep_p.add_argument("file")
    rep_p.set_defaults(fn=cmd_replay)

    srv_p = sub.add_parser("serve", help="run the kernel live with the HTTP API")
    srv_p.add_argument("--config", required=True)
    srv_p.add_argument("--host", default="127.0.0.1")
    srv_p.add_argument("--port", type=int, default=8000)
    srv_p.add_argument("--tick-rate", type=float, default=10.0)
    srv_p.add_argument("--ui", default="frontend",
                       help="directory with the built dashboard (served at /ui)")
    srv_p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
