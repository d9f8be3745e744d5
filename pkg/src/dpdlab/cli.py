"""``dpdlab`` command line."""

from __future__ import annotations

import argparse
import json
import sys

from .analyzers import dump_events
from .attacks import PREFIX_UNITS, AttackName
from .config import ConfigError, load_config
from .harness import FORMATS, CellSpec, execute_cell, export, replay_trace, run_matrix
from .servers import probe_prefixes
from .stream import dump_trace, load_trace


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dpdlab", description="Dynamic protocol detection lab.")
    p.add_argument("--config", help="JSON config merged over the packaged defaults")
    # also accepted after the subcommand; SUPPRESS keeps a global value from being reset
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help=argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="run one engine/attack/port/profile cell")
    run.add_argument("--engine", required=True)
    run.add_argument("--attack", required=True, choices=[a.value for a in AttackName])
    run.add_argument("--port", type=int, default=4242)
    run.add_argument("--profile", default="nginx")
    run.add_argument("--repetitions", type=int, default=512)
    run.add_argument("--prefix-unit", default="crlf", choices=sorted(PREFIX_UNITS))
    run.add_argument("--no-follow-up", action="store_true")
    run.add_argument("--record", metavar="TRACE", help="write the conversation as a JSONL trace")
    run.add_argument("--events", metavar="LOG", help="write analyzer events as JSON lines")
    run.add_argument("--format", choices=("text", "json"), default="text")

    matrix = sub.add_parser("matrix", parents=[common], help="run the full vulnerability matrix")
    matrix.add_argument("--format", choices=FORMATS, default="text")

    probe = sub.add_parser("probe-sim", parents=[common],
                           help="probe a simulated server's prefix tolerance")
    probe.add_argument("--profile", default="all")
    probe.add_argument("--limit", type=int, default=10 ** 7, help="repetition probe limit")

    replay = sub.add_parser("replay", parents=[common], help="feed a recorded trace to an engine")
    replay.add_argument("--trace", required=True)
    replay.add_argument("--engine", required=True)
    replay.add_argument("--port", type=int, default=4242)
    return p


def _cmd_run(args, cfg, out) -> int:
    params = {"name": args.attack}
    if args.attack == "crlf":
        params.update(repetitions=args.repetitions, prefix_unit=args.prefix_unit)
    elif args.attack in ("unknown", "helo"):
        params["follow_up"] = not args.no_follow_up
    run = execute_cell(CellSpec(args.engine, params, args.port, args.profile), cfg)
    if args.record:
        with open(args.record, "w") as fh:
            dump_trace(run.trace, fh)
    if args.events:
        with open(args.events, "w") as fh:
            dump_events(run.events, fh)
    o = run.outcome
    if args.format == "json":
        out.write(json.dumps(o.to_dict(), indent=2, sort_keys=True) + "\n")
    else:
        v = o.verdict
        out.write(f"outcome:   {o.label}\n"
                  f"verdict:   {v.protocol or '-'} ({v.basis.value}) at byte {v.decided_at}"
                  f"{' misbound' if v.misbound else ''}\n"
                  f"seen:      {o.follow_up_seen_by_engine}\n"
                  f"served:    {o.follow_up_served}\n"
                  f"weirds:    {o.dos_indicator}{' (alarm)' if o.dos_alarm else ''}\n")
    return 0


def _cmd_probe(args, cfg, out) -> int:
    names = sorted(cfg.profiles) if args.profile == "all" else [args.profile]
    for name in names:
        res = probe_prefixes(cfg.profile(name), args.limit)
        units = ", ".join(
            f"{u!r}:{res.max_repetitions[u]}{'+' if u in res.saturated else ''}"
            for u in sorted(res.ignored)) or "none"
        out.write(f"{name:16} {res.kind.value:9} {units}\n")
    return 0


def _cmd_replay(args, cfg, out) -> int:
    with open(args.trace) as fh:
        records = list(load_trace(fh))
    verdict, events = replay_trace(records, cfg.engine(args.engine), args.port)
    for e in events:
        out.write(f"{e.at_byte:>8} {e.direction.value:4} {e.kind.value:12} "
                  f"{json.dumps(e.detail, sort_keys=True)}\n")
    out.write(f"verdict: {json.dumps(verdict.to_dict(), sort_keys=True)}\n")
    return 0


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.command == "run":
            return _cmd_run(args, cfg, out)
        if args.command == "matrix":
            out.write(export(run_matrix(cfg), args.format).decode())
            return 0
        if args.command == "probe-sim":
            return _cmd_probe(args, cfg, out)
        return _cmd_replay(args, cfg, out)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"dpdlab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
