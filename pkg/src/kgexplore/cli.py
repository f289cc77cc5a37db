"""Command-line entry point: ``kgexplore run|report|validate|oracle|kg dump|archive inspect|resume``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import engine, kg
from .actions import ActionError, parse, render
from .admissible import admissible_actions
from .cells import ArchiveError, archive_from_bytes, inspect_archive
from .harness import (AGENTS, ConfigError, bottleneck_score, coerce_value, format_report, load_config,
                      load_records, report, run, validate_world, write_report)
from .world import WorldError, fixture_path, load_world

OUTPUT_ENV = "KGEXPLORE_OUTPUT_DIR"

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_FAULT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def output_dir(arg: str | None) -> Path:
    return Path(arg or os.environ.get(OUTPUT_ENV) or "runs")


def _world(path: str | None):
    return load_world(path or fixture_path("minigrue"))


def _script(world, text: str | None):
    if not text:
        return []
    return [parse(cmd, world.vocab, world.templates) for cmd in text.split(";") if cmd.strip()]


def _overrides(pairs) -> dict:
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise UsageError(f"--set expects key=value, got {pair!r}")
        k, v = pair.split("=", 1)
        out[k.strip()] = coerce_value(v)
    return out


def cmd_run(args) -> int:
    overrides = _overrides(args.set)
    for key in ("world", "budget"):
        if getattr(args, key) is not None:
            overrides[key] = getattr(args, key)
    if args.seeds:
        overrides["seeds"] = [int(s) for s in args.seeds.split(",")]
    agents = args.agent or [None]
    if agents == ["all"]:
        agents = list(AGENTS)
    out = output_dir(args.out)
    faults = 0
    for agent in agents:
        if agent is not None:
            overrides["agent"] = agent
        cfg = load_config(args.config, overrides)
        for rec in run(cfg, out, progress=lambda r: print(
                f"{r.agent} seed={r.seed} max={r.max_score} asym={r.asymptotic:.2f} "
                f"terminal={r.terminal} {r.wall_clock:.1f}s" + (f" FAULT {r.fault}" if r.fault else ""),
                flush=True)):
            faults += rec.fault is not None
    print(f"results in {out}")
    return EXIT_FAULT if faults else EXIT_OK


def cmd_resume(args) -> int:
    out = output_dir(args.out)
    configs = sorted(out.glob("*/config.json"))
    if not configs:
        raise UsageError(f"no run configs under {out}")
    faults = 0
    for path in configs:
        cfg = load_config(path)
        for rec in run(cfg, out, skip_done=True):
            faults += rec.fault is not None
    print(f"resumed {len(configs)} experiment(s) in {out}")
    return EXIT_FAULT if faults else EXIT_OK


def cmd_report(args) -> int:
    out = output_dir(args.out)
    records = load_records(out)
    if not records:
        raise UsageError(f"no run records under {out}")
    if args.bottleneck is not None:
        threshold = args.bottleneck
    else:
        threshold = bottleneck_score(_world(args.world))
    rows = report(records, threshold)
    write_report(rows, out / "ablation.csv")
    sys.stdout.write(format_report(rows))
    print(f"bottleneck score {threshold}; table written to {out / 'ablation.csv'}")
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        world = load_world(args.world)
    except WorldError as exc:
        print(f"error: {exc}")
        return EXIT_INVALID
    findings = validate_world(world)
    for f in findings:
        print(f"{f.level}: {f.message}")
    print(f"{world.title or args.world}: {len(world.rooms)} rooms, {len(world.objects)} objects, "
          f"max score {world.max_score}, bottleneck score {bottleneck_score(world)}")
    return EXIT_INVALID if any(f.level == "error" for f in findings) else EXIT_OK


def cmd_oracle(args) -> int:
    world = _world(args.world)
    state = engine.run_actions(world, _script(world, args.actions))[0]
    acts = admissible_actions(world, state)
    for a in acts:
        print(render(a, world.vocab, world.templates))
    print(f"# {len(acts)} admissible at score {state.score}, step {state.steps}", file=sys.stderr)
    return EXIT_OK


def cmd_kg_dump(args) -> int:
    world = _world(args.world)
    r = kg.replay(world, _script(world, args.actions))
    sys.stdout.write(kg.dump(r.kg))
    return EXIT_OK


def cmd_archive_inspect(args) -> int:
    archive = archive_from_bytes(Path(args.path).read_bytes())
    world = _world(args.world) if args.world or not args.raw else None
    sys.stdout.write(inspect_archive(archive, world, args.limit))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kgexplore", description="Exploration workbench for template text games.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run one or more agents over their seeds")
    r.add_argument("--config", help="JSON experiment config")
    r.add_argument("--agent", action="append", choices=list(AGENTS) + ["all"])
    r.add_argument("--seeds", help="comma-separated seed list")
    r.add_argument("--budget", type=int)
    r.add_argument("--world")
    r.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./runs)")
    r.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    r.set_defaults(func=cmd_run)

    rs = sub.add_parser("resume", help="finish seeds missing from an output directory")
    rs.add_argument("--out")
    rs.set_defaults(func=cmd_resume)

    rp = sub.add_parser("report", help="aggregate run records into the ablation table")
    rp.add_argument("--out")
    rp.add_argument("--world", help="world used to derive the bottleneck score")
    rp.add_argument("--bottleneck", type=int)
    rp.set_defaults(func=cmd_report)

    v = sub.add_parser("validate", help="check a world file")
    v.add_argument("world")
    v.set_defaults(func=cmd_validate)

    o = sub.add_parser("oracle", help="list brute-force admissible actions after a script")
    o.add_argument("--world")
    o.add_argument("--actions", help="semicolon-separated commands, e.g. 'open mailbox; east'")
    o.set_defaults(func=cmd_oracle)

    k = sub.add_parser("kg", help="knowledge-graph tools")
    ksub = k.add_subparsers(dest="kg_command", required=True, parser_class=_Parser)
    kd = ksub.add_parser("dump", help="print the graph after a script")
    kd.add_argument("--world")
    kd.add_argument("--actions")
    kd.set_defaults(func=cmd_kg_dump)

    a = sub.add_parser("archive", help="cell archive tools")
    asub = a.add_subparsers(dest="archive_command", required=True, parser_class=_Parser)
    ai = asub.add_parser("inspect", help="print an archive checkpoint")
    ai.add_argument("path")
    ai.add_argument("--world")
    ai.add_argument("--limit", type=int)
    ai.add_argument("--raw", action="store_true", help="do not render actions")
    ai.set_defaults(func=cmd_archive_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"kgexplore: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, WorldError, ActionError, ArchiveError, FileNotFoundError) as exc:
        print(f"kgexplore: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (RuntimeError, ValueError) as exc:
        print(f"kgexplore: fault: {exc}", file=sys.stderr)
        return EXIT_FAULT


if __name__ == "__main__":
    sys.exit(main())
