"""Command-line front end: ``run``, ``bench`` and ``gen`` subcommands.

Configuration precedence is CLI flags > ``--config`` file > built-in defaults.
Exit codes: 0 success, 1 usage, 2 I/O, 3 configuration, 4 runtime.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import bench as benchmod
from .config import Settings, dump_flat, load_flat, settings_from_flat
from .errors import ConflictingFlags, EdgeTrackError, MissingSubcommand, UnknownFlag, UsageError
from .pipeline import Pipeline

log = logging.getLogger("edgetrack")

SUBCOMMANDS = ("run", "bench", "gen")


@dataclass
class CliInvocation:
    subcommand: str
    config_path: str | None = None
    overrides: dict[str, str] = field(default_factory=dict)
    dump_config: bool = False
    verbose: bool = False


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="edgetrack", description="Background-subtraction detection with multi-object tracking.")
    sub = parser.add_subparsers(dest="subcommand", parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="flat key = value configuration file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="segmenter and scene seed")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
        p.add_argument("--dump-config", action="store_true", help="print the effective configuration and exit")
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("run", help="run the pipeline over a frame directory or .y4m file")
    common(p)
    p.add_argument("--source", help="frame directory or .y4m file")
    p.add_argument("--tracker", help="fallback | model:<path>")

    p = sub.add_parser("bench", help="frame-rate sweep over the number of tracked objects")
    common(p)
    p.add_argument("--source", help="directory holding n<k>/ sequences (generated when absent)")
    p.add_argument("--tracker", help="fallback | model:<path>")
    p.add_argument("--objects", help="comma-separated object counts, e.g. 1,2,3,4,5,6")
    p.add_argument("--frames", type=int, help="measured frames per sweep point")
    p.add_argument("--power-sensor", help="file holding an instantaneous milliwatt reading")

    p = sub.add_parser("gen", help="write synthetic benchmark sequences")
    common(p)
    p.add_argument("--objects", help="comma-separated object counts")
    p.add_argument("--frames", type=int, help="measured frames per sequence")
    return parser


_FLAG_KEYS = {
    "tracker": ("tracker.kind",),
    "objects": ("bench.objects",),
    "frames": ("bench.frames",),
    "power_sensor": ("bench.power_sensor",),
    "seed": ("segmenter.rng_seed", "bench.seed"),
    "out": ("pipeline.out",),
}


def parse_args(argv) -> CliInvocation:
    argv = list(argv)
    parser = _build_parser()
    if not argv or argv[0] not in SUBCOMMANDS:
        if argv and argv[0] in ("-h", "--help"):
            parser.print_help()
            raise SystemExit(0)
        if argv and not argv[0].startswith("-"):
            raise UsageError(f"unknown subcommand {argv[0]!r}; expected one of {', '.join(SUBCOMMANDS)}")
        raise MissingSubcommand(parser.format_usage().strip())
    ns, extra = parser.parse_known_args(argv)
    if extra:
        raise UnknownFlag(f"unrecognized arguments: {' '.join(extra)}")

    overrides: dict[str, str] = {}
    for dest, keys in _FLAG_KEYS.items():
        value = getattr(ns, dest, None)
        if value is not None:
            for key in keys:
                overrides[key] = str(value)
    source = getattr(ns, "source", None)
    if source is not None:
        overrides["bench.sequences" if ns.subcommand == "bench" else "pipeline.source"] = source
    for item in ns.set:
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or not key:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        if key in overrides:
            raise ConflictingFlags(f"{key} given both by a dedicated flag and by --set")
        overrides[key] = value.strip()
    return CliInvocation(ns.subcommand, ns.config, overrides, ns.dump_config, ns.verbose)


def effective_settings(inv: CliInvocation) -> Settings:
    settings = Settings()
    if inv.config_path:
        settings = settings_from_flat(load_flat(inv.config_path), settings)
    return settings_from_flat(inv.overrides, settings)


def _cmd_run(settings: Settings) -> int:
    summary = Pipeline(settings.pipeline).run()
    print(json.dumps(summary.to_dict()))
    return 0


def _cmd_bench(settings: Settings) -> int:
    b = settings.bench
    out = Path(settings.pipeline.out or "bench_out")
    records = benchmod.measure(settings.pipeline, b.objects, out, b, b.sequences)
    print(json.dumps({
        "csv": str(out / "bench.csv"),
        "records": [{"n_objects": r.n_objects, "fps": round(r.fps, 3), "mean_ms": round(r.mean_frame_ms, 3)} for r in records],
    }))
    return 0


def _cmd_gen(settings: Settings) -> int:
    b = settings.bench
    out = Path(settings.pipeline.out or "sequences")
    written = []
    for n in b.objects:
        spec = benchmod.SyntheticSceneSpec(
            n, benchmod.lead_in(n) + b.warmup + b.frames, b.object_size, b.speed, seed=b.seed,
        )
        written.append(str(benchmod.generate_sequence(spec, out / f"n{n}")))
    print(json.dumps({"sequences": written}))
    return 0


_COMMANDS = {"run": _cmd_run, "bench": _cmd_bench, "gen": _cmd_gen}


def _report(exc: EdgeTrackError) -> int:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}), file=sys.stderr)
    return exc.exit_code


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        inv = parse_args(argv)
    except UsageError as exc:
        print(_build_parser().format_usage().rstrip(), file=sys.stderr)
        return _report(exc)
    logging.basicConfig(level=logging.DEBUG if inv.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = effective_settings(inv)
        if inv.dump_config:
            sys.stdout.write(dump_flat(settings))
            return 0
        return _COMMANDS[inv.subcommand](settings)
    except EdgeTrackError as exc:
        return _report(exc)


def cli() -> None:
    sys.exit(main())


if __name__ == "__main__":
    cli()
