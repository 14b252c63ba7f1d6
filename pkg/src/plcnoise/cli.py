"""Command-line front end.

    plcnoise all trace.plnz -o reports/
    plcnoise stationarity trace.csv --chunk-lengths 30,60,120 --alpha 0.01
    plcnoise synth --synth-length 86400 --synth-output week.plnz
    plcnoise all --config run.cfg --threads 4

Every ``RunConfig`` key is also a flag (underscores become dashes). Values
come from the defaults, then ``--config``, then flags. Exit status: 0 all
stages ok, 2 configuration error, 3 ingest error, 4 stage failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .config import STAGES, THREADS_ENV, RunConfig
from .exceptions import ConfigError
from .pipeline import EXIT_CONFIG, EXIT_OK, run_pipeline, run_synthesis

COMMAND_STAGES = {
    "qa": ["qa"],
    "spectrum": ["spectrum", "moving"],
    "stationarity": ["stationarity"],
    "dependence": ["dependence"],
    "fit": ["fit"],
    "bursts": ["bursts"],
    "all": list(STAGES),
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="plcnoise",
        description="Large-scale noise analysis of narrowband PLC traces.",
        epilog=f"Set {THREADS_ENV} to override the default worker-thread count.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in list(COMMAND_STAGES) + ["synth"]:
        p = sub.add_parser(name)
        if name != "synth":
            p.add_argument("inputs", nargs="*", help="trace files (CSV or packed binary)")
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("-o", "--output-dir", dest="output_dir")
        for f in dataclasses.fields(RunConfig):
            if f.name in ("output_dir", "stages"):
                continue
            p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None,
                           metavar="VALUE")
        p.add_argument("--dump-config", action="store_true",
                       help="print the effective config and exit")
    return parser


def resolve_config(args) -> RunConfig:
    base = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {}
    for f in dataclasses.fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            overrides[f.name] = v
    if getattr(args, "inputs", None):
        overrides["input"] = ",".join(args.inputs)
    if args.command in COMMAND_STAGES:
        overrides["stages"] = ",".join(COMMAND_STAGES[args.command])
    merged = dataclasses.asdict(base)
    merged.update(overrides)
    return RunConfig.from_mapping(merged)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        cfg.n_threads()
    except ConfigError as exc:
        print(f"plcnoise: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.dump_config:
        sys.stdout.write(cfg.to_text())
        return EXIT_OK
    if args.command == "synth":
        try:
            path, _ = run_synthesis(cfg)
        except (ConfigError, ValueError) as exc:
            print(f"plcnoise: config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"wrote {path}")
        return EXIT_OK
    code, report = run_pipeline(cfg)
    for stage, st in report.status.items():
        line = f"{stage:<13} {st['status']}"
        if "error" in st:
            line += f"  {st['error']}"
        print(line)
    print(f"reports in {cfg.output_dir} (exit {code})")
    return code


if __name__ == "__main__":
    sys.exit(main())
