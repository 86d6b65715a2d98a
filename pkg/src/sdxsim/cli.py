"""Command-line entry point: ``sdxsim run|check|parse-policy``."""

import argparse
import json
import os
import sys
from pathlib import Path

from . import harness
from .errors import SdxError
from .policy_lang import ast_to_dict, parse_policy, pretty_print

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2


def _use_color(stream):
    setting = os.environ.get("SDXSIM_COLOR")
    if setting == "0":
        return False
    if setting == "1":
        return True
    return hasattr(stream, "isatty") and stream.isatty()


def _paint(text, ok, color):
    if not color:
        return text
    return f"\033[{32 if ok else 31}m{text}\033[0m"


def _scenario_path(arg):
    path = Path(arg)
    if not path.exists() and arg == "reference":
        return harness.reference_scenario_path()
    return path


def _parse_dumps(value):
    kinds = [k.strip() for k in value.split(",") if k.strip()]
    for k in kinds:
        if k not in harness.DUMP_KINDS:
            raise argparse.ArgumentTypeError(
                f"unknown dump {k!r} (choose from {', '.join(harness.DUMP_KINDS)})")
    return kinds


def cmd_run(args, out):
    scenario = harness.load_scenario(_scenario_path(args.scenario))
    report = harness.run(scenario, dumps=args.dump, fmt=args.format)
    if args.format == "json":
        out.write(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    else:
        color = _use_color(out)
        for msg in report.diagnostics:
            out.write(f"error: {msg}\n")
        for t in report.tests:
            mark = _paint("PASS" if t.passed else "FAIL", t.passed, color)
            out.write(f"{mark} {t.name}: expected {t.expected}, got {t.actual}\n")
        if not report.config_error:
            npass = sum(t.passed for t in report.tests)
            out.write(f"{npass}/{len(report.tests)} traffic tests passed\n")
        for kind in args.dump:
            if kind in report.dumps:
                out.write(f"\n== {kind} ==\n{report.dumps[kind]}")
    if report.config_error:
        return EXIT_CONFIG
    return EXIT_OK if report.passed else EXIT_FAILED


def cmd_check(args, out):
    scenario = harness.load_scenario(_scenario_path(args.scenario))
    report = harness.check(scenario)
    if args.format == "json":
        out.write(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    else:
        color = _use_color(out)
        for d in report.divergences:
            out.write(f"DIVERGENCE {d.probe}: compiled={d.compiled} oracle={d.oracle}\n")
        for msg in report.diagnostics:
            out.write(f"note: {msg}\n")
        if not report.config_error:
            verdict = _paint("OK" if report.passed else "FAIL", report.passed, color)
            out.write(f"{verdict} {len(report.divergences)} divergences over {report.probes} probes\n")
    if report.config_error:
        return EXIT_CONFIG
    return EXIT_OK if report.passed else EXIT_FAILED


def cmd_parse_policy(args, out):
    text = Path(args.file).read_text(encoding="utf-8")
    peers = None if args.peers is None else {p.strip() for p in args.peers.split(",") if p.strip()}
    ast = parse_policy(text, peers)
    if args.format == "json":
        out.write(json.dumps(ast_to_dict(ast), indent=2) + "\n")
    else:
        out.write(pretty_print(ast) + "\n")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="sdxsim", description="Software-defined IXP simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="compile a scenario and run its traffic tests")
    p.add_argument("scenario", help="scenario JSON file ('reference' for the bundled one)")
    p.add_argument("--dump", type=_parse_dumps, default=[], help="comma list of rib,edges,vnh,flows")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("check", help="compare the compiled table against the policy oracle")
    p.add_argument("scenario")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("parse-policy", help="parse a policy file and echo its AST")
    p.add_argument("file")
    p.add_argument("--peers", help="comma list of known participant names")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(func=cmd_parse_policy)
    return parser


def main(argv=None, out=None):
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, out)
    except (SdxError, OSError) as exc:
        sys.stderr.write(f"sdxsim: {exc}\n")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
