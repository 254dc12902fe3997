"""`mpenc-sim`: run scripted group-messaging scenarios and report results.

Exit codes: 0 on success, 1 when an assertion fails, 2 when the scenario
file is missing, malformed, or violates the schema.
"""

from __future__ import annotations

import argparse
import datetime
import json
import pathlib
import sys
from importlib import resources

from .scenario import (
    SchemaError,
    build_report,
    parse_scenario,
    report_json,
    run_scenario,
)


def bundled_scenarios() -> dict[str, pathlib.Path]:
    root = resources.files("mpenc").joinpath("scenarios")
    return {
        path.name.removesuffix(".json"): path
        for path in sorted(root.iterdir(), key=lambda p: p.name)
        if path.name.endswith(".json")
    }


def _load(target: str):
    path = pathlib.Path(target)
    if path.exists():
        text = path.read_text()
        default_name = path.stem
    else:
        bundled = bundled_scenarios()
        if target not in bundled:
            known = ", ".join(sorted(bundled))
            raise SchemaError(
                f"no such file or bundled scenario: {target!r} (bundled: {known})"
            )
        text = bundled[target].read_text()
        default_name = target
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not valid JSON: {exc}") from exc
    return parse_scenario(doc, default_name=default_name)


def _dump_transcripts(run, directory: str) -> None:
    out = pathlib.Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    for member in run.scenario.members:
        lines = [
            f"{author}: {body.decode('utf-8', 'replace')}"
            for author, body in run.sessions[member].log
        ]
        (out / f"{member}.txt").write_text("\n".join(lines) + "\n")


def _dump_dot(run, directory: str) -> None:
    out = pathlib.Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    for member in run.scenario.members:
        session = run.sessions[member]
        # Prefer the newest subsession that actually carries messages; a
        # just-swapped empty transcript makes for a useless picture.
        sub = next(
            (s for s in (session.cur, session.prev) if s and len(s.transcript)),
            session.cur,
        )
        dot = sub.transcript.to_dot(member) if sub else f'digraph "{member}" {{\n}}\n'
        (out / f"{member}.dot").write_text(dot)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="mpenc-sim",
        description="Deterministic simulator for the mpenc group-messaging "
        "protocol: scripted members, a reflecting group channel, fault "
        "injection, and machine-checkable assertions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="run a scenario file and print a report")
    runp.add_argument(
        "scenario",
        help="path to a scenario JSON file, or the name of a bundled scenario",
    )
    runp.add_argument(
        "--seed", type=int, default=0,
        help="integer seed for all randomness (default: 0)",
    )
    runp.add_argument(
        "--no-timestamp", action="store_true",
        help="omit the generated_at header so reports are byte-reproducible",
    )
    runp.add_argument(
        "--dump-transcripts", metavar="DIR",
        help="write each member's message log to DIR/<member>.txt",
    )
    runp.add_argument(
        "--dot", metavar="DIR",
        help="write each member's causal graph to DIR/<member>.dot",
    )

    listp = sub.add_parser("list", help="list bundled scenarios")

    args = parser.parse_args(argv)

    if args.command == "list":
        for name in sorted(bundled_scenarios()):
            print(name)
        return 0

    try:
        sc = _load(args.scenario)
    except (SchemaError, OSError) as exc:
        print(f"mpenc-sim: {exc}", file=sys.stderr)
        return 2

    run = run_scenario(sc, seed=args.seed)
    timestamp = None
    if not args.no_timestamp:
        timestamp = datetime.datetime.now(datetime.timezone.utc).isoformat()
    report = build_report(run, timestamp=timestamp)
    sys.stdout.write(report_json(report))

    if args.dump_transcripts:
        _dump_transcripts(run, args.dump_transcripts)
    if args.dot:
        _dump_dot(run, args.dot)
    return 0 if report["ok"] else 1


if __name__ == "__main__":
    sys.exit(main())
