"""Command line front door: scenario runs, sync studies, EDL tools, serving.

Four subcommands share one executable so the artifacts stay discoverable:

  simulate    run a scenario file; write its trace and report, echo the report
  sync-study  Monte-Carlo capture-sync table over a loss x rate grid
  edl         validate or canonicalize an edit-decision-list file
  serve       host the live gateway for the companion UI

Exit codes are a stable contract: 0 success, 2 usage or schema errors
(bad flags, unreadable files, scenario or EDL violations), 3 errors raised
by the simulation itself after a scenario parsed cleanly.

Every output is deterministic given (inputs, seed): reports and tables are
plain text with a fixed field order, so runs can be diffed byte for byte.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .geometry import GeometryError
from .netsim import SimError, parse_latency
from .playback import (PlaybackError, export_edl, parse_edl, serialize_edl,
                       timeline_from_plan)
from .protocol import ProtocolError
from .scenario import ScenarioError, load_scenario, render_report, run_scenario
from .swarm import SwarmError
from .sync import DEFAULT_RATE_HZ, SyncError, run_study

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3

# Anything the simulation can legitimately raise once a scenario has parsed.
_RUNTIME_ERRORS = (ScenarioError, GeometryError, SwarmError, SyncError,
                   ProtocolError, PlaybackError)


def _fail(code: int, message: str) -> int:
    print(f"camswarm: {message}", file=sys.stderr)
    return code


# --- simulate -----------------------------------------------------------


def cmd_simulate(ns: argparse.Namespace) -> int:
    try:
        scenario = load_scenario(ns.scenario)
    except ScenarioError as exc:
        return _fail(EXIT_USAGE, str(exc))
    try:
        result = run_scenario(scenario, seed=ns.seed)
    except _RUNTIME_ERRORS as exc:
        return _fail(EXIT_RUNTIME, f"simulation failed: {exc}")
    report = render_report(result)
    out = Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{result.name}.report.txt").write_text(report, encoding="utf-8")
    (out / f"{result.name}.trace.txt").write_text(result.trace_text,
                                                  encoding="utf-8")
    sys.stdout.write(report)
    return EXIT_OK


# --- sync-study ---------------------------------------------------------


def _study_cell(result) -> str:
    worst = [r.max_skew_ms for r in result.rows if r.max_skew_ms is not None]
    mean = result.mean_latency_ms
    return " ".join((
        f"{result.miss_rate:.6f}",
        "n/a" if mean is None else f"{mean:.3f}",
        "n/a" if not worst else f"{max(worst):.3f}",
    ))


def cmd_sync_study(ns: argparse.Namespace) -> int:
    rows = [f"sync-study trials={ns.trials} clients={ns.clients} "
            f"latency={ns.latency} seed0={ns.seed}",
            "loss rate_hz mode miss_rate mean_latency_ms max_skew_ms"]
    for loss in ns.loss:
        for rate in ns.rate_hz:
            result = run_study(ns.trials, seed0=ns.seed, loss=loss,
                               rate_hz=rate, n_clients=ns.clients,
                               latency=ns.latency_dist)
            rows.append(f"{loss:.3f} {rate:g} countdown {_study_cell(result)}")
        # One-packet baseline: what the same network does without redundancy.
        result = run_study(ns.trials, seed0=ns.seed, loss=loss,
                           rate_hz=DEFAULT_RATE_HZ, n_clients=ns.clients,
                           latency=ns.latency_dist, single_shot=True)
        rows.append(f"{loss:.3f} - single_shot {_study_cell(result)}")
    sys.stdout.write("\n".join(rows) + "\n")
    return EXIT_OK


# --- edl ----------------------------------------------------------------


def cmd_edl(ns: argparse.Namespace) -> int:
    try:
        text = Path(ns.file).read_text(encoding="utf-8")
    except OSError as exc:
        return _fail(EXIT_USAGE, f"cannot read EDL file: {exc}")
    try:
        plan = parse_edl(text)
        timeline = timeline_from_plan(plan)
    except PlaybackError as exc:
        return _fail(EXIT_USAGE, f"invalid EDL: {exc}")
    if ns.action == "validate":
        print(f"ok duration_ms {plan.duration_ms:g} views {len(plan.views)} "
              f"segments {len(plan.segments)} markers {len(plan.markers)}")
    else:  # render-plan: canonical serialization of the reconstructed edit
        sys.stdout.write(serialize_edl(export_edl(timeline)))
    return EXIT_OK


# --- serve --------------------------------------------------------------


def _run_uvicorn(app, host: str, port: int) -> None:
    import uvicorn

    uvicorn.run(app, host=host, port=port, log_level="warning")


def cmd_serve(ns: argparse.Namespace) -> int:
    from .gateway import create_app

    try:
        scenario = load_scenario(ns.scenario)
    except ScenarioError as exc:
        return _fail(EXIT_USAGE, str(exc))
    if ns.pace < 0:
        return _fail(EXIT_USAGE, "pace must be >= 0")
    app = create_app(scenario, pace=ns.pace)
    print(f"serving scenario {scenario.name!r} on http://{ns.host}:{ns.port} "
          f"(pace {ns.pace:g})")
    _run_uvicorn(app, ns.host, ns.port)
    return EXIT_OK


# --- argument plumbing --------------------------------------------------


def _float_grid(parser: argparse.ArgumentParser, text: str, name: str,
                lo: float | None = None, hi: float | None = None) -> list[float]:
    try:
        values = [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        parser.error(f"{name} must be a comma-separated list of numbers")
    if not values:
        parser.error(f"{name} must name at least one value")
    for v in values:
        if (lo is not None and v < lo) or (hi is not None and v > hi):
            parser.error(f"{name} values must lie in [{lo}, {hi}]")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="camswarm",
        description="simulated smartphone camera-swarm toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a scenario; write trace + report")
    p.add_argument("--scenario", required=True, help="scenario file (.scn)")
    p.add_argument("--seed", type=int, default=None,
                   help="override the scenario's seed")
    p.add_argument("--out", default=".",
                   help="directory for the report and trace files")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sync-study",
                       help="capture-sync miss/latency table over a grid")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--loss", default="0.0,0.25,0.5",
                   help="comma-separated loss probabilities")
    p.add_argument("--rate-hz", dest="rate_hz", default="1,20",
                   help="comma-separated countdown signal rates")
    p.add_argument("--latency", default="uniform:30:200",
                   help="latency distribution, e.g. uniform:30:200")
    p.add_argument("--clients", type=int, default=1,
                   help="receiving devices per trial")
    p.add_argument("--seed", type=int, default=0, help="first trial seed")
    p.set_defaults(func=cmd_sync_study)

    p = sub.add_parser("edl", help="validate or canonicalize an EDL file")
    p.add_argument("action", choices=("validate", "render-plan"))
    p.add_argument("file")
    p.set_defaults(func=cmd_edl)

    p = sub.add_parser("serve", help="host the live gateway")
    p.add_argument("--scenario", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--pace", type=float, default=1.0,
                   help="simulated ms per wall ms (0 = step on demand)")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    if ns.command == "sync-study":
        if ns.trials < 1:
            parser.error("trials must be >= 1")
        if ns.clients < 1:
            parser.error("clients must be >= 1")
        ns.loss = _float_grid(parser, ns.loss, "loss", 0.0, 1.0)
        ns.rate_hz = _float_grid(parser, ns.rate_hz, "rate-hz", lo=0.0)
        if any(r <= 0 for r in ns.rate_hz):
            parser.error("rate-hz values must be positive")
        try:
            ns.latency_dist = parse_latency(ns.latency)
        except (SimError, ValueError) as exc:
            parser.error(str(exc))
    return ns.func(ns)


if __name__ == "__main__":
    sys.exit(main())
