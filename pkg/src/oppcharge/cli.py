"""Command-line front door: a thin client of the scheduling service.

Every subcommand reads/writes local files and delegates the actual work to
the HTTP API -- against an in-process copy of the service by default, or a
remote one with ``--server``.  Exit codes: 0 success, 2 validation or input
failure, 3 solver hit its time limit without any solution.

Subcommands::

    oppcharge generate-notional --power-kw 450 out.json
    oppcharge solve instance.json --method 3s --iterations 500 --seed 7 --out-dir run1
    oppcharge evaluate instance.json run1/plan.json
    oppcharge scenario instance.json --window 07:00-09:00 --multiplier 1.4 out.json
    oppcharge validate instance.json
    oppcharge serve --host 127.0.0.1 --port 8000
"""

from __future__ import annotations

import argparse
import asyncio
import csv
import json
import os
import sys
from typing import Dict, Optional

import httpx

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_TIME_LIMIT = 3


class ServiceClient:
    """POSTs to a running service, or to an in-process app when no URL given."""

    def __init__(self, server: Optional[str] = None) -> None:
        self.server = server

    def post(self, path: str, payload: dict) -> httpx.Response:
        if self.server:
            with httpx.Client(base_url=self.server, timeout=None) as client:
                return client.post(path, json=payload)

        async def _run() -> httpx.Response:
            from .service.app import app

            transport = httpx.ASGITransport(app=app)
            async with httpx.AsyncClient(
                transport=transport, base_url="http://oppcharge.local", timeout=None
            ) as client:
                return await client.post(path, json=payload)

        return asyncio.run(_run())


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return EXIT_INVALID


def _load_json(path: str) -> Optional[dict]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read {path}: {exc}", file=sys.stderr)
        return None


def _write_json(data: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(data, f, indent=2)
        f.write("\n")


def _detail_text(resp: httpx.Response) -> str:
    try:
        detail = resp.json().get("detail")
    except ValueError:
        return resp.text
    if isinstance(detail, dict) and "violations" in detail:
        return "\n".join(detail["violations"])
    return str(detail)


def _parse_clock(text: str) -> float:
    if ":" in text:
        hours, minutes = text.split(":", 1)
        return float(hours) * 60.0 + float(minutes)
    return float(text)


def _summary_lines(summary: Dict[str, object]) -> str:
    lines = []
    for key in ("method", "bo", "t_bo", "t_t", "nd", "proven_optimal", "timed_out"):
        value = summary.get(key)
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif value is None:
            value = "none"
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def _write_schedule_csv(rows, path: str) -> None:
    header = [
        "bus", "seq", "sched_start_min", "delay_min", "actual_start_min",
        "sched_duration_min", "end_min", "charger", "plugin_min",
        "charge_min", "unplug_min",
    ]
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([row.get(k) if row.get(k) is not None else "" for k in header])


def _write_histogram_csv(hist: Dict[str, float], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["hour", "charging_min"])
        for hour in sorted(hist, key=int):
            writer.writerow([hour, hist[hour]])


def cmd_generate(args, client: ServiceClient) -> int:
    resp = client.post("/instances/notional", {"power_kw": args.power_kw})
    if resp.status_code != 200:
        return _fail(_detail_text(resp))
    _write_json(resp.json()["instance"], args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_validate(args, client: ServiceClient) -> int:
    doc = _load_json(args.instance)
    if doc is None:
        return EXIT_INVALID
    resp = client.post("/instances/validate", {"instance": doc})
    if resp.status_code != 200:
        return _fail(_detail_text(resp))
    body = resp.json()
    if body["ok"]:
        print("ok")
        return EXIT_OK
    for violation in body["violations"]:
        print(violation)
    return EXIT_INVALID


def cmd_solve(args, client: ServiceClient) -> int:
    doc = _load_json(args.instance)
    if doc is None:
        return EXIT_INVALID
    payload = {
        "instance": doc,
        "method": args.method,
        "iterations": args.iterations,
        "seed": args.seed,
        "time_limit_s": args.time_limit_s,
        "warm_start": not args.no_warm_start,
        "include_trace": True,
    }
    resp = client.post("/solve", payload)
    if resp.status_code != 200:
        return _fail(_detail_text(resp))
    body = resp.json()
    summary = body["summary"]

    os.makedirs(args.out_dir, exist_ok=True)
    text = _summary_lines(summary)
    sys.stdout.write(text)
    with open(os.path.join(args.out_dir, "summary.txt"), "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    if body.get("trace"):
        with open(os.path.join(args.out_dir, "solve_trace.log"), "w", encoding="utf-8", newline="\n") as f:
            f.write("\n".join(body["trace"]) + "\n")
    if body["plan"] is None:
        print("no solution within the time limit", file=sys.stderr)
        return EXIT_TIME_LIMIT
    _write_json(body["plan"], os.path.join(args.out_dir, "plan.json"))
    _write_schedule_csv(body["schedule"], os.path.join(args.out_dir, "schedule.csv"))
    _write_histogram_csv(body["histogram"], os.path.join(args.out_dir, "histogram.csv"))
    return EXIT_OK


def cmd_evaluate(args, client: ServiceClient) -> int:
    instance = _load_json(args.instance)
    plan = _load_json(args.plan)
    if instance is None or plan is None:
        return EXIT_INVALID
    resp = client.post("/evaluate", {"instance": instance, "plan": plan})
    if resp.status_code != 200:
        return _fail(_detail_text(resp))
    body = resp.json()
    print(f"feasible={'true' if body['feasible'] else 'false'}")
    print(f"recomputed_objective={body['recomputed_objective']}")
    print(f"stored_objective={body['stored_objective']}")
    print(f"recomputed_delayed_trips={body['recomputed_delayed_trips']}")
    print(f"delays_match_plan={'true' if body['delays_match_plan'] else 'false'}")
    for violation in body["violations"]:
        print(f"violation: {violation}")
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        _write_schedule_csv(body["schedule"], os.path.join(args.out_dir, "schedule.csv"))
        _write_histogram_csv(body["histogram"], os.path.join(args.out_dir, "histogram.csv"))
    return EXIT_OK if body["feasible"] else EXIT_INVALID


def cmd_scenario(args, client: ServiceClient) -> int:
    doc = _load_json(args.instance)
    if doc is None:
        return EXIT_INVALID
    try:
        start_text, end_text = args.window.split("-", 1)
        start, end = _parse_clock(start_text), _parse_clock(end_text)
    except ValueError:
        return _fail(f"cannot parse window {args.window!r}; use HH:MM-HH:MM or minutes")
    if start >= end:
        return _fail("window start must precede window end")
    resp = client.post(
        "/instances/scenario",
        {
            "instance": doc,
            "window_start_min": start,
            "window_end_min": end,
            "duration_multiplier": args.multiplier,
        },
    )
    if resp.status_code != 200:
        return _fail(_detail_text(resp))
    _write_json(resp.json()["instance"], args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_serve(args, client: ServiceClient) -> int:
    import uvicorn

    from .service.app import app

    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oppcharge",
        description="Minimum-delay opportunity-charging schedules for electric buses",
    )
    parser.add_argument(
        "--server",
        default=None,
        help="base URL of a running service (default: run in-process)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-notional", help="write the benchmark instance")
    p.add_argument("out")
    p.add_argument("--power-kw", type=float, required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("validate", help="check an instance file")
    p.add_argument("instance")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("solve", help="solve an instance and write plan + reports")
    p.add_argument("instance")
    p.add_argument("--method", choices=["direct", "cb", "3s"], default="3s")
    p.add_argument("--time-limit-s", type=float, default=3600.0)
    p.add_argument("--iterations", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="out")
    p.add_argument(
        "--no-warm-start",
        action="store_true",
        help="direct method only: skip the heuristic incumbent",
    )
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("evaluate", help="audit a plan file against an instance")
    p.add_argument("instance")
    p.add_argument("plan")
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("scenario", help="stretch trip durations inside a window")
    p.add_argument("instance")
    p.add_argument("out")
    p.add_argument("--window", required=True, help="HH:MM-HH:MM or minutes-minutes")
    p.add_argument("--multiplier", type=float, required=True)
    p.set_defaults(func=cmd_scenario)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    client = ServiceClient(args.server)
    return args.func(args, client)


if __name__ == "__main__":
    sys.exit(main())
