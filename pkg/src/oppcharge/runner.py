"""One entry point for solving an instance by any method.

Wraps the three solvers behind a single call that also produces the summary
record used by the reports: best objective (bo), time to reach it (t_bo),
total time (t_t), and the number of delayed trips (nd).
"""

from __future__ import annotations

import io
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from .benders import (
    CbConfig,
    arcs_to_orders,
    decode_master,
    detect_subtours,
    plan_to_binaries,
    solve_cb,
)
from .formulation import build_full_milp
from .heuristic import ChargingPlan, HeuristicConfig, materialize_plan, run_3s
from .mip import BnbStatus, solve_bnb
from .model import SINK, SOURCE, Instance

METHODS = ("direct", "cb", "3s")


@dataclass
class SolveOptions:
    method: str = "3s"
    iterations: int = 500
    seed: int = 0
    time_limit_s: float = 3600.0
    stop_on_zero: bool = True
    warm_start: bool = True  # direct only: prime with a heuristic plan
    warm_iterations: int = 50


@dataclass
class SolveOutcome:
    plan: Optional[ChargingPlan]
    method: str
    proven_optimal: bool
    timed_out: bool
    bo: Optional[float]
    t_bo: float
    t_t: float
    nd: Optional[int]
    trace_lines: List[str] = field(default_factory=list)

    def summary_dict(self) -> Dict[str, object]:
        return {
            "method": self.method,
            "bo": self.bo,
            "t_bo": round(self.t_bo, 6),
            "t_t": round(self.t_t, 6),
            "nd": self.nd,
            "proven_optimal": self.proven_optimal,
            "timed_out": self.timed_out,
        }


def solve_instance(instance: Instance, options: Optional[SolveOptions] = None) -> SolveOutcome:
    options = options or SolveOptions()
    if options.method not in METHODS:
        raise ValueError(f"unknown method {options.method!r}; pick one of {METHODS}")
    trace = io.StringIO()
    start = time.perf_counter()

    if options.method == "3s":
        result = run_3s(
            instance,
            HeuristicConfig(
                iterations=options.iterations,
                seed=options.seed,
                stop_on_zero=options.stop_on_zero,
            ),
            trace=trace,
        )
        plan = result.best
        return SolveOutcome(
            plan=plan,
            method="3s",
            proven_optimal=plan.objective <= 1e-9,
            timed_out=False,
            bo=plan.objective,
            t_bo=result.time_to_best_s,
            t_t=time.perf_counter() - start,
            nd=plan.delayed_trips(),
            trace_lines=trace.getvalue().splitlines(),
        )

    if options.method == "cb":
        config = CbConfig(
            heuristic=HeuristicConfig(
                iterations=options.iterations,
                seed=options.seed,
                stop_on_zero=options.stop_on_zero,
            ),
            time_limit_s=options.time_limit_s,
            seed=options.seed,
        )
        result = solve_cb(instance, config, trace=trace)
        return SolveOutcome(
            plan=result.plan,
            method="cb",
            proven_optimal=result.proven_optimal,
            timed_out=result.state.stats.termination == "time_limit",
            bo=result.plan.objective,
            t_bo=result.state.stats.wall_s,
            t_t=time.perf_counter() - start,
            nd=result.plan.delayed_trips(),
            trace_lines=trace.getvalue().splitlines(),
        )

    # Direct: the complete mixed-integer model through branch and bound,
    # optionally primed with a quick heuristic incumbent.
    mip, vi = build_full_milp(instance)
    warm = None
    if options.warm_start and options.warm_iterations > 0:
        heur = run_3s(
            instance,
            HeuristicConfig(iterations=options.warm_iterations, seed=options.seed),
        )
        warm = plan_to_binaries(instance, heur.best, vi)
        trace.write(f"warm plan objective={heur.best.objective:.6f}\n")
    elapsed = time.perf_counter() - start
    res = solve_bnb(
        mip,
        time_limit_s=max(options.time_limit_s - elapsed, 0.0),
        warm_start=warm,
        trace=trace,
    )
    if res.values is None:
        return SolveOutcome(
            plan=None,
            method="direct",
            proven_optimal=False,
            timed_out=res.status is BnbStatus.TIME_LIMIT,
            bo=None,
            t_bo=0.0,
            t_t=time.perf_counter() - start,
            nd=None,
            trace_lines=trace.getvalue().splitlines(),
        )
    plan = plan_from_assignment(instance, vi, res.values, res.objective)
    return SolveOutcome(
        plan=plan,
        method="direct",
        proven_optimal=res.status is BnbStatus.OPTIMAL,
        timed_out=res.status is BnbStatus.TIME_LIMIT,
        bo=plan.objective,
        t_bo=time.perf_counter() - start,
        t_t=time.perf_counter() - start,
        nd=plan.delayed_trips(),
        trace_lines=trace.getvalue().splitlines(),
    )


def plan_from_assignment(
    instance: Instance, vi, values: Dict[str, float], objective: float
) -> ChargingPlan:
    """Turn a complete-model solution into a plan.

    Zero-duration cycles are legal in the complete model but pointless; the
    optimum never needs them, so they are dropped and the path re-priced
    (same objective, cleaner plan).
    """

    x_on, arcs = decode_master(instance, vi, values)
    cycles = detect_subtours(arcs)
    if cycles:
        cycle_trips = {(cid, k) for cid, cyc in cycles for k in cyc}
        arcs = [
            (cid, i, j)
            for cid, i, j in arcs
            if not (
                (i != SOURCE and (cid, i) in cycle_trips)
                or (j != SINK and (cid, j) in cycle_trips)
            )
        ]
    orders = arcs_to_orders(arcs)
    orders = {cid: seq for cid, seq in orders.items() if seq}
    x_set = {(cid, k) for cid, seq in orders.items() for k in seq}
    return materialize_plan(instance, x_set, orders)
