"""Randomized select / sequence / schedule heuristic (the "3S" method).

Each iteration makes the binary decisions cheaply and then prices them
exactly:

1. *Select* -- one small LP per bus (the queue rows that couple buses are
   dropped, so the problem separates) chooses which trips are followed by a
   charge.  A randomized per-opportunity cost nudges each iteration toward
   a different selection.
2. *Sequence* -- per charger, the selected trips are sorted by their
   first-stage plugin times.
3. *Schedule* -- one LP over the whole fleet fixes exact charge durations,
   plugin times and delays for the chosen binaries.

The driver repeats with fresh random costs, keeps the best plan plus a pool
of near-best plans, and stops early once a zero-delay plan appears (total
delay can never be negative).
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Set, Tuple

import numpy as np

from . import lp as lp_mod
from .formulation import build_schedule_lp
from .lp import GE, LE, LinearProgram, LpStatus
from .model import SINK, SOURCE, Arc, Instance, TripKey

# Threshold above which a first-stage charge duration counts as "charging".
CHARGE_EPS = 1e-6

ChargeKey = Tuple[str, TripKey]


class InfeasibleInstanceError(RuntimeError):
    """A bus cannot meet its charge requirements at all."""


@dataclass(frozen=True)
class ChargingPlan:
    """A complete charging schedule and its delay consequences.

    ``x`` holds the (charger, trip) pairs that charge, ``arcs`` the service
    order of each charger (exactly the x-members), ``t`` the plug durations
    in minutes, ``p``/``d`` the plugin time and departure delay of every
    trip, and ``objective`` the total delay.
    """

    x: FrozenSet[ChargeKey]
    arcs: Mapping[str, Tuple[TripKey, ...]]
    t: Mapping[ChargeKey, float]
    p: Mapping[TripKey, float]
    d: Mapping[TripKey, float]
    objective: float

    def delayed_trips(self, tol: float = 1e-6) -> int:
        return sum(1 for v in self.d.values() if v > tol)

    def charge_after(self, key: TripKey) -> float:
        return sum(v for (cid, k), v in self.t.items() if k == key)

    def to_json_dict(self) -> dict:
        return {
            "objective": self.objective,
            "x": [
                {"charger": cid, "bus": k[0], "seq": k[1]}
                for cid, k in sorted(self.x)
            ],
            "arcs": {
                cid: [{"bus": k[0], "seq": k[1]} for k in order]
                for cid, order in sorted(self.arcs.items())
            },
            "t": [
                {"charger": cid, "bus": k[0], "seq": k[1], "minutes": v}
                for (cid, k), v in sorted(self.t.items())
            ],
            "p": [
                {"bus": k[0], "seq": k[1], "minutes": v}
                for k, v in sorted(self.p.items())
            ],
            "d": [
                {"bus": k[0], "seq": k[1], "minutes": v}
                for k, v in sorted(self.d.items())
            ],
        }


def plan_from_json_dict(data: dict) -> ChargingPlan:
    try:
        x = frozenset(
            (rec["charger"], (rec["bus"], int(rec["seq"]))) for rec in data["x"]
        )
        arcs = {
            cid: tuple((rec["bus"], int(rec["seq"])) for rec in order)
            for cid, order in data["arcs"].items()
        }
        t = {
            (rec["charger"], (rec["bus"], int(rec["seq"]))): float(rec["minutes"])
            for rec in data["t"]
        }
        p = {(rec["bus"], int(rec["seq"])): float(rec["minutes"]) for rec in data["p"]}
        d = {(rec["bus"], int(rec["seq"])): float(rec["minutes"]) for rec in data["d"]}
        return ChargingPlan(
            x=x, arcs=arcs, t=t, p=p, d=d, objective=float(data["objective"])
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed plan document: {exc}") from exc


@dataclass
class HeuristicConfig:
    iterations: int = 500
    theta_std: float = 0.5
    seed: int = 0
    stop_on_zero: bool = True
    keep_fraction_for_cuts: float = 0.5

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.theta_std < 0:
            raise ValueError("theta_std must be >= 0")


@dataclass
class Phase1Result:
    t: Dict[ChargeKey, float]
    d: Dict[TripKey, float]
    x: Set[ChargeKey]
    p: Dict[TripKey, float]


@dataclass
class Result3S:
    best: ChargingPlan
    pool: List[ChargingPlan]
    iterations_run: int
    best_iteration: int
    time_to_best_s: float
    total_time_s: float


def _bus_select_lp(instance: Instance, bus_id: str, theta: Mapping[ChargeKey, float]) -> Tuple[LinearProgram, List[TripKey]]:
    block = instance.block(bus_id)
    prog = LinearProgram()
    power = {c.id: c.power_kw for c in instance.chargers}
    for trip in block:
        prog.add_variable(f"d[{trip.seq}]", lb=0.0, obj=1.0)
        for cid in sorted(instance.bounds[trip.key].tmax_min):
            prog.add_variable(
                f"t[{cid}:{trip.seq}]",
                lb=0.0,
                ub=instance.tmax(cid, trip.key),
                obj=float(theta.get((cid, trip.key), 0.0)),
            )
    for prev, trip in zip(block, block[1:]):
        coeffs = {f"d[{trip.seq}]": 1.0, f"d[{prev.seq}]": -1.0}
        for cid in sorted(instance.bounds[prev.key].tmax_min):
            coeffs[f"t[{cid}:{prev.seq}]"] = -1.0
        prog.add_constraint(
            f"ready[{trip.seq}]",
            coeffs,
            GE,
            prev.sched_end_min - trip.sched_start_min,
        )
    gains: Dict[str, float] = {}
    keys = [t.key for t in block] + [(bus_id, block[-1].seq + 1)]
    for key in keys:
        bnd = instance.bounds[key]
        if gains:
            if bnd.alpha_kwh > 0:
                prog.add_constraint(f"soc_lo[{key[1]}]", dict(gains), GE, bnd.alpha_kwh)
            prog.add_constraint(f"soc_hi[{key[1]}]", dict(gains), LE, bnd.beta_kwh)
        for cid in sorted(bnd.tmax_min):
            gains[f"t[{cid}:{key[1]}]"] = power[cid] / 60.0
    return prog, [t.key for t in block]


def phase1_select(instance: Instance, theta: Mapping[ChargeKey, float]) -> Phase1Result:
    """Choose charging trips bus by bus: one independent LP per block."""

    out = Phase1Result(t={}, d={}, x=set(), p={})
    for bus in instance.buses:
        block = instance.block(bus.id)
        if not block:
            continue
        prog, _ = _bus_select_lp(instance, bus.id, theta)
        sol = lp_mod.solve(prog)
        if sol.status is not LpStatus.OPTIMAL:
            raise InfeasibleInstanceError(
                f"bus {bus.id}: charge requirements cannot be met ({sol.status.value})"
            )
        for trip in block:
            d_val = max(0.0, sol.values[f"d[{trip.seq}]"])
            out.d[trip.key] = d_val
            charging = False
            for cid in sorted(instance.bounds[trip.key].tmax_min):
                t_val = sol.values[f"t[{cid}:{trip.seq}]"]
                if t_val > CHARGE_EPS:
                    out.t[(cid, trip.key)] = t_val
                    out.x.add((cid, trip.key))
                    charging = True
            if charging:
                out.p[trip.key] = d_val + trip.sched_start_min + trip.sched_duration_min
    return out


def phase2_sequence(
    instance: Instance, selection: Phase1Result
) -> Dict[str, Tuple[TripKey, ...]]:
    """Order each charger's selected trips by first-stage plugin time.

    Ties are broken by (bus id, seq) so repeated runs are reproducible.
    """

    orders: Dict[str, List[TripKey]] = {cid: [] for cid, _ in selection.x}
    for cid, key in selection.x:
        orders[cid].append(key)
    result: Dict[str, Tuple[TripKey, ...]] = {}
    for cid in sorted(orders):
        result[cid] = tuple(
            sorted(orders[cid], key=lambda k: (selection.p[k], k[0], k[1]))
        )
    return result


def arcs_from_orders(orders: Mapping[str, Tuple[TripKey, ...]]) -> List[Arc]:
    """Expand ordered trip lists into service arcs, dummy endpoints included."""

    arcs: List[Arc] = []
    for cid in sorted(orders):
        seq = orders[cid]
        if not seq:
            continue
        arcs.append((cid, SOURCE, seq[0]))
        for i, j in zip(seq, seq[1:]):
            arcs.append((cid, i, j))
        arcs.append((cid, seq[-1], SINK))
    return arcs


def materialize_plan(
    instance: Instance,
    x: Iterable[ChargeKey],
    orders: Mapping[str, Tuple[TripKey, ...]],
    known_objective: Optional[float] = None,
) -> ChargingPlan:
    """Price a fixed set of binary decisions into a full plan.

    Lexicographic extraction: minimize total delay, then total charging time
    at that delay, then total plugin time with the charge durations pinned.
    The last step lands exactly on the event-recurrence fixed point, so the
    stored p and d match a discrete-event replay of the plan.
    """

    x_set = frozenset(x)
    order_members = {(cid, k) for cid, seq in orders.items() for k in seq}
    if order_members != set(x_set):
        raise ValueError("charger orders must list exactly the charging trips")
    candidates = set(instance.charge_candidates())
    skip = sorted(candidates - x_set)
    prog = build_schedule_lp(instance, arcs_from_orders(orders), skip, None)

    if known_objective is None:
        stage1 = lp_mod.solve(prog)
        if stage1.status is not LpStatus.OPTIMAL:
            raise RuntimeError(
                f"scheduling LP unexpectedly {stage1.status.value} for fixed binaries"
            )
        z = stage1.objective
    else:
        z = known_objective

    d_ids = {f"d[{k[0]}.{k[1]}]": 1.0 for k in (t.key for t in instance.trips)}
    p_ids = {
        f"p[{k[0]}.{k[1]}]": 1.0
        for k in (t.key for t in instance.trips)
        if prog.has_variable(f"p[{k[0]}.{k[1]}]")
    }
    t_ids = {
        (cid, key): f"t[{cid}:{key[0]}.{key[1]}]" for cid, key in sorted(candidates)
    }
    # The budget pins the re-solves to the optimal delay.  Any slack the
    # re-solve spends can leak into the plan's objective, so start with a
    # hair above round-off and loosen only if that proves numerically
    # infeasible.
    stage2 = None
    for slack in (1e-9, 1e-7):
        if any(r.id == "delay_budget" for r in prog.rows):
            prog.remove_constraint("delay_budget")
        prog.add_constraint("delay_budget", dict(d_ids), LE, z + slack)
        stage2 = lp_mod.solve(
            prog, objective_override={vid: 1.0 for vid in t_ids.values()}
        )
        if stage2.status is LpStatus.OPTIMAL:
            break
    if stage2 is None or stage2.status is not LpStatus.OPTIMAL:
        raise RuntimeError("charge-minimizing re-solve failed")
    t_fixed: Dict[str, Tuple[float, float]] = {}
    t_vals: Dict[ChargeKey, float] = {}
    for (cid, key), vid in t_ids.items():
        val = stage2.values[vid]
        if val < 1e-9:
            val = 0.0
        val = min(val, instance.tmax(cid, key))
        t_fixed[vid] = (val, val)
        if (cid, key) in x_set:
            t_vals[(cid, key)] = val

    soc_tags = {r.tag for r in prog.rows if r.tag and r.tag[0] == "soc"}
    skip_tags = {r.tag for r in prog.rows if r.tag and r.tag[0] == "skip"}
    # Joint p+d objective: every feasible point dominates the event
    # recurrence's least fixed point componentwise, so this lands exactly on
    # the replayed plugin times and delays.
    stage3 = lp_mod.solve(
        prog,
        objective_override={**p_ids, **d_ids},
        bound_overrides=t_fixed,
        disabled_tags=soc_tags | skip_tags,
    )
    if stage3.status is not LpStatus.OPTIMAL:
        raise RuntimeError("plugin-time re-solve failed")

    p_out: Dict[TripKey, float] = {}
    d_out: Dict[TripKey, float] = {}
    for trip in instance.trips:
        k = trip.key
        d_out[k] = max(0.0, stage3.values[f"d[{k[0]}.{k[1]}]"])
        if d_out[k] < 1e-7:
            d_out[k] = 0.0
        pid = f"p[{k[0]}.{k[1]}]"
        if pid in stage3.values:
            p_out[k] = stage3.values[pid]
        else:
            # No charger at this trip's end: plugin time is the completion.
            p_out[k] = trip.sched_start_min + d_out[k] + trip.sched_duration_min
    objective = sum(d_out.values())
    return ChargingPlan(
        x=x_set,
        arcs={cid: tuple(seq) for cid, seq in orders.items() if seq},
        t=t_vals,
        p=p_out,
        d=d_out,
        objective=objective,
    )


def phase3_schedule(
    instance: Instance,
    x: Iterable[ChargeKey],
    orders: Mapping[str, Tuple[TripKey, ...]],
) -> ChargingPlan:
    """Optimal charge durations, plugin times and delays for fixed binaries."""

    return materialize_plan(instance, x, orders)


def run_3s(
    instance: Instance, config: Optional[HeuristicConfig] = None, trace=None
) -> Result3S:
    """Multi-start driver: best-of-N plans plus a pool of near-best plans.

    The pool keeps every distinct binary decision whose delay is within
    ``keep_fraction_for_cuts`` of the best (used to warm-start the exact
    decomposition).  With a fixed seed the result is bit-identical across
    runs.
    """

    config = config or HeuristicConfig()
    rng = np.random.default_rng(config.seed)
    candidates = instance.charge_candidates()
    start = time.perf_counter()

    entries: List[Tuple[float, int, FrozenSet[ChargeKey], Dict[str, Tuple[TripKey, ...]]]] = []
    best_obj = float("inf")
    best_iter = 0
    time_to_best = 0.0

    iterations_run = 0
    for iteration in range(1, config.iterations + 1):
        iterations_run = iteration
        theta_draw = rng.normal(0.0, config.theta_std, size=len(candidates))
        theta = {c: float(v) for c, v in zip(candidates, theta_draw)}
        selection = phase1_select(instance, theta)
        orders = phase2_sequence(instance, selection)
        skip = sorted(set(candidates) - selection.x)
        prog = build_schedule_lp(instance, arcs_from_orders(orders), skip, None)
        sol = lp_mod.solve(prog)
        if sol.status is not LpStatus.OPTIMAL:
            raise RuntimeError(
                f"scheduling LP {sol.status.value} on iteration {iteration}"
            )
        obj = sol.objective
        # Anything below a tenth of a microsecond of delay is solver noise.
        if abs(obj) < 1e-7:
            obj = 0.0
        entries.append((obj, iteration, frozenset(selection.x), orders))
        if obj < best_obj - 1e-12:
            best_obj = obj
            best_iter = iteration
            time_to_best = time.perf_counter() - start
        if trace is not None:
            trace.write(
                f"iteration={iteration} objective={obj:.6f} "
                f"wall_s={time.perf_counter() - start:.3f}\n"
            )
        if config.stop_on_zero and obj <= 0.0:
            break

    cutoff = best_obj * (1.0 + config.keep_fraction_for_cuts) + 1e-9
    entries.sort(key=lambda e: (e[0], e[1]))
    seen: Set[Tuple[FrozenSet[ChargeKey], Tuple[Tuple[str, Tuple[TripKey, ...]], ...]]] = set()
    pool: List[ChargingPlan] = []
    for obj, iteration, x_set, orders in entries:
        if obj > cutoff:
            break
        fingerprint = (x_set, tuple(sorted(orders.items())))
        if fingerprint in seen:
            continue
        seen.add(fingerprint)
        pool.append(materialize_plan(instance, x_set, orders, known_objective=obj))

    total = time.perf_counter() - start
    return Result3S(
        best=pool[0],
        pool=pool,
        iterations_run=iterations_run,
        best_iteration=best_iter,
        time_to_best_s=time_to_best,
        total_time_s=total,
    )
