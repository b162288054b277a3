"""Discrete-event replay of charging plans, scenario transforms, reporting.

``replay`` re-derives every plugin time and delay of a plan from nothing but
the timetable, the plug durations and the charger service orders, by direct
event recurrences:

    delay(i)  = max(0, ready(prev(i)) - sched_start(i))
    plugin(i) = max(completion(i), unplug(predecessor at the charger))

It never touches the LP machinery, which makes it an independent check of
the optimization models: for any plan the package produces, the replayed
plugin times and delays must match the stored ones.
"""

from __future__ import annotations

import csv
import heapq
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Tuple

from .heuristic import ChargingPlan
from .model import Instance, Trip, TripKey, build_instance

CHARGE_TOL = 1e-6


class SubtourCycleError(ValueError):
    """Plan arcs contain a cyclic service dependency."""


@dataclass(frozen=True)
class ScenarioTransform:
    """Stretch trip durations inside a time window (exogenous congestion).

    Applies to trips whose scheduled start falls in the half-open window
    ``[window_start_min, window_end_min)``.
    """

    window_start_min: float
    window_end_min: float
    duration_multiplier: float

    def __post_init__(self) -> None:
        if self.window_start_min >= self.window_end_min:
            raise ValueError("scenario window must satisfy start < end")
        if self.duration_multiplier <= 0:
            raise ValueError("duration multiplier must be positive")


def replay(
    instance: Instance, plan: ChargingPlan
) -> Tuple[Dict[TripKey, float], Dict[TripKey, float]]:
    """Re-derive (plugin, delay) per trip by evaluating the event recurrences.

    Dependencies run along blocks and along each charger's service order;
    both point forward in a valid plan, so the events form a DAG evaluated
    in topological order.  A cyclic dependency (a subtour) is an error.
    """

    charge_after: Dict[TripKey, float] = {}
    for (cid, key), minutes in plan.t.items():
        charge_after[key] = charge_after.get(key, 0.0) + minutes

    arc_pred: Dict[TripKey, Tuple[TripKey, float]] = {}
    deps: Dict[TripKey, List[TripKey]] = {t.key: [] for t in instance.trips}
    indeg: Dict[TripKey, int] = {t.key: 0 for t in instance.trips}
    for cid, order in plan.arcs.items():
        for i, j in zip(order, order[1:]):
            t_i = plan.t.get((cid, i), 0.0)
            arc_pred[j] = (i, t_i)
            deps[i].append(j)
            indeg[j] += 1
    for trip in instance.trips:
        prev = instance.predecessor(trip.key)
        if prev is not None:
            deps[prev.key].append(trip.key)
            indeg[trip.key] += 1

    ready = [k for k, n in sorted(indeg.items()) if n == 0]
    heapq.heapify(ready)
    p: Dict[TripKey, float] = {}
    d: Dict[TripKey, float] = {}
    done = 0
    while ready:
        key = heapq.heappop(ready)
        done += 1
        trip = instance.trip(key)
        prev = instance.predecessor(key)
        if prev is None:
            d[key] = 0.0
        else:
            unplug_prev = p[prev.key] + charge_after.get(prev.key, 0.0)
            d[key] = max(0.0, unplug_prev - trip.sched_start_min)
        completion = trip.sched_start_min + d[key] + trip.sched_duration_min
        plug = completion
        if key in arc_pred:
            pred_key, pred_t = arc_pred[key]
            plug = max(plug, p[pred_key] + pred_t)
        p[key] = plug
        for nxt in deps[key]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                heapq.heappush(ready, nxt)
    if done != len(instance.trips):
        raise SubtourCycleError(
            "service-order arcs form a cycle; no event order exists"
        )
    return p, d


def replay_fifo(
    instance: Instance,
    x: Iterable[Tuple[str, TripKey]],
    t: Mapping[Tuple[str, TripKey], float],
) -> Tuple[Dict[TripKey, float], Dict[TripKey, float]]:
    """Sanity-mode replay: chargers serve buses in order of arrival.

    Not used when solving (there the service order is a decision); kept for
    what-if comparisons against the optimized orders.
    """

    wants: Dict[TripKey, Tuple[str, float]] = {}
    for cid, key in x:
        wants[key] = (cid, t.get((cid, key), 0.0))
    charger_free: Dict[str, float] = {c.id: float("-inf") for c in instance.chargers}
    p: Dict[TripKey, float] = {}
    d: Dict[TripKey, float] = {}
    # (completion_time, key) events; ties resolved by trip key.
    events = []
    for trip in instance.trips:
        if trip.seq == 1:
            d[trip.key] = 0.0
            events.append((trip.sched_end_min, trip.key))
    heapq.heapify(events)
    while events:
        completion, key = heapq.heappop(events)
        trip = instance.trip(key)
        if key in wants:
            cid, dur = wants[key]
            plug = max(completion, charger_free[cid])
            charger_free[cid] = plug + dur
            p[key] = plug
            unplug = plug + dur
        else:
            p[key] = completion
            unplug = completion
        nxt = instance._trip_map.get((key[0], key[1] + 1))
        if nxt is not None:
            d[nxt.key] = max(0.0, unplug - nxt.sched_start_min)
            heapq.heappush(
                events, (nxt.sched_start_min + d[nxt.key] + nxt.sched_duration_min, nxt.key)
            )
    return p, d


def apply_scenario(instance: Instance, transform: ScenarioTransform) -> Instance:
    """Return a new instance with durations stretched inside the window.

    Energies are untouched, so every charge window and arc network carries
    over unchanged; only the timetable (and the derived horizon) moves.
    """

    new_trips = []
    for trip in instance.trips:
        if transform.window_start_min <= trip.sched_start_min < transform.window_end_min:
            new_trips.append(
                Trip(
                    bus=trip.bus,
                    seq=trip.seq,
                    sched_start_min=trip.sched_start_min,
                    sched_duration_min=trip.sched_duration_min
                    * transform.duration_multiplier,
                    energy_kwh=trip.energy_kwh,
                    start_terminal=trip.start_terminal,
                    end_terminal=trip.end_terminal,
                )
            )
        else:
            new_trips.append(trip)
    return build_instance(list(instance.buses), new_trips, list(instance.chargers))


def hourly_charging_histogram(plan: ChargingPlan) -> Dict[int, float]:
    """Minutes of charging per clock hour; intervals split at hour marks.

    The values always sum to the plan's total charging time.
    """

    last_hour = 23
    for (cid, key), minutes in plan.t.items():
        if minutes > 0:
            last_hour = max(last_hour, int((plan.p[key] + minutes) // 60))
    hist = {h: 0.0 for h in range(last_hour + 1)}
    for (cid, key), minutes in plan.t.items():
        if minutes <= 0:
            continue
        start = plan.p[key]
        end = start + minutes
        hour = int(start // 60)
        while start < end - 1e-12:
            boundary = (hour + 1) * 60.0
            chunk = min(end, boundary) - start
            hist[hour] += chunk
            start += chunk
            hour += 1
    return hist


def check_plan(instance: Instance, plan: ChargingPlan) -> List[str]:
    """Feasibility audit of a plan against its instance.

    Verifies plug-duration limits, the per-trip cumulative charge windows
    (block sentinels included), and the x / arcs / t consistency rules.
    Violations come back as messages; an empty list means feasible.
    """

    problems: List[str] = []
    candidates = set(instance.charge_candidates())
    for cid, key in plan.x:
        if (cid, key) not in candidates:
            problems.append(f"plan charges trip {key} at unreachable charger {cid}")
    order_members = {
        (cid, k) for cid, order in plan.arcs.items() for k in order
    }
    if order_members != set(plan.x):
        problems.append("charger orders do not list exactly the charging trips")
    for (cid, key), minutes in plan.t.items():
        if minutes < -1e-9:
            problems.append(f"negative charge duration after trip {key}")
        if minutes > CHARGE_TOL + instance.tmax(cid, key):
            problems.append(f"charge after trip {key} exceeds the plug limit at {cid}")
        if minutes > CHARGE_TOL and (cid, key) not in plan.x:
            problems.append(f"positive charge after trip {key} without selecting it")
    power = {c.id: c.power_kw for c in instance.chargers}
    for bus in instance.buses:
        block = instance.block(bus.id)
        if not block:
            continue
        gained = 0.0
        keys = [t.key for t in block] + [(bus.id, block[-1].seq + 1)]
        for key in keys:
            bnd = instance.bounds[key]
            if gained < bnd.alpha_kwh - CHARGE_TOL:
                problems.append(
                    f"trip {key}: cumulative charge {gained:.3f} kWh is below the "
                    f"required {bnd.alpha_kwh:.3f} kWh"
                )
            if gained > bnd.beta_kwh + CHARGE_TOL:
                problems.append(
                    f"trip {key}: cumulative charge {gained:.3f} kWh exceeds the "
                    f"allowed {bnd.beta_kwh:.3f} kWh"
                )
            for cid in sorted(bnd.tmax_min):
                gained += power[cid] / 60.0 * plan.t.get((cid, key), 0.0)
    for key, value in plan.d.items():
        if value < -1e-9:
            problems.append(f"negative delay on trip {key}")
    total = sum(plan.d.values())
    if abs(total - plan.objective) > 1e-6:
        problems.append("stored objective disagrees with the sum of delays")
    return problems


# ---------------------------------------------------------------------------
# Report files (delimited text with documented headers)
# ---------------------------------------------------------------------------

SCHEDULE_HEADER = [
    "bus",
    "seq",
    "sched_start_min",
    "delay_min",
    "actual_start_min",
    "sched_duration_min",
    "end_min",
    "charger",
    "plugin_min",
    "charge_min",
    "unplug_min",
]


def write_schedule_table(instance: Instance, plan: ChargingPlan, path: str) -> None:
    """Per-trip schedule: delays, actual times, and any charging that follows."""

    with open(path, "w", encoding="utf-8", newline="\n") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SCHEDULE_HEADER)
        for trip in instance.trips:
            key = trip.key
            delay = plan.d.get(key, 0.0)
            start = trip.sched_start_min + delay
            end = start + trip.sched_duration_min
            charger = ""
            charge = 0.0
            for cid, k in plan.x:
                if k == key:
                    charger = cid
                    charge = plan.t.get((cid, key), 0.0)
            plug = plan.p.get(key, end)
            writer.writerow(
                [
                    key[0],
                    key[1],
                    f"{trip.sched_start_min:.6g}",
                    f"{delay:.6g}",
                    f"{start:.6g}",
                    f"{trip.sched_duration_min:.6g}",
                    f"{end:.6g}",
                    charger,
                    f"{plug:.6g}",
                    f"{charge:.6g}",
                    f"{plug + charge:.6g}",
                ]
            )


def write_histogram_csv(hist: Mapping[int, float], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["hour", "charging_min"])
        for hour in sorted(hist):
            writer.writerow([hour, f"{hist[hour]:.6g}"])
