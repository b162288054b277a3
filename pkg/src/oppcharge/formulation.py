"""Build the optimization models for an instance.

Three models share one variable-naming scheme (``VarIndex``):

* the complete mixed-integer model -- binary charger-use decisions ``x``,
  binary service-order arcs ``y``, and continuous delays ``d``, plugin times
  ``p`` and charge durations ``t``, coupled through big-M queueing rows;
* the binary master problem -- only ``x`` and ``y`` with network-flow rows,
  a surrogate arc-cost objective, and room for lazily added cycle cuts and
  combinatorial cuts;
* the scheduling LP -- continuous variables only, for a fixed set of used
  arcs and skipped charging opportunities; its conditional rows are tagged
  ``("queue", ...)`` / ``("skip", ...)`` so infeasibility can be traced back
  to individual binary decisions.

Delay-propagation rows are written per reachable charger of the preceding
trip; trips whose predecessor ends away from every charger still get the
plain completion-time row, so exogenous lateness keeps cascading.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .lp import EQ, GE, LE, LinearProgram, Row
from .mip import MixedIntegerProgram
from .model import SINK, SOURCE, Arc, ArcNode, Instance, TripKey

# A scheduling solution must beat the incumbent by at least this much
# (minutes) for the subproblem to accept it.
INCUMBENT_EPS = 1e-4


def _node_name(node: ArcNode) -> str:
    if node == SOURCE or node == SINK:
        return str(node)
    return f"{node[0]}.{node[1]}"


@dataclass
class VarIndex:
    """Bidirectional map between model symbols and LP variable ids."""

    x: Dict[Tuple[str, TripKey], str] = field(default_factory=dict)
    y: Dict[Arc, str] = field(default_factory=dict)
    d: Dict[TripKey, str] = field(default_factory=dict)
    p: Dict[TripKey, str] = field(default_factory=dict)
    t: Dict[Tuple[str, TripKey], str] = field(default_factory=dict)

    def binaries(self) -> List[str]:
        return list(self.x.values()) + list(self.y.values())


def _index_for(instance: Instance, continuous: bool) -> VarIndex:
    vi = VarIndex()
    for charger_id, nodes in sorted(instance.network.nodes_by_charger.items()):
        for key in nodes:
            vi.x[(charger_id, key)] = f"x[{charger_id}:{_node_name(key)}]"
        for i, j in instance.network.arcs_by_charger[charger_id]:
            vi.y[(charger_id, i, j)] = (
                f"y[{charger_id}:{_node_name(i)}>{_node_name(j)}]"
            )
    if continuous:
        for trip in instance.trips:
            vi.d[trip.key] = f"d[{_node_name(trip.key)}]"
            # Trips ending away from every charger have a fixed plugin time
            # (their completion), so they carry no p variable; delay rows
            # substitute the completion expression directly.
            if instance.bounds[trip.key].tmax_min:
                vi.p[trip.key] = f"p[{_node_name(trip.key)}]"
        for charger_id, key in instance.charge_candidates():
            vi.t[(charger_id, key)] = f"t[{charger_id}:{_node_name(key)}]"
    return vi


def _add_continuous_vars(prog: LinearProgram, instance: Instance, vi: VarIndex) -> None:
    for trip in instance.trips:
        prog.add_variable(vi.d[trip.key], lb=0.0, obj=1.0)
        # A bus can never plug in before its scheduled completion; starting
        # the variable there keeps the initial simplex point near-feasible.
        if trip.key in vi.p:
            prog.add_variable(vi.p[trip.key], lb=trip.sched_end_min)
    for (charger_id, key), vid in vi.t.items():
        prog.add_variable(vid, lb=0.0, ub=instance.tmax(charger_id, key))


def _delay_rows(
    prog: LinearProgram, instance: Instance, vi: VarIndex
) -> None:
    """d_i >= p_prev + t_prev - sched_start, for every non-first trip.

    One row per charger reachable from the previous trip's end terminal;
    when there is none, the charge term vanishes but the plugin time still
    propagates lateness.
    """

    for trip in instance.trips:
        prev = instance.predecessor(trip.key)
        if prev is None:
            continue
        reachable = sorted(instance.bounds[prev.key].tmax_min)
        if reachable:
            for charger_id in reachable:
                coeffs = {
                    vi.d[trip.key]: 1.0,
                    vi.p[prev.key]: -1.0,
                    vi.t[(charger_id, prev.key)]: -1.0,
                }
                prog.add_constraint(
                    f"delay[{charger_id}:{_node_name(trip.key)}]",
                    coeffs,
                    GE,
                    -trip.sched_start_min,
                )
        else:
            # No charger at the previous stop: its plugin time equals its
            # completion, so lateness propagates directly between delays.
            prog.add_constraint(
                f"delay[{_node_name(trip.key)}]",
                {vi.d[trip.key]: 1.0, vi.d[prev.key]: -1.0},
                GE,
                prev.sched_end_min - trip.sched_start_min,
            )


def _plugin_rows(prog: LinearProgram, instance: Instance, vi: VarIndex) -> None:
    # p_i >= sched_start + d_i + duration: the completion time is a
    # universal lower bound on the plugin time.
    for trip in instance.trips:
        if trip.key not in vi.p:
            continue
        prog.add_constraint(
            f"plugin[{_node_name(trip.key)}]",
            {vi.p[trip.key]: 1.0, vi.d[trip.key]: -1.0},
            GE,
            trip.sched_start_min + trip.sched_duration_min,
        )


def _soc_rows(
    prog: LinearProgram, instance: Instance, vi: VarIndex, tagged: bool = False
) -> None:
    """Window each trip's cumulative charge gain over strict predecessors."""

    power = {c.id: c.power_kw for c in instance.chargers}
    for bus in instance.buses:
        block = instance.block(bus.id)
        if not block:
            continue
        gains: Dict[str, float] = {}
        keys = [t.key for t in block] + [(bus.id, block[-1].seq + 1)]
        for key in keys:
            bnd = instance.bounds[key]
            if gains:
                if bnd.alpha_kwh > 0:
                    prog.add_constraint(
                        f"soc_lo[{_node_name(key)}]",
                        dict(gains),
                        GE,
                        bnd.alpha_kwh,
                        tag=("soc", key, "lo") if tagged else None,
                    )
                prog.add_constraint(
                    f"soc_hi[{_node_name(key)}]",
                    dict(gains),
                    LE,
                    bnd.beta_kwh,
                    tag=("soc", key, "hi") if tagged else None,
                )
            for charger_id in sorted(bnd.tmax_min):
                gains[vi.t[(charger_id, key)]] = power[charger_id] / 60.0


def _flow_rows(prog: LinearProgram, instance: Instance, vi: VarIndex) -> None:
    for charger_id, nodes in sorted(instance.network.nodes_by_charger.items()):
        if not nodes:
            continue
        arcs = instance.network.arcs_by_charger[charger_id]
        prog.add_constraint(
            f"leave_source[{charger_id}]",
            {vi.y[(charger_id, i, j)]: 1.0 for i, j in arcs if i == SOURCE},
            EQ,
            1.0,
        )
        prog.add_constraint(
            f"enter_sink[{charger_id}]",
            {vi.y[(charger_id, i, j)]: 1.0 for i, j in arcs if j == SINK},
            EQ,
            1.0,
        )
        for node in nodes:
            coeffs: Dict[str, float] = {}
            for i, j in arcs:
                if j == node:
                    coeffs[vi.y[(charger_id, i, j)]] = coeffs.get(
                        vi.y[(charger_id, i, j)], 0.0
                    ) + 1.0
                if i == node:
                    coeffs[vi.y[(charger_id, i, j)]] = coeffs.get(
                        vi.y[(charger_id, i, j)], 0.0
                    ) - 1.0
            prog.add_constraint(
                f"balance[{charger_id}:{_node_name(node)}]", coeffs, EQ, 0.0
            )
        for node in nodes:
            coeffs = {vi.x[(charger_id, node)]: 1.0}
            for i, j in arcs:
                if i == node:
                    coeffs[vi.y[(charger_id, i, j)]] = -1.0
            prog.add_constraint(
                f"link[{charger_id}:{_node_name(node)}]", coeffs, EQ, 0.0
            )


def build_full_milp(instance: Instance) -> Tuple[MixedIntegerProgram, VarIndex]:
    """The complete mixed-integer model: minimize total departure delay.

    No cycle-elimination rows are included: with the big-M queueing rows in
    place a cycle can only tie or worsen the objective, never improve it.
    """

    vi = _index_for(instance, continuous=True)
    prog = LinearProgram()
    _add_continuous_vars(prog, instance, vi)
    for (charger_id, key), vid in vi.x.items():
        prog.add_variable(vid, lb=0.0, ub=1.0)
    for arc, vid in vi.y.items():
        prog.add_variable(vid, lb=0.0, ub=1.0)

    _delay_rows(prog, instance, vi)
    _plugin_rows(prog, instance, vi)
    big_m = instance.big_m
    for (charger_id, i, j) in _trip_arcs(instance):
        # p_j >= p_i + t_i - M (1 - y): active only when the arc is used.
        prog.add_constraint(
            f"queue[{charger_id}:{_node_name(i)}>{_node_name(j)}]",
            {
                vi.p[j]: 1.0,
                vi.p[i]: -1.0,
                vi.t[(charger_id, i)]: -1.0,
                vi.y[(charger_id, i, j)]: -big_m,
            },
            GE,
            -big_m,
            tag=("bigm", charger_id, i, j),
        )
    _flow_rows(prog, instance, vi)
    for (charger_id, key), vid in vi.t.items():
        prog.add_constraint(
            f"cap[{charger_id}:{_node_name(key)}]",
            {vid: 1.0, vi.x[(charger_id, key)]: -instance.tmax(charger_id, key)},
            LE,
            0.0,
        )
    _soc_rows(prog, instance, vi)
    return MixedIntegerProgram(prog, vi.binaries()), vi


def _trip_arcs(instance: Instance) -> List[Arc]:
    out = []
    for charger_id, arcs in sorted(instance.network.arcs_by_charger.items()):
        for i, j in arcs:
            if i != SOURCE and j != SINK:
                out.append((charger_id, i, j))
    return out


def mp_arc_cost(instance: Instance, arc: Arc) -> float:
    """Surrogate master cost: the delay forced on j's successor by using the arc.

    Serving j right after i means j cannot plug in before i's trip ends, so
    j's next trip starts no earlier than i's completion.  Dummy arcs and
    arcs whose target has no successor cost nothing.
    """

    _, i, j = arc
    if i == SOURCE or j == SINK:
        return 0.0
    successor = instance._trip_map.get((j[0], j[1] + 1))
    if successor is None:
        return 0.0
    trip_i = instance.trip(i)
    return max(0.0, trip_i.sched_end_min - successor.sched_start_min)


def build_master(instance: Instance) -> Tuple[MixedIntegerProgram, VarIndex]:
    """Binary master problem: pick charger-use flags and service orders.

    Contains only ``x`` and ``y``.  Cycle-elimination rows are *not* built
    here; they are added lazily when an integer solution exhibits a cycle.
    """

    vi = _index_for(instance, continuous=False)
    prog = LinearProgram()
    for (charger_id, key), vid in vi.x.items():
        prog.add_variable(vid, lb=0.0, ub=1.0)
    for arc, vid in vi.y.items():
        prog.add_variable(vid, lb=0.0, ub=1.0, obj=mp_arc_cost(instance, arc))
    _flow_rows(prog, instance, vi)
    return MixedIntegerProgram(prog, vi.binaries()), vi


def derive_mp_cuts(instance: Instance) -> List[Row]:
    """Charge-count floors on the master's x variables.

    Walking each block in trip order, the cumulative requirement alpha_i can
    only be met if at least ceil(alpha_i / capacity) of the preceding
    charging opportunities are used.  A row is emitted each time that floor
    increases; in between, the newer row would be dominated by the previous
    one.
    """

    vi = _index_for(instance, continuous=False)
    rows: List[Row] = []
    for bus in instance.buses:
        block = instance.block(bus.id)
        if not block:
            continue
        lhs: Dict[str, float] = {}
        last_rhs = 0
        keys = [t.key for t in block] + [(bus.id, block[-1].seq + 1)]
        for key in keys:
            bnd = instance.bounds[key]
            rhs = math.ceil(bnd.alpha_kwh / bus.usable_capacity_kwh - 1e-9)
            if rhs > last_rhs:
                rows.append(
                    Row(
                        f"charge_count[{_node_name(key)}]",
                        dict(lhs),
                        GE,
                        float(rhs),
                        tag=("charge_count", key),
                    )
                )
                last_rhs = rhs
            for charger_id in sorted(bnd.tmax_min):
                lhs[vi.x[(charger_id, key)]] = 1.0
    return rows


def build_schedule_lp(
    instance: Instance,
    arcs_used: Iterable[Arc],
    skip_set: Iterable[Tuple[str, TripKey]],
    z_star: Optional[float] = None,
) -> LinearProgram:
    """Scheduling LP for fixed binary decisions.

    ``arcs_used`` are the service arcs chosen (dummy arcs are accepted and
    ignored); each trip-trip arc becomes a hard queue row tagged
    ``("queue", charger, i, j)``.  ``skip_set`` pins t=0 for unused
    charging opportunities via rows tagged ``("skip", charger, trip)``.
    With ``z_star`` given, a total-delay budget of ``z_star - INCUMBENT_EPS``
    is enforced, so the LP is feasible only for schedules that beat the
    incumbent.
    """

    vi = _index_for(instance, continuous=True)
    prog = LinearProgram()
    _add_continuous_vars(prog, instance, vi)
    _delay_rows(prog, instance, vi)
    _plugin_rows(prog, instance, vi)
    for charger_id, i, j in arcs_used:
        if i == SOURCE or j == SINK:
            continue
        prog.add_constraint(
            f"queue[{charger_id}:{_node_name(i)}>{_node_name(j)}]",
            {vi.p[j]: 1.0, vi.p[i]: -1.0, vi.t[(charger_id, i)]: -1.0},
            GE,
            0.0,
            tag=("queue", charger_id, i, j),
        )
    for charger_id, key in sorted(skip_set):
        if (charger_id, key) not in vi.t:
            continue
        prog.add_constraint(
            f"skip[{charger_id}:{_node_name(key)}]",
            {vi.t[(charger_id, key)]: 1.0},
            EQ,
            0.0,
            tag=("skip", charger_id, key),
        )
    _soc_rows(prog, instance, vi, tagged=True)
    if z_star is not None and math.isfinite(z_star):
        prog.add_constraint(
            "beat_incumbent",
            {vid: 1.0 for vid in vi.d.values()},
            LE,
            z_star - INCUMBENT_EPS,
        )
    return prog


def model_stats(program: LinearProgram, binaries: Sequence[str] = ()) -> Dict[str, int]:
    """Row/column counts used by regression tests and diagnostics."""

    return {
        "columns": len(program.variables),
        "rows": len(program.rows),
        "binaries": len(binaries),
        "nonzeros": sum(len(r.coeffs) for r in program.rows),
    }
