"""Exact solver by combinatorial Benders decomposition.

The loop alternates between the binary master problem (charger-use flags x
and service-order arcs y) and the continuous scheduling subproblem.  The
subproblem carries a budget row "beat the incumbent by at least epsilon", so
it is feasible exactly when the master's binary choices admit a strictly
better schedule:

* subproblem feasible  -> better schedule found: it becomes the incumbent,
  and cuts generated against the new incumbent exclude the same binaries
  from being proposed again;
* subproblem infeasible -> an irreducible infeasible subsystem over the
  conditional rows (used queue arcs, skipped charging opportunities) is
  extracted and turned into a cut: at least one implicated binary must flip;
* master infeasible    -> no binary assignment can beat the incumbent, so
  the incumbent is optimal.

Cycle-elimination rows are added lazily inside the master's branch and
bound and persist across iterations.  When a subproblem is infeasible even
with every conditional row removed, no assignment whatsoever can beat the
incumbent; the master is then sealed with a constant infeasible row so the
loop still terminates through the master-infeasible exit.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Sequence, Set, Tuple

import numpy as np

from . import lp as lp_mod
from .formulation import VarIndex, build_master, build_schedule_lp, derive_mp_cuts
from .heuristic import (
    ChargingPlan,
    HeuristicConfig,
    Result3S,
    arcs_from_orders,
    materialize_plan,
    run_3s,
)
from .lp import GE, LinearProgram, LpStatus, Row
from .mip import BnbStatus, MixedIntegerProgram, solve_bnb
from .model import SINK, SOURCE, Arc, ArcNode, Instance, TripKey

ChargeKey = Tuple[str, TripKey]


@dataclass(frozen=True)
class CbCut:
    """At least one of these binaries must flip: x in m_x up, y in m_y down."""

    m_x: FrozenSet[ChargeKey]
    m_y: FrozenSet[Arc]

    def __post_init__(self) -> None:
        if not self.m_x and not self.m_y:
            raise ValueError("a combinatorial cut needs at least one binary")

    def violated_by(
        self, x_on: Set[ChargeKey], arcs_on: Set[Arc]
    ) -> bool:
        return all(k not in x_on for k in self.m_x) and all(
            a in arcs_on for a in self.m_y
        )


@dataclass
class CbConfig:
    heuristic: HeuristicConfig = field(default_factory=HeuristicConfig)
    max_cuts: int = 10
    time_limit_s: Optional[float] = None
    seed: int = 0


@dataclass
class CbStats:
    iterations: int = 0
    sp_solves: int = 0
    mis_count: int = 0
    cuts_added: int = 0
    secs_added: int = 0
    wall_s: float = 0.0
    termination: str = ""
    skipped: bool = False


@dataclass
class CbState:
    incumbent: ChargingPlan
    z_star: float
    cut_log: List[Tuple[CbCut, float]] = field(default_factory=list)
    sec_pool: List[Tuple[str, FrozenSet[TripKey]]] = field(default_factory=list)
    mp_solutions: List[FrozenSet[str]] = field(default_factory=list)
    stats: CbStats = field(default_factory=CbStats)

    @property
    def cut_pool(self) -> List[CbCut]:
        return [cut for cut, _ in self.cut_log]


@dataclass
class CbResult:
    plan: ChargingPlan
    proven_optimal: bool
    state: CbState
    heuristic: Result3S


def detect_subtours(arcs_used: Sequence[Arc]) -> List[Tuple[str, List[TripKey]]]:
    """Cycles left over after removing each charger's source-to-sink path.

    Expects an integral, flow-feasible arc selection: one arc out of the
    source, one into the sink, balanced trip nodes.  Every arc that is not
    on the walk from source to sink lies on exactly one returned cycle.
    """

    by_charger: Dict[str, Dict[ArcNode, ArcNode]] = {}
    for cid, i, j in arcs_used:
        succ = by_charger.setdefault(cid, {})
        if i in succ:
            raise ValueError(f"charger {cid}: node {i} has two outgoing arcs")
        succ[i] = j
    cycles: List[Tuple[str, List[TripKey]]] = []
    for cid in sorted(by_charger):
        succ = by_charger[cid]
        visited: Set[ArcNode] = set()
        node: ArcNode = SOURCE
        while node in succ:
            visited.add(node)
            node = succ[node]
            if node == SINK:
                break
            if node in visited:
                raise ValueError(f"charger {cid}: walk from source revisits {node}")
        remaining = sorted(k for k in succ if k not in visited and k != SOURCE)
        seen: Set[ArcNode] = set()
        for start in remaining:
            if start in seen:
                continue
            cycle: List[TripKey] = []
            node = start
            while node not in seen:
                seen.add(node)
                cycle.append(node)  # type: ignore[arg-type]
                if node not in succ:
                    raise ValueError(f"charger {cid}: arcs are not flow-feasible")
                node = succ[node]
            cycles.append((cid, cycle))
    return cycles


def make_sec(
    instance: Instance, charger_id: str, cycle: Sequence[TripKey], vi: VarIndex, row_id: str
) -> Row:
    """Cycle-elimination row: arcs inside the trip set stay below |S| - 1."""

    if len(cycle) < 2:
        raise ValueError("cycle-elimination needs at least two trips")
    members = set(cycle)
    coeffs: Dict[str, float] = {}
    for i, j in instance.network.arcs_by_charger[charger_id]:
        if i in members and j in members:
            coeffs[vi.y[(charger_id, i, j)]] = 1.0
    return Row(row_id, coeffs, lp_mod.LE, float(len(members) - 1), tag="sec")


def _conditional_tags(sp: LinearProgram) -> List[Tuple]:
    return sorted(
        (r.tag for r in sp.rows if r.tag and r.tag[0] in ("queue", "skip")),
        key=str,
    )


def base_relaxation_infeasible(sp: LinearProgram) -> bool:
    """True when the subproblem fails even with every conditional row gone."""

    tags = _conditional_tags(sp)
    sol = lp_mod.solve(sp, disabled_tags=set(tags))
    if sol.status is LpStatus.NUMERICAL_FAILURE:
        raise RuntimeError("LP failure while probing the relaxed subproblem")
    return sol.status is LpStatus.INFEASIBLE


def extract_mis_cuts(
    sp: LinearProgram, max_cuts: int, rng: np.random.Generator
) -> List[CbCut]:
    """Harvest several irreducible infeasible subsystems from one subproblem.

    Repeatedly: find one subsystem by deletion filtering over a shuffled
    candidate order, emit its cut, drop one random member, and continue
    while the reduced subproblem stays infeasible (or until ``max_cuts``).
    """

    all_tags = _conditional_tags(sp)
    dropped: Set[Tuple] = set()
    cuts: List[CbCut] = []
    while len(cuts) < max_cuts:
        sol = lp_mod.solve(sp, disabled_tags=dropped)
        if sol.status is not LpStatus.INFEASIBLE:
            break
        order = [t for t in all_tags if t not in dropped]
        rng.shuffle(order)
        mis = lp_mod.deletion_filter_iis(sp, order, removed=dropped)
        m_x = frozenset((t[1], t[2]) for t in mis if t[0] == "skip")
        m_y = frozenset((t[1], t[2], t[3]) for t in mis if t[0] == "queue")
        cuts.append(CbCut(m_x=m_x, m_y=m_y))
        victim = sorted(mis, key=str)[int(rng.integers(0, len(mis)))]
        dropped.add(victim)
    return cuts


def _cut_row(cut: CbCut, vi: VarIndex, row_id: str) -> Row:
    # sum(x in m_x) + sum(1 - y in m_y) >= 1
    coeffs: Dict[str, float] = {}
    for key in sorted(cut.m_x):
        coeffs[vi.x[key]] = 1.0
    for arc in sorted(cut.m_y, key=str):
        coeffs[vi.y[arc]] = -1.0
    return Row(row_id, coeffs, GE, 1.0 - float(len(cut.m_y)), tag="cb_cut")


def plan_to_binaries(instance: Instance, plan: ChargingPlan, vi: VarIndex) -> Dict[str, float]:
    """Encode a plan as a full master assignment.

    Chargers the plan leaves idle still must route their path through one
    trip node, so they get a zero-duration visit to their first eligible
    trip; that changes nothing about delays or charge levels.
    """

    values = {vid: 0.0 for vid in vi.x.values()}
    values.update({vid: 0.0 for vid in vi.y.values()})
    orders = {cid: list(seq) for cid, seq in plan.arcs.items()}
    for cid, nodes in instance.network.nodes_by_charger.items():
        if nodes and not orders.get(cid):
            orders[cid] = [nodes[0]]
    for cid, seq in orders.items():
        if not seq:
            continue
        for key in seq:
            values[vi.x[(cid, key)]] = 1.0
        values[vi.y[(cid, SOURCE, seq[0])]] = 1.0
        for i, j in zip(seq, seq[1:]):
            values[vi.y[(cid, i, j)]] = 1.0
        values[vi.y[(cid, seq[-1], SINK)]] = 1.0
    return values


def decode_master(
    instance: Instance, vi: VarIndex, values: Dict[str, float]
) -> Tuple[Set[ChargeKey], List[Arc]]:
    x_on = {key for key, vid in vi.x.items() if values[vid] > 0.5}
    arcs = [arc for arc, vid in vi.y.items() if values[vid] > 0.5]
    return x_on, arcs


def arcs_to_orders(arcs: Sequence[Arc]) -> Dict[str, Tuple[TripKey, ...]]:
    succ: Dict[str, Dict[ArcNode, ArcNode]] = {}
    for cid, i, j in arcs:
        succ.setdefault(cid, {})[i] = j
    orders: Dict[str, Tuple[TripKey, ...]] = {}
    for cid, chain in succ.items():
        node = chain.get(SOURCE)
        seq: List[TripKey] = []
        while node is not None and node != SINK:
            seq.append(node)  # type: ignore[arg-type]
            node = chain.get(node)
        if seq:
            orders[cid] = tuple(seq)
    return orders


def warm_start_cuts(
    instance: Instance,
    pool: Sequence[ChargingPlan],
    keep_fraction: float,
    rng: np.random.Generator,
    max_cuts_per_plan: int = 10,
) -> Tuple[List[Tuple[CbCut, float]], bool]:
    """Cuts from heuristic plans whose delay is near the pool's best.

    Each kept plan's own binaries cannot beat the plan's own objective, so
    the subproblem built against it is infeasible by construction and yields
    at least one subsystem.  Returns (cut, budget) pairs plus a flag that
    turns on when some plan is provably globally optimal (the relaxed
    subproblem cannot beat it even with all conditional rows removed).
    """

    if not pool:
        return [], False
    best = min(p.objective for p in pool)
    cutoff = best * (1.0 + keep_fraction) + 1e-9
    seen: Set[FrozenSet[ChargeKey]] = set()
    out: List[Tuple[CbCut, float]] = []
    sealed = False
    candidates = set(instance.charge_candidates())
    for plan in pool:
        if plan.objective > cutoff:
            continue
        if plan.x in seen:
            continue
        seen.add(plan.x)
        skip = sorted(candidates - set(plan.x))
        arcs = arcs_from_orders(plan.arcs)
        sp = build_schedule_lp(instance, arcs, skip, z_star=plan.objective)
        if base_relaxation_infeasible(sp):
            sealed = True
            continue
        for cut in extract_mis_cuts(sp, max_cuts_per_plan, rng):
            out.append((cut, plan.objective))
    return out, sealed


def solve_cb(
    instance: Instance, config: Optional[CbConfig] = None, trace=None
) -> CbResult:
    """Run the full decomposition loop; prove optimality or hit the limit.

    A zero-delay heuristic plan short-circuits everything: total delay
    cannot be negative, so the loop is skipped outright.
    """

    config = config or CbConfig()
    start = time.perf_counter()
    rng = np.random.default_rng(config.seed)

    def emit(text: str) -> None:
        if trace is not None:
            trace.write(text + "\n")

    heur = run_3s(instance, config.heuristic, trace=None)
    state = CbState(incumbent=heur.best, z_star=heur.best.objective)
    emit(f"heuristic objective={heur.best.objective:.6f} pool={len(heur.pool)}")

    if heur.best.objective <= 1e-9:
        state.stats.skipped = True
        state.stats.termination = "zero_delay"
        state.stats.wall_s = time.perf_counter() - start
        emit("zero-delay plan found; decomposition skipped")
        return CbResult(heur.best, True, state, heur)

    master, vi = build_master(instance)
    for row in derive_mp_cuts(instance):
        master.lp.add_constraint(row.id, row.coeffs, row.sense, row.rhs, tag=row.tag)

    warm, sealed = warm_start_cuts(
        instance, heur.pool, config.heuristic.keep_fraction_for_cuts, rng,
        max_cuts_per_plan=config.max_cuts,
    )
    known_cuts: Set[Tuple[FrozenSet, FrozenSet]] = set()
    for cut, budget in warm:
        fp = (cut.m_x, cut.m_y)
        if fp in known_cuts:
            continue
        known_cuts.add(fp)
        state.cut_log.append((cut, budget))
        row = _cut_row(cut, vi, f"cb_cut[{len(state.cut_log)}]")
        master.lp.add_constraint(row.id, row.coeffs, row.sense, row.rhs, tag=row.tag)
        state.stats.cuts_added += 1
    emit(f"warm cuts={state.stats.cuts_added} sealed={sealed}")
    if sealed:
        _seal_master(master)

    sec_count = 0

    def reject_cycles(values: Dict[str, float]) -> Optional[List[Row]]:
        nonlocal sec_count
        _, arcs = decode_master(instance, vi, values)
        cycles = detect_subtours(arcs)
        if not cycles:
            return None
        rows = []
        for cid, cycle in cycles:
            fingerprint = (cid, frozenset(cycle))
            if fingerprint in state.sec_pool:
                continue
            state.sec_pool.append(fingerprint)
            sec_count += 1
            rows.append(make_sec(instance, cid, cycle, vi, f"sec[{sec_count}]"))
        return rows

    master.on_integer_solution = reject_cycles

    proven = False
    while True:
        remaining = None
        if config.time_limit_s is not None:
            remaining = config.time_limit_s - (time.perf_counter() - start)
            if remaining <= 0:
                state.stats.termination = "time_limit"
                break
        res = solve_bnb(master, time_limit_s=remaining)
        state.stats.secs_added = sec_count
        if res.status is BnbStatus.INFEASIBLE:
            proven = True
            state.stats.termination = "mp_infeasible"
            emit(f"iter={state.stats.iterations + 1} mp=infeasible z_star={state.z_star:.6f}")
            break
        if res.status is BnbStatus.TIME_LIMIT:
            state.stats.termination = "time_limit"
            break
        state.stats.iterations += 1
        x_on, arcs = decode_master(instance, vi, res.values)
        state.mp_solutions.append(
            frozenset(vid for vid, val in res.values.items() if val > 0.5 and vid in set(vi.binaries()))
        )
        trip_arcs = [a for a in arcs if a[1] != SOURCE and a[2] != SINK]
        candidates = set(instance.charge_candidates())
        skip = sorted(candidates - x_on)
        sp = build_schedule_lp(instance, trip_arcs, skip, z_star=state.z_star)
        sol = lp_mod.solve(sp)
        state.stats.sp_solves += 1
        if sol.status is LpStatus.NUMERICAL_FAILURE:
            raise RuntimeError("subproblem LP failed")

        if sol.status is LpStatus.OPTIMAL:
            orders = arcs_to_orders(arcs)
            orders = {cid: seq for cid, seq in orders.items() if seq}
            plan = materialize_plan(
                instance,
                {(cid, k) for cid, seq in orders.items() for k in seq},
                orders,
                known_objective=sol.objective,
            )
            state.incumbent = plan
            state.z_star = plan.objective
            emit(
                f"iter={state.stats.iterations} mp_objective={res.objective:.6f} "
                f"sp=feasible z_star={state.z_star:.6f}"
            )
            sp = build_schedule_lp(instance, trip_arcs, skip, z_star=state.z_star)
            state.stats.sp_solves += 1

        if base_relaxation_infeasible(sp):
            # Nothing at all can beat the incumbent: seal and finish through
            # the master-infeasible exit.
            _seal_master(master)
            emit(f"iter={state.stats.iterations} sp=unconditionally-infeasible (sealed)")
            continue
        cuts = extract_mis_cuts(sp, config.max_cuts, rng)
        state.stats.mis_count += len(cuts)
        added = 0
        for cut in cuts:
            fp = (cut.m_x, cut.m_y)
            if fp in known_cuts:
                continue
            known_cuts.add(fp)
            state.cut_log.append((cut, state.z_star))
            row = _cut_row(cut, vi, f"cb_cut[{len(state.cut_log)}]")
            master.lp.add_constraint(row.id, row.coeffs, row.sense, row.rhs, tag=row.tag)
            state.stats.cuts_added += 1
            added += 1
        emit(
            f"iter={state.stats.iterations} mp_objective={res.objective:.6f} "
            f"sp={'infeasible' if sol.status is LpStatus.INFEASIBLE else 'feasible'} "
            f"z_star={state.z_star:.6f} cuts_added={added}"
        )
        if added == 0:
            # Each extracted cut is violated by the assignment that spawned
            # it, so it cannot already be a master row; a duplicate here
            # means the loop is broken, not done.
            raise RuntimeError("decomposition stalled: no new cut excluded the assignment")

    state.stats.wall_s = time.perf_counter() - start
    return CbResult(state.incumbent, proven, state, heur)


def _seal_master(master: MixedIntegerProgram) -> None:
    if not any(r.id == "optimality_seal" for r in master.lp.rows):
        anchor = master.lp.variables[0].id
        master.lp.add_constraint("optimality_seal", {anchor: 0.0}, GE, 1.0)
