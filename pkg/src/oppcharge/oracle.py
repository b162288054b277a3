"""Exhaustive ground-truth solver for tiny instances, plus a toy generator.

``brute_force`` enumerates every subset of charging opportunities that can
possibly meet the charge-count floors, every per-charger service order
consistent with block precedence, and prices each combination with the
scheduling LP.  Purely enumerative, so it anchors the correctness of every
other solver at toy scale -- and refuses anything big enough to blow up.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from . import lp as lp_mod
from .formulation import build_schedule_lp
from .heuristic import ChargingPlan, arcs_from_orders, materialize_plan
from .lp import LpStatus
from .model import (
    Bus,
    Charger,
    InfeasibleBlockError,
    Instance,
    Trip,
    TripKey,
    build_instance,
    validate,
)


class OracleLimitError(ValueError):
    """The instance exceeds what exhaustive enumeration may attempt."""


@dataclass
class OracleLimits:
    max_candidates: int = 12
    max_chain: int = 6  # charging trips per charger whose orders we enumerate
    max_evals: int = 500_000


def _orders_for(
    chosen: Sequence[TripKey],
) -> List[Tuple[TripKey, ...]]:
    """All permutations of one charger's charging trips in block order."""

    out = []
    for perm in itertools.permutations(chosen):
        ok = True
        seen_seq: Dict[str, int] = {}
        for bus_id, seq in perm:
            if seen_seq.get(bus_id, 0) > seq:
                ok = False
                break
            seen_seq[bus_id] = seq
        if ok:
            out.append(perm)
    return out


def _count_floors(instance: Instance) -> List[Tuple[str, List[TripKey], int]]:
    """(bus, charging-capable strict predecessors, required count) triples."""

    floors = []
    for bus in instance.buses:
        block = instance.block(bus.id)
        if not block:
            continue
        preds: List[TripKey] = []
        keys = [t.key for t in block] + [(bus.id, block[-1].seq + 1)]
        for key in keys:
            bnd = instance.bounds[key]
            need = math.ceil(bnd.alpha_kwh / bus.usable_capacity_kwh - 1e-9)
            if need > 0:
                floors.append((bus.id, list(preds), need))
            if bnd.tmax_min:
                preds.append(key)
    return floors


def brute_force(
    instance: Instance, limits: Optional[OracleLimits] = None
) -> Tuple[float, ChargingPlan]:
    """Global optimum by enumeration.  Returns (objective, plan)."""

    limits = limits or OracleLimits()
    candidates = sorted(instance.charge_candidates())
    if len(candidates) > limits.max_candidates:
        raise OracleLimitError(
            f"{len(candidates)} charging opportunities exceed the enumeration "
            f"limit of {limits.max_candidates}"
        )
    floors = _count_floors(instance)

    best_obj: Optional[float] = None
    best_pick: Optional[Tuple[Set[Tuple[str, TripKey]], Dict[str, Tuple[TripKey, ...]]]] = None
    evals = 0
    for mask in range(2 ** len(candidates)):
        chosen = {candidates[k] for k in range(len(candidates)) if mask >> k & 1}
        chosen_trips = {key for _, key in chosen}
        if any(
            sum(1 for k in preds if k in chosen_trips) < need
            for _, preds, need in floors
        ):
            continue
        by_charger: Dict[str, List[TripKey]] = {}
        for cid, key in sorted(chosen):
            by_charger.setdefault(cid, []).append(key)
        if any(len(v) > limits.max_chain for v in by_charger.values()):
            raise OracleLimitError(
                f"more than {limits.max_chain} charging trips at one charger"
            )
        order_lists = [
            [(cid, order) for order in _orders_for(trips)]
            for cid, trips in sorted(by_charger.items())
        ]
        for combo in itertools.product(*order_lists):
            evals += 1
            if evals > limits.max_evals:
                raise OracleLimitError(
                    f"enumeration exceeds {limits.max_evals} evaluations"
                )
            orders = {cid: tuple(order) for cid, order in combo}
            skip = sorted(set(candidates) - chosen)
            prog = build_schedule_lp(
                instance, arcs_from_orders(orders), skip, None
            )
            sol = lp_mod.solve(prog)
            if sol.status is not LpStatus.OPTIMAL:
                continue
            obj = max(0.0, sol.objective)
            if best_obj is None or obj < best_obj - 1e-9:
                best_obj = obj
                best_pick = (chosen, orders)
    if best_obj is None:
        raise InfeasibleBlockError("no feasible charging assignment exists")
    chosen, orders = best_pick
    plan = materialize_plan(instance, chosen, orders, known_objective=best_obj)
    return plan.objective, plan


# ---------------------------------------------------------------------------
# Random toy instances
# ---------------------------------------------------------------------------


def random_toy(
    seed: int,
    n_buses: Optional[int] = None,
    n_trips: Optional[int] = None,
    n_chargers: Optional[int] = None,
    max_retries: int = 60,
) -> Instance:
    """A small feasible instance with integer minutes and energies.

    Sizes default to 2-3 buses, 4-8 trips total, 1-2 chargers.  Tightness
    varies by draw: some toys need no charging at all, others are congested
    enough to force delays.  Deterministic per seed.
    """

    rng = np.random.default_rng(seed)
    for _ in range(max_retries):
        nb = int(n_buses if n_buses is not None else rng.integers(2, 4))
        nt = int(n_trips if n_trips is not None else rng.integers(4, 9))
        nc = int(n_chargers if n_chargers is not None else rng.integers(1, 3))
        nt = max(nt, nb)

        terminals = ["T0", "T1", "T2"]
        powers = [int(rng.choice([60, 120, 180]))]
        if nc >= 2:
            powers.append(int(rng.choice([60, 120, 180])))
        chargers = [
            Charger(f"L{k}", terminals[k], float(powers[k])) for k in range(nc)
        ]
        charged_terms = {c.terminal for c in chargers}

        counts = [1] * nb
        for _ in range(nt - nb):
            counts[int(rng.integers(0, nb))] += 1

        buses: List[Bus] = []
        trips: List[Trip] = []
        tightness = rng.random()
        base_clock = int(rng.integers(300, 420))
        for b in range(nb):
            cap = float(rng.choice([60, 80, 100]))
            if tightness < 0.2:
                e0 = cap  # slack block: no charging required
            else:
                e0 = float(int(cap * rng.uniform(0.2, 0.55)))
            buses.append(Bus(f"B{b}", cap, e0, 0.0))
            at = terminals[int(rng.integers(0, 3))]
            # Overlapping blocks contend for the chargers.
            clock = float(base_clock + int(rng.integers(0, 30)))
            for s in range(counts[b]):
                # Bias trip ends toward charged terminals so queueing happens.
                if rng.random() < 0.7:
                    to = sorted(charged_terms)[int(rng.integers(0, len(charged_terms)))]
                else:
                    to = terminals[int(rng.integers(0, 3))]
                dur = float(int(rng.integers(20, 46)))
                energy = float(int(rng.integers(8, max(9, int(cap * 0.55)))))
                trips.append(Trip(f"B{b}", s + 1, clock, dur, energy, at, to))
                layover = float(int(rng.integers(2, 14)))
                clock += dur + layover
                at = to
        try:
            inst = build_instance(buses, trips, chargers)
        except InfeasibleBlockError:
            continue
        if validate(inst):
            continue
        # Keep toys inside the exhaustive solver's enumeration limits.
        per_charger: Dict[str, int] = {}
        for cid, _ in inst.charge_candidates():
            per_charger[cid] = per_charger.get(cid, 0) + 1
        if len(inst.charge_candidates()) > 12 or any(v > 6 for v in per_charger.values()):
            continue
        return inst
    raise RuntimeError(f"could not draw a feasible toy instance for seed {seed}")
