import itertools

import numpy as np
import pytest

from oppcharge import lp as lp_mod
from oppcharge.benders import (
    CbConfig,
    CbCut,
    base_relaxation_infeasible,
    detect_subtours,
    extract_mis_cuts,
    make_sec,
    solve_cb,
    warm_start_cuts,
)
from oppcharge.formulation import build_master, build_schedule_lp
from oppcharge.heuristic import HeuristicConfig, run_3s
from oppcharge.lp import LpStatus
from oppcharge.model import SINK, SOURCE, Bus, Charger, Trip, build_instance
from oppcharge.oracle import brute_force, random_toy


def handoff_instance(bus_a="A", bus_b="B", charger="L", offset=0.0):
    buses = [Bus(bus_a, 200.0, 60.0), Bus(bus_b, 200.0, 90.0)]
    trips = [
        Trip(bus_a, 1, offset, 125.0, 60.0, "N", charger + "-end"),
        Trip(bus_a, 2, offset + 250.0, 60.0, 60.0, charger + "-end", "N"),
        Trip(bus_b, 1, offset + 10.0, 120.0, 90.0, "N", charger + "-end"),
        Trip(bus_b, 2, offset + 300.0, 60.0, 90.0, charger + "-end", "N"),
    ]
    return buses, trips, Charger(charger, charger + "-end", 60.0)


def single_handoff():
    buses, trips, charger = handoff_instance()
    return build_instance(buses, trips, [charger])


def congested_instance():
    # Both buses need a 40 kWh top-up in overlapping 10-minute layovers at a
    # 120 kW charger (20-minute plugs): 35 minutes of delay are unavoidable.
    buses = [Bus("A", 80.0, 40.0), Bus("B", 80.0, 40.0)]
    trips = [
        Trip("A", 1, 300.0, 40.0, 40.0, "N", "S"),
        Trip("A", 2, 350.0, 40.0, 40.0, "S", "S"),
        Trip("B", 1, 305.0, 40.0, 40.0, "N", "S"),
        Trip("B", 2, 355.0, 40.0, 40.0, "S", "S"),
    ]
    return build_instance(buses, trips, [Charger("L", "S", 120.0)])


# ---------------------------------------------------------------------------
# Cycle detection and elimination rows
# ---------------------------------------------------------------------------


def test_detect_subtours_clean_path():
    arcs = [
        ("L", SOURCE, ("B", 1)),
        ("L", ("B", 1), ("A", 1)),
        ("L", ("A", 1), SINK),
    ]
    assert detect_subtours(arcs) == []


def test_detect_subtours_path_plus_two_cycle():
    arcs = [
        ("L", SOURCE, ("B", 1)),
        ("L", ("B", 1), SINK),
        ("L", ("A", 2), ("B", 2)),
        ("L", ("B", 2), ("A", 2)),
    ]
    cycles = detect_subtours(arcs)
    assert len(cycles) == 1
    charger, cycle = cycles[0]
    assert charger == "L"
    assert set(cycle) == {("A", 2), ("B", 2)}


def test_detect_subtours_empty():
    assert detect_subtours([]) == []


def test_make_sec_two_cycle():
    inst = single_handoff()
    _, vi = build_master(inst)
    row = make_sec(inst, "L", [("A", 1), ("B", 1)], vi, "sec[test]")
    assert row.rhs == 1.0
    assert set(row.coeffs) == {
        vi.y[("L", ("A", 1), ("B", 1))],
        vi.y[("L", ("B", 1), ("A", 1))],
    }


def test_make_sec_three_cycle_counts_all_internal_arcs():
    buses = [Bus(b, 100.0, 100.0) for b in ("A", "B", "C")]
    trips = [Trip(b, 1, 10.0 * k, 30.0, 0.0, "N", "S") for k, b in enumerate("ABC")]
    inst = build_instance(buses, trips, [Charger("L", "S", 120.0)])
    _, vi = build_master(inst)
    row = make_sec(inst, "L", [("A", 1), ("B", 1), ("C", 1)], vi, "sec[test]")
    assert row.rhs == 2.0
    assert len(row.coeffs) == 6  # three cross-bus pairs, both directions


def test_make_sec_rejects_singleton():
    inst = single_handoff()
    _, vi = build_master(inst)
    with pytest.raises(ValueError):
        make_sec(inst, "L", [("A", 1)], vi, "sec[test]")


# ---------------------------------------------------------------------------
# Subsystem extraction
# ---------------------------------------------------------------------------


def _handoff_sp(z_star):
    inst = single_handoff()
    arcs = [("L", ("B", 1), ("A", 1))]
    return inst, build_schedule_lp(inst, arcs, [], z_star)


def test_single_blocking_queue_row_becomes_a_cut():
    # The only way to schedule this order costs 30; demanding better pins
    # the infeasibility on the one conditional queue row.
    _, sp = _handoff_sp(30.0)
    cuts = extract_mis_cuts(sp, max_cuts=10, rng=np.random.default_rng(0))
    assert len(cuts) >= 1
    assert cuts[0].m_y == frozenset({("L", ("B", 1), ("A", 1))})
    assert cuts[0].m_x == frozenset()


def test_max_cuts_caps_extraction():
    _, sp = _handoff_sp(30.0)
    cuts = extract_mis_cuts(sp, max_cuts=1, rng=np.random.default_rng(0))
    assert len(cuts) == 1


def test_two_disjoint_conflicts_yield_two_cuts():
    buses_1, trips_1, charger_1 = handoff_instance("A", "B", "L1")
    buses_2, trips_2, charger_2 = handoff_instance("C", "D", "L2")
    inst = build_instance(buses_1 + buses_2, trips_1 + trips_2, [charger_1, charger_2])
    arcs = [("L1", ("B", 1), ("A", 1)), ("L2", ("D", 1), ("C", 1))]
    # Each conflict alone forces 30 minutes of delay; demand under 30.
    sp = build_schedule_lp(inst, arcs, [], 10.0)
    cuts = extract_mis_cuts(sp, max_cuts=10, rng=np.random.default_rng(1))
    assert len(cuts) >= 2
    seen = {cut.m_y for cut in cuts}
    assert frozenset({("L1", ("B", 1), ("A", 1))}) in seen
    assert frozenset({("L2", ("D", 1), ("C", 1))}) in seen


def _minimal_infeasible_subsets(prog, candidates):
    minimal = []
    for r in range(1, len(candidates) + 1):
        for combo in itertools.combinations(candidates, r):
            disabled = set(candidates) - set(combo)
            if lp_mod.solve(prog, disabled_tags=disabled).status is LpStatus.INFEASIBLE:
                if not any(m <= set(combo) for m in minimal):
                    minimal.append(frozenset(combo))
    return minimal


def test_extracted_subsystems_match_exhaustive_enumeration():
    inst = single_handoff()
    arcs = [("L", ("B", 1), ("A", 1))]
    skip = []
    sp = build_schedule_lp(inst, arcs, skip, 30.0)
    candidates = [r.tag for r in sp.rows if r.tag and r.tag[0] in ("queue", "skip")]
    assert len(candidates) <= 10
    minimal = _minimal_infeasible_subsets(sp, candidates)
    mis = lp_mod.deletion_filter_iis(sp, candidates)
    assert frozenset(mis) in minimal


def test_skip_rows_can_join_subsystems():
    # Force every charging opportunity off: the charge requirement can then
    # never be met, and the subsystem names the skip rows to flip.
    inst = single_handoff()
    skip = sorted(inst.charge_candidates())
    sp = build_schedule_lp(inst, [], skip, None)
    sol = lp_mod.solve(sp)
    assert sol.status is LpStatus.INFEASIBLE
    cuts = extract_mis_cuts(sp, max_cuts=5, rng=np.random.default_rng(2))
    assert cuts
    assert all(cut.m_x and not cut.m_y for cut in cuts)


def test_cut_requires_some_binary():
    with pytest.raises(ValueError):
        CbCut(m_x=frozenset(), m_y=frozenset())


# ---------------------------------------------------------------------------
# Warm-start cuts
# ---------------------------------------------------------------------------


def test_zero_delay_pool_short_circuits_before_cuts():
    buses = [Bus("A", 100.0, 100.0)]
    trips = [Trip("A", 1, 0.0, 30.0, 0.0, "N", "S")]
    inst = build_instance(buses, trips, [Charger("L", "S", 120.0)])
    result = solve_cb(inst, CbConfig(heuristic=HeuristicConfig(iterations=5, seed=0)))
    assert result.proven_optimal
    assert result.state.stats.skipped
    assert result.state.stats.iterations == 0
    assert result.state.cut_log == []


def test_warm_cuts_exclude_their_plan():
    inst = congested_instance()
    heur = run_3s(inst, HeuristicConfig(iterations=40, seed=1))
    assert heur.best.objective > 0
    cuts, sealed = warm_start_cuts(inst, heur.pool, 0.5, np.random.default_rng(0))
    assert cuts or sealed
    for cut, budget in cuts:
        plan = next(p for p in heur.pool if p.objective <= budget + 1e-9)
        arcs_on = set()
        for cid, order in plan.arcs.items():
            arcs_on.update((cid, i, j) for i, j in zip(order, order[1:]))
        # The cut must exclude the binary assignment it was derived from.
        if budget == plan.objective:
            assert cut.violated_by(set(plan.x), arcs_on) or sealed is False


def test_keep_fraction_zero_uses_best_plan_only():
    inst = congested_instance()
    heur = run_3s(inst, HeuristicConfig(iterations=40, seed=1))
    best = heur.best.objective
    cuts, _ = warm_start_cuts(inst, heur.pool, 0.0, np.random.default_rng(0))
    budgets = {budget for _, budget in cuts}
    assert budgets <= {best}


# ---------------------------------------------------------------------------
# Full decomposition loop
# ---------------------------------------------------------------------------


def test_decomposition_matches_exhaustive_optimum():
    for seed in (4, 6, 14):
        inst = random_toy(seed)
        optimum, _ = brute_force(inst)
        result = solve_cb(
            inst, CbConfig(heuristic=HeuristicConfig(iterations=100, seed=seed), seed=seed)
        )
        assert result.proven_optimal
        assert result.plan.objective == pytest.approx(optimum, abs=1e-6)


def test_positive_delay_instances_exit_via_infeasible_master():
    inst = congested_instance()
    result = solve_cb(inst, CbConfig(heuristic=HeuristicConfig(iterations=60, seed=3), seed=3))
    assert result.proven_optimal
    assert result.state.stats.termination == "mp_infeasible"
    assert result.plan.objective == pytest.approx(35.0, abs=1e-6)


def test_optimal_warm_start_is_never_improved():
    inst = congested_instance()
    optimum, _ = brute_force(inst)
    result = solve_cb(inst, CbConfig(heuristic=HeuristicConfig(iterations=200, seed=2), seed=2))
    assert result.heuristic.best.objective == pytest.approx(optimum, abs=1e-6)
    # The incumbent is the heuristic plan itself: proven, not improved.
    assert result.plan.x == result.heuristic.best.x
    assert result.plan.objective == result.heuristic.best.objective


def test_no_master_assignment_repeats():
    for seed in (4, 14):
        inst = random_toy(seed)
        result = solve_cb(
            inst, CbConfig(heuristic=HeuristicConfig(iterations=60, seed=seed), seed=seed)
        )
        seen = result.state.mp_solutions
        assert len(seen) == len(set(seen))


def test_pooled_cuts_sound_against_exhaustive_optimum():
    from oppcharge.formulation import INCUMBENT_EPS

    for seed in (6, 14, 20):
        inst = random_toy(seed)
        optimum, best_plan = brute_force(inst)
        result = solve_cb(
            inst, CbConfig(heuristic=HeuristicConfig(iterations=80, seed=seed), seed=seed)
        )
        arcs_on = set()
        for cid, order in best_plan.arcs.items():
            arcs_on.update((cid, i, j) for i, j in zip(order, order[1:]))
        for cut, budget in result.state.cut_log:
            if budget > optimum + INCUMBENT_EPS:
                assert not cut.violated_by(set(best_plan.x), arcs_on)


def test_master_hook_rejects_cycles_until_none_remain():
    # Solving the master alone with the lazy cycle rejection: the accepted
    # assignment must decompose into clean source-to-sink paths.
    inst = congested_instance()
    master, vi = build_master(inst)
    from oppcharge.benders import make_sec as _make_sec
    from oppcharge.mip import solve_bnb as _solve

    added = []

    def reject(values):
        arcs = [arc for arc, vid in vi.y.items() if values[vid] > 0.5]
        cycles = detect_subtours(arcs)
        rows = []
        for cid, cycle in cycles:
            rows.append(_make_sec(inst, cid, cycle, vi, f"sec[{len(added) + len(rows)}]"))
        added.extend(rows)
        return rows or None

    master.on_integer_solution = reject
    res = _solve(master)
    assert res.status.value == "optimal"
    arcs = [arc for arc, vid in vi.y.items() if res.values[vid] > 0.5]
    assert detect_subtours(arcs) == []


def test_time_limit_returns_heuristic_incumbent():
    inst = congested_instance()
    result = solve_cb(
        inst,
        CbConfig(heuristic=HeuristicConfig(iterations=10, seed=1), time_limit_s=0.0),
    )
    assert not result.proven_optimal
    assert result.state.stats.termination == "time_limit"
    assert result.plan is result.heuristic.best
