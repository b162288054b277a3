import json

import pytest

from oppcharge.formulation import build_full_milp
from oppcharge.mip import BnbStatus, solve_bnb
from oppcharge.model import (
    Bus,
    Charger,
    Trip,
    build_instance,
    instance_to_dict,
    load_instance,
    validate,
)
from oppcharge.oracle import OracleLimitError, OracleLimits, brute_force, random_toy


def test_no_requirement_means_zero_delay():
    buses = [Bus("A", 100.0, 100.0)]
    trips = [
        Trip("A", 1, 0.0, 30.0, 0.0, "N", "S"),
        Trip("A", 2, 50.0, 30.0, 0.0, "S", "N"),
    ]
    inst = build_instance(buses, trips, [Charger("L", "S", 120.0)])
    obj, plan = brute_force(inst)
    assert obj == 0.0
    assert plan.objective == 0.0


def test_single_forced_charge_closed_form():
    # One bus, one charger, 60 kW (minute == kWh): the stop after trip 1
    # must deliver 30 kWh, so trip 2 leaves at completion + 30 if that is
    # past its scheduled start.
    bus = Bus("A", 100.0, 30.0)
    trips = [
        Trip("A", 1, 0.0, 40.0, 30.0, "N", "S"),
        Trip("A", 2, 50.0, 40.0, 30.0, "S", "N"),
    ]
    inst = build_instance([bus], trips, [Charger("L", "S", 60.0)])
    obj, plan = brute_force(inst)
    ready = 40.0 + 30.0
    assert obj == pytest.approx(max(0.0, ready - 50.0), abs=1e-9)
    assert plan.t[("L", ("A", 1))] == pytest.approx(30.0, abs=1e-6)


def test_agrees_with_direct_solver_both_ways():
    for seed in (22, 23):
        inst = random_toy(seed)
        obj, _ = brute_force(inst)
        mip, _ = build_full_milp(inst)
        res = solve_bnb(mip)
        assert res.status is BnbStatus.OPTIMAL
        assert res.objective == pytest.approx(obj, abs=1e-6)


def test_refuses_oversized_enumeration():
    buses = [Bus("A", 400.0, 400.0)]
    trips = [Trip("A", k + 1, 60.0 * k, 30.0, 0.0, "S", "S") for k in range(13)]
    inst = build_instance(buses, trips, [Charger("L", "S", 300.0)])
    with pytest.raises(OracleLimitError, match="exceed"):
        brute_force(inst)


def test_refuses_long_single_charger_chains():
    buses = [Bus("A", 400.0, 400.0), Bus("B", 400.0, 400.0)]
    trips = [Trip("A", k + 1, 60.0 * k, 30.0, 0.0, "S", "S") for k in range(5)]
    trips += [Trip("B", k + 1, 30.0 + 60.0 * k, 30.0, 0.0, "S", "S") for k in range(5)]
    inst = build_instance(buses, trips, [Charger("L", "S", 300.0)])
    with pytest.raises(OracleLimitError, match="charging trips at one charger"):
        brute_force(inst, OracleLimits(max_candidates=12, max_chain=6))


def test_toy_generator_produces_valid_instances():
    for seed in (0, 9, 33):
        inst = random_toy(seed)
        assert validate(inst) == []
        assert 2 <= len(inst.buses) <= 3
        assert 4 <= len(inst.trips) <= 8
        assert 1 <= len(inst.chargers) <= 2
        assert len(inst.charge_candidates()) <= 12


def test_toy_generator_deterministic_and_matches_golden(tmp_path):
    inst = random_toy(1)
    again = random_toy(1)
    assert instance_to_dict(inst) == instance_to_dict(again)
    golden = load_instance("tests/data/toy_seed1.json")
    assert instance_to_dict(inst) == instance_to_dict(golden)


def test_exhaustive_optimum_never_beaten_by_other_plans():
    # Any feasible plan from any module scores at least the optimum.
    from oppcharge.heuristic import HeuristicConfig, run_3s

    for seed in (13, 17):
        inst = random_toy(seed)
        obj, _ = brute_force(inst)
        result = run_3s(inst, HeuristicConfig(iterations=100, seed=seed))
        for plan in result.pool:
            assert plan.objective >= obj - 1e-9
