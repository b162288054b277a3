"""FastAPI service exposing the charging schedulers.

The service is stateless: every request carries its instance (and plan,
where relevant) and gets the full result back.  The CLI is a thin client of
these endpoints; ``uvicorn oppcharge.service.app:app`` serves them to
anything else that wants schedules (dispatch tools, notebooks, monitors).
"""

from __future__ import annotations

from typing import Dict, List

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..heuristic import ChargingPlan, plan_from_json_dict
from ..model import Instance, InstanceFormatError, instance_from_dict, instance_to_dict, validate
from ..notional import generate_notional
from ..runner import SolveOptions, solve_instance
from ..simulate import (
    ScenarioTransform,
    SubtourCycleError,
    apply_scenario,
    check_plan,
    hourly_charging_histogram,
    replay,
)
from .schemas import (
    EvaluateRequest,
    EvaluateResponse,
    GenerateRequest,
    InstanceResponse,
    PlanDoc,
    ScenarioRequest,
    ScheduleRow,
    SolveRequest,
    SolveResponse,
    SolveSummary,
    ValidateRequest,
    ValidateResponse,
)


def _parse_instance(doc) -> Instance:
    try:
        return instance_from_dict(doc.model_dump())
    except InstanceFormatError as exc:
        raise HTTPException(status_code=422, detail=str(exc))
    except ValueError as exc:
        raise HTTPException(status_code=422, detail=str(exc))


def _require_valid(instance: Instance) -> None:
    violations = validate(instance)
    if violations:
        raise HTTPException(status_code=422, detail={"violations": violations})


def _schedule_rows(instance: Instance, plan: ChargingPlan) -> List[ScheduleRow]:
    rows = []
    chargers_by_trip = {k: cid for cid, k in plan.x}
    for trip in instance.trips:
        key = trip.key
        delay = plan.d.get(key, 0.0)
        start = trip.sched_start_min + delay
        end = start + trip.sched_duration_min
        cid = chargers_by_trip.get(key)
        charge = plan.t.get((cid, key), 0.0) if cid else 0.0
        plug = plan.p.get(key, end)
        rows.append(
            ScheduleRow(
                bus=key[0],
                seq=key[1],
                sched_start_min=trip.sched_start_min,
                delay_min=delay,
                actual_start_min=start,
                sched_duration_min=trip.sched_duration_min,
                end_min=end,
                charger=cid,
                plugin_min=plug,
                charge_min=charge,
                unplug_min=plug + charge,
            )
        )
    return rows


def create_app() -> FastAPI:
    app = FastAPI(
        title="oppcharge",
        version=__version__,
        description="Minimum-delay opportunity-charging schedules for electric bus fleets",
    )

    @app.get("/health")
    def health() -> Dict[str, str]:
        return {"status": "ok", "version": __version__}

    @app.post("/instances/notional", response_model=InstanceResponse)
    def notional(req: GenerateRequest) -> InstanceResponse:
        instance = generate_notional(req.power_kw)
        return InstanceResponse(instance=instance_to_dict(instance))

    @app.post("/instances/validate", response_model=ValidateResponse)
    def validate_instance(req: ValidateRequest) -> ValidateResponse:
        instance = _parse_instance(req.instance)
        violations = validate(instance)
        return ValidateResponse(ok=not violations, violations=violations)

    @app.post("/instances/scenario", response_model=InstanceResponse)
    def scenario(req: ScenarioRequest) -> InstanceResponse:
        instance = _parse_instance(req.instance)
        try:
            transform = ScenarioTransform(
                req.window_start_min, req.window_end_min, req.duration_multiplier
            )
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return InstanceResponse(
            instance=instance_to_dict(apply_scenario(instance, transform))
        )

    @app.post("/solve", response_model=SolveResponse)
    def solve(req: SolveRequest) -> SolveResponse:
        instance = _parse_instance(req.instance)
        _require_valid(instance)
        outcome = solve_instance(
            instance,
            SolveOptions(
                method=req.method,
                iterations=req.iterations,
                seed=req.seed,
                time_limit_s=req.time_limit_s,
                stop_on_zero=req.stop_on_zero,
                warm_start=req.warm_start,
            ),
        )
        plan_doc = None
        schedule: List[ScheduleRow] = []
        histogram: Dict[int, float] = {}
        if outcome.plan is not None:
            plan_doc = PlanDoc(**outcome.plan.to_json_dict())
            schedule = _schedule_rows(instance, outcome.plan)
            histogram = hourly_charging_histogram(outcome.plan)
        return SolveResponse(
            summary=SolveSummary(**outcome.summary_dict()),
            plan=plan_doc,
            schedule=schedule,
            histogram=histogram,
            trace=outcome.trace_lines if req.include_trace else [],
        )

    @app.post("/evaluate", response_model=EvaluateResponse)
    def evaluate(req: EvaluateRequest) -> EvaluateResponse:
        instance = _parse_instance(req.instance)
        _require_valid(instance)
        try:
            plan = plan_from_json_dict(req.plan.model_dump())
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        unknown = [k for k in plan.d if k not in instance._trip_map]
        if unknown or len(plan.d) != len(instance.trips):
            raise HTTPException(
                status_code=422, detail="plan does not cover exactly the instance's trips"
            )
        violations = check_plan(instance, plan)
        try:
            p, d = replay(instance, plan)
        except SubtourCycleError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        recomputed = sum(d.values())
        delays_match = all(
            abs(d[k] - plan.d.get(k, 0.0)) <= 1e-6 for k in d
        ) and all(abs(p[k] - plan.p.get(k, 0.0)) <= 1e-6 for k in p)
        replayed = ChargingPlan(
            x=plan.x, arcs=plan.arcs, t=plan.t, p=p, d=d,
            objective=recomputed,
        )
        return EvaluateResponse(
            feasible=not violations,
            violations=violations,
            recomputed_objective=recomputed,
            recomputed_delayed_trips=replayed.delayed_trips(),
            stored_objective=plan.objective,
            delays_match_plan=delays_match,
            schedule=_schedule_rows(instance, replayed),
            histogram=hourly_charging_histogram(replayed),
        )

    return app


app = create_app()
