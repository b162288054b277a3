"""Request/response models for the scheduling service.

The instance and plan payloads mirror the JSON documents used on disk, so a
file saved by the CLI can be posted verbatim and vice versa.
"""

from __future__ import annotations

from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field


class ChargerIn(BaseModel):
    model_config = ConfigDict(extra="forbid")
    id: str
    terminal: str
    power_kw: float


class BusIn(BaseModel):
    model_config = ConfigDict(extra="forbid")
    id: str
    usable_capacity_kwh: float
    initial_energy_kwh: float
    final_min_energy_kwh: float


class TripIn(BaseModel):
    model_config = ConfigDict(extra="forbid")
    bus: str
    seq: int
    sched_start_min: float
    sched_duration_min: float
    energy_kwh: float
    start_terminal: str
    end_terminal: str


class InstanceDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")
    chargers: List[ChargerIn]
    buses: List[BusIn]
    trips: List[TripIn]


class TripRef(BaseModel):
    model_config = ConfigDict(extra="forbid")
    bus: str
    seq: int


class ChargeEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")
    charger: str
    bus: str
    seq: int


class ChargeMinutes(ChargeEntry):
    minutes: float


class TripMinutes(TripRef):
    minutes: float


class PlanDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")
    objective: float
    x: List[ChargeEntry]
    arcs: Dict[str, List[TripRef]]
    t: List[ChargeMinutes]
    p: List[TripMinutes]
    d: List[TripMinutes]


class GenerateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    power_kw: float = Field(gt=0)


class ValidateRequest(BaseModel):
    instance: InstanceDoc


class ValidateResponse(BaseModel):
    ok: bool
    violations: List[str]


class ScenarioRequest(BaseModel):
    instance: InstanceDoc
    window_start_min: float
    window_end_min: float
    duration_multiplier: float = Field(gt=0)


class InstanceResponse(BaseModel):
    instance: InstanceDoc


class SolveRequest(BaseModel):
    instance: InstanceDoc
    method: Literal["direct", "cb", "3s"] = "3s"
    iterations: int = Field(default=500, ge=1)
    seed: int = 0
    time_limit_s: float = Field(default=3600.0, ge=0)
    stop_on_zero: bool = True
    warm_start: bool = True
    include_trace: bool = False


class SolveSummary(BaseModel):
    method: str
    bo: Optional[float]
    t_bo: float
    t_t: float
    nd: Optional[int]
    proven_optimal: bool
    timed_out: bool


class ScheduleRow(BaseModel):
    bus: str
    seq: int
    sched_start_min: float
    delay_min: float
    actual_start_min: float
    sched_duration_min: float
    end_min: float
    charger: Optional[str]
    plugin_min: float
    charge_min: float
    unplug_min: float


class SolveResponse(BaseModel):
    summary: SolveSummary
    plan: Optional[PlanDoc]
    schedule: List[ScheduleRow]
    histogram: Dict[int, float]
    trace: List[str] = []


class EvaluateRequest(BaseModel):
    instance: InstanceDoc
    plan: PlanDoc


class EvaluateResponse(BaseModel):
    feasible: bool
    violations: List[str]
    recomputed_objective: float
    recomputed_delayed_trips: int
    stored_objective: float
    delays_match_plan: bool
    schedule: List[ScheduleRow]
    histogram: Dict[int, float]
