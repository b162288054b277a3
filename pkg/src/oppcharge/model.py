"""Domain model: buses, blocks of trips, chargers, and derived scheduling data.

Conventions used throughout the package:

* time is measured in minutes from midnight, energy in kWh, power in kW, so
  charging for ``t`` minutes at a charger rated ``rho`` kW gains
  ``rho * t / 60`` kWh;
* battery state is tracked on the usable-energy scale ``[0, usable_capacity]``
  -- any reserve floor is assumed to be baked into the input energies by the
  data preparer;
* a trip is identified by ``(bus_id, seq)`` with ``seq`` counting 1..K along
  the bus's block.

For every trip the model derives a window ``[alpha, beta]`` on the cumulative
energy the bus must/may have gained *before starting* that trip, plus a
sentinel end-of-block entry that enforces the minimum energy required when
the bus returns to the depot.  Each charger gets an arc network over the
trips that end at its terminal; an ``s -> t`` path through that network is
the order in which the charger serves buses.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

TripKey = Tuple[str, int]
# Arc endpoints are trip keys or the dummy initial/final charger states.
SOURCE = "s"
SINK = "t"
ArcNode = Union[TripKey, str]
Arc = Tuple[str, ArcNode, ArcNode]


class InfeasibleBlockError(ValueError):
    """A block needs more charge than its reachable chargers can deliver."""


class InstanceFormatError(ValueError):
    """An instance document does not match the documented schema."""


@dataclass(frozen=True)
class Charger:
    id: str
    terminal: str
    power_kw: float


@dataclass(frozen=True)
class Bus:
    id: str
    usable_capacity_kwh: float
    initial_energy_kwh: float
    final_min_energy_kwh: float = 0.0


@dataclass(frozen=True)
class Trip:
    bus: str
    seq: int
    sched_start_min: float
    sched_duration_min: float
    energy_kwh: float
    start_terminal: str
    end_terminal: str

    @property
    def key(self) -> TripKey:
        return (self.bus, self.seq)

    @property
    def sched_end_min(self) -> float:
        return self.sched_start_min + self.sched_duration_min


@dataclass(frozen=True)
class ChargeBounds:
    """Cumulative-charge window attached to one trip (or block sentinel).

    ``alpha_kwh <= sum of charge gained over strict predecessors <= beta_kwh``.
    The sentinel entry of a block (``sentinel=True``) carries the end-of-day
    depot requirement; its "predecessors" are all real trips of the block.
    ``tmax_min`` maps charger id -> maximum plug duration after this trip
    (0 entries are omitted; a charger appears iff the trip ends at its
    terminal).
    """

    trip: TripKey
    alpha_kwh: float
    beta_kwh: float
    tmax_min: Mapping[str, float] = field(default_factory=dict)
    sentinel: bool = False


@dataclass(frozen=True)
class ArcNetwork:
    """Per-charger graphs of feasible consecutive-service pairs.

    Nodes of charger ``l`` are the trips ending at its terminal.  Same-bus
    pairs appear once, in block order; pairs on different buses appear in
    both directions because the service order is a decision.  Every node
    also has dummy arcs from SOURCE and to SINK.
    """

    nodes_by_charger: Mapping[str, Tuple[TripKey, ...]]
    arcs_by_charger: Mapping[str, Tuple[Tuple[ArcNode, ArcNode], ...]]

    def arcs(self) -> List[Arc]:
        out: List[Arc] = []
        for charger_id in self.arcs_by_charger:
            for i, j in self.arcs_by_charger[charger_id]:
                out.append((charger_id, i, j))
        return out


@dataclass(frozen=True)
class Instance:
    """Immutable problem data plus everything derived from it.

    Safe to share read-only across concurrent solver runs.
    """

    buses: Tuple[Bus, ...]
    trips: Tuple[Trip, ...]
    chargers: Tuple[Charger, ...]
    bounds: Mapping[TripKey, ChargeBounds]
    network: ArcNetwork
    horizon_end_min: float
    big_m: float

    def bus(self, bus_id: str) -> Bus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise KeyError(bus_id)

    def trip(self, key: TripKey) -> Trip:
        return self._trip_map[key]

    def block(self, bus_id: str) -> Tuple[Trip, ...]:
        return tuple(t for t in self.trips if t.bus == bus_id)

    def predecessor(self, key: TripKey) -> Optional[Trip]:
        bus_id, seq = key
        if seq <= 1:
            return None
        return self._trip_map.get((bus_id, seq - 1))

    def charger_at(self, terminal: str) -> Optional[Charger]:
        for c in self.chargers:
            if c.terminal == terminal:
                return c
        return None

    def charger(self, charger_id: str) -> Charger:
        for c in self.chargers:
            if c.id == charger_id:
                return c
        raise KeyError(charger_id)

    def charge_candidates(self) -> Tuple[Tuple[str, TripKey], ...]:
        """All (charger, trip) pairs with a positive max plug duration."""
        out = []
        for trip in self.trips:
            bnd = self.bounds[trip.key]
            for charger_id in sorted(bnd.tmax_min):
                out.append((charger_id, trip.key))
        return tuple(out)

    def tmax(self, charger_id: str, key: TripKey) -> float:
        return self.bounds[key].tmax_min.get(charger_id, 0.0)

    @property
    def _trip_map(self) -> Dict[TripKey, Trip]:
        cached = self.__dict__.get("_trip_map_cache")
        if cached is None:
            cached = {t.key: t for t in self.trips}
            object.__setattr__(self, "_trip_map_cache", cached)
        return cached


def _blocks_of(trips: Sequence[Trip]) -> Dict[str, List[Trip]]:
    blocks: Dict[str, List[Trip]] = {}
    for t in trips:
        blocks.setdefault(t.bus, []).append(t)
    for bus_id in blocks:
        blocks[bus_id].sort(key=lambda t: t.seq)
    return blocks


def _tmax_for(trip: Trip, bus: Bus, chargers: Sequence[Charger]) -> Dict[str, float]:
    out: Dict[str, float] = {}
    for c in chargers:
        if c.terminal == trip.end_terminal and c.power_kw > 0:
            out[c.id] = bus.usable_capacity_kwh * 60.0 / c.power_kw
    return out


def derive_bounds(
    buses: Sequence[Bus],
    trips: Sequence[Trip],
    chargers: Sequence[Charger],
) -> Dict[TripKey, ChargeBounds]:
    """Derive the cumulative-charge window of every trip plus block sentinels.

    For trip ``i`` with prefix consumption ``E_k`` (total energy of the first
    k trips of its block):

    * ``alpha_i = max(0, E_{n_i} - initial_energy)`` -- enough charge, over
      strict predecessors, to finish trip i without draining the battery;
    * ``beta_i = capacity - initial_energy + E_{n_i - 1}`` -- no more charge
      than the headroom available when trip i starts.

    The sentinel entry additionally requires the bus to reach its depot
    minimum after the last trip.  Raises :class:`InfeasibleBlockError` when a
    window cannot be met even by charging the full battery at every reachable
    opportunity before the trip.
    """

    bus_map = {b.id: b for b in buses}
    bounds: Dict[TripKey, ChargeBounds] = {}
    for bus_id, block in _blocks_of(trips).items():
        bus = bus_map[bus_id]
        cap = bus.usable_capacity_kwh
        e0 = bus.initial_energy_kwh
        consumed = 0.0
        # Number of strict predecessors that end within reach of a charger:
        # each such stop can add at most one full battery of charge.
        reachable_stops = 0
        for trip in block:
            prev_consumed = consumed
            consumed += trip.energy_kwh
            alpha = max(0.0, consumed - e0)
            beta = cap - e0 + prev_consumed
            alpha = min(alpha, max(beta, 0.0))
            if alpha > cap * reachable_stops + 1e-9:
                raise InfeasibleBlockError(
                    f"trip {trip.key}: needs {alpha:.3f} kWh gained beforehand but "
                    f"only {reachable_stops} charging stop(s) precede it"
                )
            bounds[trip.key] = ChargeBounds(
                trip=trip.key,
                alpha_kwh=alpha,
                beta_kwh=beta,
                tmax_min=_tmax_for(trip, bus, chargers),
            )
            if bounds[trip.key].tmax_min:
                reachable_stops += 1
        # End-of-block sentinel: charge enough (counting the stop after the
        # final trip) to return to the depot at the required minimum level.
        last = block[-1]
        alpha_end = max(0.0, consumed + bus.final_min_energy_kwh - e0)
        beta_end = cap - e0 + consumed
        alpha_end = min(alpha_end, max(beta_end, 0.0))
        if alpha_end > cap * reachable_stops + 1e-9:
            raise InfeasibleBlockError(
                f"block {bus_id}: needs {alpha_end:.3f} kWh total but only "
                f"{reachable_stops} charging stop(s) are reachable"
            )
        bounds[(bus_id, last.seq + 1)] = ChargeBounds(
            trip=(bus_id, last.seq + 1),
            alpha_kwh=alpha_end,
            beta_kwh=beta_end,
            tmax_min={},
            sentinel=True,
        )
    return bounds


def build_arc_network(trips: Sequence[Trip], chargers: Sequence[Charger]) -> ArcNetwork:
    """Build the consecutive-service graph of every charger.

    A charger with ``m`` eligible trips gets: one arc per same-bus ordered
    pair, two arcs per cross-bus pair, and ``2m`` dummy arcs.  Chargers with
    no eligible trips get an empty graph.
    """

    nodes_by: Dict[str, Tuple[TripKey, ...]] = {}
    arcs_by: Dict[str, Tuple[Tuple[ArcNode, ArcNode], ...]] = {}
    for charger in chargers:
        nodes = [t for t in trips if t.end_terminal == charger.terminal]
        nodes.sort(key=lambda t: t.key)
        arcs: List[Tuple[ArcNode, ArcNode]] = []
        for a in nodes:
            for b in nodes:
                if a.key == b.key:
                    continue
                if a.bus == b.bus:
                    if a.seq < b.seq:
                        arcs.append((a.key, b.key))
                else:
                    arcs.append((a.key, b.key))
        for t in nodes:
            arcs.append((SOURCE, t.key))
            arcs.append((t.key, SINK))
        nodes_by[charger.id] = tuple(t.key for t in nodes)
        arcs_by[charger.id] = tuple(arcs)
    return ArcNetwork(nodes_by_charger=nodes_by, arcs_by_charger=arcs_by)


def build_instance(
    buses: Sequence[Bus],
    trips: Sequence[Trip],
    chargers: Sequence[Charger],
) -> Instance:
    """Assemble an immutable instance, deriving bounds, arcs and big-M."""

    trips_sorted = tuple(sorted(trips, key=lambda t: t.key))
    bounds = derive_bounds(buses, trips_sorted, chargers)
    network = build_arc_network(trips_sorted, chargers)
    horizon = max((t.sched_end_min for t in trips_sorted), default=0.0)
    total_tmax = 0.0
    for t in trips_sorted:
        tm = bounds[t.key].tmax_min
        if tm:
            total_tmax += max(tm.values())
    return Instance(
        buses=tuple(sorted(buses, key=lambda b: b.id)),
        trips=trips_sorted,
        chargers=tuple(sorted(chargers, key=lambda c: c.id)),
        bounds=bounds,
        network=network,
        horizon_end_min=horizon,
        big_m=horizon + total_tmax,
    )


def validate(instance: Instance) -> List[str]:
    """Check every structural invariant; return all violations found.

    Violations are data, not exceptions: an empty list means the instance is
    well formed.
    """

    problems: List[str] = []
    seen_charger_ids = set()
    seen_terminals: Dict[str, str] = {}
    for c in instance.chargers:
        if c.id in seen_charger_ids:
            problems.append(f"charger {c.id}: duplicate id")
        seen_charger_ids.add(c.id)
        if c.power_kw <= 0:
            problems.append(f"charger {c.id}: power_kw must be positive")
        if c.terminal in seen_terminals:
            problems.append(
                f"charger {c.id}: terminal {c.terminal} already has charger "
                f"{seen_terminals[c.terminal]} (at most one charger per terminal)"
            )
        else:
            seen_terminals[c.terminal] = c.id

    bus_map: Dict[str, Bus] = {}
    for b in instance.buses:
        if b.id in bus_map:
            problems.append(f"bus {b.id}: duplicate id")
        bus_map[b.id] = b
        if b.usable_capacity_kwh <= 0:
            problems.append(f"bus {b.id}: usable_capacity_kwh must be positive")
        if not (0 <= b.final_min_energy_kwh <= b.initial_energy_kwh <= b.usable_capacity_kwh):
            problems.append(
                f"bus {b.id}: require 0 <= final_min <= initial <= capacity on the usable scale"
            )

    blocks = _blocks_of(instance.trips)
    for bus_id, block in blocks.items():
        if bus_id not in bus_map:
            problems.append(f"trip {block[0].key}: unknown bus {bus_id}")
            continue
        bus = bus_map[bus_id]
        for pos, trip in enumerate(block):
            if trip.seq != pos + 1:
                problems.append(
                    f"trip {trip.key}: block sequence must be consecutive from 1"
                )
                break
        for trip in block:
            if trip.sched_duration_min <= 0:
                problems.append(f"trip {trip.key}: duration must be positive")
            if trip.energy_kwh < 0:
                problems.append(f"trip {trip.key}: energy must be nonnegative")
            if trip.energy_kwh > bus.usable_capacity_kwh:
                problems.append(
                    f"trip {trip.key}: energy exceeds the bus's usable capacity"
                )
        for prev, nxt in zip(block, block[1:]):
            if nxt.sched_start_min < prev.sched_end_min - 1e-9:
                problems.append(
                    f"trip {nxt.key}: scheduled start precedes the end of {prev.key}"
                )

    # Derived-data invariants (bounds windows, arc symmetry, big-M).
    for trip in instance.trips:
        bnd = instance.bounds.get(trip.key)
        if bnd is None:
            problems.append(f"trip {trip.key}: missing charge bounds")
            continue
        if bnd.alpha_kwh > bnd.beta_kwh + 1e-9:
            problems.append(f"trip {trip.key}: alpha exceeds beta")
        bus = bus_map.get(trip.bus)
        if bus is not None:
            for charger_id, tmax in bnd.tmax_min.items():
                charger = instance.charger(charger_id)
                expect = bus.usable_capacity_kwh * 60.0 / charger.power_kw
                if charger.terminal != trip.end_terminal:
                    problems.append(
                        f"trip {trip.key}: positive plug limit at unreachable charger {charger_id}"
                    )
                elif abs(tmax - expect) > 1e-6:
                    problems.append(
                        f"trip {trip.key}: plug limit at {charger_id} disagrees with capacity/power"
                    )
    for bus_id, block in blocks.items():
        if bus_id not in bus_map:
            continue
        bus = bus_map[bus_id]
        prev_alpha = 0.0
        reachable = 0
        keys = [t.key for t in block] + [(bus_id, block[-1].seq + 1)]
        for key in keys:
            bnd = instance.bounds.get(key)
            if bnd is None:
                problems.append(f"trip {key}: missing charge bounds")
                continue
            if bnd.alpha_kwh < prev_alpha - 1e-9:
                problems.append(f"trip {key}: alpha decreases along the block")
            prev_alpha = bnd.alpha_kwh
            if bnd.alpha_kwh > bus.usable_capacity_kwh * reachable + 1e-9:
                problems.append(
                    f"trip {key}: cumulative charge requirement unreachable "
                    f"({reachable} charging stop(s) precede it)"
                )
            if bnd.tmax_min:
                reachable += 1
    for charger_id, arcs in instance.network.arcs_by_charger.items():
        arc_set = set(arcs)
        for i, j in arcs:
            if i == SOURCE or j == SINK:
                continue
            ti, tj = instance.trip(i), instance.trip(j)
            if ti.bus != tj.bus and (j, i) not in arc_set:
                problems.append(
                    f"charger {charger_id}: cross-bus arc {i}->{j} missing its reverse"
                )
            if ti.bus == tj.bus and ti.seq >= tj.seq:
                problems.append(
                    f"charger {charger_id}: same-bus arc {i}->{j} violates block order"
                )
    min_big_m = instance.horizon_end_min
    for trip in instance.trips:
        tm = instance.bounds[trip.key].tmax_min
        if tm:
            min_big_m += max(tm.values())
    if instance.big_m < min_big_m - 1e-6:
        problems.append("big_m is too small to dominate every feasible plugin time")
    return problems


# ---------------------------------------------------------------------------
# Instance documents (strict JSON schema)
# ---------------------------------------------------------------------------

_CHARGER_FIELDS = {"id": str, "terminal": str, "power_kw": (int, float)}
_BUS_FIELDS = {
    "id": str,
    "usable_capacity_kwh": (int, float),
    "initial_energy_kwh": (int, float),
    "final_min_energy_kwh": (int, float),
}
_TRIP_FIELDS = {
    "bus": str,
    "seq": int,
    "sched_start_min": (int, float),
    "sched_duration_min": (int, float),
    "energy_kwh": (int, float),
    "start_terminal": str,
    "end_terminal": str,
}


def _check_record(record: dict, fields: dict, where: str) -> dict:
    if not isinstance(record, dict):
        raise InstanceFormatError(f"{where}: expected an object")
    unknown = set(record) - set(fields)
    if unknown:
        raise InstanceFormatError(f"{where}: unknown field(s) {sorted(unknown)}")
    missing = set(fields) - set(record)
    if missing:
        raise InstanceFormatError(f"{where}: missing field(s) {sorted(missing)}")
    for name, types in fields.items():
        value = record[name]
        if types is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise InstanceFormatError(f"{where}.{name}: expected an integer")
        elif not isinstance(value, types) or isinstance(value, bool):
            raise InstanceFormatError(f"{where}.{name}: wrong type")
        if isinstance(value, float) and not math.isfinite(value):
            raise InstanceFormatError(f"{where}.{name}: must be finite")
    return record


def instance_from_dict(data: dict) -> Instance:
    """Parse one instance document.  Unknown fields are rejected."""

    if not isinstance(data, dict):
        raise InstanceFormatError("instance document must be an object")
    unknown = set(data) - {"chargers", "buses", "trips"}
    if unknown:
        raise InstanceFormatError(f"unknown top-level field(s) {sorted(unknown)}")
    for section in ("chargers", "buses", "trips"):
        if section not in data or not isinstance(data[section], list):
            raise InstanceFormatError(f"missing or non-array section '{section}'")
    chargers = [
        Charger(**_check_record(rec, _CHARGER_FIELDS, f"chargers[{k}]"))
        for k, rec in enumerate(data["chargers"])
    ]
    buses = [
        Bus(**_check_record(rec, _BUS_FIELDS, f"buses[{k}]"))
        for k, rec in enumerate(data["buses"])
    ]
    trips = [
        Trip(**_check_record(rec, _TRIP_FIELDS, f"trips[{k}]"))
        for k, rec in enumerate(data["trips"])
    ]
    bus_ids = {b.id for b in buses}
    for t in trips:
        if t.bus not in bus_ids:
            raise InstanceFormatError(f"trip ({t.bus}, {t.seq}): unknown bus")
    return build_instance(buses, trips, chargers)


def instance_to_dict(instance: Instance) -> dict:
    return {
        "chargers": [
            {"id": c.id, "terminal": c.terminal, "power_kw": c.power_kw}
            for c in instance.chargers
        ],
        "buses": [
            {
                "id": b.id,
                "usable_capacity_kwh": b.usable_capacity_kwh,
                "initial_energy_kwh": b.initial_energy_kwh,
                "final_min_energy_kwh": b.final_min_energy_kwh,
            }
            for b in instance.buses
        ],
        "trips": [
            {
                "bus": t.bus,
                "seq": t.seq,
                "sched_start_min": t.sched_start_min,
                "sched_duration_min": t.sched_duration_min,
                "energy_kwh": t.energy_kwh,
                "start_terminal": t.start_terminal,
                "end_terminal": t.end_terminal,
            }
            for t in instance.trips
        ],
    }


def load_instance(path: str) -> Instance:
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise InstanceFormatError(f"{path}: invalid JSON ({exc})") from exc
    return instance_from_dict(data)


def save_instance(instance: Instance, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(instance_to_dict(instance), f, indent=2)
        f.write("\n")
