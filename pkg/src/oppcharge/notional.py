"""Generator for the notional two-route benchmark network.

Two routes share one charged terminal "S":

* Route A: 15 mi one way, 40-minute trips, 20-minute layovers, 30-minute
  headway (four vehicles in rotation; the two longest rotations are split
  into morning/afternoon blocks, which is how the fleet reaches 8 buses);
* Route C: 15 mi one way, 45-minute trips, 15-minute layovers, 60-minute
  headway (two vehicles).

Every bus has 400 kWh of usable capacity and consumes 3 kWh per mile, so
each trip draws 45 kWh.  The default spans yield 8 buses and 84 trips; the
single charger at S takes its power rating as a parameter, which is the
experiment knob (total delay falls as the rating rises).

The spans, block split and starting energy below are frozen generator
defaults; the golden instance file in the test data pins them.
"""

from __future__ import annotations

from typing import Dict, List

from .model import Bus, Charger, Instance, Trip, build_instance

TRIP_MILES = 15.0
KWH_PER_MILE = 3.0
TRIP_KWH = TRIP_MILES * KWH_PER_MILE
CAPACITY_KWH = 400.0

SERVICE_START_MIN = 360.0  # 06:00

# Route A: S-departure indices (30-minute headway) per block.  Rotation
# slots 0 and 1 are split into AM/PM blocks; slots 2 and 3 run all day.
_A_BLOCKS: Dict[str, List[int]] = {
    "A1am": [0, 4, 8, 12],
    "A1pm": [16, 20, 24, 28],
    "A2am": [1, 5, 9, 13],
    "A2pm": [17, 21, 25, 29],
    "A3": [2, 6, 10, 14, 18, 22, 26],
    "A4": [3, 7, 11, 15, 19, 23, 27],
}
# Route C: hourly S-departure indices per block.
_C_BLOCKS: Dict[str, List[int]] = {
    "C1": [0, 2, 4, 6, 8, 10],
    "C2": [1, 3, 5, 7, 9, 11],
}


def generate_notional(
    power_kw: float,
    initial_energy_kwh: float = 200.0,
    final_min_energy_kwh: float = 40.0,
) -> Instance:
    """Build the 8-bus / 84-trip benchmark with the given charger rating."""

    chargers = [Charger("chg-S", "S", float(power_kw))]
    buses: List[Bus] = []
    trips: List[Trip] = []

    for block_id, rounds in sorted(_A_BLOCKS.items()):
        buses.append(
            Bus(block_id, CAPACITY_KWH, initial_energy_kwh, final_min_energy_kwh)
        )
        seq = 1
        for k in rounds:
            dep = SERVICE_START_MIN + 30.0 * k
            trips.append(Trip(block_id, seq, dep, 40.0, TRIP_KWH, "S", "A-end"))
            seq += 1
            trips.append(Trip(block_id, seq, dep + 60.0, 40.0, TRIP_KWH, "A-end", "S"))
            seq += 1
    for block_id, rounds in sorted(_C_BLOCKS.items()):
        buses.append(
            Bus(block_id, CAPACITY_KWH, initial_energy_kwh, final_min_energy_kwh)
        )
        seq = 1
        for m in rounds:
            dep = SERVICE_START_MIN + 60.0 * m
            trips.append(Trip(block_id, seq, dep, 45.0, TRIP_KWH, "S", "C-end"))
            seq += 1
            trips.append(Trip(block_id, seq, dep + 60.0, 45.0, TRIP_KWH, "C-end", "S"))
            seq += 1
    return build_instance(buses, trips, chargers)
