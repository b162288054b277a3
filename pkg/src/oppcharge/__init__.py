"""Minimum-delay opportunity-charging scheduling for battery-electric buses.

The package schedules daytime fast charging for electric bus fleets that run
fixed blocks of timetabled trips.  Chargers at terminals are a shared, scarce
resource, so buses may queue; the schedulers decide which trips are followed
by a charge, in what order each charger serves buses, and for how long each
bus plugs in, minimizing the total departure delay across all trips.

Solvers provided:

* ``runner.solve_instance(method="direct")`` -- the complete mixed-integer
  model solved by branch and bound.
* ``runner.solve_instance(method="cb")`` -- exact combinatorial Benders
  decomposition (binary master problem + continuous scheduling subproblem).
* ``runner.solve_instance(method="3s")`` -- the polynomial-time randomized
  select/sequence/schedule heuristic.

``simulate.replay`` re-derives plugin times and delays of any plan by a
discrete-event recurrence, independent of the LP machinery, and is used
throughout the tests as a cross-check.
"""

__version__ = "0.1.0"
