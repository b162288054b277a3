"""Branch and bound for binary MILPs over the LP core.

Best-bound node selection, most-fractional branching, and two hooks that the
decomposition layers rely on:

* ``on_integer_solution`` -- called with every integral candidate before it
  may become the incumbent; the hook can reject it by returning constraint
  rows ("lazy constraints", e.g. cycle-elimination rows) which are appended
  to the shared LP and enforced from then on at every node;
* an initial assignment of the binaries can prime the incumbent (used to
  warm-start the exact solvers from a heuristic plan).
"""

from __future__ import annotations

import enum
import heapq
import math
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

from . import lp as lp_mod
from .lp import LinearProgram, LpStatus, Row

INT_TOL = 1e-6

LazyRows = Optional[Sequence[Row]]
IntegerHook = Callable[[Dict[str, float]], LazyRows]


class BnbStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    TIME_LIMIT = "time_limit"
    UNBOUNDED = "unbounded"


@dataclass
class MixedIntegerProgram:
    lp: LinearProgram
    binaries: List[str]
    on_integer_solution: Optional[IntegerHook] = None

    def __post_init__(self) -> None:
        for vid in self.binaries:
            if not self.lp.has_variable(vid):
                raise ValueError(f"binary {vid!r} is not an LP variable")


@dataclass
class BnbResult:
    status: BnbStatus
    values: Optional[Dict[str, float]]
    objective: Optional[float]
    bound: float
    nodes: int = 0
    lazy_rows_added: int = 0


def branch_select(values: Mapping[str, float], binaries: Sequence[str]) -> str:
    """Most-fractional binary; ties broken by the lowest variable id."""

    best_id: Optional[str] = None
    best_frac = -1.0
    for vid in sorted(binaries):
        v = values[vid]
        frac = abs(v - round(v))
        if frac > INT_TOL and frac > best_frac + 1e-12:
            best_frac = frac
            best_id = vid
    if best_id is None:
        raise ValueError("no fractional binary to branch on")
    return best_id


def _is_integral(values: Mapping[str, float], binaries: Sequence[str]) -> bool:
    return all(abs(values[v] - round(values[v])) <= INT_TOL for v in binaries)


def solve_bnb(
    mip: MixedIntegerProgram,
    time_limit_s: Optional[float] = None,
    gap_tol: float = 1e-6,
    warm_start: Optional[Mapping[str, float]] = None,
    trace=None,
) -> BnbResult:
    """Minimize the MIP.  Lazy rows returned by the hook persist in ``mip.lp``.

    On OPTIMAL, ``|objective - bound| <= gap_tol * max(1, |objective|)``.
    On TIME_LIMIT the best incumbent found (possibly none) is returned.
    """

    start = time.perf_counter()
    prog = mip.lp
    binaries = sorted(mip.binaries)

    def emit(text: str) -> None:
        if trace is not None:
            trace.write(text + "\n")

    incumbent_vals: Optional[Dict[str, float]] = None
    incumbent_obj = math.inf
    lazy_added = 0

    if warm_start is not None:
        fixed = {vid: (round(warm_start[vid]), round(warm_start[vid])) for vid in binaries}
        sol = lp_mod.solve(prog, bound_overrides=fixed)
        if sol.status is LpStatus.OPTIMAL:
            vals = dict(sol.values)
            for vid in binaries:
                vals[vid] = float(round(vals[vid]))
            rows = None
            if mip.on_integer_solution is not None:
                rows = mip.on_integer_solution(vals)
            if not rows:
                incumbent_vals = vals
                incumbent_obj = sol.objective
                emit(f"warm_start objective={incumbent_obj:.6f}")
            else:
                emit("warm_start rejected by hook")
        else:
            emit("warm_start infeasible, ignored")

    # Heap entries: (parent bound, insertion order, bound overrides).
    counter = 0
    heap: List[Tuple[float, int, Dict[str, Tuple[float, float]]]] = []
    heapq.heappush(heap, (-math.inf, counter, {}))
    nodes = 0

    def gap_closed() -> bool:
        if incumbent_vals is None:
            return False
        bound = heap[0][0] if heap else incumbent_obj
        return incumbent_obj - bound <= gap_tol * max(1.0, abs(incumbent_obj))

    status = BnbStatus.OPTIMAL
    while heap:
        if gap_closed():
            break
        if time_limit_s is not None and time.perf_counter() - start > time_limit_s:
            status = BnbStatus.TIME_LIMIT
            break
        parent_bound, _, fixing = heapq.heappop(heap)
        if incumbent_vals is not None and parent_bound >= incumbent_obj - gap_tol * max(
            1.0, abs(incumbent_obj)
        ):
            continue
        nodes += 1
        sol = lp_mod.solve(prog, bound_overrides=fixing)
        if sol.status is LpStatus.INFEASIBLE:
            continue
        if sol.status is LpStatus.UNBOUNDED:
            return BnbResult(BnbStatus.UNBOUNDED, None, None, -math.inf, nodes, lazy_added)
        if sol.status is LpStatus.NUMERICAL_FAILURE:
            raise RuntimeError("LP solve failed inside branch and bound")
        node_obj = sol.objective
        if incumbent_vals is not None and node_obj >= incumbent_obj - gap_tol * max(
            1.0, abs(incumbent_obj)
        ):
            continue

        # Integral candidates loop through the hook until accepted or cut off.
        while _is_integral(sol.values, binaries):
            vals = dict(sol.values)
            for vid in binaries:
                vals[vid] = float(round(vals[vid]))
            rows = None
            if mip.on_integer_solution is not None:
                rows = mip.on_integer_solution(vals)
            if rows:
                for row in rows:
                    prog.add_constraint(row.id, row.coeffs, row.sense, row.rhs, tag=row.tag)
                    lazy_added += 1
                emit(f"node={nodes} lazy_rows+={len(rows)}")
                sol = lp_mod.solve(prog, bound_overrides=fixing)
                if sol.status is not LpStatus.OPTIMAL:
                    break
                node_obj = sol.objective
                if incumbent_vals is not None and node_obj >= incumbent_obj - gap_tol * max(
                    1.0, abs(incumbent_obj)
                ):
                    break
                continue
            # Accepted: re-check every row of the (possibly grown) LP.
            for row in prog.rows:
                act = prog.row_activity(row, vals)
                ok = (
                    (row.sense == lp_mod.LE and act <= row.rhs + lp_mod.FEAS_TOL)
                    or (row.sense == lp_mod.GE and act >= row.rhs - lp_mod.FEAS_TOL)
                    or (row.sense == lp_mod.EQ and abs(act - row.rhs) <= lp_mod.FEAS_TOL)
                )
                if not ok:
                    raise RuntimeError(f"accepted solution violates row {row.id}")
            if node_obj < incumbent_obj - 1e-12:
                incumbent_vals = vals
                incumbent_obj = node_obj
                bound_now = heap[0][0] if heap else node_obj
                emit(
                    f"node={nodes} incumbent={incumbent_obj:.6f} bound={bound_now:.6f}"
                )
            break
        else:
            # Fractional: branch on the most-fractional binary.
            vid = branch_select(sol.values, binaries)
            for fix in (0.0, 1.0):
                child = dict(fixing)
                child[vid] = (fix, fix)
                counter += 1
                heapq.heappush(heap, (node_obj, counter, child))
            continue
        # (integral-candidate loop exited via break: node fully processed)

    bound = heap[0][0] if heap else incumbent_obj
    if status is BnbStatus.TIME_LIMIT:
        obj = incumbent_obj if incumbent_vals is not None else None
        return BnbResult(status, incumbent_vals, obj, bound, nodes, lazy_added)
    if incumbent_vals is None:
        return BnbResult(BnbStatus.INFEASIBLE, None, None, math.inf, nodes, lazy_added)
    return BnbResult(
        BnbStatus.OPTIMAL, incumbent_vals, incumbent_obj, min(bound, incumbent_obj), nodes, lazy_added
    )
