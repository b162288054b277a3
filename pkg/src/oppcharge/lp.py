"""Sparse linear programs and a self-contained bounded-variable simplex solver.

The solver is a two-phase revised simplex over dense numpy arrays with an
explicitly maintained basis inverse.  Pricing is Dantzig's rule with an
automatic, permanent switch to Bland's rule after a long stall, which
guarantees termination on degenerate problems.  The instances handled here
are small to medium scheduling LPs (hundreds of rows), so robustness and
determinism are preferred over speed.

Constraints may carry an opaque ``tag``; callers use tags to mark
conditional constraints so that subsets can be disabled per solve (used by
the irreducible-infeasible-subsystem deletion filter and by branch and
bound for node-local bound fixing).
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from typing import Dict, Hashable, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

LE = "<="
GE = ">="
EQ = "="

FEAS_TOL = 1e-6  # caller-facing feasibility tolerance

_DUAL_TOL = 1e-9
_PIVOT_TOL = 1e-10
_RATIO_TOL = 1e-9
_REFACTOR_EVERY = 150

_solve_count = 0


def solve_count() -> int:
    """Total simplex solves performed in this process (instrumentation)."""
    return _solve_count


class LpStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class Variable:
    id: str
    lb: float
    ub: float
    obj: float


@dataclass(frozen=True)
class Row:
    id: str
    coeffs: Mapping[str, float]
    sense: str
    rhs: float
    tag: Optional[Hashable] = None


@dataclass
class LpSolution:
    status: LpStatus
    objective: Optional[float]
    values: Dict[str, float] = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


class LinearProgram:
    """A minimization LP with per-variable bounds and tagged constraints."""

    def __init__(self) -> None:
        self.variables: List[Variable] = []
        self.rows: List[Row] = []
        self._var_index: Dict[str, int] = {}
        self._row_ids: Set[str] = set()
        self._cache: Optional[_Compiled] = None

    def add_variable(
        self, vid: str, lb: float = 0.0, ub: float = math.inf, obj: float = 0.0
    ) -> None:
        if vid in self._var_index:
            raise ValueError(f"duplicate variable id {vid!r}")
        if lb > ub:
            raise ValueError(f"variable {vid!r}: lb > ub")
        self._var_index[vid] = len(self.variables)
        self.variables.append(Variable(vid, float(lb), float(ub), float(obj)))
        self._cache = None

    def add_constraint(
        self,
        cid: str,
        coeffs: Mapping[str, float],
        sense: str,
        rhs: float,
        tag: Optional[Hashable] = None,
    ) -> None:
        if cid in self._row_ids:
            raise ValueError(f"duplicate constraint id {cid!r}")
        if sense not in (LE, GE, EQ):
            raise ValueError(f"constraint {cid!r}: bad sense {sense!r}")
        for vid in coeffs:
            if vid not in self._var_index:
                raise ValueError(f"constraint {cid!r}: unknown variable {vid!r}")
        self._row_ids.add(cid)
        self.rows.append(Row(cid, dict(coeffs), sense, float(rhs), tag))
        self._cache = None

    def remove_constraint(self, cid: str) -> None:
        if cid not in self._row_ids:
            raise KeyError(cid)
        self._row_ids.discard(cid)
        self.rows = [r for r in self.rows if r.id != cid]
        self._cache = None

    def has_variable(self, vid: str) -> bool:
        return vid in self._var_index

    def tags(self) -> List[Hashable]:
        return [r.tag for r in self.rows if r.tag is not None]

    def objective_value(self, values: Mapping[str, float]) -> float:
        return sum(v.obj * values.get(v.id, 0.0) for v in self.variables)

    def row_activity(self, row: Row, values: Mapping[str, float]) -> float:
        return sum(c * values.get(vid, 0.0) for vid, c in row.coeffs.items())

    def _compiled(self) -> "_Compiled":
        if self._cache is None:
            self._cache = _Compiled(self)
        return self._cache


class _Compiled:
    """Dense arrays for a LinearProgram, shared across repeated solves."""

    def __init__(self, lp: LinearProgram) -> None:
        n = len(lp.variables)
        m = len(lp.rows)
        self.var_ids = [v.id for v in lp.variables]
        self.lo = np.array([v.lb for v in lp.variables], dtype=float)
        self.hi = np.array([v.ub for v in lp.variables], dtype=float)
        self.c = np.array([v.obj for v in lp.variables], dtype=float)
        self.A = np.zeros((m, n), dtype=float)
        self.rhs = np.zeros(m, dtype=float)
        self.senses: List[str] = []
        self.tags: List[Optional[Hashable]] = []
        index = lp._var_index
        for k, row in enumerate(lp.rows):
            for vid, coef in row.coeffs.items():
                self.A[k, index[vid]] = coef
            self.rhs[k] = row.rhs
            self.senses.append(row.sense)
            self.tags.append(row.tag)


def solve(
    lp: LinearProgram,
    *,
    disabled_tags: Optional[Iterable[Hashable]] = None,
    bound_overrides: Optional[Mapping[str, Tuple[float, float]]] = None,
    objective_override: Optional[Mapping[str, float]] = None,
    max_pivots: Optional[int] = None,
) -> LpSolution:
    """Solve the LP, optionally hiding tagged rows or overriding bounds.

    ``objective_override`` replaces the whole objective with the given
    coefficient map (missing variables count as 0); used for lexicographic
    re-solves over the same rows.

    On OPTIMAL the returned values are primal feasible within ``FEAS_TOL``
    and the objective is within the same tolerance of the optimum on
    well-scaled inputs.  NUMERICAL_FAILURE (pivot limit or a singular basis)
    is a hard error for callers.
    """

    global _solve_count
    _solve_count += 1

    comp = lp._compiled()
    if disabled_tags:
        hidden = set(disabled_tags)
        keep = np.array([t not in hidden for t in comp.tags], dtype=bool)
        A = comp.A[keep]
        rhs = comp.rhs[keep]
        senses = [s for s, k in zip(comp.senses, keep) if k]
    else:
        A = comp.A
        rhs = comp.rhs
        senses = comp.senses
    lo = comp.lo
    hi = comp.hi
    if bound_overrides:
        lo = lo.copy()
        hi = hi.copy()
        for vid, (new_lo, new_hi) in bound_overrides.items():
            j = lp._var_index[vid]
            lo[j] = new_lo
            hi[j] = new_hi
            if new_lo > new_hi:
                return LpSolution(LpStatus.INFEASIBLE, None)
    c = comp.c
    if objective_override is not None:
        c = np.zeros_like(comp.c)
        for vid, coef in objective_override.items():
            c[lp._var_index[vid]] = coef

    status, x = _simplex(A, rhs, senses, c, lo, hi, max_pivots=max_pivots)
    if status is not LpStatus.OPTIMAL:
        return LpSolution(status, None)
    values = {vid: float(x[j]) for j, vid in enumerate(comp.var_ids)}
    return LpSolution(LpStatus.OPTIMAL, float(c @ x), values)


_BASIC, _AT_LO, _AT_HI, _FREE = 0, 1, 2, 3


def _simplex(
    A: np.ndarray,
    b: np.ndarray,
    senses: Sequence[str],
    c_struct: np.ndarray,
    lo_struct: np.ndarray,
    hi_struct: np.ndarray,
    *,
    max_pivots: Optional[int] = None,
) -> Tuple[LpStatus, np.ndarray]:
    m, n = A.shape
    if m == 0:
        # Bound-constrained separable minimum.
        x = np.where(c_struct > 0, lo_struct, np.where(c_struct < 0, hi_struct, 0.0))
        x = np.clip(x, lo_struct, hi_struct)
        x = np.where(np.isfinite(x), x, 0.0)
        if np.any((c_struct > _DUAL_TOL) & ~np.isfinite(lo_struct)) or np.any(
            (c_struct < -_DUAL_TOL) & ~np.isfinite(hi_struct)
        ):
            return LpStatus.UNBOUNDED, x
        return LpStatus.OPTIMAL, x

    # Columns: structural | one slack per row | artificials appended later.
    # Row sense fixes the slack bound: <= gives s in [0, inf), >= gives
    # s in (-inf, 0], = pins s at 0.
    slack_lo = np.zeros(m)
    slack_hi = np.zeros(m)
    for k, s in enumerate(senses):
        if s == LE:
            slack_lo[k], slack_hi[k] = 0.0, math.inf
        elif s == GE:
            slack_lo[k], slack_hi[k] = -math.inf, 0.0
        else:
            slack_lo[k], slack_hi[k] = 0.0, 0.0

    lo = np.concatenate([lo_struct, slack_lo])
    hi = np.concatenate([hi_struct, slack_hi])
    F = np.hstack([A, np.eye(m)])

    # Nonbasic rest values: a finite bound when one exists, else 0 (free).
    val = np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi, 0.0))
    stat = np.where(
        np.isfinite(lo), _AT_LO, np.where(np.isfinite(hi), _AT_HI, _FREE)
    ).astype(np.int8)

    basis = np.arange(n, n + m)
    stat[basis] = _BASIC
    val[basis] = 0.0
    xB = b - A @ val[:n]

    # Rows whose slack value lands outside its bounds get an artificial
    # column carrying the residual; phase 1 drives artificials to zero.
    art_cols: List[np.ndarray] = []
    art_lo: List[float] = []
    art_hi: List[float] = []
    for k in range(m):
        lo_k, hi_k = lo[n + k], hi[n + k]
        clipped = min(max(xB[k], lo_k), hi_k)
        resid = xB[k] - clipped
        if abs(resid) > 1e-12:
            col = np.zeros(m)
            col[k] = 1.0 if resid > 0 else -1.0
            art_cols.append(col)
            art_lo.append(0.0)
            art_hi.append(math.inf)
            # Slack leaves the basis at its clipped value.
            stat[n + k] = _AT_LO if clipped == lo_k else _AT_HI
            val[n + k] = clipped
            basis[k] = n + m + len(art_cols) - 1
            xB[k] = abs(resid)

    n_art = len(art_cols)
    if n_art:
        F = np.hstack([F, np.column_stack(art_cols)])
        lo = np.concatenate([lo, np.array(art_lo)])
        hi = np.concatenate([hi, np.array(art_hi)])
        stat = np.concatenate([stat, np.full(n_art, _BASIC, dtype=np.int8)])
        val = np.concatenate([val, np.zeros(n_art)])

    ncols = F.shape[1]
    if max_pivots is None:
        max_pivots = 20000 + 60 * (m + n)

    c_phase1 = np.zeros(ncols)
    if n_art:
        c_phase1[n + m :] = 1.0
    c_phase2 = np.zeros(ncols)
    c_phase2[:n] = c_struct

    state = _SimplexState(F, b, lo, hi, basis, stat, val, xB)
    if n_art:
        status = state.run(c_phase1, max_pivots, phase=1)
        if status is not LpStatus.OPTIMAL:
            return (
                status
                if status is LpStatus.NUMERICAL_FAILURE
                else LpStatus.NUMERICAL_FAILURE,
                val[:n],
            )
        try:
            state.settle_basics()
        except _SingularBasis:
            return LpStatus.NUMERICAL_FAILURE, val[:n]
        if state.objective(c_phase1) > 1e-7:
            return LpStatus.INFEASIBLE, val[:n]
        # Pin artificials at zero for phase 2.
        state.hi[n + m :] = 0.0
        state.val[n + m :] = np.where(
            state.stat[n + m :] == _BASIC, state.val[n + m :], 0.0
        )
    status = state.run(c_phase2, max_pivots, phase=2)
    if status is not LpStatus.OPTIMAL:
        return status, state.val[:n]
    try:
        state.settle_basics()
    except _SingularBasis:
        return LpStatus.NUMERICAL_FAILURE, state.val[:n]
    x = state.val.copy()
    x[state.basis] = state.xB
    return LpStatus.OPTIMAL, x[:n]


class _SimplexState:
    """Mutable revised-simplex state shared by the two phases."""

    def __init__(self, F, b, lo, hi, basis, stat, val, xB) -> None:
        self.F = F
        self.b = b
        self.lo = lo
        self.hi = hi
        self.basis = basis
        self.stat = stat
        self.val = val
        self.xB = xB
        # The starting basis is one slack or artificial per row, i.e. a
        # +/-1 diagonal; invert it without linear algebra.
        diag = F[np.arange(F.shape[0]), basis]
        self.Binv = np.diag(1.0 / diag)
        self.pivots = 0

    def refactor(self) -> None:
        B = self.F[:, self.basis]
        try:
            self.Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError:
            raise _SingularBasis()
        rest = self.b - self.F @ np.where(self.stat == _BASIC, 0.0, self.val)
        self.xB = self.Binv @ rest

    def settle_basics(self) -> None:
        """Recompute basic values by a direct solve (kills update drift)."""
        B = self.F[:, self.basis]
        rest = self.b - self.F @ np.where(self.stat == _BASIC, 0.0, self.val)
        try:
            self.xB = np.linalg.solve(B, rest)
        except np.linalg.LinAlgError:
            raise _SingularBasis()

    def objective(self, c: np.ndarray) -> float:
        nb = self.stat != _BASIC
        return float(c[self.basis] @ self.xB + c[nb] @ self.val[nb])

    def run(self, c: np.ndarray, max_pivots: int, phase: int) -> LpStatus:
        bland = False
        stall = 0
        best_obj = math.inf
        stall_limit = 500 + 4 * self.F.shape[0]
        since_refactor = 0
        while True:
            if self.pivots >= max_pivots:
                return LpStatus.NUMERICAL_FAILURE
            y = c[self.basis] @ self.Binv
            d = c - y @ self.F
            at_lo = (self.stat == _AT_LO) & (d < -_DUAL_TOL)
            at_hi = (self.stat == _AT_HI) & (d > _DUAL_TOL)
            free = (self.stat == _FREE) & (np.abs(d) > _DUAL_TOL)
            eligible = at_lo | at_hi | free
            if not eligible.any():
                return LpStatus.OPTIMAL
            if bland:
                e = int(np.flatnonzero(eligible)[0])
            else:
                score = np.where(eligible, np.abs(d), -1.0)
                e = int(np.argmax(score))
            direction = 1.0 if d[e] < 0 else -1.0

            w = self.Binv @ self.F[:, e]
            t_own = self.hi[e] - self.lo[e] if self.stat[e] != _FREE else math.inf

            nu = direction * w
            lo_b = self.lo[self.basis]
            hi_b = self.hi[self.basis]
            ratios = np.full(len(w), math.inf)
            dec = nu > _PIVOT_TOL
            inc = nu < -_PIVOT_TOL
            with np.errstate(invalid="ignore"):
                ratios[dec] = (self.xB[dec] - lo_b[dec]) / nu[dec]
                ratios[inc] = (self.xB[inc] - hi_b[inc]) / nu[inc]
            ratios[~np.isfinite(lo_b) & dec] = math.inf
            ratios[~np.isfinite(hi_b) & inc] = math.inf
            ratios = np.maximum(ratios, 0.0)
            min_ratio = ratios.min() if len(ratios) else math.inf

            t_star = min(t_own, min_ratio)
            if not math.isfinite(t_star):
                return (
                    LpStatus.UNBOUNDED if phase == 2 else LpStatus.NUMERICAL_FAILURE
                )

            if t_own <= min_ratio:
                # Entering variable flips to its other bound; basis unchanged.
                self.xB -= nu * t_own
                self.val[e] = self.hi[e] if self.stat[e] == _AT_LO else self.lo[e]
                self.stat[e] = _AT_HI if self.stat[e] == _AT_LO else _AT_LO
                self.pivots += 1
            else:
                tie = ratios <= t_star + _RATIO_TOL
                if bland:
                    cand = np.flatnonzero(tie)
                    r = int(cand[np.argmin(self.basis[cand])])
                else:
                    weight = np.where(tie, np.abs(w), -1.0)
                    r = int(np.argmax(weight))
                if abs(w[r]) < 10 * _PIVOT_TOL:
                    try:
                        self.refactor()
                    except _SingularBasis:
                        return LpStatus.NUMERICAL_FAILURE
                    self.pivots += 1
                    continue
                leaving = self.basis[r]
                self.xB -= nu * t_star
                enter_val = self.val[e] + direction * t_star
                hit_lo = nu[r] > 0
                self.val[leaving] = self.lo[leaving] if hit_lo else self.hi[leaving]
                self.stat[leaving] = _AT_LO if hit_lo else _AT_HI
                self.basis[r] = e
                self.stat[e] = _BASIC
                self.xB[r] = enter_val
                # Product-form basis-inverse update with pivot element w[r].
                pivot_row = self.Binv[r] / w[r]
                self.Binv -= np.outer(w, pivot_row)
                self.Binv[r] = pivot_row
                self.pivots += 1
                since_refactor += 1
                if since_refactor >= _REFACTOR_EVERY:
                    try:
                        self.refactor()
                    except _SingularBasis:
                        return LpStatus.NUMERICAL_FAILURE
                    since_refactor = 0

            # Stall detection only needs coarse sampling of the objective.
            if self.pivots % 16 == 0:
                obj = self.objective(c)
                if obj < best_obj - 1e-12:
                    best_obj = obj
                    stall = 0
                else:
                    stall += 16
                    if stall > stall_limit:
                        bland = True


class _SingularBasis(Exception):
    pass


# ---------------------------------------------------------------------------
# Irreducible infeasible subsystems by deletion filtering
# ---------------------------------------------------------------------------


def deletion_filter_iis(
    lp: LinearProgram,
    candidate_tags: Sequence[Hashable],
    *,
    removed: Iterable[Hashable] = (),
) -> List[Hashable]:
    """Shrink ``candidate_tags`` to an irreducible infeasible subsystem.

    Preconditions (checked): with all candidates present the system is
    infeasible; with all of them removed it is feasible.  The returned tags
    ``M`` satisfy: untagged rows plus ``M`` are infeasible, and dropping any
    single member of ``M`` restores feasibility.  Candidates are tested in
    the order given, so the same ordering always yields the same subsystem.

    ``removed`` names tags already stripped from the system (used when
    hunting several distinct subsystems in one LP).
    """

    removed_set = set(removed)
    candidates = [t for t in candidate_tags if t not in removed_set]

    full = solve(lp, disabled_tags=removed_set)
    if full.status is LpStatus.NUMERICAL_FAILURE:
        raise RuntimeError("LP solve failed while checking infeasibility")
    if full.status is not LpStatus.INFEASIBLE:
        raise ValueError("system is not infeasible")
    base = solve(lp, disabled_tags=removed_set | set(candidates))
    if base.status is LpStatus.INFEASIBLE:
        raise ValueError("infeasibility not caused by candidate constraints")

    dropped: Set[Hashable] = set()
    for tag in candidates:
        trial = removed_set | dropped | {tag}
        sol = solve(lp, disabled_tags=trial)
        if sol.status is LpStatus.INFEASIBLE:
            dropped.add(tag)
    return [t for t in candidates if t not in dropped]


# ---------------------------------------------------------------------------
# Human-readable dump (industry LP text format)
# ---------------------------------------------------------------------------


def _sanitize(name: str, used: Dict[str, str]) -> str:
    clean = re.sub(r"[^A-Za-z0-9_.]", "_", name)
    if not clean or clean[0].isdigit():
        clean = "n_" + clean
    base = clean
    k = 2
    while clean in used and used[clean] != name:
        clean = f"{base}_{k}"
        k += 1
    used[clean] = name
    return clean


def _terms(coeffs: Mapping[str, float], names: Mapping[str, str]) -> str:
    parts = []
    for vid in sorted(coeffs):
        coef = coeffs[vid]
        if coef == 0:
            continue
        sign = "-" if coef < 0 else "+"
        parts.append(f"{sign} {abs(coef):.12g} {names[vid]}")
    if not parts:
        return "0"
    text = " ".join(parts)
    return text[2:] if text.startswith("+ ") else text


def write_lp_text(lp: LinearProgram, f) -> None:
    """Dump the LP in the conventional text format for external cross-checks."""

    used: Dict[str, str] = {}
    var_names = {v.id: _sanitize(v.id, used) for v in lp.variables}
    f.write("\\ generated by oppcharge\nMinimize\n")
    obj = {v.id: v.obj for v in lp.variables if v.obj != 0}
    f.write(f" obj: {_terms(obj, var_names)}\n")
    f.write("Subject To\n")
    row_used: Dict[str, str] = {}
    for row in lp.rows:
        rid = _sanitize(row.id, row_used)
        op = {LE: "<=", GE: ">=", EQ: "="}[row.sense]
        f.write(f" {rid}: {_terms(row.coeffs, var_names)} {op} {row.rhs:.12g}\n")
    f.write("Bounds\n")
    for v in lp.variables:
        name = var_names[v.id]
        if v.lb == 0.0 and math.isinf(v.ub):
            continue
        if math.isinf(v.lb) and math.isinf(v.ub):
            f.write(f" {name} free\n")
        elif math.isinf(v.ub):
            f.write(f" {name} >= {v.lb:.12g}\n")
        elif math.isinf(v.lb):
            f.write(f" {name} <= {v.ub:.12g}\n")
        else:
            f.write(f" {v.lb:.12g} <= {name} <= {v.ub:.12g}\n")
    f.write("End\n")
