import io
import itertools

import pytest

from oppcharge import mip
from oppcharge.lp import GE, LE, LinearProgram, Row
from oppcharge.mip import BnbStatus, MixedIntegerProgram, branch_select, solve_bnb


def knapsack():
    prog = LinearProgram()
    prog.add_variable("a", 0.0, 1.0, obj=-3.0)
    prog.add_variable("b", 0.0, 1.0, obj=-2.0)
    prog.add_constraint("cap", {"a": 1.0, "b": 1.0}, LE, 1.0)
    return MixedIntegerProgram(prog, ["a", "b"])


def test_knapsack_optimum():
    res = solve_bnb(knapsack())
    assert res.status is BnbStatus.OPTIMAL
    assert res.objective == pytest.approx(-3.0, abs=1e-9)
    assert res.values["a"] == 1.0 and res.values["b"] == 0.0


def test_gap_contract():
    res = solve_bnb(knapsack(), gap_tol=1e-6)
    assert abs(res.objective - res.bound) <= 1e-6 * max(1.0, abs(res.objective))


def test_branch_select_most_fractional():
    assert branch_select({"u": 0.5, "v": 0.4}, ["u", "v"]) == "u"


def test_branch_select_tie_lowest_id():
    assert branch_select({"v": 0.5, "u": 0.5}, ["v", "u"]) == "u"


def test_branch_select_rejects_integral():
    with pytest.raises(ValueError):
        branch_select({"u": 1.0, "v": 0.0}, ["u", "v"])


def test_infeasible_mip():
    prog = LinearProgram()
    prog.add_variable("a", 0.0, 1.0, obj=1.0)
    prog.add_constraint("need", {"a": 1.0}, GE, 2.0)
    res = solve_bnb(MixedIntegerProgram(prog, ["a"]))
    assert res.status is BnbStatus.INFEASIBLE


def _random_binary_mip(rng, n=8, m=5):
    prog = LinearProgram()
    c = rng.integers(-6, 7, size=n)
    for j in range(n):
        prog.add_variable(f"z{j}", 0.0, 1.0, obj=float(c[j]))
    A = rng.integers(-3, 4, size=(m, n))
    b = rng.integers(1, 7, size=m)
    for k in range(m):
        coeffs = {f"z{j}": float(A[k, j]) for j in range(n) if A[k, j] != 0}
        if coeffs:
            prog.add_constraint(f"r{k}", coeffs, LE, float(b[k]))
    return prog, c, A, b


@pytest.mark.parametrize("seed", range(12))
def test_random_mips_match_exhaustive_enumeration(seed):
    import numpy as np

    rng = np.random.default_rng(3000 + seed)
    prog, c, A, b = _random_binary_mip(rng)
    n = len(c)
    best = None
    for bits in itertools.product((0, 1), repeat=n):
        x = np.array(bits)
        if ((A @ x) <= b).all():
            obj = float(c @ x)
            if best is None or obj < best:
                best = obj
    res = solve_bnb(MixedIntegerProgram(prog, [f"z{j}" for j in range(n)]))
    if best is None:
        assert res.status is BnbStatus.INFEASIBLE
    else:
        assert res.status is BnbStatus.OPTIMAL
        assert res.objective == pytest.approx(best, abs=1e-6)


def test_lazy_hook_cuts_off_solutions():
    # Minimize -u-v-w; the hook refuses any solution with u+v+w >= 2 until a
    # row forbidding the specific pair is present, mimicking cycle cuts.
    prog = LinearProgram()
    for vid in ("u", "v", "w"):
        prog.add_variable(vid, 0.0, 1.0, obj=-1.0)
    seen = []

    def hook(values):
        ones = [vid for vid in ("u", "v", "w") if values[vid] > 0.5]
        if len(ones) >= 2:
            pair = ones[:2]
            seen.append(tuple(pair))
            rid = f"cut_{len(seen)}"
            return [Row(rid, {pair[0]: 1.0, pair[1]: 1.0}, LE, 1.0)]
        return None

    prog_mip = MixedIntegerProgram(prog, ["u", "v", "w"])
    prog_mip.on_integer_solution = hook
    res = solve_bnb(prog_mip)
    assert res.status is BnbStatus.OPTIMAL
    assert res.objective == pytest.approx(-1.0, abs=1e-9)
    ones = [vid for vid in ("u", "v", "w") if res.values[vid] > 0.5]
    assert len(ones) == 1
    assert res.lazy_rows_added >= 2
    # Every lazily added row must hold at the accepted solution.
    for row in prog.rows:
        act = prog.row_activity(row, res.values)
        assert act <= row.rhs + 1e-6


def test_warm_start_primes_incumbent():
    prog = LinearProgram()
    prog.add_variable("a", 0.0, 1.0, obj=-1.0)
    prog.add_variable("b", 0.0, 1.0, obj=-1.0)
    prog.add_constraint("cap", {"a": 1.0, "b": 1.0}, LE, 1.0)
    out = io.StringIO()
    res = solve_bnb(
        MixedIntegerProgram(prog, ["a", "b"]),
        warm_start={"a": 1.0, "b": 0.0},
        trace=out,
    )
    assert "warm_start objective=-1.0" in out.getvalue()
    assert res.objective == pytest.approx(-1.0)


def test_infeasible_warm_start_ignored():
    prog = LinearProgram()
    prog.add_variable("a", 0.0, 1.0, obj=1.0)
    prog.add_constraint("cap", {"a": 1.0}, LE, 0.0)
    res = solve_bnb(MixedIntegerProgram(prog, ["a"]), warm_start={"a": 1.0})
    assert res.status is BnbStatus.OPTIMAL
    assert res.values["a"] == 0.0


def test_time_limit_returns_best_found():
    prog = LinearProgram()
    prog.add_variable("a", 0.0, 1.0, obj=1.0)
    res = solve_bnb(MixedIntegerProgram(prog, ["a"]), time_limit_s=0.0)
    assert res.status is BnbStatus.TIME_LIMIT
    assert res.values is None and res.objective is None


def test_bound_never_decreases():
    import numpy as np

    rng = np.random.default_rng(7)
    prog, *_ = _random_binary_mip(rng, n=10, m=6)
    out = io.StringIO()
    res = solve_bnb(MixedIntegerProgram(prog, [f"z{j}" for j in range(10)]), trace=out)
    bounds = []
    for line in out.getvalue().splitlines():
        for part in line.split():
            if part.startswith("bound="):
                bounds.append(float(part.split("=", 1)[1]))
    finite = [b for b in bounds if b != float("-inf")]
    assert all(x <= y + 1e-9 for x, y in zip(finite, finite[1:]))
    assert res.status is BnbStatus.OPTIMAL
