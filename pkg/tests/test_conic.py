"""Conic container, Clarabel-backed relaxation, and branch and bound.

cvxpy (with its own canonicalization) is the cross-check oracle for
relaxation objectives; exhaustive enumeration over assignment fixings is the
oracle for branch and bound.
"""

import numpy as np
import pytest
import scipy.sparse as sp

from _mip_instances import enumerate_assignments, random_assignment_program
from covsteer.conic import (
    STATUS_INFEASIBLE,
    STATUS_OPTIMAL,
    STATUS_UNBOUNDED,
    ConeProgram,
    PsdBlock,
    SocBlock,
    SolveResult,
    branch_and_bound,
    dump_program,
    effective_bounds,
    kkt_residuals,
    psd_triangle_indices,
    solve_relaxation,
    verify_solution,
)

cp = pytest.importorskip("cvxpy")


# ----------------------------------------------------------- small exacts

def test_scalar_lower_bound_cone():
    # min x subject to x >= 1 written as a one-dimensional cone
    prog = ConeProgram(n_vars=1, objective=[1.0],
                       soc_blocks=(SocBlock(sp.csc_matrix([[1.0]]),
                                            np.array([-1.0])),))
    res = solve_relaxation(prog)
    assert res.status == STATUS_OPTIMAL
    assert res.x[0] == pytest.approx(1.0, abs=1e-8)


def test_norm_projection():
    # min t, ||(x, y)|| <= t, x = 3  ->  t = 3, y = 0
    a = np.zeros((3, 3))
    a[0, 0] = 1.0   # t
    a[1, 1] = 1.0   # x
    a[2, 2] = 1.0   # y
    prog = ConeProgram(n_vars=3, objective=[1.0, 0.0, 0.0],
                       eq_mat=np.array([[0.0, 1.0, 0.0]]), eq_rhs=[3.0],
                       soc_blocks=(SocBlock(sp.csc_matrix(a), np.zeros(3)),))
    res = solve_relaxation(prog)
    assert res.status == STATUS_OPTIMAL
    assert res.objective == pytest.approx(3.0, abs=1e-7)
    assert res.x[2] == pytest.approx(0.0, abs=1e-7)


def test_psd_schur_scalar():
    # min x with [[x, 0.3], [0.3, 1]] psd  ->  x = 0.09
    a = np.zeros((3, 1))
    a[0, 0] = 1.0
    b = np.array([0.0, 0.3, 1.0])
    prog = ConeProgram(n_vars=1, objective=[1.0],
                       psd_blocks=(PsdBlock(sp.csc_matrix(a), b, side=2),))
    res = solve_relaxation(prog)
    assert res.status == STATUS_OPTIMAL
    assert res.x[0] == pytest.approx(0.09, abs=1e-6)


def test_infeasible_and_unbounded_status():
    infeas = ConeProgram(n_vars=1, objective=[1.0],
                         eq_mat=np.array([[1.0]]), eq_rhs=[2.0],
                         lb=np.array([3.0]), ub=np.array([4.0]))
    assert solve_relaxation(infeas).status == STATUS_INFEASIBLE
    unb = ConeProgram(n_vars=1, objective=[1.0])
    assert solve_relaxation(unb).status == STATUS_UNBOUNDED


# ------------------------------------------------- random SOCPs vs cvxpy

def _random_socp(rng, n=20, n_cones=5):
    objective = rng.normal(size=n)
    blocks = []
    for _ in range(n_cones):
        d = rng.integers(2, 5)
        a_lin = rng.normal(size=n)
        b_lin = float(rng.uniform(1.0, 3.0))
        a_vec = rng.normal(size=(d, n)) * 0.5
        b_vec = rng.normal(size=d) * 0.2
        rows = np.vstack([a_lin, a_vec])
        b = np.concatenate([[b_lin], b_vec])
        blocks.append(SocBlock(sp.csc_matrix(rows), b))
    lb = np.full(n, -10.0)
    ub = np.full(n, 10.0)
    return ConeProgram(n_vars=n, objective=objective,
                       soc_blocks=tuple(blocks), lb=lb, ub=ub)


def _cvxpy_value(prog):
    x = cp.Variable(prog.n_vars)
    cons = [x >= prog.lb, x <= prog.ub]
    if prog.eq_mat.shape[0]:
        cons.append(prog.eq_mat @ x == prog.eq_rhs)
    if prog.ineq_mat.shape[0]:
        cons.append(prog.ineq_mat @ x <= prog.ineq_rhs)
    for blk in prog.soc_blocks:
        expr = blk.a_mat @ x + blk.b_vec
        cons.append(cp.SOC(expr[0], expr[1:]))
    for blk in prog.psd_blocks:
        side = blk.side
        entries = blk.a_mat @ x + blk.b_vec
        mat = [[None] * side for _ in range(side)]
        for r, (i, j) in enumerate(psd_triangle_indices(side)):
            mat[i][j] = entries[r]
            mat[j][i] = entries[r]
        cons.append(cp.bmat(mat) >> 0)
    problem = cp.Problem(cp.Minimize(prog.objective @ x), cons)
    problem.solve(solver=cp.CLARABEL)
    return problem.value


def test_random_socp_matches_cvxpy():
    rng = np.random.default_rng(2024)
    for _ in range(5):
        prog = _random_socp(rng)
        res = solve_relaxation(prog)
        assert res.status == STATUS_OPTIMAL
        oracle = _cvxpy_value(prog)
        assert res.objective == pytest.approx(oracle, rel=1e-6, abs=1e-6)


def test_inequality_rows_lp():
    # min x + y  s.t.  x + y >= 1, x - y <= 0.2, both in [0, 10]
    prog = ConeProgram(n_vars=2, objective=[1.0, 1.0],
                       ineq_mat=np.array([[-1.0, -1.0], [1.0, -1.0]]),
                       ineq_rhs=[-1.0, 0.2],
                       lb=np.zeros(2), ub=np.full(2, 10.0))
    res = solve_relaxation(prog)
    assert res.status == STATUS_OPTIMAL
    assert res.objective == pytest.approx(1.0, abs=1e-7)
    assert kkt_residuals(prog, res)["max"] <= 1e-6
    ok, report = verify_solution(prog, res.x, tol=1e-6)
    assert ok, report
    bad_ok, bad_report = verify_solution(prog, np.array([5.0, 0.0]), tol=1e-6)
    assert not bad_ok
    assert bad_report["inequality"] == pytest.approx(4.8)


def test_inequality_rows_with_cones_vs_cvxpy():
    rng = np.random.default_rng(404)
    base = _random_socp(rng, n=12, n_cones=3)
    g_mat = rng.normal(size=(6, 12))
    g_rhs = rng.uniform(0.5, 2.0, size=6)
    prog = ConeProgram(n_vars=12, objective=base.objective,
                       ineq_mat=g_mat, ineq_rhs=g_rhs,
                       soc_blocks=base.soc_blocks, lb=base.lb, ub=base.ub)
    res = solve_relaxation(prog)
    assert res.status == STATUS_OPTIMAL
    assert res.objective == pytest.approx(_cvxpy_value(prog), rel=1e-6, abs=1e-6)
    assert float((prog.ineq_mat @ res.x - prog.ineq_rhs).max()) <= 1e-7


def test_random_socp_kkt_residuals():
    rng = np.random.default_rng(7)
    prog = _random_socp(rng)
    res = solve_relaxation(prog)
    resid = kkt_residuals(prog, res)
    assert resid["max"] <= 1e-6
    ok, report = verify_solution(prog, res.x, tol=1e-6)
    assert ok, report


def test_random_sdp_matches_cvxpy():
    rng = np.random.default_rng(31)
    k, side = 3, 4
    c_mats = []
    for _ in range(k):
        m = rng.normal(size=(side, side))
        c_mats.append(0.5 * (m + m.T))
    c0 = np.eye(side) * 2.0
    tri = psd_triangle_indices(side)
    a = np.zeros((len(tri), k))
    for r, (i, j) in enumerate(tri):
        for v in range(k):
            a[r, v] = c_mats[v][i, j]
    b = np.array([c0[i, j] for i, j in tri])
    prog = ConeProgram(n_vars=k, objective=rng.normal(size=k),
                       psd_blocks=(PsdBlock(sp.csc_matrix(a), b, side=side),),
                       lb=np.full(k, -5.0), ub=np.full(k, 5.0))
    res = solve_relaxation(prog)
    assert res.status == STATUS_OPTIMAL
    assert res.objective == pytest.approx(_cvxpy_value(prog), rel=1e-6, abs=1e-6)
    assert kkt_residuals(prog, res)["max"] <= 1e-6


# --------------------------------------------------------- branch & bound

def test_bb_integral_root_is_single_node():
    # favoring one region linearly makes the relaxation integral already
    prog = ConeProgram(n_vars=2, objective=[0.0, 1.0],
                       eq_mat=np.array([[1.0, 1.0]]), eq_rhs=[1.0],
                       binary_indices=(0, 1), assignment_columns=((0, 1),))
    res = branch_and_bound(prog)
    assert res.status == STATUS_OPTIMAL
    assert res.stats["nodes"] == 1
    assert res.x[0] == 1.0 and res.x[1] == 0.0


def test_bb_matches_enumeration_2x2():
    rng = np.random.default_rng(5)
    prog = random_assignment_program(rng, n_cols=2, n_regions=2)
    res = branch_and_bound(prog, gap_tol=1e-6)
    oracle_obj, _ = enumerate_assignments(prog)
    assert res.status == STATUS_OPTIMAL
    assert res.objective == pytest.approx(oracle_obj, rel=1e-6, abs=1e-6)
    ok, report = verify_solution(prog, res.x, tol=1e-6, integral=True)
    assert ok, report


def test_bb_matches_enumeration_random_instances():
    rng = np.random.default_rng(99)
    for _ in range(4):
        n_cols = int(rng.integers(1, 4))
        n_regions = int(rng.integers(2, 4))
        prog = random_assignment_program(rng, n_cols=n_cols, n_regions=n_regions)
        res = branch_and_bound(prog, gap_tol=1e-6)
        oracle_obj, _ = enumerate_assignments(prog)
        assert res.status == STATUS_OPTIMAL
        assert res.objective == pytest.approx(oracle_obj, rel=1e-6, abs=1e-6)
        assert res.stats["gap"] <= 1e-6


def test_bb_node_bounds_never_exceed_optimum():
    rng = np.random.default_rng(17)
    prog = random_assignment_program(rng, n_cols=3, n_regions=2)
    res = branch_and_bound(prog)
    assert res.status == STATUS_OPTIMAL
    for bound in res.stats["node_bounds"]:
        assert bound <= res.objective + 1e-9


def test_bb_all_assignments_infeasible():
    # relaxation feasible at o = (1/2, 1/2) but both fixings contradict x <= 0.6
    n = 3  # x, o0, o1
    rows = []
    for idx in (1, 2):
        gate = np.zeros((1, n))
        gate[0, 0] = 1.0          # x - o >= 0  <->  x >= o
        gate[0, idx] = -1.0
        rows.append(SocBlock(sp.csc_matrix(gate), np.zeros(1)))
    prog = ConeProgram(n_vars=n, objective=[1.0, 0.0, 0.0],
                       eq_mat=np.array([[0.0, 1.0, 1.0]]), eq_rhs=[1.0],
                       soc_blocks=tuple(rows), binary_indices=(1, 2),
                       assignment_columns=((1, 2),),
                       lb=np.array([0.0, 0.0, 0.0]),
                       ub=np.array([0.6, 1.0, 1.0]))
    relax = solve_relaxation(prog)
    assert relax.status == STATUS_OPTIMAL
    res = branch_and_bound(prog)
    assert res.status == STATUS_INFEASIBLE


def test_bb_deterministic():
    rng1 = np.random.default_rng(123)
    rng2 = np.random.default_rng(123)
    p1 = random_assignment_program(rng1, n_cols=2, n_regions=3)
    p2 = random_assignment_program(rng2, n_cols=2, n_regions=3)
    r1 = branch_and_bound(p1)
    r2 = branch_and_bound(p2)
    assert np.array_equal(r1.x, r2.x)
    assert r1.stats["node_bounds"] == r2.stats["node_bounds"]
    assert r1.objective == r2.objective


def test_bb_single_variable_binaries():
    # knapsack-flavored: no assignment columns at all
    prog = ConeProgram(n_vars=2, objective=[-1.0, -1.0],
                       eq_mat=None, eq_rhs=None,
                       soc_blocks=(SocBlock(
                           sp.csc_matrix(np.array([[-1.0, -1.6]])),
                           np.array([1.8])),),  # x0 + 1.6 x1 <= 1.8
                       binary_indices=(0, 1))
    res = branch_and_bound(prog)
    assert res.status == STATUS_OPTIMAL
    # (1,0) and (0,1) both achieve -1; the lexicographic tie-break takes (0,1)
    assert res.objective == pytest.approx(-1.0, abs=1e-7)
    assert tuple(res.x.round()) == (0.0, 1.0)


# ----------------------------------------------------------- plumbing bits

def test_program_validation_errors():
    with pytest.raises(ValueError):
        ConeProgram(n_vars=2, objective=[1.0])
    with pytest.raises(ValueError):
        ConeProgram(n_vars=2, objective=[1.0, 0.0], binary_indices=(5,))
    with pytest.raises(ValueError):
        ConeProgram(n_vars=2, objective=[1.0, 0.0],
                    psd_blocks=(PsdBlock(sp.csc_matrix((2, 2)),
                                         np.zeros(2), side=2),))
    with pytest.raises(ValueError):
        ConeProgram(n_vars=1, objective=[1.0], lb=np.array([2.0]),
                    ub=np.array([1.0]))
    with pytest.raises(ValueError):
        SolveResult(status=STATUS_OPTIMAL, objective=None)


def test_effective_bounds_clip_binaries():
    prog = ConeProgram(n_vars=2, objective=[1.0, 1.0], binary_indices=(1,),
                       lb=np.array([-3.0, -3.0]), ub=np.array([3.0, 3.0]))
    lb, ub = effective_bounds(prog)
    assert (lb[0], ub[0]) == (-3.0, 3.0)
    assert (lb[1], ub[1]) == (0.0, 1.0)


def test_verify_solution_flags_violations():
    prog = ConeProgram(n_vars=1, objective=[1.0],
                       eq_mat=np.array([[1.0]]), eq_rhs=[2.0])
    ok, report = verify_solution(prog, np.array([2.5]), tol=1e-6)
    assert not ok
    assert report["equality"] == pytest.approx(0.5)


def test_dump_program_versioned_and_stable():
    rng = np.random.default_rng(1)
    prog = random_assignment_program(rng)
    text = dump_program(prog)
    assert text.startswith("coneprogram/2\n")
    assert "binaries" in text and "column" in text
    assert text == dump_program(prog)
