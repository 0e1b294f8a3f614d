"""Mixed-binary conic programs and a deterministic branch-and-bound driver.

The container holds a linear objective, affine equalities and inequalities,
second-order-cone and semidefinite blocks, simple variable bounds, and a set
of binary variables optionally grouped into exactly-one assignment columns.
The continuous relaxation is canonicalized to the standard form

    min q'x  s.t.  A x + s = b,  s in K,

with K ordered zero, nonnegative, second-order, PSD-triangle, and handed to
Clarabel.  Semidefinite blocks are specified by their upper-triangle entries
in column-major order (see ``psd_triangle_indices``) as raw matrix values;
the canonicalizer applies the sqrt(2) off-diagonal scaling of the solver's
svec convention.

Branch and bound is first-party and deterministic: best-first on the node
bound with insertion-order tie-breaking, branching on the most fractional
assignment column (sum of min(o, 1-o) over the column, ties to the lowest
column index), splitting on the column's largest entry as fix-vs-forbid.
Feasibility of the returned point is re-verifiable outside the solver via
``verify_solution``; ``kkt_residuals`` additionally checks stationarity and
complementarity using the solver's dual.
"""

from __future__ import annotations

import heapq
import io
import itertools
from dataclasses import dataclass, field

import clarabel
import numpy as np
import scipy.sparse as sp

from .errors import NumericalError

STATUS_OPTIMAL = "optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_UNBOUNDED = "unbounded"
STATUS_NUMERICAL = "numerical_failure"

_SQRT2 = np.sqrt(2.0)


def _to_csc(mat, n_cols: int, name: str) -> sp.csc_matrix:
    if mat is None:
        return sp.csc_matrix((0, n_cols))
    out = sp.csc_matrix(mat)
    if out.shape[1] != n_cols:
        raise ValueError(f"{name} must have {n_cols} columns, got {out.shape[1]}")
    return out


def psd_triangle_indices(side: int) -> list[tuple[int, int]]:
    """(row, col) pairs of the upper triangle in column-major order.

    This is the svec layout Clarabel's PSD triangle cone expects:
    (0,0), (0,1), (1,1), (0,2), (1,2), (2,2), ...
    """
    return [(i, j) for j in range(side) for i in range(j + 1)]


@dataclass(frozen=True)
class SocBlock:
    """a_mat @ x + b_vec must lie in the second-order cone (t, z), ||z|| <= t."""

    a_mat: sp.csc_matrix
    b_vec: np.ndarray


@dataclass(frozen=True)
class PsdBlock:
    """Lower-triangle entries (column-major) of a side x side matrix, raw values."""

    a_mat: sp.csc_matrix
    b_vec: np.ndarray
    side: int


@dataclass(frozen=True)
class ConeProgram:
    n_vars: int
    objective: np.ndarray
    eq_mat: sp.csc_matrix = None
    eq_rhs: np.ndarray = None
    ineq_mat: sp.csc_matrix = None
    ineq_rhs: np.ndarray = None
    soc_blocks: tuple = ()
    psd_blocks: tuple = ()
    binary_indices: tuple = ()
    assignment_columns: tuple = ()
    lb: np.ndarray = None
    ub: np.ndarray = None

    def __post_init__(self):
        n = self.n_vars
        if n < 1:
            raise ValueError("n_vars must be >= 1")
        obj = np.asarray(self.objective, dtype=float).ravel()
        if obj.shape != (n,):
            raise ValueError(f"objective must have length {n}")
        object.__setattr__(self, "objective", obj)
        eq = _to_csc(self.eq_mat, n, "eq_mat")
        rhs = (np.zeros(0) if self.eq_rhs is None
               else np.asarray(self.eq_rhs, dtype=float).ravel())
        if rhs.shape[0] != eq.shape[0]:
            raise ValueError("eq_rhs length must match eq_mat rows")
        object.__setattr__(self, "eq_mat", eq)
        object.__setattr__(self, "eq_rhs", rhs)

        ineq = _to_csc(self.ineq_mat, n, "ineq_mat")
        irhs = (np.zeros(0) if self.ineq_rhs is None
                else np.asarray(self.ineq_rhs, dtype=float).ravel())
        if irhs.shape[0] != ineq.shape[0]:
            raise ValueError("ineq_rhs length must match ineq_mat rows")
        object.__setattr__(self, "ineq_mat", ineq)
        object.__setattr__(self, "ineq_rhs", irhs)

        socs = []
        for k, blk in enumerate(self.soc_blocks):
            a, b = (blk.a_mat, blk.b_vec) if isinstance(blk, SocBlock) else blk
            a = _to_csc(a, n, f"soc[{k}].a_mat")
            b = np.asarray(b, dtype=float).ravel()
            if a.shape[0] != b.shape[0] or a.shape[0] < 1:
                raise ValueError(f"soc[{k}] dimension mismatch")
            socs.append(SocBlock(a_mat=a, b_vec=b))
        object.__setattr__(self, "soc_blocks", tuple(socs))

        psds = []
        for k, blk in enumerate(self.psd_blocks):
            a, b, side = ((blk.a_mat, blk.b_vec, blk.side)
                          if isinstance(blk, PsdBlock) else blk)
            tri = side * (side + 1) // 2
            a = _to_csc(a, n, f"psd[{k}].a_mat")
            b = np.asarray(b, dtype=float).ravel()
            if a.shape[0] != tri or b.shape[0] != tri:
                raise ValueError(f"psd[{k}] must supply {tri} triangle rows")
            psds.append(PsdBlock(a_mat=a, b_vec=b, side=side))
        object.__setattr__(self, "psd_blocks", tuple(psds))

        bins = tuple(int(i) for i in self.binary_indices)
        if any(i < 0 or i >= n for i in bins):
            raise ValueError("binary index out of range")
        if len(set(bins)) != len(bins):
            raise ValueError("duplicate binary index")
        object.__setattr__(self, "binary_indices", bins)
        cols = tuple(tuple(int(i) for i in col) for col in self.assignment_columns)
        bin_set = set(bins)
        for col in cols:
            if not set(col) <= bin_set:
                raise ValueError("assignment columns must contain binary indices")
        object.__setattr__(self, "assignment_columns", cols)

        lb = (np.full(n, -np.inf) if self.lb is None
              else np.asarray(self.lb, dtype=float).ravel())
        ub = (np.full(n, np.inf) if self.ub is None
              else np.asarray(self.ub, dtype=float).ravel())
        if lb.shape != (n,) or ub.shape != (n,):
            raise ValueError("lb/ub must have length n_vars")
        if np.any(lb > ub):
            raise ValueError("lb must not exceed ub")
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)


@dataclass(frozen=True)
class SolveResult:
    status: str
    x: np.ndarray = None
    objective: float = None
    stats: dict = field(default_factory=dict)
    dual: np.ndarray = None
    slack: np.ndarray = None

    def __post_init__(self):
        finite = self.objective is not None and np.isfinite(self.objective)
        if (self.status == STATUS_OPTIMAL) != finite:
            raise ValueError("objective must be finite exactly when optimal")


def effective_bounds(prog: ConeProgram) -> tuple[np.ndarray, np.ndarray]:
    """Variable bounds with every binary intersected with [0, 1]."""
    lb, ub = prog.lb.copy(), prog.ub.copy()
    idx = list(prog.binary_indices)
    if idx:
        lb[idx] = np.maximum(lb[idx], 0.0)
        ub[idx] = np.minimum(ub[idx], 1.0)
    return lb, ub


def _canonical_parts(prog: ConeProgram, lb: np.ndarray, ub: np.ndarray):
    """Stack constraints in cone order; returns (A, b, segments)."""
    n = prog.n_vars
    parts_a, parts_b, segments = [], [], []
    if prog.eq_mat.shape[0]:
        parts_a.append(prog.eq_mat)
        parts_b.append(prog.eq_rhs)
        segments.append(("zero", prog.eq_mat.shape[0]))

    if prog.ineq_mat.shape[0]:
        parts_a.append(prog.ineq_mat)
        parts_b.append(prog.ineq_rhs)
        segments.append(("nonneg", prog.ineq_mat.shape[0]))

    lb_idx = np.flatnonzero(np.isfinite(lb))
    ub_idx = np.flatnonzero(np.isfinite(ub))
    n_bound = lb_idx.size + ub_idx.size
    if n_bound:
        data = np.concatenate([-np.ones(lb_idx.size), np.ones(ub_idx.size)])
        rows = np.arange(n_bound)
        cols = np.concatenate([lb_idx, ub_idx])
        parts_a.append(sp.csc_matrix((data, (rows, cols)), shape=(n_bound, n)))
        parts_b.append(np.concatenate([-lb[lb_idx], ub[ub_idx]]))
        segments.append(("nonneg", n_bound))

    for blk in prog.soc_blocks:
        parts_a.append(-blk.a_mat)
        parts_b.append(blk.b_vec)
        segments.append(("soc", blk.a_mat.shape[0]))

    for blk in prog.psd_blocks:
        scale = np.array([1.0 if i == j else _SQRT2
                          for i, j in psd_triangle_indices(blk.side)])
        parts_a.append(-sp.diags(scale) @ blk.a_mat)
        parts_b.append(scale * blk.b_vec)
        segments.append(("psd", blk.side))

    if not parts_a:
        return sp.csc_matrix((0, n)), np.zeros(0), []
    a_mat = sp.vstack(parts_a, format="csc")
    b_vec = np.concatenate(parts_b)
    return a_mat, b_vec, segments


def _clarabel_cones(segments):
    cones = []
    for kind, size in segments:
        if kind == "zero":
            cones.append(clarabel.ZeroConeT(size))
        elif kind == "nonneg":
            cones.append(clarabel.NonnegativeConeT(size))
        elif kind == "soc":
            cones.append(clarabel.SecondOrderConeT(size))
        else:
            cones.append(clarabel.PSDTriangleConeT(size))
    return cones


def solve_relaxation(prog: ConeProgram, lb: np.ndarray = None,
                     ub: np.ndarray = None) -> SolveResult:
    """Solve the continuous relaxation (binaries relaxed into [0, 1]).

    Optional lb/ub replace the effective bounds; branch and bound uses this
    to impose node fixings.
    """
    if lb is None or ub is None:
        base_lb, base_ub = effective_bounds(prog)
        lb = base_lb if lb is None else lb
        ub = base_ub if ub is None else ub
    a_mat, b_vec, segments = _canonical_parts(prog, lb, ub)
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_feas = 1e-9
    settings.tol_gap_abs = 1e-9
    settings.tol_gap_rel = 1e-9
    solver = clarabel.DefaultSolver(
        sp.csc_matrix((prog.n_vars, prog.n_vars)), prog.objective,
        a_mat, b_vec, _clarabel_cones(segments), settings)
    sol = solver.solve()
    name = str(sol.status).split(".")[-1]
    stats = {"iterations": int(sol.iterations), "solver_status": name}
    if name in ("Solved", "AlmostSolved"):
        if name == "AlmostSolved":
            stats["reduced_accuracy"] = True
        return SolveResult(status=STATUS_OPTIMAL, x=np.asarray(sol.x),
                           objective=float(sol.obj_val), stats=stats,
                           dual=np.asarray(sol.z), slack=np.asarray(sol.s))
    if name in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        return SolveResult(status=STATUS_INFEASIBLE, stats=stats)
    if name in ("DualInfeasible", "AlmostDualInfeasible"):
        return SolveResult(status=STATUS_UNBOUNDED, stats=stats)
    return SolveResult(status=STATUS_NUMERICAL, stats=stats)


def _mat_from_triangle(vec: np.ndarray, side: int, scaled: bool) -> np.ndarray:
    out = np.zeros((side, side))
    for val, (i, j) in zip(vec, psd_triangle_indices(side)):
        if i == j:
            out[i, j] = val
        else:
            v = val / _SQRT2 if scaled else val
            out[i, j] = v
            out[j, i] = v
    return out


def _cone_membership_residuals(vec: np.ndarray, segments, dual: bool) -> float:
    worst, at = 0.0, 0
    for kind, size in segments:
        dim = size * (size + 1) // 2 if kind == "psd" else size
        seg = vec[at:at + dim]
        at += dim
        if kind == "zero":
            res = 0.0 if dual else float(np.abs(seg).max(initial=0.0))
        elif kind == "nonneg":
            res = float(max(0.0, -seg.min(initial=0.0)))
        elif kind == "soc":
            res = float(max(0.0, np.linalg.norm(seg[1:]) - seg[0]))
        else:
            eigs = np.linalg.eigvalsh(_mat_from_triangle(seg, size, scaled=True))
            res = float(max(0.0, -eigs[0]))
        worst = max(worst, res)
    return worst


def kkt_residuals(prog: ConeProgram, result: SolveResult, lb: np.ndarray = None,
                  ub: np.ndarray = None) -> dict:
    """Primal/dual/stationarity residuals of a relaxation solution."""
    if result.status != STATUS_OPTIMAL or result.dual is None:
        raise ValueError("kkt_residuals needs an optimal result with duals")
    if lb is None or ub is None:
        base_lb, base_ub = effective_bounds(prog)
        lb = base_lb if lb is None else lb
        ub = base_ub if ub is None else ub
    a_mat, b_vec, segments = _canonical_parts(prog, lb, ub)
    x, z, s = result.x, result.dual, result.slack
    scale = 1.0 + float(np.abs(prog.objective @ x))
    res = {
        "primal_eq": float(np.abs(a_mat @ x + s - b_vec).max(initial=0.0)),
        "primal_cone": _cone_membership_residuals(s, segments, dual=False),
        "dual_cone": _cone_membership_residuals(z, segments, dual=True),
        "stationarity": float(np.abs(prog.objective + a_mat.T @ z).max(initial=0.0)),
        "complementarity": float(abs(s @ z)) / scale,
        "duality_gap": float(abs(prog.objective @ x + b_vec @ z)) / scale,
    }
    res["max"] = max(res.values())
    return res


def verify_solution(prog: ConeProgram, x: np.ndarray, tol: float = 1e-6,
                    integral: bool = False) -> tuple[bool, dict]:
    """Re-verify feasibility from the raw program data, no solver involved."""
    x = np.asarray(x, dtype=float)
    report = {}
    if prog.eq_mat.shape[0]:
        report["equality"] = float(np.abs(prog.eq_mat @ x - prog.eq_rhs).max())
    else:
        report["equality"] = 0.0
    if prog.ineq_mat.shape[0]:
        resid = prog.ineq_mat @ x - prog.ineq_rhs
        report["inequality"] = float(max(0.0, resid.max()))
    else:
        report["inequality"] = 0.0
    worst_soc = 0.0
    for blk in prog.soc_blocks:
        v = blk.a_mat @ x + blk.b_vec
        worst_soc = max(worst_soc, float(np.linalg.norm(v[1:]) - v[0]))
    report["soc"] = max(0.0, worst_soc)
    worst_psd = 0.0
    for blk in prog.psd_blocks:
        mat = _mat_from_triangle(blk.a_mat @ x + blk.b_vec, blk.side, scaled=False)
        worst_psd = max(worst_psd, float(-np.linalg.eigvalsh(mat)[0]))
    report["psd"] = max(0.0, worst_psd)
    lb, ub = effective_bounds(prog)
    report["bounds"] = float(max(np.maximum(lb - x, 0.0).max(initial=0.0),
                                 np.maximum(x - ub, 0.0).max(initial=0.0)))
    if integral and prog.binary_indices:
        vals = x[list(prog.binary_indices)]
        report["integrality"] = float(np.abs(vals - np.round(vals)).max())
        col_err = 0.0
        for col in prog.assignment_columns:
            col_err = max(col_err, abs(np.round(x[list(col)]).sum() - 1.0))
        report["assignment"] = float(col_err)
    ok = all(v <= tol for v in report.values())
    return ok, report


def _is_integral(x: np.ndarray, bins, tol: float = 1e-6) -> bool:
    if not bins:
        return True
    vals = x[list(bins)]
    return bool(np.abs(vals - np.round(vals)).max(initial=0.0) <= tol)


def _branch_choice(x: np.ndarray, prog: ConeProgram, tol: float = 1e-6):
    """Most fractional assignment column, then its largest entry.

    Falls back to the most fractional single binary when no grouped column
    is fractional.  Returns ("column", col_index, var_index) or
    ("single", var_index, None).
    """
    best_col, best_score = None, -1.0
    for c_idx, col in enumerate(prog.assignment_columns):
        vals = x[list(col)]
        frac = np.minimum(vals, 1.0 - vals)
        if frac.max(initial=0.0) <= tol:
            continue
        score = float(frac.sum())
        if score > best_score + 1e-12:
            best_col, best_score = c_idx, score
    if best_col is not None:
        col = prog.assignment_columns[best_col]
        vals = x[list(col)]
        region = int(np.argmax(vals))  # ties resolve to the lowest index
        return "column", best_col, col[region]
    grouped = {i for col in prog.assignment_columns for i in col}
    best_var, best_frac = None, tol
    for i in prog.binary_indices:
        if i in grouped:
            continue
        frac = min(x[i], 1.0 - x[i])
        if frac > best_frac + 1e-12:
            best_var, best_frac = i, frac
    return ("single", best_var, None) if best_var is not None else (None, None, None)


def _lexi_key(x: np.ndarray, bins) -> tuple:
    return tuple(int(round(v)) for v in x[list(bins)])


def branch_and_bound(prog: ConeProgram, gap_tol: float = 1e-6,
                     node_limit: int = 10000) -> SolveResult:
    """Deterministic best-first branch and bound over the binary variables.

    Returns the optimal SolveResult with stats ``nodes`` (relaxations
    solved), ``node_bounds`` (bound of every expanded node in pop order) and
    ``gap`` (final relative gap).  Binaries in the returned point are
    snapped to exact 0/1.
    """
    bins = prog.binary_indices
    base_lb, base_ub = effective_bounds(prog)
    root = solve_relaxation(prog, base_lb, base_ub)
    nodes = 1
    if root.status != STATUS_OPTIMAL:
        return SolveResult(status=root.status,
                           stats={**root.stats, "nodes": nodes})
    if _is_integral(root.x, bins):
        x = root.x.copy()
        if bins:
            x[list(bins)] = np.round(x[list(bins)])
        return SolveResult(status=STATUS_OPTIMAL, x=x, objective=root.objective,
                           stats={"nodes": nodes, "node_bounds": [root.objective],
                                  "gap": 0.0},
                           dual=root.dual, slack=root.slack)

    incumbent_obj, incumbent_x = np.inf, None

    def consider(obj: float, x: np.ndarray):
        nonlocal incumbent_obj, incumbent_x
        if (incumbent_x is None
                or obj < incumbent_obj - 1e-9 * max(1.0, abs(incumbent_obj))):
            incumbent_obj, incumbent_x = obj, x
        elif (incumbent_x is not None
              and abs(obj - incumbent_obj) <= 1e-9 * max(1.0, abs(incumbent_obj))
              and _lexi_key(x, bins) < _lexi_key(incumbent_x, bins)):
            incumbent_obj, incumbent_x = obj, x

    # Rounding heuristic: fix every column to its largest relaxation entry,
    # free binaries to their rounded values, and solve once.
    h_lb, h_ub = base_lb.copy(), base_ub.copy()
    grouped = set()
    for col in prog.assignment_columns:
        pick = col[int(np.argmax(root.x[list(col)]))]
        for i in col:
            h_lb[i], h_ub[i] = (1.0, 1.0) if i == pick else (0.0, 0.0)
        grouped.update(col)
    for i in bins:
        if i not in grouped:
            v = float(np.round(root.x[i]))
            h_lb[i], h_ub[i] = v, v
    heur = solve_relaxation(prog, h_lb, h_ub)
    nodes += 1
    if heur.status == STATUS_OPTIMAL and _is_integral(heur.x, bins):
        consider(heur.objective, heur.x)

    counter = itertools.count()
    heap = [(root.objective, next(counter), root.x, base_lb, base_ub)]
    node_bounds = []
    frontier = None
    while heap:
        bound, _, x_relax, lb, ub = heapq.heappop(heap)
        if (incumbent_x is not None
                and bound >= incumbent_obj - gap_tol * max(1.0, abs(incumbent_obj))):
            frontier = float(bound)
            break  # best-first: every open node is at least this bound
        node_bounds.append(float(bound))
        kind, col_idx, var_idx = _branch_choice(x_relax, prog)
        if kind is None:
            consider(float(bound), x_relax)
            continue
        if kind == "column":
            col = prog.assignment_columns[col_idx]
            fix_lb, fix_ub = lb.copy(), ub.copy()
            for i in col:
                fix_lb[i], fix_ub[i] = (1.0, 1.0) if i == var_idx else (0.0, 0.0)
            forbid_lb, forbid_ub = lb.copy(), ub.copy()
            forbid_ub[var_idx] = 0.0
            forbid_lb[var_idx] = 0.0
            children = [(fix_lb, fix_ub), (forbid_lb, forbid_ub)]
        else:
            up_lb, up_ub = lb.copy(), ub.copy()
            up_lb[col_idx] = up_ub[col_idx] = 1.0
            dn_lb, dn_ub = lb.copy(), ub.copy()
            dn_lb[col_idx] = dn_ub[col_idx] = 0.0
            children = [(dn_lb, dn_ub), (up_lb, up_ub)]
        for c_lb, c_ub in children:
            if nodes >= node_limit:
                return SolveResult(status=STATUS_NUMERICAL,
                                   stats={"nodes": nodes,
                                          "reason": "node limit reached"})
            child = solve_relaxation(prog, c_lb, c_ub)
            nodes += 1
            if child.status == STATUS_INFEASIBLE:
                continue
            if child.status != STATUS_OPTIMAL:
                return SolveResult(status=STATUS_NUMERICAL,
                                   stats={"nodes": nodes,
                                          "reason": f"child node {child.status}"})
            if _is_integral(child.x, bins):
                consider(child.objective, child.x)
            else:
                heapq.heappush(heap, (child.objective, next(counter),
                                      child.x, c_lb, c_ub))

    if incumbent_x is None:
        return SolveResult(status=STATUS_INFEASIBLE,
                           stats={"nodes": nodes, "node_bounds": node_bounds})
    best_open = incumbent_obj if frontier is None else frontier
    gap = max(0.0, incumbent_obj - best_open) / max(1.0, abs(incumbent_obj))
    x = incumbent_x.copy()
    if bins:
        x[list(bins)] = np.round(x[list(bins)])
    return SolveResult(status=STATUS_OPTIMAL, x=x, objective=float(incumbent_obj),
                       stats={"nodes": nodes, "node_bounds": node_bounds,
                              "gap": float(gap)})


def dump_program(prog: ConeProgram) -> str:
    """Deterministic textual dump (format ``coneprogram/1``) for debugging."""
    out = io.StringIO()

    def triplets(mat: sp.csc_matrix):
        coo = mat.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return zip(coo.row[order], coo.col[order], coo.data[order])

    print("coneprogram/2", file=out)
    print(f"vars {prog.n_vars}", file=out)
    print("objective", file=out)
    for i, v in enumerate(prog.objective):
        if v != 0.0:
            print(f"  {i} {v:.17g}", file=out)
    print(f"equalities {prog.eq_mat.shape[0]}", file=out)
    for r, c, v in triplets(prog.eq_mat):
        print(f"  {r} {c} {v:.17g}", file=out)
    for r, v in enumerate(prog.eq_rhs):
        if v != 0.0:
            print(f"  rhs {r} {v:.17g}", file=out)
    print(f"inequalities {prog.ineq_mat.shape[0]}", file=out)
    for r, c, v in triplets(prog.ineq_mat):
        print(f"  {r} {c} {v:.17g}", file=out)
    for r, v in enumerate(prog.ineq_rhs):
        if v != 0.0:
            print(f"  rhs {r} {v:.17g}", file=out)
    for k, blk in enumerate(prog.soc_blocks):
        print(f"soc {k} dim {blk.a_mat.shape[0]}", file=out)
        for r, c, v in triplets(blk.a_mat):
            print(f"  {r} {c} {v:.17g}", file=out)
        for r, v in enumerate(blk.b_vec):
            if v != 0.0:
                print(f"  b {r} {v:.17g}", file=out)
    for k, blk in enumerate(prog.psd_blocks):
        print(f"psd {k} side {blk.side}", file=out)
        for r, c, v in triplets(blk.a_mat):
            print(f"  {r} {c} {v:.17g}", file=out)
        for r, v in enumerate(blk.b_vec):
            if v != 0.0:
                print(f"  b {r} {v:.17g}", file=out)
    for i in range(prog.n_vars):
        lo, hi = prog.lb[i], prog.ub[i]
        if np.isfinite(lo) or np.isfinite(hi):
            print(f"bound {i} {lo:.17g} {hi:.17g}", file=out)
    if prog.binary_indices:
        print("binaries " + " ".join(map(str, prog.binary_indices)), file=out)
    for col in prog.assignment_columns:
        print("column " + " ".join(map(str, col)), file=out)
    return out.getvalue()
