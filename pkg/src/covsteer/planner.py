"""Distributionally robust covariance steering on the stacked horizon.

The decision is an affine disturbance-feedback policy

    U_stack = v + K s,      s = [dW_0; ...; dW_{k'-1}; x_0 - mu_0],

with K block lower triangular in the causal sense: the input of step k may
see increments of steps before k and the initial deviation, never anything
later.  Under that policy the stacked state splits into a mean part, affine
in v, and a zero-mean deviation (D + b_hat K) s with D = [cal_a_sigma |
cal_a_mu], which keeps every moment constraint convex.

``assemble`` lowers the whole problem to one ConeProgram:

  * expected cost in epigraph form, a single second-order cone on the
    stacked factor [Q^1/2 mean; Q^1/2 G; R^1/2 v; R^1/2 K S^1/2] with
    G = (D + b_hat K) S^1/2 and S = Cov(s);
  * terminal mean as affine equalities and terminal covariance as
    G_k' G_k'^T <= sigma_T through a Schur-complement semidefinite block;
  * per face and step, the worst-case CVaR over the Wasserstein ball as a
    linear row in (v, surd, assignment) plus one cone bounding the surd,
    gated by Big-M so only the assigned region's faces bind;
  * exactly-one region per step as equalities over the binary block.

``solve`` runs branch and bound, then re-solves the continuous program with
the winning assignment fixed and the Big-M gates replaced by hard rows; the
second pass is what makes the reconstructed face margins crisp instead of
big-M-scaled.  All reported moments and margins are recomputed from the
decision, never read back from solver slacks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.optimize
import scipy.sparse as sp

from .conic import (
    STATUS_INFEASIBLE,
    STATUS_OPTIMAL,
    ConeProgram,
    PsdBlock,
    SocBlock,
    branch_and_bound,
    psd_triangle_indices,
    solve_relaxation,
)
from .dynamics import DiscreteModel, LiftedModel
from .errors import InfeasibleError, NumericalError
from .risk import AmbiguityRadius, RiskParams, cvar_coefficient
from .risk import face_margins as risk_face_margins
from .safety import SafeSet

_PSD_TOL = 1e-10


def _psd_sqrt(mat: np.ndarray, name: str) -> np.ndarray:
    """Symmetric PSD square root; rejects matrices indefinite beyond 1e-10."""
    sym = 0.5 * (mat + mat.T)
    w, v = np.linalg.eigh(sym)
    scale = max(1.0, float(w[-1]) if w.size else 1.0)
    if w.min(initial=0.0) < -_PSD_TOL * scale:
        raise ValueError(f"{name} is not positive semidefinite "
                         f"(eigenvalue {w.min():.3e})")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def _symmetric(mat, rows: int, name: str) -> np.ndarray:
    mat = np.asarray(mat, dtype=float)
    if mat.shape != (rows, rows):
        raise ValueError(f"{name} must have shape {(rows, rows)}, got {mat.shape}")
    if np.abs(mat - mat.T).max(initial=0.0) > _PSD_TOL * max(1.0, np.abs(mat).max()):
        raise ValueError(f"{name} must be symmetric")
    return 0.5 * (mat + mat.T)


@dataclass(frozen=True)
class BoundaryConditions:
    """Initial and terminal moments the plan must connect."""

    mu0: np.ndarray
    mu_t: np.ndarray
    sigma0: np.ndarray
    sigma_t: np.ndarray

    def __post_init__(self):
        mu0 = np.asarray(self.mu0, dtype=float).ravel()
        mu_t = np.asarray(self.mu_t, dtype=float).ravel()
        if mu0.shape != mu_t.shape:
            raise ValueError("mu0 and mu_t must have the same length")
        n = mu0.shape[0]
        sigma0 = _symmetric(self.sigma0, n, "sigma0")
        sigma_t = _symmetric(self.sigma_t, n, "sigma_t")
        for name, mat in (("sigma0", sigma0), ("sigma_t", sigma_t)):
            w = np.linalg.eigvalsh(mat)
            if w[0] < -_PSD_TOL * max(1.0, w[-1]):
                raise ValueError(f"{name} must be PSD (eigenvalue {w[0]:.3e})")
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "mu_t", mu_t)
        object.__setattr__(self, "sigma0", sigma0)
        object.__setattr__(self, "sigma_t", sigma_t)

    @property
    def n(self) -> int:
        return self.mu0.shape[0]


@dataclass(frozen=True)
class PlannerProblem:
    """Everything ``assemble`` needs, validated once.

    ``q_weight``/``r_weight`` are the stacked positive definite cost
    matrices over the whole horizon ((n k')^2 and (m k')^2).  ``safe_set``
    may be None for a plain steering problem with no region constraints, in
    which case ``risk`` must be None as well.  ``big_m`` overrides the
    per-face automatic gate constant when set.
    """

    lifted: LiftedModel
    q_weight: np.ndarray
    r_weight: np.ndarray
    boundary: BoundaryConditions
    safe_set: SafeSet | None = None
    risk: RiskParams | None = None
    rho: AmbiguityRadius = AmbiguityRadius(0.0)
    big_m: float | None = None

    def __post_init__(self):
        lifted = self.lifted
        nk = lifted.n * lifted.k_prime
        mk = lifted.m * lifted.k_prime
        q = _symmetric(self.q_weight, nk, "q_weight")
        r = _symmetric(self.r_weight, mk, "r_weight")
        for name, mat in (("q_weight", q), ("r_weight", r)):
            if np.linalg.eigvalsh(mat)[0] <= 0.0:
                raise ValueError(f"{name} must be positive definite")
        object.__setattr__(self, "q_weight", q)
        object.__setattr__(self, "r_weight", r)
        if self.boundary.n != lifted.n:
            raise ValueError("boundary dimension does not match the model")
        if (self.safe_set is None) != (self.risk is None):
            raise ValueError("safe_set and risk must be given together")
        if self.safe_set is not None and self.safe_set.n != lifted.n:
            raise ValueError("safe set dimension does not match the model")
        rho = (self.rho if isinstance(self.rho, AmbiguityRadius)
               else AmbiguityRadius(float(self.rho)))
        object.__setattr__(self, "rho", rho)
        if self.big_m is not None and not self.big_m > 0.0:
            raise ValueError("big_m must be positive when given")

    @property
    def n_o(self) -> int:
        return 0 if self.safe_set is None else self.safe_set.n_o

    @property
    def s_dim(self) -> int:
        return self.lifted.n_w * self.lifted.k_prime + self.lifted.n


@dataclass(frozen=True)
class PlannerDecision:
    """Feedforward v, causal feedback K, and the region assignment.

    ``o_assign`` has one row per region and one column per step; with no
    safe set it is (0, k').  Causality of ``k_gain`` is checked against the
    model by ``propagate_moments`` (the decision alone cannot split its row
    count into m times k').
    """

    v: np.ndarray
    k_gain: np.ndarray
    o_assign: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float).ravel()
        k_gain = np.asarray(self.k_gain, dtype=float)
        if k_gain.ndim != 2 or k_gain.shape[0] != v.shape[0]:
            raise ValueError("k_gain must be 2-d with one row per input entry")
        o_assign = np.asarray(self.o_assign, dtype=float)
        if o_assign.ndim != 2:
            raise ValueError("o_assign must be a (regions x steps) matrix")
        if o_assign.size:
            if np.abs(o_assign - np.round(o_assign)).max() > 1e-9:
                raise ValueError("o_assign entries must be 0/1")
            o_assign = np.round(o_assign) + 0.0
            if o_assign.shape[0] and np.any(o_assign.sum(axis=0) != 1.0):
                raise ValueError("each o_assign column must select exactly one region")
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "k_gain", k_gain)
        object.__setattr__(self, "o_assign", o_assign)


@dataclass(frozen=True)
class PlannerSolution:
    decision: PlannerDecision
    planned_means: np.ndarray       # (k'+1, n), state 0 included
    planned_covs: np.ndarray        # (k'+1, n, n)
    objective: float
    face_margins: tuple             # per region: (n_l, k'+1) worst-case CVaR values
    stats: dict = field(default_factory=dict)


def causality_mask(m: int, n_w: int, n: int, k_prime: int) -> np.ndarray:
    """Boolean (m k') x (n_w k' + n) map of the entries a causal K may use."""
    mask = np.zeros((m * k_prime, n_w * k_prime + n), dtype=bool)
    mask[:, n_w * k_prime:] = True          # initial deviation, always visible
    for step in range(k_prime):
        mask[step * m:(step + 1) * m, :step * n_w] = True
    return mask


def _state_rows(kappa: int, n: int) -> slice:
    """Rows of lifted stack for state ``kappa`` (states are labelled 1..k')."""
    return slice((kappa - 1) * n, kappa * n)


def _noise_half(problem: PlannerProblem) -> np.ndarray:
    """Symmetric square root of Cov(s) = blkdiag(dt I, sigma0)."""
    lifted = problem.lifted
    nw_k = lifted.n_w * lifted.k_prime
    s_half = np.zeros((problem.s_dim, problem.s_dim))
    s_half[:nw_k, :nw_k] = np.sqrt(lifted.delta_t) * np.eye(nw_k)
    s_half[nw_k:, nw_k:] = _psd_sqrt(problem.boundary.sigma0, "sigma0")
    return s_half


def _deviation_input_map(lifted: LiftedModel) -> np.ndarray:
    """D = [cal_a_sigma | cal_a_mu]: how s reaches the stacked deviation."""
    return np.hstack([lifted.cal_a_sigma, lifted.cal_a_mu])


def propagate_moments(lifted: LiftedModel, decision: PlannerDecision,
                      boundary: BoundaryConditions):
    """Exact Gaussian moments of states 0..k' under the affine policy.

    Returns ``(means, covs)`` with shapes (k'+1, n) and (k'+1, n, n); entry 0
    repeats the boundary moments.
    """
    n, m, n_w, kp = lifted.n, lifted.m, lifted.n_w, lifted.k_prime
    s_dim = n_w * kp + n
    if decision.v.shape != (m * kp,):
        raise ValueError(f"v must have length {m * kp}, got {decision.v.shape[0]}")
    if decision.k_gain.shape != (m * kp, s_dim):
        raise ValueError(f"k_gain must have shape {(m * kp, s_dim)}, "
                         f"got {decision.k_gain.shape}")
    if boundary.n != n:
        raise ValueError("boundary dimension does not match the model")
    mask = causality_mask(m, n_w, n, kp)
    if np.any(decision.k_gain[~mask] != 0.0):
        raise ValueError("k_gain has entries outside the causal pattern")

    sigma0_half = _psd_sqrt(boundary.sigma0, "sigma0")
    s_half = np.zeros((s_dim, s_dim))
    s_half[:n_w * kp, :n_w * kp] = np.sqrt(lifted.delta_t) * np.eye(n_w * kp)
    s_half[n_w * kp:, n_w * kp:] = sigma0_half

    mu_stack = lifted.cal_a_mu @ boundary.mu0 + lifted.b_hat @ decision.v
    g = (_deviation_input_map(lifted) + lifted.b_hat @ decision.k_gain) @ s_half

    means = np.zeros((kp + 1, n))
    covs = np.zeros((kp + 1, n, n))
    means[0] = boundary.mu0
    covs[0] = boundary.sigma0
    for kappa in range(1, kp + 1):
        rows = _state_rows(kappa, n)
        means[kappa] = mu_stack[rows]
        gk = g[rows]
        covs[kappa] = gk @ gk.T
    return means, covs


def expected_cost(problem: PlannerProblem, decision: PlannerDecision) -> float:
    """E[J] = E[X' Q X] + E[U' R U] under the policy, evaluated directly."""
    lifted = problem.lifted
    s_half = _noise_half(problem)
    mu_stack = lifted.cal_a_mu @ problem.boundary.mu0 + lifted.b_hat @ decision.v
    g = (_deviation_input_map(lifted) + lifted.b_hat @ decision.k_gain) @ s_half
    ks = decision.k_gain @ s_half
    return float(mu_stack @ problem.q_weight @ mu_stack
                 + np.sum((_psd_sqrt(problem.q_weight, "q_weight") @ g) ** 2)
                 + decision.v @ problem.r_weight @ decision.v
                 + np.sum((_psd_sqrt(problem.r_weight, "r_weight") @ ks) ** 2))


# --------------------------------------------------------------- variable map

@dataclass(frozen=True)
class VariableLayout:
    """Column map of the assembled program.

    Order: feedforward v, free (causal) K entries row-major, the cost
    epigraph t, covariance surds per face and state 1..k', then the
    assignment block column-by-column (absent when the assignment is fixed
    or there is no safe set).
    """

    n: int
    m: int
    n_w: int
    k_prime: int
    s_dim: int
    n_o: int
    faces_per_region: tuple
    k_entries: tuple          # ((row, col), ...) of the free K entries
    k_start: int
    t_index: int
    surd_start: int
    o_start: int
    n_vars: int

    @property
    def n_v(self) -> int:
        return self.m * self.k_prime

    @property
    def n_k(self) -> int:
        return len(self.k_entries)

    @property
    def has_assignment(self) -> bool:
        return self.o_start < self.n_vars

    def face_number(self, j: int, l: int) -> int:
        return sum(self.faces_per_region[:j]) + l

    def surd_index(self, j: int, l: int, kappa: int) -> int:
        if not 1 <= kappa <= self.k_prime:
            raise ValueError("surd states run 1..k'")
        return self.surd_start + self.face_number(j, l) * self.k_prime + (kappa - 1)

    def o_index(self, j: int, k: int) -> int:
        if not self.has_assignment:
            raise ValueError("layout has no assignment block")
        return self.o_start + k * self.n_o + j

    def decode(self, x: np.ndarray):
        """(v, k_gain, o_assign, t) from a solution vector; binaries snapped."""
        x = np.asarray(x, dtype=float)
        v = x[:self.n_v].copy()
        k_gain = np.zeros((self.n_v, self.s_dim))
        for idx, (r, c) in enumerate(self.k_entries):
            k_gain[r, c] = x[self.k_start + idx]
        if self.has_assignment:
            # + 0.0 folds the -0.0 that np.round makes of tiny negatives
            o_assign = np.round(
                x[self.o_start:].reshape(self.k_prime, self.n_o).T) + 0.0
        else:
            o_assign = np.zeros((self.n_o, self.k_prime))
        return v, k_gain, o_assign, float(x[self.t_index])


def variable_layout(problem: PlannerProblem,
                    include_assignment: bool = True) -> VariableLayout:
    lifted = problem.lifted
    n, m, n_w, kp = lifted.n, lifted.m, lifted.n_w, lifted.k_prime
    s_dim = problem.s_dim
    mask = causality_mask(m, n_w, n, kp)
    k_entries = tuple((r, c) for r in range(m * kp) for c in range(s_dim)
                      if mask[r, c])
    faces = (tuple(r.n_l for r in problem.safe_set.regions)
             if problem.safe_set is not None else ())
    n_faces = sum(faces)
    k_start = m * kp
    t_index = k_start + len(k_entries)
    surd_start = t_index + 1
    o_start = surd_start + n_faces * kp
    n_o = problem.n_o
    n_vars = o_start + (n_o * kp if include_assignment and n_o else 0)
    return VariableLayout(n=n, m=m, n_w=n_w, k_prime=kp, s_dim=s_dim,
                          n_o=n_o, faces_per_region=faces,
                          k_entries=k_entries, k_start=k_start,
                          t_index=t_index, surd_start=surd_start,
                          o_start=o_start, n_vars=n_vars)


# ----------------------------------------------------------------- assembly

def _embed_cols(mat: sp.spmatrix, col_indices: np.ndarray,
                n_vars: int) -> sp.csc_matrix:
    """Place the columns of ``mat`` at ``col_indices`` in a wider matrix."""
    coo = sp.coo_matrix(mat)
    return sp.csc_matrix((coo.data, (coo.row, col_indices[coo.col])),
                         shape=(mat.shape[0], n_vars))


def _kron_k_map(left: np.ndarray, s_half: np.ndarray,
                layout: VariableLayout) -> sp.csc_matrix:
    """Sparse map from the free K entries to vec(left @ K @ s_half), row-major.

    Uses vec(A K B) = kron(A, B') vec(K) and then keeps only the causal
    columns, which pins the non-causal entries of K to zero by construction.
    """
    full = sp.kron(sp.csc_matrix(left), sp.csc_matrix(s_half.T), format="csc")
    vec_idx = np.array([r * layout.s_dim + c for r, c in layout.k_entries])
    sliced = full[:, vec_idx]
    k_cols = layout.k_start + np.arange(layout.n_k)
    return _embed_cols(sliced, k_cols, layout.n_vars)


def _objective_soc(problem: PlannerProblem, layout: VariableLayout,
                   s_half: np.ndarray) -> SocBlock:
    """One cone making t an epigraph of E[J]: ||[2y; t-1]|| <= t+1."""
    lifted = problem.lifted
    n_vars = layout.n_vars
    q_half = _psd_sqrt(problem.q_weight, "q_weight")
    r_half = _psd_sqrt(problem.r_weight, "r_weight")
    d_mat = _deviation_input_map(lifted)
    qb = q_half @ lifted.b_hat

    v_cols = np.arange(layout.n_v)
    mean_a = _embed_cols(sp.csc_matrix(qb), v_cols, n_vars)
    mean_b = q_half @ (lifted.cal_a_mu @ problem.boundary.mu0)
    gdev_a = _kron_k_map(qb, s_half, layout)
    gdev_b = (q_half @ d_mat @ s_half).ravel()
    vcost_a = _embed_cols(sp.csc_matrix(r_half), v_cols, n_vars)
    vcost_b = np.zeros(layout.n_v)
    kcost_a = _kron_k_map(r_half, s_half, layout)
    kcost_b = np.zeros(kcost_a.shape[0])

    t_row = sp.csc_matrix(([1.0], ([0], [layout.t_index])), shape=(1, n_vars))
    a_mat = sp.vstack([t_row,
                       2.0 * sp.vstack([mean_a, gdev_a, vcost_a, kcost_a]),
                       t_row], format="csc")
    b_vec = np.concatenate([[1.0],
                            2.0 * np.concatenate([mean_b, gdev_b,
                                                  vcost_b, kcost_b]),
                            [-1.0]])
    return SocBlock(a_mat=a_mat, b_vec=b_vec)


def _terminal_psd(problem: PlannerProblem, layout: VariableLayout,
                  s_half: np.ndarray) -> PsdBlock:
    """Schur block [[sigma_t, G_k']; [G_k'', I]] >= 0, i.e. G G' <= sigma_t."""
    lifted = problem.lifted
    n, kp, s_dim = layout.n, layout.k_prime, layout.s_dim
    rows = _state_rows(kp, n)
    g_map = _kron_k_map(lifted.b_hat[rows], s_half, layout)  # (n s_dim) x vars
    g_const = (_deviation_input_map(lifted)[rows] @ s_half)

    side = n + s_dim
    tri = psd_triangle_indices(side)
    b_vec = np.zeros(len(tri))
    pick_rows, pick_pos = [], []
    for r, (i, j) in enumerate(tri):
        if j < n:
            b_vec[r] = problem.boundary.sigma_t[i, j]
        elif i < n:
            pick_rows.append(r)
            pick_pos.append(i * s_dim + (j - n))
            b_vec[r] = g_const[i, j - n]
        else:
            b_vec[r] = 1.0 if i == j else 0.0
    if pick_rows:
        embed = sp.csc_matrix((np.ones(len(pick_rows)),
                               (pick_rows, np.arange(len(pick_rows)))),
                              shape=(len(tri), len(pick_rows)))
        a_mat = embed @ g_map.tocsr()[pick_pos]
    else:
        a_mat = sp.csc_matrix((len(tri), layout.n_vars))
    return PsdBlock(a_mat=sp.csc_matrix(a_mat), b_vec=b_vec, side=side)


def _face_terms(problem: PlannerProblem):
    """Flat per-face data: (region j, face l, c, d, gamma, dr term, risk a)."""
    out = []
    for j, region in enumerate(problem.safe_set.regions):
        a_face = problem.risk.face_risk(region.n_l)
        gamma = cvar_coefficient(a_face)
        for l, hs in enumerate(region.half_spaces):
            dr = float(np.linalg.norm(hs.c)) * problem.rho.rho / np.sqrt(a_face)
            out.append((j, l, hs.c, float(hs.d), gamma, dr))
    return out


def _k0_reference_means(problem: PlannerProblem) -> np.ndarray:
    """Means along the horizon for the least-norm v meeting the mean target.

    Pure-feedforward reference used only to scale the Big-M gates; it needs
    no feasibility, just a sane order of magnitude.
    """
    lifted = problem.lifted
    n, kp = lifted.n, lifted.k_prime
    drift = lifted.cal_a_mu @ problem.boundary.mu0
    target = problem.boundary.mu_t - drift[_state_rows(kp, n)]
    v_ls = np.linalg.pinv(lifted.b_hat[_state_rows(kp, n)]) @ target
    mu_stack = drift + lifted.b_hat @ v_ls
    return np.vstack([problem.boundary.mu0, mu_stack.reshape(kp, n)])


def _auto_big_m(problem: PlannerProblem, s_half: np.ndarray,
                d_mat: np.ndarray) -> dict:
    """Per-face gate constants, clamped to [1e2, 1e6]; see module docstring."""
    try:
        means = _k0_reference_means(problem)
    except np.linalg.LinAlgError:
        return {(j, l): 1e4 for j, l, *_ in _face_terms(problem)}
    box = np.abs(means).max(axis=0)
    n, kp = problem.lifted.n, problem.lifted.k_prime
    out = {}
    for j, l, c, d, gamma, dr in _face_terms(problem):
        surd0 = float(np.linalg.norm(s_half[problem.lifted.n_w * kp:,
                                            problem.lifted.n_w * kp:] @ c))
        surd_max = max([surd0] + [
            float(np.linalg.norm(s_half @ (d_mat[_state_rows(k, n)].T @ c)))
            for k in range(1, kp + 1)])
        raw = 10.0 * (np.abs(c) @ (2.0 * box + 1.0)
                      + gamma * surd_max + dr + abs(d))
        out[(j, l)] = float(np.clip(raw, 1e2, 1e6))
    return out


def assemble(problem: PlannerProblem,
             fixed_assignment: np.ndarray | None = None) -> ConeProgram:
    """Lower the steering problem to a mixed-binary cone program.

    With ``fixed_assignment`` (a 0/1 regions-by-steps matrix) the binary
    block disappears and only the chosen region's face rows are kept, as
    hard constraints; ``solve`` uses this for its polish pass.
    """
    layout = variable_layout(problem,
                             include_assignment=fixed_assignment is None)
    lifted = problem.lifted
    n, kp = layout.n, layout.k_prime
    s_half = _noise_half(problem)
    d_mat = _deviation_input_map(lifted)
    n_vars = layout.n_vars

    objective = np.zeros(n_vars)
    objective[layout.t_index] = 1.0
    socs = [_objective_soc(problem, layout, s_half)]
    psds = [_terminal_psd(problem, layout, s_half)]

    # Terminal mean: last block of (cal_a_mu mu0 + b_hat v) equals mu_t.
    rows_t = _state_rows(kp, n)
    eq_mat = [_embed_cols(sp.csc_matrix(lifted.b_hat[rows_t]),
                          np.arange(layout.n_v), n_vars)]
    eq_rhs = [problem.boundary.mu_t
              - (lifted.cal_a_mu @ problem.boundary.mu0)[rows_t]]

    lb = np.full(n_vars, -np.inf)
    ub = np.full(n_vars, np.inf)

    ineq_rows, ineq_rhs = [], []
    binaries, columns = (), ()

    if problem.safe_set is not None:
        if fixed_assignment is not None:
            fixed = np.asarray(fixed_assignment, dtype=float)
            if fixed.shape != (layout.n_o, kp):
                raise ValueError(f"fixed_assignment must have shape "
                                 f"{(layout.n_o, kp)}, got {fixed.shape}")
            if np.any(np.abs(fixed - np.round(fixed)) > 1e-9):
                raise ValueError("fixed_assignment entries must be 0/1")
            fixed = np.round(fixed)
            if np.any(fixed.sum(axis=0) != 1.0):
                raise ValueError("fixed_assignment columns must pick one region")
        else:
            fixed = None

        if problem.big_m is not None:
            big_m = {(j, l): float(problem.big_m)
                     for j, l, *_ in _face_terms(problem)}
        else:
            big_m = _auto_big_m(problem, s_half, d_mat)

        mu_const = lifted.cal_a_mu @ problem.boundary.mu0
        sigma0_half = s_half[layout.n_w * kp:, layout.n_w * kp:]
        p_entry = sp.csc_matrix(s_half)[:, [c for _, c in layout.k_entries]]
        entry_rows = np.array([r for r, _ in layout.k_entries])
        k_cols = layout.k_start + np.arange(layout.n_k)

        for j, l, c, d, gamma, dr in _face_terms(problem):
            # One cone per state bounding the surd by the deviation norm
            # along the face normal; lb 0 mirrors that it is a norm.
            for kappa in range(1, kp + 1):
                s_idx = layout.surd_index(j, l, kappa)
                lb[s_idx] = 0.0
                b_full = lifted.b_hat[_state_rows(kappa, n)].T @ c
                coeff = p_entry @ sp.diags(b_full[entry_rows])
                coeff.eliminate_zeros()
                z_a = _embed_cols(coeff, k_cols, n_vars)
                t_row = sp.csc_matrix(([1.0], ([0], [s_idx])),
                                      shape=(1, n_vars))
                z_b = s_half @ (d_mat[_state_rows(kappa, n)].T @ c)
                socs.append(SocBlock(
                    a_mat=sp.vstack([t_row, z_a], format="csc"),
                    b_vec=np.concatenate([[0.0], z_b])))

            surd0 = float(np.linalg.norm(sigma0_half @ c))
            m_val = big_m[(j, l)]
            for k in range(kp):
                active = fixed is not None and fixed[j, k] == 1.0
                if fixed is not None and not active:
                    continue
                for kappa in (k, k + 1):
                    cols, vals = [], []
                    if kappa == 0:
                        const = float(c @ problem.boundary.mu0) - d \
                            + gamma * surd0 + dr
                    else:
                        b_row = lifted.b_hat[_state_rows(kappa, n)].T @ c
                        nz = np.flatnonzero(b_row)
                        cols.extend(nz.tolist())
                        vals.extend(b_row[nz].tolist())
                        cols.append(layout.surd_index(j, l, kappa))
                        vals.append(gamma)
                        const = float(c @ mu_const[_state_rows(kappa, n)]) \
                            - d + dr
                    if fixed is None:
                        cols.append(layout.o_index(j, k))
                        vals.append(m_val)
                        rhs = m_val - const
                    else:
                        rhs = -const
                    ineq_rows.append((cols, vals))
                    ineq_rhs.append(rhs)

        if fixed is None:
            # Exactly one region per step.
            for k in range(kp):
                cols = [layout.o_index(j, k) for j in range(layout.n_o)]
                eq_mat.append(sp.csc_matrix(
                    (np.ones(len(cols)), (np.zeros(len(cols), dtype=int), cols)),
                    shape=(1, n_vars)))
                eq_rhs.append(np.ones(1))
            binaries = tuple(layout.o_index(j, k)
                             for k in range(kp) for j in range(layout.n_o))
            columns = tuple(tuple(layout.o_index(j, k)
                                  for j in range(layout.n_o))
                            for k in range(kp))

    if ineq_rows:
        data, rows, cols = [], [], []
        for r, (cs, vs) in enumerate(ineq_rows):
            rows.extend([r] * len(cs))
            cols.extend(cs)
            data.extend(vs)
        ineq_mat = sp.csc_matrix((data, (rows, cols)),
                                 shape=(len(ineq_rows), n_vars))
        ineq_rhs_vec = np.array(ineq_rhs)
    else:
        ineq_mat, ineq_rhs_vec = None, None

    return ConeProgram(n_vars=n_vars, objective=objective,
                       eq_mat=sp.vstack(eq_mat, format="csc"),
                       eq_rhs=np.concatenate(eq_rhs),
                       ineq_mat=ineq_mat, ineq_rhs=ineq_rhs_vec,
                       soc_blocks=tuple(socs), psd_blocks=tuple(psds),
                       binary_indices=binaries, assignment_columns=columns,
                       lb=lb, ub=ub)


# ------------------------------------------------------------------- solving

def _region_slack_lp(problem: PlannerProblem, j: int):
    """Best uniform DR slack any single point can achieve inside region j.

    Maximizes tau with c_l' z - d_l + rho-term <= -tau for every face; a
    negative optimum certifies the region cannot host even a zero-covariance
    mean.  Returns (tau, worst_face_index).
    """
    region = problem.safe_set.regions[j]
    c_mat, d_vec = region.face_matrix()
    a_face = problem.risk.face_risk(region.n_l)
    dr = np.linalg.norm(c_mat, axis=1) * problem.rho.rho / np.sqrt(a_face)
    n = region.n
    a_ub = np.hstack([c_mat, np.ones((region.n_l, 1))])
    b_ub = d_vec - dr
    res = scipy.optimize.linprog(
        c=np.concatenate([np.zeros(n), [-1.0]]),
        A_ub=a_ub, b_ub=b_ub, bounds=[(None, None)] * (n + 1),
        method="highs")
    if res.status == 3:         # unbounded slack: region is safely roomy
        return np.inf, 0
    if not res.success:
        return -np.inf, 0
    z = res.x[:n]
    margins = c_mat @ z - d_vec + dr
    return float(-res.fun), int(np.argmax(margins))


def _raise_infeasible(problem: PlannerProblem, nodes: int):
    regions = {}
    if problem.safe_set is None:
        raise InfeasibleError(
            "the boundary moments are unreachable: no policy meets the "
            "terminal mean and covariance for this horizon and noise",
            diagnostic={"nodes_explored": nodes})
    worst_msg = "no region assignment satisfies all constraints"
    worst_tau = np.inf
    for j, region in enumerate(problem.safe_set.regions):
        tau, face = _region_slack_lp(problem, j)
        name = region.name or f"region {j}"
        regions[name] = {"max_dr_slack": tau, "most_violated_face": face}
        if tau < worst_tau:
            worst_tau = tau
            if tau < 0:
                worst_msg = (
                    f"region '{name}' cannot host any mean: face {face} is "
                    f"violated by at least {-tau:.4g} once the ambiguity "
                    f"radius term is added")
    raise InfeasibleError(worst_msg,
                          diagnostic={"regions": regions,
                                      "nodes_explored": nodes})


def _verify_invariants(problem: PlannerProblem, means, covs, margins,
                       o_assign: np.ndarray):
    boundary = problem.boundary
    gap0 = float(np.linalg.norm(means[0] - boundary.mu0))
    gap_t = float(np.linalg.norm(means[-1] - boundary.mu_t))
    if gap0 > 1e-8:
        raise NumericalError(f"initial mean off by {gap0:.3e}")
    if gap_t > 1e-6:
        raise NumericalError(f"terminal mean off by {gap_t:.3e}")
    w = np.linalg.eigvalsh(boundary.sigma_t + 1e-6 * np.eye(boundary.n)
                           - covs[-1])
    if w[0] < 0.0:
        raise NumericalError(f"terminal covariance exceeds the target "
                             f"(eigenvalue {w[0]:.3e})")
    if problem.safe_set is None:
        return
    kp = means.shape[0] - 1
    worst = -np.inf
    for k in range(kp):
        j = int(np.argmax(o_assign[:, k]))
        for kappa in (k, k + 1):
            worst = max(worst, float(margins[j][:, kappa].max()))
    if worst > 1e-8:
        raise NumericalError(f"an assigned face margin is {worst:.3e} > 1e-8")


def _solution_margins(problem: PlannerProblem, means, covs):
    if problem.safe_set is None:
        return ()
    out = []
    for region in problem.safe_set.regions:
        vals = np.stack([
            risk_face_margins(region, means[kappa], covs[kappa],
                              problem.risk.delta_s, problem.rho)
            for kappa in range(means.shape[0])], axis=1)
        out.append(vals)
    return tuple(out)


def solve(problem: PlannerProblem, gap_tol: float = 1e-6,
          node_limit: int = 20000) -> PlannerSolution:
    """Plan: branch and bound over assignments, then a fixed-assignment
    polish solve, then independent reconstruction of moments and margins.

    Raises InfeasibleError when no assignment works (with per-region
    diagnostics) and NumericalError when the solver or the reconstructed
    invariants fail.
    """
    prog = assemble(problem)
    res = branch_and_bound(prog, gap_tol=gap_tol, node_limit=node_limit)
    nodes = int(res.stats.get("nodes", 0))
    if res.status == STATUS_INFEASIBLE:
        _raise_infeasible(problem, nodes)
    if res.status != STATUS_OPTIMAL:
        reason = res.stats.get("reason", res.status)
        raise NumericalError(f"branch and bound failed: {reason}")

    layout = variable_layout(problem)
    v, k_gain, o_assign, t_val = layout.decode(res.x)
    stats = {"nodes": nodes, "gap": float(res.stats.get("gap", 0.0)),
             "epigraph_value": t_val, "polish": "skipped"}

    if problem.safe_set is not None:
        polish_prog = assemble(problem, fixed_assignment=o_assign)
        polish = solve_relaxation(polish_prog)
        stats["polish"] = polish.status
        if polish.status == STATUS_OPTIMAL:
            p_layout = variable_layout(problem, include_assignment=False)
            v, k_gain, _, t_val = p_layout.decode(polish.x)
            stats["epigraph_value"] = t_val

    decision = PlannerDecision(v=v, k_gain=k_gain, o_assign=o_assign)
    means, covs = propagate_moments(problem.lifted, decision, problem.boundary)
    margins = _solution_margins(problem, means, covs)
    _verify_invariants(problem, means, covs, margins, o_assign)
    return PlannerSolution(decision=decision, planned_means=means,
                           planned_covs=covs,
                           objective=expected_cost(problem, decision),
                           face_margins=margins, stats=stats)


# ------------------------------------------------------------------ schedule

@dataclass(frozen=True)
class Schedule:
    """Piecewise-constant control law extracted from a solution.

    The feedforward part is the mean input; the feedback part replays the
    gain against realized increments and the initial deviation.  Inputs hold
    on [k dt, (k+1) dt).  ``mu0`` is the planned initial mean the controller
    subtracts from the measured initial state; it travels with the schedule
    because the deviation is part of the policy, not of the plant.
    """

    feedforward: np.ndarray   # (k', m)
    k_gain: np.ndarray        # (m k') x (n_w k' + n)
    mu0: np.ndarray           # (n,)
    delta_t: float
    n: int
    m: int
    n_w: int
    k_prime: int

    def step_of(self, t: float) -> int:
        if t < 0.0 or t > self.k_prime * self.delta_t + 1e-12:
            raise ValueError(f"t={t} outside the horizon")
        return min(int(t / self.delta_t), self.k_prime - 1)

    def feedback_input(self, k: int, dw_hist: np.ndarray,
                       x0_dev: np.ndarray) -> np.ndarray:
        """Covariance-steering input of step k for realized noise.

        ``dw_hist`` carries increments for steps 0..k-1 on its last two axes
        (extra trailing steps are ignored); ``x0_dev`` is x_0 - mu_0.  Both
        accept leading batch axes.
        """
        if not 0 <= k < self.k_prime:
            raise ValueError(f"step {k} outside 0..{self.k_prime - 1}")
        dw_hist = np.asarray(dw_hist, dtype=float)
        x0_dev = np.asarray(x0_dev, dtype=float)
        if dw_hist.shape[-1] != self.n_w or dw_hist.shape[-2] < k:
            raise ValueError("dw_hist must provide k increments of size n_w")
        rows = slice(k * self.m, (k + 1) * self.m)
        out = x0_dev @ self.k_gain[rows, self.n_w * self.k_prime:].T
        if k:
            flat = dw_hist[..., :k, :].reshape(dw_hist.shape[:-2] + (k * self.n_w,))
            out = out + flat @ self.k_gain[rows, :k * self.n_w].T
        return out

    def input_at(self, k: int, dw_hist: np.ndarray,
                 x0_dev: np.ndarray) -> np.ndarray:
        return self.feedforward[k] + self.feedback_input(k, dw_hist, x0_dev)


def extract_schedule(solution: PlannerSolution, dm: DiscreteModel) -> Schedule:
    """Reshape the decision into the per-step law the simulators consume."""
    v = solution.decision.v
    k_gain = solution.decision.k_gain
    kp, m, n, n_w = dm.k_prime, dm.m, dm.n, dm.n_w
    if v.shape != (m * kp,) or k_gain.shape != (m * kp, n_w * kp + n):
        raise ValueError("solution dimensions do not match the model")
    return Schedule(feedforward=v.reshape(kp, m), k_gain=k_gain.copy(),
                    mu0=solution.planned_means[0].copy(),
                    delta_t=dm.delta_t, n=n, m=m, n_w=n_w, k_prime=kp)
