"""Monte Carlo simulation of the nominal and true closed loops, and the
empirical estimators used to judge them.

Randomness contract
-------------------
Every path owns a counter-based Philox stream keyed by
``SeedSequence((master_seed, path_index))``.  Within its stream a path
consumes, in order: n standard normals for the initial state, then the
Brownian increments in time order (one block of n_w per planner step for
the nominal loop, one per substep for the true loop).  Array fills and
repeated scalar draws read the Philox stream identically, so the layout
of the draw calls does not matter; the key and the order above do.
Simulation work is split into fixed-size path chunks and the chunk list,
not the worker count, determines every floating-point operation, so
ensembles are byte-identical for any ``jobs`` setting.

Policy realization
------------------
The planner's feedback acts on Brownian increments, which no controller
measures directly.  Both simulators therefore feed back reconstructed
increments: the one-step state residual against the nominal prediction,
mapped through pinv(A_sigma).  On the nominal plant this recovers the
projection of the drawn increment onto range(A_sigma'), which is the
increment itself whenever A_sigma has full column rank; on the true plant
the reconstruction also absorbs the unknown drift/diffusion, which is the
honest information pattern for the adaptive loop.

The true-loop substep ordering matches the single-path reference
implementation in the adaptive-control module: adapt (at sampling
instants), apply the held input, Euler-Maruyama step of the true process,
predictor step against the pre-step state, filter update.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .dynamics import DiscreteModel, SystemModel, UncertaintyFunctions
from .errors import NumericalError
from .l1drac import ControlParams, adaptation_gain, build_theta_ad
from .planner import BoundaryConditions, Schedule
from .risk import empirical_cvar, std_normal_quantile
from .safety import SafeSet, membership_mask

CHUNK_PATHS = 256          # fixed work unit; never derived from the job count
EMPIRICAL_W2_CAP = 4096    # exact assignment beyond this is not worth the cubes


def path_stream(master_seed: int, path_index: int) -> np.random.Generator:
    """The per-path generator; the only way randomness enters this module."""
    seq = np.random.SeedSequence((int(master_seed), int(path_index)))
    return np.random.Generator(np.random.Philox(seq))


@dataclass(frozen=True)
class PathEnsemble:
    """States of n_paths closed-loop realizations on the planner grid.

    ``paths[i, k]`` is path i at time k * delta_t.  Each path is fully
    determined by (master_seed, i); see the module docstring.
    """

    paths: np.ndarray
    master_seed: int
    delta_t: float

    def __post_init__(self):
        paths = np.asarray(self.paths, dtype=float)
        if paths.ndim != 3 or paths.shape[0] < 1:
            raise ValueError("paths must be (n_paths, k_prime+1, n) with "
                             "n_paths >= 1")
        if not np.all(np.isfinite(paths)):
            raise NumericalError("ensemble contains non-finite states")
        if self.delta_t <= 0:
            raise ValueError("delta_t must be positive")
        object.__setattr__(self, "paths", paths)

    @property
    def n_paths(self) -> int:
        return self.paths.shape[0]

    @property
    def k_prime(self) -> int:
        return self.paths.shape[1] - 1

    @property
    def n(self) -> int:
        return self.paths.shape[2]

    @property
    def seeds(self) -> list[tuple[int, int]]:
        """Per-path stream keys, (master_seed, path_index)."""
        return [(self.master_seed, i) for i in range(self.n_paths)]


def _psd_sqrt(mat: np.ndarray, name: str) -> np.ndarray:
    mat = np.asarray(mat, dtype=float)
    sym = 0.5 * (mat + mat.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    scale = max(1.0, float(np.abs(eigvals).max(initial=0.0)))
    if eigvals.min(initial=0.0) < -1e-8 * scale:
        raise NumericalError(f"{name} is not positive semidefinite "
                             f"(min eigenvalue {eigvals.min():.3e})")
    return (eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))) @ eigvecs.T


def _chunks(n_paths: int):
    return [(lo, min(lo + CHUNK_PATHS, n_paths))
            for lo in range(0, n_paths, CHUNK_PATHS)]


def _run_chunks(worker, n_paths: int, jobs: int):
    spans = _chunks(n_paths)
    if jobs <= 1 or len(spans) == 1:
        for span in spans:
            worker(*span)
        return
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        list(pool.map(lambda s: worker(*s), spans))


def _check_schedule(schedule: Schedule, n: int, m: int, n_w: int,
                    k_prime: int, delta_t: float):
    if (schedule.n, schedule.m, schedule.n_w) != (n, m, n_w):
        raise ValueError("schedule dimensions do not match the model")
    if schedule.k_prime != k_prime:
        raise ValueError(f"schedule covers {schedule.k_prime} steps, "
                         f"model defines {k_prime}")
    if abs(schedule.delta_t - delta_t) > 1e-12 * max(1.0, delta_t):
        raise ValueError("schedule and model disagree on the step size")


def simulate_nominal(dm: DiscreteModel, schedule: Schedule,
                     boundary: BoundaryConditions, n_paths: int, seed: int,
                     jobs: int = 1) -> PathEnsemble:
    """Closed-loop paths of the nominal plant under the planned policy.

    x0 ~ N(mu0, sigma0) per path, increments i.i.d. N(0, delta_t I).
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    n, m, n_w, kp = dm.n, dm.m, dm.n_w, dm.k_prime
    _check_schedule(schedule, n, m, n_w, kp, dm.delta_t)
    if boundary.n != n:
        raise ValueError("boundary dimension does not match the model")

    s0_half = _psd_sqrt(boundary.sigma0, "sigma0")
    pinv_sigma = np.linalg.pinv(dm.a_sigma)
    sqrt_dt = np.sqrt(dm.delta_t)
    paths = np.empty((n_paths, kp + 1, n))

    def worker(lo: int, hi: int):
        count = hi - lo
        z0 = np.empty((count, n))
        dws = np.empty((count, kp, n_w))
        for i in range(lo, hi):
            rng = path_stream(seed, i)
            z0[i - lo] = rng.standard_normal(n)
            dws[i - lo] = rng.standard_normal((kp, n_w)) * sqrt_dt
        x = boundary.mu0 + z0 @ s0_half.T
        paths[lo:hi, 0] = x
        x0_dev = x - schedule.mu0
        dw_hat = np.zeros((count, kp, n_w))
        for k in range(kp):
            u = schedule.input_at(k, dw_hat, x0_dev)
            noise = dws[:, k] @ dm.a_sigma.T
            x = x @ dm.ad.T + u @ dm.bd.T + noise
            # the state residual equals `noise` here, so the reconstruction
            # reduces to projecting the drawn increment through pinv(A_sigma)
            dw_hat[:, k] = noise @ pinv_sigma.T
            paths[lo:hi, k + 1] = x

    _run_chunks(worker, n_paths, jobs)
    return PathEnsemble(paths=paths, master_seed=int(seed),
                        delta_t=dm.delta_t)


def simulate_true(model: SystemModel, uncertainty: UncertaintyFunctions,
                  schedule: Schedule, boundary_true: BoundaryConditions,
                  n_paths: int, seed: int,
                  l1_params: ControlParams | None = None,
                  substeps_per_step: int = 1, feedback: bool = True,
                  jobs: int = 1) -> PathEnsemble:
    """Closed-loop paths of the true process, optionally with the adaptive
    augmentation.

    ``l1_params=None`` runs the ablation U = U* alone.  The Euler-Maruyama
    substep is delta_t / substeps_per_step and must divide the adaptation
    period t_s when the augmentation is on.  States are recorded on the
    planner grid only.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    n, m, n_w = model.n, model.m, model.n_w
    kp = schedule.k_prime
    if (schedule.n, schedule.m, schedule.n_w) != (n, m, n_w):
        raise ValueError("schedule dimensions do not match the model")
    if boundary_true.n != n:
        raise ValueError("boundary dimension does not match the model")
    if substeps_per_step < 1:
        raise ValueError("substeps_per_step must be >= 1")

    dt = schedule.delta_t / substeps_per_step
    enable_l1 = l1_params is not None
    if enable_l1:
        per_sample = int(round(l1_params.t_s / dt))
        if per_sample < 1 or abs(per_sample * dt - l1_params.t_s) > 1e-9 * l1_params.t_s:
            raise ValueError("simulation substep must divide the sampling "
                             "period t_s")
        gain = adaptation_gain(l1_params)
        theta_ad = build_theta_ad(model)
        decay = np.exp(-l1_params.omega * dt)
    else:
        per_sample = 0

    s0_half = _psd_sqrt(boundary_true.sigma0, "sigma0")
    pinv_sigma = np.linalg.pinv(model.a_sigma)
    ad_coarse = np.eye(n) + schedule.delta_t * model.a_mu
    sqrt_dt = np.sqrt(dt)
    paths = np.empty((n_paths, kp + 1, n))

    def worker(lo: int, hi: int):
        count = hi - lo
        z0 = np.empty((count, n))
        dws = np.empty((count, kp, substeps_per_step, n_w))
        for i in range(lo, hi):
            rng = path_stream(seed, i)
            z0[i - lo] = rng.standard_normal(n)
            dws[i - lo] = rng.standard_normal(
                (kp, substeps_per_step, n_w)) * sqrt_dt
        x = boundary_true.mu0 + z0 @ s0_half.T
        paths[lo:hi, 0] = x
        x0_dev = x - schedule.mu0
        dw_hat = np.zeros((count, kp, n_w))
        x_hat = x.copy()
        lam = np.zeros((count, m))
        u_l1 = np.zeros((count, m))

        for k in range(kp):
            if feedback:
                u_star = schedule.input_at(k, dw_hat, x0_dev)
            else:
                u_star = np.broadcast_to(schedule.feedforward[k],
                                         (count, m)).copy()
            x_start = x
            u_l1_total = np.zeros((count, m))
            for sub in range(substeps_per_step):
                step_index = k * substeps_per_step + sub
                if enable_l1 and step_index > 0 and step_index % per_sample == 0:
                    lam = gain * ((x_hat - x) @ theta_ad.T)
                u_apply = u_star + u_l1 if enable_l1 else u_star
                if enable_l1:
                    u_l1_total = u_l1_total + u_l1
                dw = dws[:, k, sub]
                h_sig = uncertainty.h_sigma(x)
                drift = (x @ model.a_mu.T
                         + (u_apply + uncertainty.h_mu(x)) @ model.b.T)
                noise = (dw @ model.a_sigma.T
                         + np.einsum("pmw,pw->pm", h_sig, dw) @ model.b.T)
                x_new = x + dt * drift + noise
                if enable_l1:
                    u_pred = u_star + u_l1 + lam
                    x_hat = x_hat + dt * (-l1_params.lambda_s * (x_hat - x)
                                          + x @ model.a_mu.T
                                          + u_pred @ model.b.T)
                    u_l1 = decay * u_l1 + (decay - 1.0) * lam
                x = x_new
            if feedback:
                resid = x - (x_start @ ad_coarse.T
                             + schedule.delta_t * (u_star @ model.b.T)
                             + dt * (u_l1_total @ model.b.T))
                dw_hat[:, k] = resid @ pinv_sigma.T
            paths[lo:hi, k + 1] = x

    _run_chunks(worker, n_paths, jobs)
    return PathEnsemble(paths=paths, master_seed=int(seed),
                        delta_t=schedule.delta_t)


# -------------------------------------------------------------- estimators

def gaussian_w2(mu1, sigma1, mu2, sigma2) -> float:
    """Closed-form 2-Wasserstein distance between two Gaussians."""
    mu1 = np.asarray(mu1, dtype=float)
    mu2 = np.asarray(mu2, dtype=float)
    if mu1.shape != mu2.shape or mu1.ndim != 1:
        raise ValueError("means must be vectors of equal length")
    s2_half = _psd_sqrt(sigma2, "sigma2")
    s1 = 0.5 * (np.asarray(sigma1, dtype=float)
                + np.asarray(sigma1, dtype=float).T)
    _psd_sqrt(s1, "sigma1")   # reject non-PSD input, value unused
    inner = s2_half @ s1 @ s2_half
    cross = np.sqrt(np.clip(np.linalg.eigvalsh(0.5 * (inner + inner.T)),
                            0.0, None)).sum()
    w2_sq = (np.sum((mu1 - mu2) ** 2) + np.trace(s1)
             + np.trace(np.asarray(sigma2, dtype=float)) - 2.0 * cross)
    return float(np.sqrt(max(w2_sq, 0.0)))


def empirical_w2(sample_a: np.ndarray, sample_b: np.ndarray) -> float:
    """Exact W2 between two uniform empirical measures via optimal assignment.

    Uneven sample counts are handled by truncating the larger set to the
    first min(N_a, N_b) rows, which keeps the estimate deterministic.
    """
    a = np.atleast_2d(np.asarray(sample_a, dtype=float))
    b = np.atleast_2d(np.asarray(sample_b, dtype=float))
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError("samples must be (N, d) with matching d")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("empirical_w2 needs nonempty samples")
    count = min(a.shape[0], b.shape[0])
    if count > EMPIRICAL_W2_CAP:
        raise ValueError(f"exact assignment capped at {EMPIRICAL_W2_CAP} "
                         f"points, got {count}")
    left = np.ascontiguousarray(a[:count])
    right = np.ascontiguousarray(b[:count])
    if left.tobytes() > right.tobytes():
        # fix the orientation so the summation order, and hence the last
        # bits of the result, cannot depend on the argument order
        left, right = right, left
    cost = cdist(left, right, metric="sqeuclidean")
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(cost[rows, cols].mean()))


@dataclass(frozen=True)
class ViolationStats:
    """Per-step unsafe fraction with its Wilson 95% interval."""

    rate: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    n_paths: int

    def __post_init__(self):
        for name in ("rate", "lower", "upper"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if np.any(arr < -1e-12) or np.any(arr > 1.0 + 1e-12):
                raise ValueError(f"{name} must lie in [0, 1]")
            object.__setattr__(self, name, arr)


def wilson_interval(successes: np.ndarray, trials: int,
                    confidence: float = 0.95):
    """(lower, upper) Wilson score interval, vectorized over counts."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    z = std_normal_quantile(0.5 + confidence / 2.0)
    phat = np.asarray(successes, dtype=float) / trials
    denom = 1.0 + z * z / trials
    center = (phat + z * z / (2 * trials)) / denom
    half = z * np.sqrt(phat * (1 - phat) / trials
                       + z * z / (4 * trials * trials)) / denom
    return (np.clip(center - half, 0.0, 1.0),
            np.clip(center + half, 0.0, 1.0))


def violation_rate(ensemble: PathEnsemble, safe_set: SafeSet) -> ViolationStats:
    """Fraction of paths outside the safe set at each grid time."""
    steps = ensemble.k_prime + 1
    n_paths = ensemble.n_paths
    rate = np.empty(steps)
    counts = np.empty(steps)
    for k in range(steps):
        outside = ~membership_mask(safe_set, ensemble.paths[:, k])
        counts[k] = int(outside.sum())
        rate[k] = counts[k] / n_paths
    lower, upper = wilson_interval(counts, n_paths)
    return ViolationStats(rate=rate, lower=lower, upper=upper,
                          n_paths=n_paths)


def safety_margin_samples(points: np.ndarray, safe_set: SafeSet) -> np.ndarray:
    """Worst-face margin per point: min over regions of max over faces of
    c'x - d.  Nonpositive iff the point lies in some region."""
    points = np.asarray(points, dtype=float)
    best = np.full(points.shape[0], np.inf)
    for region in safe_set.regions:
        c_mat, d = region.face_matrix()
        best = np.minimum(best, (points @ c_mat.T - d).max(axis=1))
    return best


def empirical_cvar_se(samples: np.ndarray, tail_mass: float):
    """(cvar, standard error) of the sample CVaR at the given tail mass.

    The error follows the influence function of CVaR: the variance of the
    positive exceedance over the sample VaR, scaled by (tail_mass^2 N).
    """
    samples = np.asarray(samples, dtype=float).ravel()
    value = empirical_cvar(samples, tail_mass)
    size = samples.size
    k = int(np.ceil(tail_mass * size))
    var_level = np.partition(samples, size - k)[size - k]
    excess = np.clip(samples - var_level, 0.0, None)
    se = float(np.sqrt(np.var(excess) / (tail_mass ** 2 * size)))
    return value, se


@dataclass(frozen=True)
class SimulationReport:
    """Per-step empirical summaries of one true-loop ensemble.

    ``w2_nominal`` is the exact empirical distance to the paired nominal
    ensemble, ``w2_planned`` the closed-form Gaussian distance between the
    empirical moments and the planned ones.  ``margin_cvar`` is the sample
    CVaR (tail ``cvar_tail``) of the worst-face safety margin, the
    empirical counterpart of the planner's per-step risk constraint.
    """

    delta_t: float
    n_paths: int
    cvar_tail: float
    means: np.ndarray
    covs: np.ndarray
    w2_nominal: np.ndarray
    w2_planned: np.ndarray
    violation_rate: np.ndarray
    violation_lower: np.ndarray
    violation_upper: np.ndarray
    margin_cvar: np.ndarray
    margin_cvar_se: np.ndarray

    def __post_init__(self):
        steps = np.asarray(self.means, dtype=float).shape[0]
        for name in ("means", "covs", "w2_nominal", "w2_planned",
                     "violation_rate", "violation_lower", "violation_upper",
                     "margin_cvar", "margin_cvar_se"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape[0] != steps:
                raise ValueError(f"{name} must cover {steps} grid times")
            object.__setattr__(self, name, arr)
        for name in ("w2_nominal", "w2_planned"):
            if np.any(getattr(self, name) < 0):
                raise ValueError(f"{name} must be nonnegative")
        for name in ("violation_rate", "violation_lower", "violation_upper"):
            arr = getattr(self, name)
            if np.any(arr < -1e-12) or np.any(arr > 1 + 1e-12):
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 0.0 < self.cvar_tail < 1.0:
            raise ValueError("cvar_tail must lie in (0, 1)")

    @property
    def k_prime(self) -> int:
        return self.means.shape[0] - 1


def build_report(true_ensemble: PathEnsemble, nominal_ensemble: PathEnsemble,
                 planned_means: np.ndarray, planned_covs: np.ndarray,
                 safe_set: SafeSet, delta_s: float,
                 w2_paths: int = 2000) -> SimulationReport:
    """All per-step estimators over a simulated pair of ensembles."""
    kp = true_ensemble.k_prime
    n = true_ensemble.n
    planned_means = np.asarray(planned_means, dtype=float)
    planned_covs = np.asarray(planned_covs, dtype=float)
    if nominal_ensemble.k_prime != kp or nominal_ensemble.n != n:
        raise ValueError("ensembles do not share a grid")
    if planned_means.shape != (kp + 1, n) or planned_covs.shape != (kp + 1, n, n):
        raise ValueError("planned moments do not match the ensemble grid")
    if true_ensemble.n_paths < 2:
        raise ValueError("need at least two paths for covariances")

    cap = min(true_ensemble.n_paths, nominal_ensemble.n_paths,
              w2_paths, EMPIRICAL_W2_CAP)
    steps = kp + 1
    means = np.empty((steps, n))
    covs = np.empty((steps, n, n))
    w2_nom = np.empty(steps)
    w2_plan = np.empty(steps)
    cvar = np.empty(steps)
    cvar_se = np.empty(steps)
    for k in range(steps):
        pts = true_ensemble.paths[:, k]
        means[k] = pts.mean(axis=0)
        centered = pts - means[k]
        covs[k] = centered.T @ centered / (pts.shape[0] - 1)
        w2_nom[k] = empirical_w2(pts[:cap], nominal_ensemble.paths[:cap, k])
        w2_plan[k] = gaussian_w2(means[k], covs[k],
                                 planned_means[k], planned_covs[k])
        cvar[k], cvar_se[k] = empirical_cvar_se(
            safety_margin_samples(pts, safe_set), delta_s)
    stats = violation_rate(true_ensemble, safe_set)
    return SimulationReport(
        delta_t=true_ensemble.delta_t, n_paths=true_ensemble.n_paths,
        cvar_tail=float(delta_s), means=means, covs=covs,
        w2_nominal=w2_nom, w2_planned=w2_plan,
        violation_rate=stats.rate, violation_lower=stats.lower,
        violation_upper=stats.upper, margin_cvar=cvar,
        margin_cvar_se=cvar_se)


def verify_theorem2(report: SimulationReport, delta_s: float) -> bool:
    """Empirical per-step safety verdict.

    True iff every per-step violation rate's Wilson upper bound is at most
    delta_s and the sample CVaR of the worst-face margin is nonpositive up
    to two standard errors of the tail mean.
    """
    if abs(report.cvar_tail - delta_s) > 1e-12:
        raise ValueError(f"report was built for tail {report.cvar_tail}, "
                         f"cannot verify at {delta_s}")
    rates_ok = bool(np.all(report.violation_upper <= delta_s + 1e-12))
    cvar_ok = bool(np.all(report.margin_cvar
                          <= 2.0 * report.margin_cvar_se + 1e-12))
    return rates_ok and cvar_ok
