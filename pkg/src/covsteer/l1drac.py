"""Adaptive feedback augmentation and the ambiguity-radius certificate.

The augmentation has three pieces, each advancing once per simulation
substep:

  * a process predictor, an Euler copy of the nominal drift plus a
    -lambda_s * (x_hat - x) correction, whose tracking error x_tilde
    isolates the effect of the unknown drift/diffusion;
  * a piecewise-constant adaptation law that converts the sampled
    tracking error into an input-space estimate lambda_hat, held fixed
    over each sampling interval [i t_s, (i+1) t_s);
  * a first-order low-pass filter u_dot = -omega (u + lambda_hat) whose
    output u_l1 is added to the planner's baseline input.

The adaptation gain lambda_s (1 - exp(lambda_s t_s))^{-1} is negative for
positive arguments; it is exactly the value that makes the sampled map of
the tracking error deadbeat (see the loop tests), so it is kept as is.

``compute_rho`` composes the radius of the Wasserstein ambiguity ball that
the closed loop certifies around the planned Gaussian; the planner consumes
the result when tightening its risk constraints.  The zeta/beta scalars in
the parameter-condition check are exposed as configuration because their
exact forms live outside this codebase; ``default_condition_scalars``
provides runnable, non-normative defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .dynamics import SystemModel, UncertaintyBounds, UncertaintyFunctions
from .errors import NumericalError
from .risk import AmbiguityRadius


@dataclass(frozen=True)
class ControlParams:
    """Filter bandwidth, adaptation sampling period, predictor gain."""

    omega: float
    t_s: float
    lambda_s: float

    def __post_init__(self):
        for name in ("omega", "t_s", "lambda_s"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class LyapunovCert:
    """P, Q with A_mu' P + P A_mu = -Q and the spectral bounds of P."""

    p_mat: np.ndarray
    q_mat: np.ndarray
    alpha1: float
    alpha2: float

    def __post_init__(self):
        p = np.asarray(self.p_mat, dtype=float)
        q = np.asarray(self.q_mat, dtype=float)
        if p.shape != q.shape or p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ValueError("p_mat and q_mat must be square with equal shape")
        if not (0 < self.alpha1 <= self.alpha2):
            raise ValueError("need 0 < alpha1 <= alpha2")
        object.__setattr__(self, "p_mat", p)
        object.__setattr__(self, "q_mat", q)


def lyapunov_certificate(a_mu: np.ndarray, q_mat: np.ndarray | None = None) -> LyapunovCert:
    """Solve A_mu' P + P A_mu = -Q and bound P's spectrum.

    Raises NumericalError when a_mu is not Hurwitz (P fails to be positive
    definite) or the residual exceeds 1e-8 relative to ||Q||.
    """
    a_mu = np.asarray(a_mu, dtype=float)
    n = a_mu.shape[0]
    if a_mu.shape != (n, n):
        raise ValueError("a_mu must be square")
    q = np.eye(n) if q_mat is None else np.asarray(q_mat, dtype=float)
    if q.shape != (n, n) or not np.allclose(q, q.T):
        raise ValueError("q_mat must be symmetric n x n")
    if np.any(np.linalg.eigvalsh(q) <= 0):
        raise ValueError("q_mat must be positive definite")
    p = sla.solve_continuous_lyapunov(a_mu.T, -q)
    p = 0.5 * (p + p.T)
    eigs = np.linalg.eigvalsh(p)
    if eigs[0] <= 0:
        raise NumericalError("a_mu is not Hurwitz: Lyapunov solution is not positive definite")
    residual = np.max(np.abs(a_mu.T @ p + p @ a_mu + q))
    if residual > 1e-8 * max(1.0, np.max(np.abs(q))):
        raise NumericalError(f"Lyapunov residual {residual:.3e} too large")
    return LyapunovCert(p_mat=p, q_mat=q, alpha1=float(eigs[0]), alpha2=float(eigs[-1]))


@dataclass(frozen=True)
class RhoCertificateInputs:
    """Scenario-supplied scalars composing the certified ambiguity radius.

    ``init_gap`` is the L_{2p} distance between the true and nominal initial
    conditions, ``delta_a_sigma`` the known-diffusion contribution, ``rho_a``
    and ``epsilon`` positive slacks.  ``p_order`` and ``delta_star`` record
    the moment order and nominal-moment bound of the underlying guarantee;
    they do not enter the radius composition.  The zeta coefficients and
    beta bounds feed ``verify_parameter_conditions``.
    """

    rho_a: float
    epsilon: float
    delta_a_sigma: float
    init_gap: float = 0.0
    p_order: int = 1
    delta_star: float = 0.0
    zeta1_coeff: float = 1.0
    zeta2_coeff: float = 1.0
    beta1: float = 1.0
    beta2: float = 1.0

    def __post_init__(self):
        if self.p_order < 1 or int(self.p_order) != self.p_order:
            raise ValueError("p_order must be an integer >= 1")
        for name in ("init_gap", "delta_a_sigma", "delta_star"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        for name in ("rho_a", "epsilon", "zeta1_coeff", "zeta2_coeff", "beta1", "beta2"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class L1DracState:
    """Mutable per-path loop state; one logical owner advances it."""

    u_l1: np.ndarray
    lambda_hat: np.ndarray
    x_hat: np.ndarray
    theta_ad: np.ndarray

    @classmethod
    def initial(cls, model: SystemModel, x_hat0: np.ndarray) -> "L1DracState":
        m = model.m
        return cls(
            u_l1=np.zeros(m),
            lambda_hat=np.zeros(m),
            x_hat=np.asarray(x_hat0, dtype=float).copy(),
            theta_ad=build_theta_ad(model),
        )


def build_theta_ad(model: SystemModel) -> np.ndarray:
    """[I_m 0] inv([B, B_perp]) with B_perp an orthonormal basis of range(B)^perp.

    The result maps state-space residuals into input coordinates and
    satisfies theta_ad @ B = I_m.
    """
    b = model.b
    m = b.shape[1]
    if m == 0:
        raise ValueError("model has no input channel, nothing to adapt")
    b_perp = sla.null_space(b.T)
    b_bar = np.hstack([b, b_perp])
    return np.linalg.inv(b_bar)[:m, :]


def adaptation_gain(params: ControlParams) -> float:
    """lambda_s (1 - exp(lambda_s t_s))^{-1}, negative by construction."""
    return params.lambda_s / (1.0 - np.exp(params.lambda_s * params.t_s))


def adaptation_update(x_tilde_at_sample: np.ndarray, params: ControlParams,
                      theta_ad: np.ndarray) -> np.ndarray:
    """New lambda_hat from the tracking error sampled at i t_s (i >= 1).

    Batched: x_tilde of shape (..., n) gives (..., m).
    """
    return adaptation_gain(params) * (x_tilde_at_sample @ theta_ad.T)


def filter_update(u_l1: np.ndarray, lambda_hat: np.ndarray, omega: float,
                  dt: float) -> np.ndarray:
    """Exact zero-order-hold step of u_dot = -omega (u + lambda_hat)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    decay = np.exp(-omega * dt)
    return decay * u_l1 + (decay - 1.0) * lambda_hat


def filter_step(state: L1DracState, params: ControlParams, dt: float) -> np.ndarray:
    return filter_update(state.u_l1, state.lambda_hat, params.omega, dt)


def predictor_drift(x_hat: np.ndarray, x_true: np.ndarray, u_pred: np.ndarray,
                    model: SystemModel, lambda_s: float) -> np.ndarray:
    """-lambda_s (x_hat - x) + A_mu x + B u_pred, batched over leading axes."""
    x_tilde = x_hat - x_true
    return -lambda_s * x_tilde + x_true @ model.a_mu.T + u_pred @ model.b.T


def predictor_step(state: L1DracState, model: SystemModel, u_star: np.ndarray,
                   x_true: np.ndarray, params: ControlParams, dt: float) -> np.ndarray:
    """One Euler step of the predictor; returns the new x_hat."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    u_pred = u_star + state.u_l1 + state.lambda_hat
    return state.x_hat + dt * predictor_drift(state.x_hat, x_true, u_pred,
                                              model, params.lambda_s)


@dataclass(frozen=True)
class ConditionCheck:
    """Outcome of the omega / t_s parameter conditions with their slacks."""

    ok: bool
    omega_slack: float
    t_s_slack: float


def verify_parameter_conditions(params: ControlParams,
                                inputs: RhoCertificateInputs) -> ConditionCheck:
    """beta1 > zeta1/sqrt(omega) and beta2 > zeta2 sqrt(t_s), with slacks."""
    omega_slack = inputs.beta1 - inputs.zeta1_coeff / np.sqrt(params.omega)
    t_s_slack = inputs.beta2 - inputs.zeta2_coeff * np.sqrt(params.t_s)
    return ConditionCheck(ok=bool(omega_slack > 0 and t_s_slack > 0),
                          omega_slack=float(omega_slack),
                          t_s_slack=float(t_s_slack))


def default_condition_scalars(bounds: UncertaintyBounds) -> tuple[float, float]:
    """Non-normative beta defaults tied to the registered uncertainty bounds."""
    beta1 = 1.0 / (bounds.l_mu + bounds.delta_mu + 1.0)
    beta2 = 1.0 / (bounds.l_sigma + bounds.delta_sigma + 1.0)
    return beta1, beta2


def default_delta_a_sigma(a_sigma: np.ndarray, delta_t: float, k_prime: int) -> float:
    """Non-normative default for the known-diffusion radius contribution."""
    return float(np.linalg.norm(a_sigma, ord="fro") * np.sqrt(delta_t * k_prime))


def compute_rho(inputs: RhoCertificateInputs, cert: LyapunovCert,
                params: ControlParams | None = None,
                strong_error_inflation: float = 0.0) -> AmbiguityRadius:
    """Certified ambiguity radius around the planned Gaussian.

    rho_r = sqrt(alpha2/alpha1) init_gap + delta_a_sigma + epsilon covers the
    reference process; the full radius adds rho_a and delta_a_sigma again for
    the true-vs-reference leg.  Pass params to enforce the parameter
    conditions; the optional inflation term accounts for discretization
    strong error and is added last.
    """
    if strong_error_inflation < 0:
        raise ValueError("strong_error_inflation must be nonnegative")
    if params is not None:
        check = verify_parameter_conditions(params, inputs)
        if not check.ok:
            raise ValueError(
                "parameter conditions violated: "
                f"omega_slack={check.omega_slack:.3e}, t_s_slack={check.t_s_slack:.3e}")
    rho_r = (np.sqrt(cert.alpha2 / cert.alpha1) * inputs.init_gap
             + inputs.delta_a_sigma + inputs.epsilon)
    rho = rho_r + inputs.rho_a + inputs.delta_a_sigma + strong_error_inflation
    return AmbiguityRadius(rho=float(rho))


@dataclass(frozen=True)
class L1PathRecord:
    """Single-path record of the closed loop on the substep grid.

    States are stored at substep boundaries (length n_sub + 1); the inputs
    and the held estimate are stored per substep (length n_sub).  When the
    loop ran disabled, x_hat repeats its initial value and the input rows
    reduce to the baseline schedule.
    """

    t: np.ndarray
    x: np.ndarray
    x_hat: np.ndarray
    lambda_hat: np.ndarray
    u_l1: np.ndarray
    u: np.ndarray


def run_l1drac_loop(model: SystemModel, uncertainty: UncertaintyFunctions,
                    u_star_schedule, params: ControlParams, x0: np.ndarray,
                    t_final: float, dt: float, seed,
                    enable_l1: bool = True) -> L1PathRecord:
    """Simulate one path of the true process under U = U* + u_l1.

    ``u_star_schedule`` is a callable t -> m-vector.  The simulation step dt
    must divide both the sampling period t_s and t_final.  Deterministic
    given the seed.  Substep order: adapt (at sample instants i t_s, i >= 1),
    record, apply input, Euler-Maruyama step of the true process, predictor
    Euler step against the pre-step state, filter zero-order-hold update.
    """
    n_sub = int(round(t_final / dt))
    if n_sub < 1 or abs(n_sub * dt - t_final) > 1e-9 * max(abs(t_final), 1.0):
        raise ValueError("dt must divide t_final")
    per_sample = int(round(params.t_s / dt))
    if per_sample < 1 or abs(per_sample * dt - params.t_s) > 1e-9 * params.t_s:
        raise ValueError("simulation step must divide the sampling period t_s")

    n, m, n_w = model.n, model.m, model.n_w
    rng = np.random.default_rng(seed)
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (n,):
        raise ValueError(f"x0 must have shape ({n},)")
    state = L1DracState.initial(model, x_hat0=x)

    rec_t = np.empty(n_sub + 1)
    rec_x = np.empty((n_sub + 1, n))
    rec_xh = np.empty((n_sub + 1, n))
    rec_lam = np.empty((n_sub, m))
    rec_ul1 = np.empty((n_sub, m))
    rec_u = np.empty((n_sub, m))

    sqrt_dt = np.sqrt(dt)
    for i in range(n_sub):
        t = i * dt
        if enable_l1 and i > 0 and i % per_sample == 0:
            state.lambda_hat = adaptation_update(state.x_hat - x, params,
                                                 state.theta_ad)
        u_star = np.asarray(u_star_schedule(t), dtype=float)
        u_apply = u_star + state.u_l1 if enable_l1 else u_star

        rec_t[i] = t
        rec_x[i] = x
        rec_xh[i] = state.x_hat
        rec_lam[i] = state.lambda_hat
        rec_ul1[i] = state.u_l1
        rec_u[i] = u_apply

        dw = rng.standard_normal(n_w) * sqrt_dt
        drift = x @ model.a_mu.T + (u_apply + uncertainty.h_mu(x)) @ model.b.T
        diffusion = (model.a_sigma + model.b @ uncertainty.h_sigma(x)) @ dw
        x_new = x + dt * drift + diffusion
        if enable_l1:
            state.x_hat = predictor_step(state, model, u_star, x, params, dt)
            state.u_l1 = filter_update(state.u_l1, state.lambda_hat,
                                       params.omega, dt)
        x = x_new

    rec_t[n_sub] = n_sub * dt
    rec_x[n_sub] = x
    rec_xh[n_sub] = state.x_hat
    return L1PathRecord(t=rec_t, x=rec_x, x_hat=rec_xh, lambda_hat=rec_lam,
                        u_l1=rec_ul1, u=rec_u)
