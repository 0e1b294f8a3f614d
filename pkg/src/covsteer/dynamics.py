"""Continuous-time system models, Euler-Maruyama discretization, and the
stacked-horizon (lifted) form consumed by the planner.

Conventions
-----------
The true process is

    dX = [A_mu X + B (U + H_mu(X))] dt + [A_sigma + B H_sigma(X)] dW,

with X in R^n, U in R^m, W an n_w-dimensional Brownian motion.  The nominal
plant drops H_mu and H_sigma.  One Euler-Maruyama step of the nominal plant is

    X_{k+1} = (I + dt A_mu) X_k + dt B U_k + A_sigma dW_k,
    dW_k ~ N(0, dt I_{n_w}).

Stacking X_1..X_k' gives

    X_stack = cal_a_mu x_0 + b_hat U_stack + cal_a_sigma W_stack,

where U_stack = [U_0; ...; U_{k'-1}] and W_stack = [dW_0; ...; dW_{k'-1}].
Block row i of ``b_hat``/``cal_a_sigma`` corresponds to X_{i+1} and depends on
inputs/increments 0..i only, so block (i, j) vanishes for j > i when both
indices count from zero (equivalently: column index >= state index when the
state rows are labelled 1..k', which is the causality statement used by the
tests).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


def _as_matrix(a, rows: int, cols: int, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.shape != (rows, cols):
        raise ValueError(f"{name} must have shape {(rows, cols)}, got {a.shape}")
    return a


@dataclass(frozen=True)
class SystemModel:
    """Known part of the plant: drift A_mu, diffusion A_sigma, input map B."""

    a_mu: np.ndarray
    a_sigma: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a_mu = np.asarray(self.a_mu, dtype=float)
        n = a_mu.shape[0]
        object.__setattr__(self, "a_mu", _as_matrix(a_mu, n, n, "a_mu"))
        a_sigma = np.asarray(self.a_sigma, dtype=float)
        if a_sigma.ndim != 2 or a_sigma.shape[0] != n:
            raise ValueError(f"a_sigma must have {n} rows, got shape {a_sigma.shape}")
        object.__setattr__(self, "a_sigma", a_sigma)
        b = np.asarray(self.b, dtype=float)
        if b.ndim != 2 or b.shape[0] != n:
            raise ValueError(f"b must have {n} rows, got shape {b.shape}")
        if b.shape[1] > 0 and np.linalg.matrix_rank(b) < b.shape[1]:
            raise ValueError("b must have full column rank")
        object.__setattr__(self, "b", b)

    @property
    def n(self) -> int:
        return self.a_mu.shape[0]

    @property
    def m(self) -> int:
        return self.b.shape[1]

    @property
    def n_w(self) -> int:
        return self.a_sigma.shape[1]


@dataclass(frozen=True)
class UncertaintyBounds:
    """Growth/Lipschitz constants of the unknown drift and diffusion terms.

    ``delta_mu`` bounds ||H_mu(x)||^2   <= delta_mu^2 (1 + ||x||^2),
    ``delta_sigma`` bounds ||H_sigma(x)||_F^2 <= delta_sigma^2 sqrt(1 + ||x||^2),
    ``l_mu``/``l_sigma`` are global Lipschitz constants.
    """

    l_mu: float
    delta_mu: float
    l_sigma: float
    delta_sigma: float

    def __post_init__(self):
        for name in ("l_mu", "delta_mu", "l_sigma", "delta_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass(frozen=True)
class UncertaintyFunctions:
    """Unknown drift/diffusion maps, evaluated only by the simulator.

    Both callables are batched: ``h_mu`` maps states of shape (..., n) to
    (..., m) and ``h_sigma`` maps (..., n) to (..., m, n_w).  The planner
    never sees these, only the UncertaintyBounds they satisfy.
    """

    h_mu: Callable[[np.ndarray], np.ndarray]
    h_sigma: Callable[[np.ndarray], np.ndarray]

    @staticmethod
    def zero(m: int, n_w: int) -> "UncertaintyFunctions":
        def h_mu(x: np.ndarray) -> np.ndarray:
            return np.zeros(x.shape[:-1] + (m,))

        def h_sigma(x: np.ndarray) -> np.ndarray:
            return np.zeros(x.shape[:-1] + (m, n_w))

        return UncertaintyFunctions(h_mu=h_mu, h_sigma=h_sigma)


@dataclass(frozen=True)
class DiscreteModel:
    """One Euler-Maruyama step of the nominal plant on a uniform grid."""

    ad: np.ndarray        # I + dt A_mu
    bd: np.ndarray        # dt B
    a_sigma: np.ndarray   # applied to N(0, dt I) increments
    delta_t: float
    k_prime: int

    @property
    def n(self) -> int:
        return self.ad.shape[0]

    @property
    def m(self) -> int:
        return self.bd.shape[1]

    @property
    def n_w(self) -> int:
        return self.a_sigma.shape[1]

    @property
    def horizon(self) -> float:
        return self.delta_t * self.k_prime


@dataclass(frozen=True)
class LiftedModel:
    """Stacked-horizon form of the discrete nominal plant (states 1..k')."""

    cal_a_mu: np.ndarray     # (n k') x n
    b_hat: np.ndarray        # (n k') x (m k'), block lower triangular
    cal_a_sigma: np.ndarray  # (n k') x (n_w k'), block lower triangular
    n: int
    m: int
    n_w: int
    k_prime: int
    delta_t: float


def discretize(model: SystemModel, delta_t: float, k_prime: int) -> DiscreteModel:
    """Euler-Maruyama one-step maps for time step ``delta_t`` over ``k_prime`` steps."""
    if delta_t <= 0:
        raise ValueError(f"delta_t must be positive, got {delta_t}")
    if k_prime < 1:
        raise ValueError(f"k_prime must be >= 1, got {k_prime}")
    n = model.n
    ad = np.eye(n) + delta_t * model.a_mu
    bd = delta_t * model.b
    return DiscreteModel(ad=ad, bd=bd, a_sigma=model.a_sigma.copy(),
                         delta_t=float(delta_t), k_prime=int(k_prime))


def em_step(dm: DiscreteModel, x: np.ndarray, u: np.ndarray, dw: np.ndarray) -> np.ndarray:
    """One nominal Euler-Maruyama step; ``dw`` carries its own sqrt(dt) scale.

    Works on single states (1-d arrays) and on batches with leading path axes,
    since all three maps act on the trailing axis.
    """
    return x @ dm.ad.T + u @ dm.bd.T + dw @ dm.a_sigma.T


def build_lifted(dm: DiscreteModel) -> LiftedModel:
    """Stack the recursion X_{k+1} = Ad X_k + Bd U_k + A_sigma dW_k for k' steps.

    Returns maps such that  X_stack = cal_a_mu x0 + b_hat U_stack + cal_a_sigma W_stack
    reproduces the loop recursion exactly, with X_stack = [X_1; ...; X_k'].
    """
    n, m, n_w, kp = dm.n, dm.m, dm.n_w, dm.k_prime
    cal_a_mu = np.zeros((n * kp, n))
    b_hat = np.zeros((n * kp, m * kp))
    cal_a_sigma = np.zeros((n * kp, n_w * kp))

    # Powers of Ad: pw[i] = Ad^i, needed up to Ad^kp.
    pw = [np.eye(n)]
    for _ in range(kp):
        pw.append(dm.ad @ pw[-1])

    for i in range(kp):           # block row i holds X_{i+1}
        cal_a_mu[i * n:(i + 1) * n, :] = pw[i + 1]
        for j in range(i + 1):    # inputs/increments 0..i reach X_{i+1}
            fac = pw[i - j]
            b_hat[i * n:(i + 1) * n, j * m:(j + 1) * m] = fac @ dm.bd
            cal_a_sigma[i * n:(i + 1) * n, j * n_w:(j + 1) * n_w] = fac @ dm.a_sigma
    return LiftedModel(cal_a_mu=cal_a_mu, b_hat=b_hat, cal_a_sigma=cal_a_sigma,
                       n=n, m=m, n_w=n_w, k_prime=kp, delta_t=dm.delta_t)


def rollout(dm: DiscreteModel, x0: np.ndarray, u_stack: np.ndarray,
            w_stack: np.ndarray) -> np.ndarray:
    """Reference loop recursion over the horizon; returns the (k', n) state stack.

    Kept deliberately naive: it is the oracle the lifted form is tested against
    and the fallback the simulator uses for single paths.
    """
    n, m, n_w, kp = dm.n, dm.m, dm.n_w, dm.k_prime
    u = np.asarray(u_stack, dtype=float).reshape(kp, m)
    w = np.asarray(w_stack, dtype=float).reshape(kp, n_w)
    out = np.zeros((kp, n))
    x = np.asarray(x0, dtype=float)
    for k in range(kp):
        x = em_step(dm, x, u[k], w[k])
        out[k] = x
    return out
