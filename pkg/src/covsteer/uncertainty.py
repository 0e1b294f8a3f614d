"""Registry of parametric uncertainty families with honest growth bounds.

Scenario files cannot ship arbitrary code, so the unknown drift/diffusion
terms are picked from a small set of named families.  Each family computes
its own envelope and Lipschitz constants in closed form:

    ||H_mu(x)||^2    <= delta_mu^2 (1 + ||x||^2)
    ||H_sigma(x)||_F^2 <= delta_sigma^2 sqrt(1 + ||x||^2)

and ||H(x) - H(y)|| <= L ||x - y|| (Frobenius norm for the diffusion).  The
constants are what the adaptive-control certificate consumes, so they must
never under-report; tests probe each family numerically for tightness.

Drift families (map states (..., n) to inputs (..., m)):
  zero, constant, saturated_linear (clip(G x, -s, s)), sinusoidal
  (a_i sin(f_i' x + p_i) per channel).
Diffusion families (map states to (..., m, n_w)):
  zero, constant, state_norm (C (1 + ||x||^2)^{1/4}).

The state-norm diffusion's Lipschitz constant uses the exact supremum of
d/dx (1 + ||x||^2)^{1/4}, reached at ||x|| = sqrt(2):
sqrt(2) 3^{-3/4} / 2 = 0.31024...
"""

from __future__ import annotations

import numpy as np

from .dynamics import UncertaintyBounds, UncertaintyFunctions

STATE_NORM_LIPSCHITZ = np.sqrt(2.0) * 3.0 ** (-0.75) / 2.0

DRIFT_FAMILIES = ("zero", "constant", "saturated_linear", "sinusoidal")
DIFFUSION_FAMILIES = ("zero", "constant", "state_norm")


def _as_array(params: dict, key: str, shape: tuple, family: str) -> np.ndarray:
    if key not in params:
        raise ValueError(f"{family} family needs parameter '{key}'")
    arr = np.asarray(params[key], dtype=float)
    if arr.shape != shape:
        raise ValueError(f"{family}: '{key}' must have shape {shape}, "
                         f"got {arr.shape}")
    return arr


def _reject_extra(params: dict, allowed: set, family: str):
    extra = set(params) - allowed
    if extra:
        raise ValueError(f"{family}: unknown parameters {sorted(extra)}")


def make_drift(family: str, params: dict, m: int, n: int):
    """(callable, delta_mu, l_mu) for a named drift family."""
    if family == "zero":
        _reject_extra(params, set(), family)
        return (lambda x: np.zeros(x.shape[:-1] + (m,)), 0.0, 0.0)

    if family == "constant":
        _reject_extra(params, {"value"}, family)
        h0 = _as_array(params, "value", (m,), family)

        def h_mu(x):
            return np.broadcast_to(h0, x.shape[:-1] + (m,)).copy()

        return h_mu, float(np.linalg.norm(h0)), 0.0

    if family == "saturated_linear":
        _reject_extra(params, {"gain", "limit"}, family)
        gain = _as_array(params, "gain", (m, n), family)
        limit = np.asarray(params.get("limit"), dtype=float)
        if limit.ndim == 0:
            limit = np.full(m, float(limit))
        if limit.shape != (m,) or np.any(limit <= 0.0):
            raise ValueError("saturated_linear: 'limit' must be a positive "
                             "scalar or m-vector")
        spec_norm = float(np.linalg.svd(gain, compute_uv=False)[0])

        def h_mu(x):
            return np.clip(x @ gain.T, -limit, limit)

        delta = min(spec_norm, float(np.linalg.norm(limit)))
        return h_mu, delta, spec_norm

    if family == "sinusoidal":
        _reject_extra(params, {"amplitude", "frequency", "phase"}, family)
        amp = _as_array(params, "amplitude", (m,), family)
        freq = _as_array(params, "frequency", (m, n), family)
        phase = _as_array(params, "phase", (m,), family)

        def h_mu(x):
            return amp * np.sin(x @ freq.T + phase)

        delta = float(np.linalg.norm(amp))
        lip = float(np.sqrt(np.sum((amp * np.linalg.norm(freq, axis=1)) ** 2)))
        return h_mu, delta, lip

    raise ValueError(f"unknown drift family '{family}'; "
                     f"choose from {DRIFT_FAMILIES}")


def make_diffusion(family: str, params: dict, m: int, n_w: int, n: int):
    """(callable, delta_sigma, l_sigma) for a named diffusion family."""
    if family == "zero":
        _reject_extra(params, set(), family)
        return (lambda x: np.zeros(x.shape[:-1] + (m, n_w)), 0.0, 0.0)

    if family == "constant":
        _reject_extra(params, {"coefficient"}, family)
        coef = _as_array(params, "coefficient", (m, n_w), family)

        def h_sigma(x):
            return np.broadcast_to(coef, x.shape[:-1] + (m, n_w)).copy()

        return h_sigma, float(np.linalg.norm(coef)), 0.0

    if family == "state_norm":
        _reject_extra(params, {"coefficient"}, family)
        coef = _as_array(params, "coefficient", (m, n_w), family)
        fro = float(np.linalg.norm(coef))

        def h_sigma(x):
            scale = (1.0 + np.sum(x * x, axis=-1)) ** 0.25
            return coef * scale[..., None, None]

        return h_sigma, fro, fro * STATE_NORM_LIPSCHITZ

    raise ValueError(f"unknown diffusion family '{family}'; "
                     f"choose from {DIFFUSION_FAMILIES}")


def build_uncertainty(drift: dict, diffusion: dict, m: int, n: int,
                      n_w: int) -> tuple[UncertaintyFunctions, UncertaintyBounds]:
    """Build (functions, bounds) from scenario-style family specs.

    Each spec is ``{"family": name, ...family parameters...}``.
    """
    for spec, label in ((drift, "drift"), (diffusion, "diffusion")):
        if "family" not in spec:
            raise ValueError(f"{label} spec needs a 'family' field")
    d_params = {k: v for k, v in drift.items() if k != "family"}
    s_params = {k: v for k, v in diffusion.items() if k != "family"}
    h_mu, delta_mu, l_mu = make_drift(drift["family"], d_params, m, n)
    h_sigma, delta_sigma, l_sigma = make_diffusion(diffusion["family"],
                                                   s_params, m, n_w, n)
    functions = UncertaintyFunctions(h_mu=h_mu, h_sigma=h_sigma)
    bounds = UncertaintyBounds(l_mu=l_mu, delta_mu=delta_mu,
                               l_sigma=l_sigma, delta_sigma=delta_sigma)
    return functions, bounds
