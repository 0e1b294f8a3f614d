"""Analytic risk formulas: Gaussian CVaR of affine functions, its
distributionally robust tightening over a 2-Wasserstein ball, the union-bound
decomposition over a region's faces, and the sample CVaR estimator used for
validation.

A face constraint c'z <= d is treated throughout as the loss c'Z - d; the
face is certified when the (DR-)CVaR of that loss at the face's tail mass is
<= 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .safety import ConvexRegion, allocate_risk

_SQRT_2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class RiskParams:
    """Step risk budget delta_s; per-face tail mass is delta_s/n_l."""

    delta_s: float

    def __post_init__(self):
        if not 0.0 < self.delta_s < 1.0:
            raise ValueError(f"delta_s must lie in (0,1), got {self.delta_s}")

    def face_risk(self, n_l: int) -> float:
        return allocate_risk(self.delta_s, n_l)

    def tail_threshold(self, n_l: int) -> float:
        """alpha = 1 - delta_s/n_l, the VaR level of each face's CVaR."""
        return 1.0 - self.face_risk(n_l)


@dataclass(frozen=True)
class AmbiguityRadius:
    rho: float

    def __post_init__(self):
        if self.rho < 0:
            raise ValueError(f"rho must be nonnegative, got {self.rho}")


def std_normal_pdf(x):
    return np.exp(-0.5 * np.square(x)) / _SQRT_2PI


def std_normal_quantile(p):
    """Inverse standard normal CDF, accurate well past the 1e-9 contract."""
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise ValueError("quantile argument must lie strictly inside (0,1)")
    out = ndtri(p)
    return float(out) if out.ndim == 0 else out


def cvar_coefficient(face_risk: float) -> float:
    """phi(Phi^{-1}(1 - a)) / a, the Gaussian CVaR multiplier of the std dev."""
    if not 0.0 < face_risk < 1.0:
        raise ValueError(f"face_risk must lie in (0,1), got {face_risk}")
    return std_normal_pdf(std_normal_quantile(1.0 - face_risk)) / face_risk


def _affine_std(c: np.ndarray, sigma: np.ndarray) -> float:
    c = np.asarray(c, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    var = float(c @ sigma @ c)
    if var < -1e-12:
        raise ValueError(f"sigma is not PSD along the face normal (c'Sc = {var})")
    return np.sqrt(max(var, 0.0))


def gaussian_cvar_halfspace(c, d, mu, sigma, face_risk: float) -> float:
    """CVaR at tail mass ``face_risk`` of c'Z - d for Z ~ N(mu, sigma).

    Nonpositive output certifies P(c'Z > d) <= face_risk with CVaR slack.
    """
    c = np.asarray(c, dtype=float)
    mu = np.asarray(mu, dtype=float)
    return float(c @ mu) - float(d) + cvar_coefficient(face_risk) * _affine_std(c, sigma)


def dr_cvar_halfspace(c, d, mu, sigma, face_risk: float,
                      rho: AmbiguityRadius | float) -> float:
    """Worst-case Gaussian-nominal CVaR over the 2-Wasserstein ball of radius rho:
    the Gaussian value plus ||c|| rho / sqrt(face_risk)."""
    r = rho.rho if isinstance(rho, AmbiguityRadius) else float(rho)
    if r < 0:
        raise ValueError(f"rho must be nonnegative, got {r}")
    base = gaussian_cvar_halfspace(c, d, mu, sigma, face_risk)
    return base + float(np.linalg.norm(np.asarray(c, dtype=float))) * r / np.sqrt(face_risk)


def face_margins(region: ConvexRegion, mu, sigma, delta_s: float,
                 rho: AmbiguityRadius | float,
                 face_risks=None) -> np.ndarray:
    """DR-CVaR value of every face of ``region`` at the given moments.

    ``face_risks`` optionally overrides the uniform delta_s/n_l split; it must
    be positive and sum to delta_s.
    """
    if face_risks is None:
        face_risks = np.full(region.n_l, allocate_risk(delta_s, region.n_l))
    else:
        face_risks = np.asarray(face_risks, dtype=float)
        if face_risks.shape != (region.n_l,):
            raise ValueError("face_risks length must match the region's face count")
        if np.any(face_risks <= 0.0):
            raise ValueError("face_risks must be strictly positive")
        if abs(face_risks.sum() - delta_s) > 1e-12:
            raise ValueError("face_risks must sum to delta_s")
    return np.array([
        dr_cvar_halfspace(h.c, h.d, mu, sigma, fr, rho)
        for h, fr in zip(region.half_spaces, face_risks)
    ])


def union_bound_feasible(region: ConvexRegion, mu, sigma, delta_s: float,
                         rho: AmbiguityRadius | float, face_risks=None):
    """(feasible, margins): feasible iff every face's DR-CVaR is <= 0."""
    margins = face_margins(region, mu, sigma, delta_s, rho, face_risks)
    return bool(np.all(margins <= 0.0)), margins


def empirical_cvar(samples, tail_mass: float) -> float:
    """Rockafellar-Uryasev sample CVaR: mean of the worst ceil(tail_mass N)
    samples ("worst" = largest, loss convention)."""
    samples = np.asarray(samples, dtype=float).ravel()
    if samples.size == 0:
        raise ValueError("empirical_cvar needs at least one sample")
    if not 0.0 < tail_mass < 1.0:
        raise ValueError(f"tail_mass must lie in (0,1), got {tail_mass}")
    k = int(np.ceil(tail_mass * samples.size))
    tail = np.partition(samples, samples.size - k)[samples.size - k:]
    return float(tail.mean())
