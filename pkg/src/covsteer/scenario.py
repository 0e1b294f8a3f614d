"""Scenario files: a strict, versioned JSON schema and its loader.

A scenario is the single input artifact of the command-line flow.  It
declares the known system, the uncertainty families acting on it, the safe
set, boundary moments, horizon, risk budget, adaptive-control parameters,
ambiguity-radius certificate inputs, cost weights, and Monte Carlo
settings.  Loading is strict both ways: missing required fields and
unknown fields are rejected with a dotted path to the offending key, so a
typo cannot silently fall back to a default.

Every artifact downstream embeds ``scenario_hash``, the SHA-256 of the
canonical serialization of the parsed document (sorted keys, minimal
separators).  Formatting and key order in the file do not change the
hash; any value does.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .dynamics import (DiscreteModel, SystemModel, UncertaintyBounds,
                       UncertaintyFunctions, build_lifted, discretize)
from .errors import ScenarioError
from .l1drac import (ControlParams, RhoCertificateInputs, compute_rho,
                     lyapunov_certificate)
from .planner import BoundaryConditions, PlannerProblem
from .risk import AmbiguityRadius, RiskParams
from .safety import ConvexRegion, HalfSpace, SafeSet, region_is_empty
from .uncertainty import build_uncertainty

SCHEMA_VERSION = 1


def canonical_json(doc) -> str:
    """Deterministic serialization: sorted keys, no whitespace, no NaN."""
    return json.dumps(doc, sort_keys=True, separators=(",", ":"),
                      allow_nan=False)


def scenario_hash(doc: dict) -> str:
    return hashlib.sha256(canonical_json(doc).encode()).hexdigest()


@dataclass(frozen=True)
class Scenario:
    """Fully validated scenario with every module object already built."""

    name: str
    model: SystemModel
    delta_t: float
    k_prime: int
    boundary: BoundaryConditions
    boundary_true: BoundaryConditions
    safe_set: SafeSet
    risk: RiskParams
    uncertainty: UncertaintyFunctions
    bounds: UncertaintyBounds
    l1_params: ControlParams
    substeps_per_step: int
    rho_inputs: RhoCertificateInputs
    strong_error_inflation: float
    rho: AmbiguityRadius
    q_step: np.ndarray
    r_step: np.ndarray
    big_m: float | None
    gap_tol: float
    n_paths: int
    master_seed: int
    w2_paths: int
    projection: tuple | None
    hash: str

    @property
    def n(self) -> int:
        return self.model.n

    @property
    def horizon(self) -> float:
        return self.delta_t * self.k_prime


# ------------------------------------------------------------ strict walker

def _expect_mapping(value, path: str) -> dict:
    if not isinstance(value, dict):
        raise ScenarioError("expected an object", path)
    return value


def _fields(doc: dict, path: str, required: tuple, optional: tuple = ()):
    unknown = set(doc) - set(required) - set(optional)
    if unknown:
        raise ScenarioError(f"unknown fields {sorted(unknown)}", path)
    missing = [key for key in required if key not in doc]
    if missing:
        raise ScenarioError(f"missing required fields {missing}", path)


def _number(doc: dict, key: str, path: str, default=None) -> float:
    if key not in doc:
        return default
    value = doc[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError("expected a number", f"{path}.{key}")
    return float(value)


def _integer(doc: dict, key: str, path: str, default=None) -> int:
    if key not in doc:
        return default
    value = doc[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ScenarioError("expected an integer", f"{path}.{key}")
    return int(value)


def _matrix(doc: dict, key: str, path: str):
    if key not in doc:
        raise ScenarioError(f"missing required fields ['{key}']", path)
    try:
        arr = np.asarray(doc[key], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"not numeric: {exc}", f"{path}.{key}") from exc
    if not np.all(np.isfinite(arr)):
        raise ScenarioError("contains non-finite entries", f"{path}.{key}")
    return arr


def _wrap(path: str, build, *args, **kwargs):
    """Turn a module-level ValueError into a located ScenarioError."""
    try:
        return build(*args, **kwargs)
    except ValueError as exc:
        raise ScenarioError(str(exc), path) from exc


# ----------------------------------------------------------------- sections

def _parse_system(doc: dict) -> SystemModel:
    sec = _expect_mapping(doc["system"], "system")
    _fields(sec, "system", ("a_mu", "b", "a_sigma"))
    return _wrap("system", SystemModel,
                 a_mu=_matrix(sec, "a_mu", "system"),
                 a_sigma=_matrix(sec, "a_sigma", "system"),
                 b=_matrix(sec, "b", "system"))


def _parse_horizon(doc: dict) -> tuple:
    sec = _expect_mapping(doc["horizon"], "horizon")
    _fields(sec, "horizon", ("t_final", "delta_t"))
    t_final = _number(sec, "t_final", "horizon")
    delta_t = _number(sec, "delta_t", "horizon")
    if delta_t <= 0 or t_final <= 0:
        raise ScenarioError("t_final and delta_t must be positive", "horizon")
    steps = t_final / delta_t
    k_prime = int(round(steps))
    if k_prime < 1 or abs(steps - k_prime) > 1e-9:
        raise ScenarioError("delta_t must divide t_final into whole steps",
                            "horizon")
    return delta_t, k_prime


def _parse_moments(sec: dict, path: str, n: int,
                   terminal: BoundaryConditions | None = None):
    _fields(sec, path, ("mu0", "sigma0") if terminal is not None
            else ("mu0", "sigma0", "mu_t", "sigma_t"))
    mu0 = _matrix(sec, "mu0", path)
    sigma0 = _matrix(sec, "sigma0", path)
    if terminal is not None:
        mu_t, sigma_t = terminal.mu_t, terminal.sigma_t
    else:
        mu_t = _matrix(sec, "mu_t", path)
        sigma_t = _matrix(sec, "sigma_t", path)
    bc = _wrap(path, BoundaryConditions, mu0=mu0, mu_t=mu_t,
               sigma0=sigma0, sigma_t=sigma_t)
    if bc.n != n:
        raise ScenarioError(f"moments live in R^{bc.n}, system in R^{n}",
                            path)
    return bc


def _parse_safe_set(doc: dict, n: int) -> SafeSet:
    sec = _expect_mapping(doc["safe_set"], "safe_set")
    _fields(sec, "safe_set", ("regions",))
    if not isinstance(sec["regions"], list) or not sec["regions"]:
        raise ScenarioError("expected a nonempty list", "safe_set.regions")
    regions = []
    for r_idx, region_doc in enumerate(sec["regions"]):
        r_path = f"safe_set.regions[{r_idx}]"
        region_doc = _expect_mapping(region_doc, r_path)
        _fields(region_doc, r_path, ("name", "faces"))
        if not isinstance(region_doc["faces"], list) or not region_doc["faces"]:
            raise ScenarioError("expected a nonempty list", f"{r_path}.faces")
        faces = []
        for f_idx, face_doc in enumerate(region_doc["faces"]):
            f_path = f"{r_path}.faces[{f_idx}]"
            face_doc = _expect_mapping(face_doc, f_path)
            _fields(face_doc, f_path, ("c", "d"), ("sense",))
            c = _matrix(face_doc, "c", f_path)
            d = _number(face_doc, "d", f_path)
            sense = face_doc.get("sense", "le")
            if sense not in ("le", "ge"):
                raise ScenarioError("sense must be 'le' or 'ge'",
                                    f"{f_path}.sense")
            if sense == "ge":
                c, d = -c, -d
            faces.append(_wrap(f_path, HalfSpace, c=c, d=d))
        region = _wrap(r_path, ConvexRegion, half_spaces=tuple(faces),
                       name=str(region_doc["name"]))
        if region.n != n:
            raise ScenarioError(f"faces live in R^{region.n}, "
                                f"system in R^{n}", r_path)
        if region_is_empty(region):
            raise ScenarioError(f"region '{region.name}' is empty", r_path)
        regions.append(region)
    return _wrap("safe_set", SafeSet, regions=tuple(regions))


def _parse_uncertainty(doc: dict, model: SystemModel):
    sec = _expect_mapping(doc["uncertainty"], "uncertainty")
    _fields(sec, "uncertainty", ("drift", "diffusion"))
    drift = _expect_mapping(sec["drift"], "uncertainty.drift")
    diffusion = _expect_mapping(sec["diffusion"], "uncertainty.diffusion")
    return _wrap("uncertainty", build_uncertainty, drift, diffusion,
                 model.m, model.n, model.n_w)


def _parse_l1(doc: dict) -> tuple:
    sec = _expect_mapping(doc["l1"], "l1")
    _fields(sec, "l1", ("omega", "t_s", "lambda_s", "substeps_per_step"))
    params = _wrap("l1", ControlParams,
                   omega=_number(sec, "omega", "l1"),
                   t_s=_number(sec, "t_s", "l1"),
                   lambda_s=_number(sec, "lambda_s", "l1"))
    substeps = _integer(sec, "substeps_per_step", "l1")
    if substeps < 1:
        raise ScenarioError("must be >= 1", "l1.substeps_per_step")
    return params, substeps


_CERT_NUMBERS = ("rho_a", "epsilon", "delta_a_sigma", "init_gap",
                 "delta_star", "zeta1_coeff", "zeta2_coeff", "beta1",
                 "beta2")


def _parse_certificate(doc: dict) -> tuple:
    sec = _expect_mapping(doc["rho_certificate"], "rho_certificate")
    _fields(sec, "rho_certificate",
            ("rho_a", "epsilon", "delta_a_sigma"),
            _CERT_NUMBERS[3:] + ("p_order", "strong_error_inflation"))
    kwargs = {}
    for key in _CERT_NUMBERS:
        value = _number(sec, key, "rho_certificate")
        if value is not None:
            kwargs[key] = value
    p_order = _integer(sec, "p_order", "rho_certificate")
    if p_order is not None:
        kwargs["p_order"] = p_order
    inflation = _number(sec, "strong_error_inflation", "rho_certificate",
                        default=0.0)
    if inflation < 0:
        raise ScenarioError("must be nonnegative",
                            "rho_certificate.strong_error_inflation")
    inputs = _wrap("rho_certificate", RhoCertificateInputs, **kwargs)
    return inputs, inflation


def _parse_cost(doc: dict, n: int, m: int) -> tuple:
    sec = _expect_mapping(doc["cost"], "cost")
    _fields(sec, "cost", ("q_step", "r_step"))
    q_step = _matrix(sec, "q_step", "cost")
    r_step = _matrix(sec, "r_step", "cost")
    if q_step.shape != (n, n):
        raise ScenarioError(f"must be {n} x {n}", "cost.q_step")
    if r_step.shape != (m, m):
        raise ScenarioError(f"must be {m} x {m}", "cost.r_step")
    for name, mat in (("q_step", q_step), ("r_step", r_step)):
        if not np.allclose(mat, mat.T, atol=1e-12):
            raise ScenarioError("must be symmetric", f"cost.{name}")
        if np.linalg.eigvalsh(0.5 * (mat + mat.T))[0] <= 0:
            raise ScenarioError("must be positive definite", f"cost.{name}")
    return q_step, r_step


def _parse_monte_carlo(doc: dict) -> tuple:
    sec = _expect_mapping(doc["monte_carlo"], "monte_carlo")
    _fields(sec, "monte_carlo", ("n_paths", "seed"), ("w2_paths",))
    n_paths = _integer(sec, "n_paths", "monte_carlo")
    seed = _integer(sec, "seed", "monte_carlo")
    w2_paths = _integer(sec, "w2_paths", "monte_carlo", default=2000)
    if n_paths < 1:
        raise ScenarioError("must be >= 1", "monte_carlo.n_paths")
    if seed < 0:
        raise ScenarioError("must be nonnegative", "monte_carlo.seed")
    if w2_paths < 1:
        raise ScenarioError("must be >= 1", "monte_carlo.w2_paths")
    return n_paths, seed, w2_paths


def _parse_planner(doc: dict) -> tuple:
    if "planner" not in doc:
        return None, 1e-6
    sec = _expect_mapping(doc["planner"], "planner")
    _fields(sec, "planner", (), ("big_m", "gap_tol"))
    big_m = None
    if sec.get("big_m") is not None:
        big_m = _number(sec, "big_m", "planner")
        if big_m <= 0:
            raise ScenarioError("must be positive when given",
                                "planner.big_m")
    gap_tol = _number(sec, "gap_tol", "planner", default=1e-6)
    if gap_tol <= 0:
        raise ScenarioError("must be positive", "planner.gap_tol")
    return big_m, gap_tol


def _parse_projection(doc: dict, n: int):
    if "render" not in doc:
        return None
    sec = _expect_mapping(doc["render"], "render")
    _fields(sec, "render", ("projection",))
    proj = sec["projection"]
    if (not isinstance(proj, list) or len(proj) != 2
            or not all(isinstance(i, int) and not isinstance(i, bool)
                       for i in proj)):
        raise ScenarioError("expected two state indices",
                            "render.projection")
    i, j = proj
    if not (0 <= i < n and 0 <= j < n) or i == j:
        raise ScenarioError(f"indices must be distinct and within 0..{n - 1}",
                            "render.projection")
    return (i, j)


# ------------------------------------------------------------------- loader

_TOP_REQUIRED = ("schema_version", "name", "system", "horizon", "boundary",
                 "safe_set", "risk", "uncertainty", "l1", "rho_certificate",
                 "cost", "monte_carlo")
_TOP_OPTIONAL = ("boundary_true", "planner", "render")


def parse_scenario(doc: dict, origin: str = "scenario") -> Scenario:
    """Validate a parsed JSON document and build every module object."""
    doc = _expect_mapping(doc, origin)
    _fields(doc, origin, _TOP_REQUIRED, _TOP_OPTIONAL)
    version = doc["schema_version"]
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported schema_version {version!r}, "
                            f"this build reads {SCHEMA_VERSION}",
                            "schema_version")
    if not isinstance(doc["name"], str) or not doc["name"]:
        raise ScenarioError("expected a nonempty string", "name")

    model = _parse_system(doc)
    delta_t, k_prime = _parse_horizon(doc)
    boundary = _parse_moments(_expect_mapping(doc["boundary"], "boundary"),
                              "boundary", model.n)
    if "boundary_true" in doc:
        boundary_true = _parse_moments(
            _expect_mapping(doc["boundary_true"], "boundary_true"),
            "boundary_true", model.n, terminal=boundary)
    else:
        boundary_true = boundary
    safe_set = _parse_safe_set(doc, model.n)

    risk_sec = _expect_mapping(doc["risk"], "risk")
    _fields(risk_sec, "risk", ("delta_s",))
    risk = _wrap("risk", RiskParams,
                 delta_s=_number(risk_sec, "delta_s", "risk"))

    functions, bounds = _parse_uncertainty(doc, model)
    l1_params, substeps = _parse_l1(doc)
    rho_inputs, inflation = _parse_certificate(doc)
    q_step, r_step = _parse_cost(doc, model.n, model.m)
    n_paths, seed, w2_paths = _parse_monte_carlo(doc)
    big_m, gap_tol = _parse_planner(doc)
    projection = _parse_projection(doc, model.n)

    # the radius certificate needs the nominal drift to be Hurwitz; surface
    # that as a scenario problem, not a numerical one
    try:
        cert = lyapunov_certificate(model.a_mu)
    except Exception as exc:
        raise ScenarioError(f"a_mu does not admit a Lyapunov certificate: "
                            f"{exc}", "system.a_mu") from exc
    rho = _wrap("rho_certificate", compute_rho, rho_inputs, cert,
                params=l1_params, strong_error_inflation=inflation)

    sub_dt = delta_t / substeps
    per_sample = round(l1_params.t_s / sub_dt)
    if per_sample < 1 or abs(per_sample * sub_dt - l1_params.t_s) > 1e-9 * l1_params.t_s:
        raise ScenarioError("delta_t / substeps_per_step must divide t_s",
                            "l1.substeps_per_step")

    return Scenario(
        name=doc["name"], model=model, delta_t=delta_t, k_prime=k_prime,
        boundary=boundary, boundary_true=boundary_true, safe_set=safe_set,
        risk=risk, uncertainty=functions, bounds=bounds,
        l1_params=l1_params, substeps_per_step=substeps,
        rho_inputs=rho_inputs, strong_error_inflation=inflation, rho=rho,
        q_step=q_step, r_step=r_step, big_m=big_m, gap_tol=gap_tol,
        n_paths=n_paths, master_seed=seed, w2_paths=w2_paths,
        projection=projection, hash=scenario_hash(doc))


def load_scenario(path: str) -> Scenario:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            doc = json.load(handle)
    except FileNotFoundError as exc:
        raise ScenarioError(f"cannot read scenario file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON at line {exc.lineno}, "
                            f"column {exc.colno}: {exc.msg}") from exc
    return parse_scenario(doc, origin=str(path))


# ------------------------------------------------------------------ builders

def discrete_model(scenario: Scenario) -> DiscreteModel:
    return discretize(scenario.model, scenario.delta_t, scenario.k_prime)


def build_problem(scenario: Scenario) -> PlannerProblem:
    """The planner program this scenario describes."""
    lifted = build_lifted(discrete_model(scenario))
    kp = scenario.k_prime
    return PlannerProblem(
        lifted=lifted,
        q_weight=np.kron(np.eye(kp), scenario.q_step),
        r_weight=np.kron(np.eye(kp), scenario.r_step),
        boundary=scenario.boundary,
        safe_set=scenario.safe_set,
        risk=scenario.risk,
        rho=scenario.rho,
        big_m=scenario.big_m)
