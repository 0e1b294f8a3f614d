"""Artifact files: solution and report JSON, CSV summaries, figures.

Every JSON artifact goes through one canonical writer (sorted keys, minimal
separators, trailing newline), so reruns with the same seeds produce
byte-identical files regardless of thread count.  Wall-clock timings are the
one quantity that cannot be deterministic; they live in a sidecar of their
own and never inside a report.

Readers validate provenance and shapes strictly and raise ScenarioError on
anything malformed, which keeps the exit-code mapping in the command line
front end a plain lookup.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ScenarioError
from .planner import PlannerSolution, Schedule
from .safety import ConvexRegion, HalfSpace, SafeSet
from .scenario import Scenario, canonical_json
from .simulate import PathEnsemble, SimulationReport

ARTIFACT_VERSION = 1
SOLUTION_KIND = "planner-solution"
REPORT_KIND = "simulation-report"
RUNREPORT_KIND = "run-report"
ENSEMBLE_KIND = "path-ensemble"

SOLUTION_FILE = "solution.json"
SCHEDULE_FILE = "schedule.csv"
REPORT_FILE = "report.json"
STEPS_FILE = "steps.csv"
RUNREPORT_FILE = "runreport.json"
TIMINGS_FILE = "timings.json"
FAN_FILE = "fan.svg"
W2_CHART_FILE = "w2_chart.svg"
ENSEMBLE_TRUE = "ensemble_true"
ENSEMBLE_NOMINAL = "ensemble_nominal"

# Terminal-moment verdicts: the mean must land within this many standard
# errors of the target, the empirical covariance may exceed the target by at
# most this much in the worst eigendirection.
MEAN_SE_MULTIPLE = 3.0
TERMINAL_COV_SLACK = 0.05

_TOL = 1e-12


# ------------------------------------------------------------------ plumbing

def _plain(value):
    """Recursively strip numpy types so json.dumps accepts the document."""
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, dict):
        return {key: _plain(val) for key, val in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(val) for val in value]
    return value


def write_json(path: str, doc: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(canonical_json(_plain(doc)))
        fh.write("\n")


def read_json(path: str, kind: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ScenarioError(f"cannot read artifact: {exc}", path=str(path))
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON: {exc}", path=str(path))
    if not isinstance(doc, dict):
        raise ScenarioError("artifact must be a JSON object", path=str(path))
    if doc.get("kind") != kind:
        found = doc.get("kind", "<missing>")
        raise ScenarioError(f"expected a {kind} artifact, found {found!r}",
                            path=str(path))
    if doc.get("schema_version") != ARTIFACT_VERSION:
        raise ScenarioError("unsupported artifact schema version",
                            path=str(path))
    return doc


def _section(doc: dict, key: str, path: str) -> dict:
    sec = doc.get(key)
    if not isinstance(sec, dict):
        raise ScenarioError(f"missing section '{key}'", path=path)
    return sec


def _array(sec: dict, key: str, path: str, shape: tuple = None) -> np.ndarray:
    if key not in sec:
        raise ScenarioError(f"missing field '{key}'", path=path)
    try:
        arr = np.asarray(sec[key], dtype=float)
    except (TypeError, ValueError):
        raise ScenarioError(f"field '{key}' is not numeric", path=path)
    if not np.all(np.isfinite(arr)):
        raise ScenarioError(f"field '{key}' has non-finite entries", path=path)
    if shape is not None and arr.shape != shape:
        raise ScenarioError(
            f"field '{key}' has shape {arr.shape}, expected {shape}",
            path=path)
    return arr


def _scalar(sec: dict, key: str, path: str):
    if key not in sec:
        raise ScenarioError(f"missing field '{key}'", path=path)
    return sec[key]


# ------------------------------------------------------------------ solution

def solution_document(scenario: Scenario, solution: PlannerSolution) -> dict:
    model = scenario.model
    kp = scenario.k_prime
    return {
        "schema_version": ARTIFACT_VERSION,
        "kind": SOLUTION_KIND,
        "scenario": {"hash": scenario.hash, "name": scenario.name},
        "model": {"n": model.n, "m": model.m, "n_w": model.n_w,
                  "k_prime": kp, "delta_t": scenario.delta_t},
        "decision": {
            "feedforward": solution.decision.v.reshape(kp, model.m),
            "k_gain": solution.decision.k_gain,
            "o_assign": solution.decision.o_assign,
        },
        "planned": {"means": solution.planned_means,
                    "covs": solution.planned_covs},
        "objective": float(solution.objective),
        "face_margins": [np.asarray(m) for m in solution.face_margins],
        "stats": dict(solution.stats),
    }


def write_schedule_csv(path: str, schedule: Schedule) -> None:
    """Feedforward inputs per step; the gain stays in the JSON artifact."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "time"] + [f"u{q}" for q in range(schedule.m)])
        for k in range(schedule.k_prime):
            row = [k, repr(k * schedule.delta_t)]
            row += [repr(float(u)) for u in schedule.feedforward[k]]
            writer.writerow(row)


def write_solution(out_dir: str, scenario: Scenario,
                   solution: PlannerSolution) -> dict:
    """solution.json + schedule.csv; returns the paths written."""
    solution_path = os.path.join(out_dir, SOLUTION_FILE)
    schedule_path = os.path.join(out_dir, SCHEDULE_FILE)
    write_json(solution_path, solution_document(scenario, solution))
    schedule = schedule_from_document(read_json(solution_path, SOLUTION_KIND),
                                      solution_path)
    write_schedule_csv(schedule_path, schedule)
    return {"solution": solution_path, "schedule": schedule_path}


def schedule_from_document(doc: dict, path: str) -> Schedule:
    model = _section(doc, "model", path)
    try:
        n = int(model["n"])
        m = int(model["m"])
        n_w = int(model["n_w"])
        kp = int(model["k_prime"])
        delta_t = float(model["delta_t"])
    except (KeyError, TypeError, ValueError):
        raise ScenarioError("model section is incomplete", path=path)
    decision = _section(doc, "decision", path)
    planned = _section(doc, "planned", path)
    feedforward = _array(decision, "feedforward", path, (kp, m))
    k_gain = _array(decision, "k_gain", path, (m * kp, n_w * kp + n))
    means = _array(planned, "means", path, (kp + 1, n))
    return Schedule(feedforward=feedforward, k_gain=k_gain, mu0=means[0],
                    delta_t=delta_t, n=n, m=m, n_w=n_w, k_prime=kp)


def read_solution(path: str):
    """(schedule, planned means, planned covs, document) from solution.json."""
    doc = read_json(path, SOLUTION_KIND)
    schedule = schedule_from_document(doc, path)
    planned = _section(doc, "planned", path)
    kp, n = schedule.k_prime, schedule.n
    means = _array(planned, "means", path, (kp + 1, n))
    covs = _array(planned, "covs", path, (kp + 1, n, n))
    _section(doc, "scenario", path)
    if not isinstance(doc["scenario"].get("hash"), str):
        raise ScenarioError("solution lacks its scenario hash", path=path)
    return schedule, means, covs, doc


# ------------------------------------------------------------------ report

def _regions_document(safe_set: SafeSet) -> list:
    out = []
    for region in safe_set.regions:
        c, d = region.face_matrix()
        out.append({"name": region.name, "c": c, "d": d})
    return out


def _safe_set_from_document(rows, path: str) -> SafeSet:
    if not isinstance(rows, list) or not rows:
        raise ScenarioError("report carries no safe-set geometry", path=path)
    regions = []
    for idx, row in enumerate(rows):
        if not isinstance(row, dict):
            raise ScenarioError(f"regions[{idx}] must be an object", path=path)
        c = _array(row, "c", path)
        d = _array(row, "d", path)
        if c.ndim != 2 or d.shape != (c.shape[0],):
            raise ScenarioError(f"regions[{idx}] faces are inconsistent",
                                path=path)
        faces = tuple(HalfSpace(c=c[i], d=float(d[i]))
                      for i in range(c.shape[0]))
        regions.append(ConvexRegion(half_spaces=faces,
                                    name=str(row.get("name", ""))))
    return SafeSet(regions=tuple(regions))


def ensemble_moments(ensemble: PathEnsemble, step: int = -1):
    """Empirical mean and covariance of the ensemble at one grid time."""
    pts = ensemble.paths[:, step, :]
    mean = pts.mean(axis=0)
    cov = np.cov(pts, rowvar=False, ddof=1).reshape(ensemble.n, ensemble.n)
    return mean, cov


def report_document(scenario: Scenario, report: SimulationReport,
                    nominal_ensemble: PathEnsemble, master_seed: int,
                    l1_enabled: bool, ensemble_files: dict = None) -> dict:
    nom_mean, nom_cov = ensemble_moments(nominal_ensemble)
    return {
        "schema_version": ARTIFACT_VERSION,
        "kind": REPORT_KIND,
        "scenario": {
            "hash": scenario.hash,
            "name": scenario.name,
            "delta_s": scenario.risk.delta_s,
            "rho": scenario.rho.rho,
            "delta_t": scenario.delta_t,
            "mu_t": scenario.boundary.mu_t,
            "sigma_t": scenario.boundary.sigma_t,
            "projection": list(scenario.projection) if scenario.projection else None,
            "regions": _regions_document(scenario.safe_set),
        },
        "run": {
            "n_paths": report.n_paths,
            "nominal_paths": nominal_ensemble.n_paths,
            "master_seed": int(master_seed),
            "l1_enabled": bool(l1_enabled),
            "w2_paths": scenario.w2_paths,
        },
        "nominal_terminal": {"mean": nom_mean, "cov": nom_cov},
        "steps": {
            "cvar_tail": report.cvar_tail,
            "means": report.means,
            "covs": report.covs,
            "w2_nominal": report.w2_nominal,
            "w2_planned": report.w2_planned,
            "violation_rate": report.violation_rate,
            "violation_lower": report.violation_lower,
            "violation_upper": report.violation_upper,
            "margin_cvar": report.margin_cvar,
            "margin_cvar_se": report.margin_cvar_se,
        },
        "ensembles": dict(ensemble_files or {}),
    }


def write_steps_csv(path: str, report: SimulationReport) -> None:
    columns = ("violation_rate", "violation_lower", "violation_upper",
               "w2_nominal", "w2_planned", "margin_cvar", "margin_cvar_se")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("step", "time") + columns)
        for k in range(report.k_prime + 1):
            row = [k, repr(k * report.delta_t)]
            row += [repr(float(getattr(report, col)[k])) for col in columns]
            writer.writerow(row)


@dataclass(frozen=True)
class ReportBundle:
    """A simulation report plus the provenance needed to judge it."""

    report: SimulationReport
    scenario_hash: str
    scenario_name: str
    delta_s: float
    rho: float
    mu_t: np.ndarray
    sigma_t: np.ndarray
    projection: tuple
    safe_set: SafeSet
    master_seed: int
    l1_enabled: bool
    w2_paths: int
    nominal_paths: int
    nominal_terminal_mean: np.ndarray
    nominal_terminal_cov: np.ndarray
    ensemble_files: dict


def write_report(out_dir: str, scenario: Scenario, report: SimulationReport,
                 true_ensemble: PathEnsemble, nominal_ensemble: PathEnsemble,
                 master_seed: int, l1_enabled: bool,
                 persist_ensembles: bool = True) -> dict:
    """report.json + steps.csv (+ ensembles); returns the paths written."""
    paths = {}
    files = {}
    if persist_ensembles:
        for role, ens, stem in (("true", true_ensemble, ENSEMBLE_TRUE),
                                ("nominal", nominal_ensemble, ENSEMBLE_NOMINAL)):
            paths[stem] = write_ensemble(out_dir, stem, ens, scenario.hash, role)
            files[role] = stem + ".npy"
    report_path = os.path.join(out_dir, REPORT_FILE)
    steps_path = os.path.join(out_dir, STEPS_FILE)
    write_json(report_path, report_document(
        scenario, report, nominal_ensemble, master_seed, l1_enabled, files))
    write_steps_csv(steps_path, report)
    paths["report"] = report_path
    paths["steps"] = steps_path
    return paths


def read_report(path: str) -> ReportBundle:
    doc = read_json(path, REPORT_KIND)
    scen = _section(doc, "scenario", path)
    run = _section(doc, "run", path)
    steps = _section(doc, "steps", path)
    terminal = _section(doc, "nominal_terminal", path)

    for key in ("w2_nominal", "w2_planned"):
        if key not in steps:
            raise ScenarioError(
                f"report is missing its ambiguity distances ('{key}')",
                path=path)

    means = _array(steps, "means", path)
    if means.ndim != 2 or means.shape[0] < 1:
        raise ScenarioError("per-step means must be a (steps, n) matrix",
                            path=path)
    grid, n = means.shape
    try:
        report = SimulationReport(
            delta_t=float(_scalar(scen, "delta_t", path)),
            n_paths=int(_scalar(run, "n_paths", path)),
            cvar_tail=float(_scalar(steps, "cvar_tail", path)),
            means=means,
            covs=_array(steps, "covs", path, (grid, n, n)),
            w2_nominal=_array(steps, "w2_nominal", path, (grid,)),
            w2_planned=_array(steps, "w2_planned", path, (grid,)),
            violation_rate=_array(steps, "violation_rate", path, (grid,)),
            violation_lower=_array(steps, "violation_lower", path, (grid,)),
            violation_upper=_array(steps, "violation_upper", path, (grid,)),
            margin_cvar=_array(steps, "margin_cvar", path, (grid,)),
            margin_cvar_se=_array(steps, "margin_cvar_se", path, (grid,)),
        )
        safe_set = _safe_set_from_document(scen.get("regions"), path)
        projection = scen.get("projection")
        if projection is not None:
            projection = tuple(int(i) for i in projection)
        bundle = ReportBundle(
            report=report,
            scenario_hash=str(_scalar(scen, "hash", path)),
            scenario_name=str(scen.get("name", "")),
            delta_s=float(_scalar(scen, "delta_s", path)),
            rho=float(_scalar(scen, "rho", path)),
            mu_t=_array(scen, "mu_t", path, (n,)),
            sigma_t=_array(scen, "sigma_t", path, (n, n)),
            projection=projection,
            safe_set=safe_set,
            master_seed=int(_scalar(run, "master_seed", path)),
            l1_enabled=bool(_scalar(run, "l1_enabled", path)),
            w2_paths=int(_scalar(run, "w2_paths", path)),
            nominal_paths=int(run.get("nominal_paths", run["n_paths"])),
            nominal_terminal_mean=_array(terminal, "mean", path, (n,)),
            nominal_terminal_cov=_array(terminal, "cov", path, (n, n)),
            ensemble_files={
                str(role): os.path.join(os.path.dirname(os.path.abspath(path)),
                                        str(rel))
                for role, rel in _section(doc, "ensembles", path).items()},
        )
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"malformed report: {exc}", path=path)
    return bundle


# ------------------------------------------------------------------ ensembles

def write_ensemble(out_dir: str, stem: str, ensemble: PathEnsemble,
                   scenario_hash: str, role: str) -> str:
    npy_path = os.path.join(out_dir, stem + ".npy")
    with open(npy_path, "wb") as fh:
        np.save(fh, ensemble.paths, allow_pickle=False)
    write_json(os.path.join(out_dir, stem + ".json"), {
        "schema_version": ARTIFACT_VERSION,
        "kind": ENSEMBLE_KIND,
        "role": role,
        "shape": list(ensemble.paths.shape),
        "dtype": str(ensemble.paths.dtype),
        "master_seed": ensemble.master_seed,
        "delta_t": ensemble.delta_t,
        "scenario_hash": scenario_hash,
    })
    return npy_path


def read_ensemble(npy_path: str):
    """(ensemble, sidecar document) for an ensemble persisted by this module."""
    sidecar_path = os.path.splitext(npy_path)[0] + ".json"
    sidecar = read_json(sidecar_path, ENSEMBLE_KIND)
    try:
        with open(npy_path, "rb") as fh:
            paths = np.load(fh, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise ScenarioError(f"cannot read ensemble array: {exc}",
                            path=str(npy_path))
    if list(paths.shape) != list(sidecar.get("shape", [])):
        raise ScenarioError("ensemble shape disagrees with its sidecar",
                            path=str(npy_path))
    try:
        ensemble = PathEnsemble(paths=paths,
                                master_seed=int(sidecar["master_seed"]),
                                delta_t=float(sidecar["delta_t"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"malformed ensemble: {exc}", path=str(npy_path))
    return ensemble, sidecar


# ------------------------------------------------------------------ verdicts

@dataclass(frozen=True)
class Predicate:
    name: str
    passed: bool
    value: float
    bound: float
    detail: str


def evaluate_report(bundle: ReportBundle) -> tuple:
    """The validation predicates, each recomputed from the report's numbers.

    Safety and ambiguity checks sweep every grid time; terminal checks judge
    the nominal ensemble against the boundary targets.  Nothing here trusts
    a verdict stored in the artifact.
    """
    report = bundle.report

    worst_upper = float(report.violation_upper.max())
    safety = Predicate(
        name="safety-violation",
        passed=worst_upper <= bundle.delta_s + _TOL,
        value=worst_upper, bound=bundle.delta_s,
        detail="max over steps of the Wilson 95% upper violation bound")

    slack = report.margin_cvar - 2.0 * report.margin_cvar_se
    worst_slack = float(slack.max())
    margin = Predicate(
        name="safety-margin-cvar",
        passed=worst_slack <= _TOL,
        value=worst_slack, bound=0.0,
        detail="max over steps of the empirical tail-mean margin minus "
               "two standard errors")

    worst_w2 = float(report.w2_nominal.max())
    ambiguity = Predicate(
        name="ambiguity-w2",
        passed=worst_w2 <= bundle.rho + _TOL,
        value=worst_w2, bound=bundle.rho,
        detail="max over steps of empirical W2(true, nominal)")

    mean_err = float(np.linalg.norm(bundle.nominal_terminal_mean - bundle.mu_t))
    mean_se = float(np.sqrt(np.trace(bundle.nominal_terminal_cov)
                            / bundle.nominal_paths))
    terminal_mean = Predicate(
        name="terminal-mean",
        passed=mean_err <= MEAN_SE_MULTIPLE * mean_se + _TOL,
        value=mean_err, bound=MEAN_SE_MULTIPLE * mean_se,
        detail="nominal terminal mean error vs "
               f"{MEAN_SE_MULTIPLE:g} standard errors")

    excess = float(np.linalg.eigvalsh(
        bundle.nominal_terminal_cov - bundle.sigma_t).max())
    terminal_cov = Predicate(
        name="terminal-cov",
        passed=excess <= TERMINAL_COV_SLACK + _TOL,
        value=excess, bound=TERMINAL_COV_SLACK,
        detail="largest eigenvalue of (nominal terminal cov - target)")

    return (safety, margin, ambiguity, terminal_mean, terminal_cov)


def run_report_document(bundle: ReportBundle, predicates: tuple,
                        timings_file: str = TIMINGS_FILE) -> dict:
    return {
        "schema_version": ARTIFACT_VERSION,
        "kind": RUNREPORT_KIND,
        "scenario": {"hash": bundle.scenario_hash,
                     "name": bundle.scenario_name},
        "l1_enabled": bundle.l1_enabled,
        "predicates": [{
            "name": p.name, "pass": p.passed, "value": p.value,
            "bound": p.bound, "detail": p.detail,
        } for p in predicates],
        "all_pass": all(p.passed for p in predicates),
        "timings_file": timings_file,
    }


def update_timings(path: str, entries: dict) -> None:
    """Merge wall-clock seconds into the (non-deterministic) timing sidecar."""
    doc = {}
    if os.path.exists(path):
        try:
            with open(path, "r", encoding="utf-8") as fh:
                loaded = json.load(fh)
            if isinstance(loaded, dict):
                doc = loaded
        except (OSError, json.JSONDecodeError):
            doc = {}
    for key, seconds in entries.items():
        doc[str(key)] = round(float(seconds), 3)
    write_json(path, doc)


# ------------------------------------------------------------------ figures

def _pyplot():
    import matplotlib
    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt
    # Content-hashed element ids make the SVG output run-independent.
    plt.rcParams["svg.hashsalt"] = "covsteer"
    return plt


def _save_svg(fig, out_path: str) -> None:
    fig.savefig(out_path, format="svg", metadata={"Date": None})


def _region_polygon(region: ConvexRegion, proj: tuple, box: tuple):
    """Vertices of the region's outline in the projected plane, or None.

    Faces supported on coordinates outside the projection pair do not cut
    the drawn outline.  ``box`` is ((xlo, xhi), (ylo, yhi)) and closes
    directions the region leaves unbounded.
    """
    i, j = proj
    rows = []
    for face in region.half_spaces:
        keep = np.zeros(face.n, dtype=bool)
        keep[[i, j]] = True
        if np.any(face.c[~keep] != 0.0):
            continue
        rows.append((face.c[i], face.c[j], face.d))
    (xlo, xhi), (ylo, yhi) = box
    rows += [(1.0, 0.0, xhi), (-1.0, 0.0, -xlo),
             (0.0, 1.0, yhi), (0.0, -1.0, -ylo)]
    a = np.array([r[:2] for r in rows])
    b = np.array([r[2] for r in rows])
    points = []
    for p in range(len(rows)):
        for q in range(p + 1, len(rows)):
            mat = a[[p, q]]
            if abs(np.linalg.det(mat)) < 1e-12:
                continue
            vertex = np.linalg.solve(mat, b[[p, q]])
            if np.all(a @ vertex <= b + 1e-8):
                points.append(vertex)
    if len(points) < 3:
        return None
    points = np.unique(np.round(np.array(points), 9), axis=0)
    if points.shape[0] < 3:
        return None
    center = points.mean(axis=0)
    order = np.argsort(np.arctan2(points[:, 1] - center[1],
                                  points[:, 0] - center[0]))
    return points[order]


def _projection_pair(bundle: ReportBundle, n: int) -> tuple:
    if bundle.projection is None:
        raise ScenarioError("scenario declared no render projection "
                            "(render.projection)")
    i, j = bundle.projection
    if not (0 <= i < n and 0 <= j < n) or i == j:
        raise ScenarioError(
            f"projection ({i}, {j}) does not index two distinct state "
            f"coordinates of dimension {n}")
    return i, j


def render_fan(bundle: ReportBundle, ensemble: PathEnsemble, out_path: str,
               max_paths: int = 200) -> None:
    """Trajectory fan over the safe-set outline in the projected plane."""
    i, j = _projection_pair(bundle, ensemble.n)
    plt = _pyplot()

    xs = ensemble.paths[:max_paths, :, i]
    ys = ensemble.paths[:max_paths, :, j]
    mean_xy = bundle.report.means[:, [i, j]]

    pad = 0.15
    xlo, xhi = float(xs.min()), float(xs.max())
    ylo, yhi = float(ys.min()), float(ys.max())
    xpad = pad * max(xhi - xlo, 1.0)
    ypad = pad * max(yhi - ylo, 1.0)
    box = ((xlo - xpad, xhi + xpad), (ylo - ypad, yhi + ypad))

    fig, ax = plt.subplots(figsize=(7.0, 5.0))
    for region in bundle.safe_set.regions:
        poly = _region_polygon(region, (i, j), box)
        if poly is None:
            continue
        ax.fill(poly[:, 0], poly[:, 1], facecolor="#dcebd7",
                edgecolor="#4d7c57", linewidth=1.0, zorder=0,
                label="_nolegend_")
    ax.plot(xs.T, ys.T, color="#46649b", alpha=0.18, linewidth=0.6, zorder=1)
    ax.plot(mean_xy[:, 0], mean_xy[:, 1], color="#1a1a1a", linewidth=1.8,
            zorder=2, label="ensemble mean")
    ax.plot(mean_xy[0, 0], mean_xy[0, 1], "o", color="#1a1a1a", ms=5, zorder=3)
    ax.plot(bundle.mu_t[i], bundle.mu_t[j], "x", color="#b0413e", ms=8,
            markeredgewidth=2.0, zorder=3, label="target mean")
    ax.set_xlim(*box[0])
    ax.set_ylim(*box[1])
    ax.set_xlabel(f"state[{i}]")
    ax.set_ylabel(f"state[{j}]")
    ax.set_title(f"{bundle.scenario_name}: trajectory fan "
                 f"({min(ensemble.n_paths, max_paths)} of "
                 f"{ensemble.n_paths} paths)")
    ax.grid(alpha=0.3)
    ax.legend(loc="best", fontsize=9)
    fig.tight_layout()
    _save_svg(fig, out_path)
    plt.close(fig)


def render_w2_chart(bundle: ReportBundle, out_path: str) -> None:
    """Per-step ambiguity distances against the certified radius."""
    report = bundle.report
    times = np.arange(report.k_prime + 1) * report.delta_t
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    ax.plot(times, report.w2_nominal, marker="o", ms=3.5, color="#46649b",
            label="empirical W2 (true vs nominal)")
    ax.plot(times, report.w2_planned, marker="s", ms=3.0, linestyle="--",
            color="#7a7a7a", label="Gaussian W2 (empirical vs planned)")
    ax.axhline(bundle.rho, color="#b0413e", linewidth=1.4,
               label="certified radius rho")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("W2 distance")
    ax.set_title(f"{bundle.scenario_name}: ambiguity bound")
    ax.set_ylim(bottom=0.0)
    ax.grid(alpha=0.3)
    ax.legend(loc="best", fontsize=9)
    fig.tight_layout()
    _save_svg(fig, out_path)
    plt.close(fig)
