"""Run configuration, job graph, caching and the run manifest."""
from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .geometry import make_domain, make_profile
from .persistence import file_digest, load_state, save_state

log = logging.getLogger(__name__)

JOB_TYPES = ("theta0", "gcurve", "esurf", "solve", "diagnose")

_SPEC = {"type": ["object", "string"]}
CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "domain": _SPEC,
        "field": _SPEC,
        "gl": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["frozen_A", "coupled"]},
                "grid_h": {"type": "number", "exclusiveMinimum": 0},
                "restarts": {"type": "integer", "minimum": 1},
                "rel_tol": {"type": "number", "exclusiveMinimum": 0},
                "el_tol": {"type": "number", "exclusiveMinimum": 0},
                "noise": {"type": "number", "minimum": 0},
                "maxiter": {"type": "integer", "minimum": 1},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kappa": {"type": "array", "items": {"type": "number", "minimum": 1},
                          "minItems": 1},
                "b": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                      "minItems": 1},
            },
            "required": ["kappa", "b"],
        },
        "jobs": {"type": "array", "items": {"enum": list(JOB_TYPES)}, "uniqueItems": True},
        "theta0": {"type": "object"},
        "gcurve": {"type": "object"},
        "esurf": {"type": "object"},
        "diagnostics": {
            "type": "object",
            "properties": {
                "probes": {"type": "array", "items": {
                    "type": "object", "required": ["type"],
                    "properties": {"type": {"enum": [
                        "interior_decay", "boundary_decay", "bulk_window",
                        "surface_window", "tb_pairing", "strip_fraction", "region_mass"]}}}},
                "g_curve": {"type": "string"},
                "esurf_curve": {"type": "string"},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
        "out_dir": {"type": "string"},
        "workers": {"type": "integer", "minimum": 1},
    },
    "required": ["jobs"],
}


class ConfigError(ValueError):
    pass


class JobError(RuntimeError):
    def __init__(self, job_id, message):
        super().__init__(f"job {job_id}: {message}")
        self.job_id = job_id


def canonical_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=float)
    return hashlib.sha256(blob.encode()).hexdigest()


def load_config(path_or_dict) -> dict:
    if isinstance(path_or_dict, (str, Path)):
        with open(path_or_dict) as fh:
            cfg = json.load(fh)
        base = Path(path_or_dict).resolve().parent
    else:
        cfg = json.loads(json.dumps(path_or_dict))
        base = Path.cwd()
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as err:
        raise ConfigError(f"config schema: {err.message} at {list(err.absolute_path)}") from None
    cfg.setdefault("seed", 0)
    cfg.setdefault("out_dir", "glfield_out")
    cfg.setdefault("workers", 1)
    cfg.setdefault("domain", {"kind": "disk"})
    cfg.setdefault("field", {"kind": "constant", "c": 1.0})
    cfg.setdefault("gl", {})
    try:
        make_domain(cfg["domain"])
        make_profile(cfg["field"])
    except (ValueError, TypeError, KeyError) as err:
        raise ConfigError(f"config: {err}") from None
    jobs = cfg["jobs"]
    if ("solve" in jobs or "diagnose" in jobs) and "sweep" not in cfg:
        raise ConfigError("config: solve/diagnose jobs need a sweep with kappa and b lists")
    diag = cfg.get("diagnostics", {})
    for key in ("g_curve", "esurf_curve"):
        if key in diag:
            p = Path(diag[key])
            p = p if p.is_absolute() else base / p
            if not p.exists():
                raise ConfigError(f"config: diagnostics.{key} file {p} not found")
            diag[key] = str(p)
    if "diagnose" in jobs and "solve" not in jobs:
        raise ConfigError("config: diagnose needs solve in the same run")
    return cfg


@dataclass
class Job:
    id: str
    type: str
    params: dict
    needs: list = field(default_factory=list)
    hash: str = ""


def build_jobs(cfg: dict) -> list[Job]:
    jobs: list[Job] = []
    common = {"domain": cfg["domain"], "field": cfg["field"], "seed": cfg["seed"]}
    want = cfg["jobs"]
    if "theta0" in want:
        jobs.append(Job("theta0", "theta0", dict(cfg.get("theta0", {}))))
    if "gcurve" in want:
        jobs.append(Job("gcurve", "gcurve", {**cfg.get("gcurve", {}), "seed": cfg["seed"]}))
    if "esurf" in want:
        jobs.append(Job("esurf", "esurf", {**cfg.get("esurf", {}), "seed": cfg["seed"]},
                        needs=["theta0"] if "theta0" in want else []))
    if "solve" in want:
        for k in cfg["sweep"]["kappa"]:
            for b in cfg["sweep"]["b"]:
                sid = f"solve_k{k:g}_b{b:g}"
                jobs.append(Job(sid, "solve", {**common, "gl": cfg["gl"], "kappa": k, "b": b}))
                if "diagnose" in want:
                    needs = [sid] + [n for n in ("gcurve", "esurf") if n in want]
                    jobs.append(Job(f"diagnose_k{k:g}_b{b:g}", "diagnose",
                                    {**common, "gl": cfg["gl"], "kappa": k, "b": b,
                                     "diagnostics": cfg.get("diagnostics", {})}, needs))
    by_id = {j.id: j for j in jobs}
    for j in jobs:  # hashes include the dependency hashes, so changes propagate
        j.hash = canonical_hash({"type": j.type, "params": j.params, "version": __version__,
                                 "needs": [by_id[n].hash for n in j.needs]})
    return jobs


# --- job bodies ------------------------------------------------------------

def _gl_config(params):
    from .gl_solver import GLConfig
    gl = dict(params.get("gl", {}))
    return GLConfig(kappa=float(params["kappa"]), b=float(params["b"]), seed=params["seed"], **gl)


def _theta0_value(dep_dir: Path | None):
    if dep_dir is not None and (dep_dir / "theta0.json").exists():
        return json.loads((dep_dir / "theta0.json").read_text())["theta0"]
    from .reference import THETA0
    return THETA0


def run_theta0(params, out: Path, deps):
    from .degennes import theta0
    kw = {}
    if "hs" in params:
        kw["hs"] = tuple(params["hs"])
    if "T" in params:
        kw["T"] = float(params["T"])
    res = theta0(**kw)
    (out / "theta0.json").write_text(json.dumps(res.to_dict(), indent=2))
    return {"theta0": res.theta0}, True


def run_gcurve(params, out: Path, deps):
    from .bulk_cell import g_curve
    curve = g_curve(b_samples=tuple(params.get("b_list", (0, .25, .5, .75, 1, 1.2, 1.5))),
                    r_grid=tuple(params.get("r_list", (8, 12, 16))),
                    h=float(params.get("h", 0.125)),
                    restarts=int(params.get("restarts", 3)), seed=params["seed"])
    curve.to_csv(out / "g_curve.csv")
    ok = not curve.violations
    (out / "gcurve.json").write_text(json.dumps(
        {"violations": [list(map(str, v)) for v in curve.violations],
         "samples": [asdict(s) for s in curve.samples]}, indent=2, default=_json_default))
    return {"g": [s.g for s in curve.samples]}, ok


def run_esurf(params, out: Path, deps):
    from .surface_strip import esurf_curve
    th0 = _theta0_value(deps.get("theta0"))
    bl = params.get("b_list", [1.0, 1.2, 1.4, 1.0 / th0])
    curve = esurf_curve([float(b) for b in bl], theta0=th0,
                        R_grid=tuple(params.get("R_list", (8, 12, 16))),
                        h=float(params.get("h", 0.05)),
                        restarts=int(params.get("restarts", 3)), seed=params["seed"])
    curve.to_csv(out / "esurf_curve.csv")
    (out / "esurf.json").write_text(json.dumps(
        {"samples": [asdict(s) for s in curve.samples], "theta0": th0}, indent=2,
        default=_json_default))
    return {"esurf": list(map(float, curve.values))}, curve.is_monotone()


def _problem(params):
    from .gl_solver import GLProblem
    cfg = _gl_config(params)
    dom = make_domain(params["domain"])
    fld = make_profile(params["field"])
    return cfg, GLProblem(cfg, fld, dom)


def run_solve(params, out: Path, deps):
    from .gl_solver import el_residual, minimize
    cfg, prob = _problem(params)
    state, bd, info = minimize(cfg, prob.field, prob.domain, problem=prob)
    res = el_residual(state, prob)
    sup = float(np.max(np.abs(state.psi))) if state.psi.size else 0.0
    checks = {
        "sup_psi_le_1_plus_5h": sup <= 1 + 5 * cfg.grid_h,
        "energy_nonpositive": bd.total <= 0.0,
        "el_residual_within_contract": res["psi_sup"] < cfg.el_tol * cfg.kappa**2,
    }
    save_state(out / "state.gls", state, prob, meta={"job": params, "sup_psi": sup})
    (out / "energy.json").write_text(json.dumps(
        {"energy": bd.to_dict(), "residual": res, "checks": checks, "info": info.to_dict(),
         "sup_psi": sup}, indent=2))
    return {"energy": bd.total, "iterations": info.iterations,
            "wall_time_solver": info.wall_time}, all(checks.values())


def run_diagnose(params, out: Path, deps):
    from .bulk_cell import GCurve
    from .gl_solver import DiscreteState
    from .surface_strip import EsurfCurve
    cfg, prob = _problem(params)
    if "state_path" in params:
        dump = Path(params["state_path"])
    else:
        dump = deps[next(k for k in deps if k.startswith("solve"))] / "state.gls"
    _, nodes, a = load_state(dump)
    state = DiscreteState(nodes[:, 2] + 1j * nodes[:, 3], a, cfg.grid_h)
    diag = params.get("diagnostics", {})
    from .reference import THETA0, esurf_reference, g_reference
    if "gcurve" in deps:
        gc = GCurve.from_csv(deps["gcurve"] / "g_curve.csv")
    elif "g_curve" in diag:
        gc = GCurve.from_csv(diag["g_curve"])
    else:
        gc = g_reference()
    if "esurf" in deps:
        ec = EsurfCurve.from_csv(deps["esurf"] / "esurf_curve.csv", theta0=THETA0)
    elif "esurf_curve" in diag:
        ec = EsurfCurve.from_csv(diag["esurf_curve"], theta0=THETA0)
    else:
        ec = esurf_reference()
    probes = evaluate_probes(state, prob, diag.get("probes", []), gc, ec)
    report = {"kappa": cfg.kappa, "b": cfg.b, "probes": probes,
              "all_pass": all(p["pass"] for p in probes)}
    (out / "report.json").write_text(json.dumps(report, indent=2, default=_json_default))
    return {"n_probes": len(probes)}, report["all_pass"]


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def bump_testfn(domain, depth: float, s0: float | None = None, width: float | None = None):
    """Smooth test function ``chi(t / depth) * chi(arc distance / width)``, chi(0) = 1."""
    def chi(u):
        u = np.asarray(u, float)
        out = np.zeros_like(u)
        m = np.abs(u) < 1
        out[m] = np.exp(1.0 - 1.0 / (1.0 - u[m] ** 2))
        return out

    def fn(x, y):
        x, y = np.atleast_1d(x), np.atleast_1d(y)
        s, t = domain.foot_point(np.stack([x.ravel(), y.ravel()], 1))
        v = chi(np.maximum(t, 0.0) / depth)
        if width is not None:
            v = v * chi(domain.arc_distance(s, s0) / width)
        return v.reshape(x.shape)
    return fn


def evaluate_probes(state, prob, probes, g_curve, esurf_curve) -> list[dict]:
    from . import diagnostics as dg
    out = []
    for i, p in enumerate(probes):
        p = dict(p)
        kind = p.pop("type")
        rec = {"id": p.pop("id", f"{kind}_{i}"), "type": kind}
        try:
            rec.update(_probe(dg, kind, p, state, prob, g_curve, esurf_curve))
        except dg.PreconditionError as err:
            rec.update({"measured": None, "target": None, "tolerance": None,
                        "pass": False, "error": str(err)})
        out.append(rec)
    return out


def _point_at_level(prob, b, level):
    """First point on the positive x1 axis with ``b |B0| = level``."""
    from scipy.optimize import brentq
    xs = np.linspace(0.0, float(prob.domain.radius(np.array([0.0]))[0]), 2001)[:-1]
    v = b * np.abs(prob.field(xs, np.zeros_like(xs))) - level
    hit = np.nonzero(v >= 0)[0]
    if hit.size == 0:
        raise _precondition_error(f"no point with b|B0| = {level} on the x1 axis")
    i = int(hit[0])
    if i == 0 or v[i] == 0:
        return (float(xs[i]), 0.0)
    x = brentq(lambda t: b * abs(float(prob.field(t, 0.0))) - level, xs[i - 1], xs[i],
               xtol=1e-14)
    return (float(x), 0.0)


def _precondition_error(msg):
    from .diagnostics import PreconditionError
    return PreconditionError(msg)


def _probe(dg, kind, p, state, prob, gc, ec):
    kappa, b = prob.cfg.kappa, prob.cfg.b
    sk = math.sqrt(prob.kH)
    if kind in ("interior_decay", "boundary_decay"):
        probe = dg.DecayProbe(kappa=kappa, b=b, mu=p.get("mu", 0.1), cap=p.get("cap", 10.0))
        fn = dg.interior_decay if kind == "interior_decay" else dg.boundary_decay
        d = fn(state, prob, probe)
        rate = d["fitted_rate"]
        ok = d["degenerate"] or (rate > 0 if not math.isnan(rate) else True)
        if "max_far_fraction" in p and kind == "interior_decay":
            ok = ok and d["far_mass_fraction"] < p["max_far_fraction"]
        return {"measured": rate, "target": "> 0", "tolerance": p.get("max_far_fraction"),
                "pass": bool(ok), "details": d}
    if kind == "bulk_window":
        x0 = p["x0"] if "x0" in p else _point_at_level(prob, b, p["level"])
        r = dg.bulk_window_report(state, prob, x0, rho=p.get("rho", 0.75), g_curve=gc)
        tol = p.get("tol", 0.25)
        if p.get("tol_relative"):
            tol = tol * abs(r.target)
        return {"measured": r.mean_psi4, "target": r.target, "tolerance": tol,
                "pass": r.error <= tol, "details": r.to_dict()}
    if kind == "surface_window":
        r = dg.surface_window_report(state, prob, p.get("s0", 0.0), rho=p.get("rho", 0.85),
                                     esurf_curve=ec)
        tol = p.get("tol", 0.35)
        return {"measured": r.scaled_l4, "target": r.target_l4, "tolerance": tol,
                "pass": r.l4_rel_error <= tol and r.energy_rel_error <= tol,
                "details": r.to_dict()}
    if kind == "tb_pairing":
        tf = p.get("testfn", {})
        fn = bump_testfn(prob.domain, tf.get("depth", 0.4), tf.get("s0"), tf.get("width"))
        lhs, rhs = dg.tb_pairing(state, prob, fn, esurf_curve=ec)
        lo, hi = p.get("band", [0.6, 1.4])
        ratio = lhs / rhs if rhs else float("nan")
        ok = lo <= ratio <= hi if rhs else abs(lhs) < p.get("zero_tol", 1e-3)
        return {"measured": ratio, "target": 1.0, "tolerance": [lo, hi], "pass": bool(ok),
                "details": {"lhs": lhs, "rhs": rhs}}
    if kind == "strip_fraction":
        width = p.get("width_factor", 1.0) / sk
        lim = p["abs_x1_lt"]
        frac = dg.strip_mass_fraction(state, prob, width, lambda x, y: np.abs(x) < lim)
        return {"measured": frac, "target": p.get("min", 0.9), "tolerance": None,
                "pass": bool(frac >= p.get("min", 0.9))}
    if kind == "region_mass":
        from .geometry import LevelSetQuery, level_sets
        eps = p.get("eps", 1.0 / b + 0.1)
        width = p.get("width_factor", 4.0) / sk
        V = level_sets(prob.field, LevelSetQuery(eps, "bulk"), prob.grid).mask
        mask = V | (prob.grid.t < width)
        frac = dg.mass_fraction(state, prob, mask, power=p.get("power", 2))
        return {"measured": frac, "target": p.get("min", 0.99), "tolerance": None,
                "pass": bool(frac >= p.get("min", 0.99))}
    raise ValueError(f"unknown probe {kind!r}")


RUNNERS = {"theta0": run_theta0, "gcurve": run_gcurve, "esurf": run_esurf,
           "solve": run_solve, "diagnose": run_diagnose}


def _execute(job_type, job_id, params, out_dir, dep_dirs):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    summary, ok = RUNNERS[job_type](params, out, {k: Path(v) for k, v in dep_dirs.items()})
    return summary, ok, time.perf_counter() - t0


def run(config, out_dir: str | None = None, workers: int | None = None,
        seed: int | None = None) -> dict:
    """Execute every job of ``config`` in dependency order; return the manifest.

    Completed jobs whose hash matches are not recomputed. A failing job marks
    its dependants as skipped; outputs of finished jobs are kept.
    """
    cfg = load_config(config)
    if seed is not None:
        cfg["seed"] = seed
    if out_dir is not None:
        cfg["out_dir"] = out_dir
    if workers is not None:
        cfg["workers"] = workers
    root = Path(cfg["out_dir"])
    root.mkdir(parents=True, exist_ok=True)
    jobs = build_jobs(cfg)
    manifest = {"config_hash": canonical_hash(cfg | {"out_dir": None, "workers": None}),
                "version": __version__, "seed": cfg["seed"], "jobs": {}}
    status: dict[str, str] = {}
    pending = list(jobs)
    while pending:
        ready = [j for j in pending if all(n in status for n in j.needs)]
        pending = [j for j in pending if j not in ready]
        to_run = []
        for j in ready:
            jdir = root / j.id
            rec_path = jdir / "job.json"
            if any(status[n] not in ("ok", "cached") for n in j.needs):
                status[j.id] = "skipped"
                manifest["jobs"][j.id] = {"status": "skipped", "reason": "failed dependency"}
                continue
            if rec_path.exists():
                rec = json.loads(rec_path.read_text())
                if rec.get("hash") == j.hash and rec.get("status") == "ok" and all(
                        (jdir / f).exists() and file_digest(jdir / f) == d
                        for f, d in rec.get("outputs", {}).items()):
                    status[j.id] = "cached"
                    manifest["jobs"][j.id] = {**rec, "status": "cached", "cache_hit": True}
                    continue
            to_run.append(j)
        results = {}
        if cfg["workers"] > 1 and len(to_run) > 1:
            with ProcessPoolExecutor(cfg["workers"]) as ex:
                futs = {j.id: ex.submit(_execute, j.type, j.id, j.params, str(root / j.id),
                                        {n: str(root / n) for n in j.needs}) for j in to_run}
                for jid, f in futs.items():
                    try:
                        results[jid] = f.result()
                    except Exception as err:  # reported per job
                        results[jid] = err
        else:
            for j in to_run:
                try:
                    results[j.id] = _execute(j.type, j.id, j.params, str(root / j.id),
                                             {n: str(root / n) for n in j.needs})
                except Exception as err:  # reported per job
                    results[j.id] = err
        for j in to_run:
            r = results[j.id]
            jdir = root / j.id
            if isinstance(r, Exception):
                log.error("job %s failed: %s", j.id, r)
                rec = {"id": j.id, "type": j.type, "hash": j.hash, "status": "failed",
                       "error": f"{type(r).__name__}: {r}"}
            else:
                summary, ok, wall = r
                outputs = {p.name: file_digest(p) for p in sorted(jdir.iterdir())
                           if p.name != "job.json"}
                inputs = {}
                for n in j.needs:
                    for p in sorted((root / n).iterdir()):
                        if p.name != "job.json":
                            inputs[f"{n}/{p.name}"] = file_digest(p)
                rec = {"id": j.id, "type": j.type, "hash": j.hash,
                       "status": "ok" if ok else "invariant_failed", "wall_time": wall,
                       "summary": summary, "outputs": outputs, "inputs": inputs,
                       "cache_hit": False}
            jdir.mkdir(parents=True, exist_ok=True)
            (jdir / "job.json").write_text(json.dumps(rec, indent=2, default=_json_default))
            status[j.id] = rec["status"]
            manifest["jobs"][j.id] = rec
        if not ready:
            raise JobError("?", "dependency cycle")
    manifest["success"] = all(s in ("ok", "cached") for s in status.values())
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, default=_json_default))
    return manifest
