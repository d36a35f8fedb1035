"""Scenario orchestration: evolve, scan, check, write artifacts."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .config import ScenarioConfig
from .identities import (
    IdentityResult,
    check_radiation_identities,
    check_spherical_reductions,
    check_vp_identities,
    write_identities_csv,
)
from .kinetic import ParticleEnsemble, default_softening, mirror_species, sample_ensemble
from .radiation import RadiationReport, SphereQuadrature, order_scan, predict_dipole, predict_vn
from .solver import Numerics, SourceHistory, evolve

log = logging.getLogger(__name__)

ARTIFACTS = ("summary.json", "report.json", "report.csv", "identities.csv")


@dataclass
class RunResult:
    directory: Path
    passed: bool
    checks: dict
    history: SourceHistory
    report: RadiationReport
    identities: list


def initial_ensemble(cfg: ScenarioConfig, seed: int | None = None) -> tuple[ParticleEnsemble, float]:
    """Sample every species (and its mirror) and pick the softening length."""
    seed = cfg.seed if seed is None else seed
    parts = []
    eps_auto = []
    for i, s in enumerate(cfg.species):
        e = sample_ensemble(s.profile, s.particles, seed + i, s.symmetry)
        parts.append(e)
        if s.mirror:
            parts.append(mirror_species(e))
        eps_auto.append(default_softening(s.particles, s.profile.radii))
    ens = parts[0]
    for e in parts[1:]:
        ens = ens + e
    eps = cfg.softening if cfg.softening is not None else min(eps_auto)
    return ens, eps


def build_history(cfg: ScenarioConfig, seed: int | None = None, tolerance_scale: float = 1.0,
                  progress: Callable[[str], None] | None = None) -> SourceHistory:
    ens, eps = initial_ensemble(cfg, seed)
    num = Numerics(cfg.dt, cfg.dt_rec, eps, cfg.grid_n, cfg.bandwidth_cells, cfg.energy_tol * tolerance_scale)
    return evolve(ens, cfg.mode, num, cfg.window, progress=progress)


def support_check(cfg: ScenarioConfig, history: SourceHistory) -> tuple[bool, str]:
    try:
        for e in history.ensembles:
            e.check_support(cfg.R0, cfg.p1)
    except ValueError as exc:
        return False, str(exc)
    return True, "ok"


def scan_history(cfg: ScenarioConfig, history: SourceHistory, progress=None) -> RadiationReport:
    sc = cfg.scan
    rep = order_scan(history, sc.c_list, cfg.r_list, sc.u_list, sc.direction, scenario=cfg.name,
                     r_fit_c=sc.r_fit_c, c_fit_r=sc.c_fit_r, progress=progress)
    quad = SphereQuadrature.gauss(*sc.sphere)
    pred = []
    for u in sc.u_list:
        for c in sc.c_list:
            if history.mode == "plasma":
                DD = history.interpolate_scalar(history.DD, u)
                d = predict_dipole(DD, sc.direction, cfg.r_list[0], c)
                pred.append({"u": u, "c": c, "integrated": d["integrated"]})
            else:
                v = predict_vn(history, sc.direction, u, cfg.r_list[0], c, quad=quad)
                pred.append({"u": u, "c": c, "integrated": v["integrated"],
                             "spherical_integrated": v["spherical_integrated"],
                             "dR_dt": v["dR_dt"], "dEkin_dt": v["dEkin_dt"]})
    rep.extras["predictions"] = pred
    rep.extras["r_star"] = cfg.r_star
    rep.extras["direction"] = sc.direction.tolist()
    return rep


def _dipole_checks(cfg: ScenarioConfig, history: SourceHistory, tol: float) -> list[IdentityResult]:
    out = []
    signs = {int(s) for s in np.unique(history.ensembles[0].species)}
    for t in cfg.identities.times:
        k = history.frame_index(t)
        DD = history.DD[k]
        if len(signs) == 1:
            E = history.particle_field(k)
            scale = len(history.ensembles[k]) * float(np.max(np.linalg.norm(E, axis=1)))
            out.append(IdentityResult.build("dipole_single_species_null", t, DD, np.zeros(3), 1e-12,
                                            scale=scale, budget={"roundoff": 1e-12}))
        else:
            fd = (history.D[k + 1] - 2 * history.D[k] + history.D[k - 1]) / history.dt_rec**2
            out.append(IdentityResult.build("dipole_second_difference", t, DD, fd, tol,
                                            budget={"stencil": "dt_rec^2", "dominant": "stencil"}))
    return out


def identity_directions(cfg: ScenarioConfig, seed: int | None = None) -> np.ndarray:
    """Coordinate axes plus the configured ``xi`` or, if unset, a seeded random unit vector."""
    xi = cfg.identities.xi
    if xi is None:
        v = np.random.default_rng(cfg.seed if seed is None else seed).normal(size=3)
        xi = v / np.linalg.norm(v)
    return np.vstack([np.eye(3), np.asarray(xi, dtype=float)])


def identity_suite(cfg: ScenarioConfig, history: SourceHistory, tolerance_scale: float = 1.0,
                   seed: int | None = None) -> list[IdentityResult]:
    ids = cfg.identities
    sc = cfg.scan
    res: list[IdentityResult] = []
    if history.mode == "gravity":
        for t in ids.times:
            res += check_vp_identities(history, t, identity_directions(cfg, seed),
                                       ids.tolerance * tolerance_scale)
        if ids.spherical:
            quad = SphereQuadrature.gauss(*sc.sphere)
            for u in sc.u_list:
                res += check_spherical_reductions(history, u, sc.direction,
                                                  ids.spherical_tolerance * tolerance_scale, quad)
    else:
        res += _dipole_checks(cfg, history, ids.dipole_tolerance * tolerance_scale)
    for u in sc.u_list:
        res += check_radiation_identities(history, sc.direction, u, cfg.r_list[0], sc.c_list[0],
                                          ids.radiation_tolerance * tolerance_scale)
    return res


def _summary(cfg, history, report, results, checks, seed, continuity) -> dict:
    return {
        "scenario": cfg.name,
        "mode": cfg.mode,
        "seed": seed,
        "n_particles": len(history.ensembles[0]),
        "softening": history.eps,
        "dt": cfg.dt,
        "dt_rec": cfg.dt_rec,
        "window": [float(history.times[0]), float(history.times[-1])],
        "R0": cfg.R0,
        "P1": cfg.p1,
        "r_star": cfg.r_star,
        "p_star": cfg.p_star,
        "energy_drift": history.energy_drift,
        "continuity_residual": continuity,
        "scan_points": len(report.points),
        "identity_rows": len(results),
        "identities_passed": sum(r.passed for r in results),
        "checks": checks,
        "passed": all(c["passed"] for c in checks.values()),
    }


def _write_json(path: Path, payload) -> None:
    from .radiation import _jsonable

    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")


def run_scenario(cfg: ScenarioConfig, out_dir: str | Path, seed: int | None = None,
                 tolerance_scale: float = 1.0, progress: Callable[[str], None] | None = None) -> RunResult:
    """Evolve, scan and check one scenario, writing all artifacts to ``out_dir``.

    Artifacts: ``scenario.cfg`` (echo of the input), ``history/``,
    ``report.json``, ``report.csv``, ``identities.csv`` and ``summary.json``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.seed if seed is None else seed
    say = progress or (lambda msg: log.info(msg))
    say(f"{cfg.name}: evolving {cfg.n_particles} particles over {cfg.window}")
    history = build_history(cfg, seed, tolerance_scale, progress=say)
    checks = {"energy_drift": {"passed": history.energy_drift <= cfg.energy_tol * tolerance_scale,
                               "value": history.energy_drift, "tolerance": cfg.energy_tol * tolerance_scale}}
    ok, msg = support_check(cfg, history)
    checks["support"] = {"passed": ok, "detail": msg}
    k0 = history.frame_index(0.0)
    continuity = history.continuity_residual(k0) if 0 < k0 < history.n_frames - 1 else float("nan")
    say("scanning")
    report = scan_history(cfg, history)
    say("identities")
    results = identity_suite(cfg, history, tolerance_scale, seed)
    checks["identities"] = {"passed": all(r.passed for r in results),
                            "failed": [r.name for r in results if not r.passed]}
    history.save(out / "history")
    if cfg.text:
        (out / "scenario.cfg").write_text(cfg.text)
    (out / "report.json").write_text(report.to_json())
    (out / "report.csv").write_text(report.to_csv())
    write_identities_csv(results, out / "identities.csv")
    _write_json(out / "summary.json", _summary(cfg, history, report, results, checks, seed, continuity))
    passed = all(c["passed"] for c in checks.values())
    return RunResult(out, passed, checks, history, report, results)


# ---------------------------------------------------------------------------
# reporting
# ---------------------------------------------------------------------------


def _read_identities(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def emit_report(directory: str | Path) -> str:
    """Human-readable summary of a run directory."""
    d = Path(directory)
    missing = [f for f in ARTIFACTS if not (d / f).exists()]
    if missing:
        raise FileNotFoundError(f"{d} is incomplete; missing: {', '.join(missing)}")
    summary = json.loads((d / "summary.json").read_text())
    report = RadiationReport.from_json((d / "report.json").read_text())
    rows = _read_identities(d / "identities.csv")
    lines = [f"scenario {summary['scenario']} ({summary['mode']}), seed {summary['seed']}, "
             f"N = {summary['n_particles']}, eps = {summary['softening']:.4g}",
             f"r* = {summary['r_star']:.6g}, P1 = {summary['P1']:.6g}, "
             f"energy drift = {summary['energy_drift']:.3e}, continuity residual = {summary['continuity_residual']:.3e}",
             ""]
    title = "dipole radiation (EM)" if report.mode == "plasma" else "monopole scalar radiation (VN)"
    lines.append(f"== {title}: measured vs predicted flux density ==")
    if not report.points:
        lines.append("no scan points")
    else:
        lines.append(f"{'c':>8} {'r':>12} {'u':>10} {'measured':>14} {'predicted':>14} {'residual':>12} {'rel':>10}")
        for p in report.points:
            rel = p["residual"] / p["predicted"] if p["predicted"] else float("nan")
            lines.append(f"{p['c']:8.4g} {p['r']:12.6g} {p['u']:10.4g} {p['measured']:14.6e} "
                         f"{p['predicted']:14.6e} {p['residual']:12.4e} {rel:10.3e}")
        lines.append("fits:")
        for f in report.fits:
            if "exponent" in f:
                lines.append(f"  {f['name']:<18} u={f['u']:<10.4g} exponent = {f['exponent']:+.3f} "
                             f"± {f['half_width']:.3f}")
            else:
                lines.append(f"  {f['name']:<18} u={f['u']:<10.4g} {f.get('flag', '')}")
    for pr in report.extras.get("predictions", []):
        if "spherical_integrated" in pr:
            a, b = pr["integrated"], pr["spherical_integrated"]
            rel = abs(a - b) / max(abs(a), abs(b)) if max(abs(a), abs(b)) > 0 else 0.0
            lines.append(f"  total flux c={pr['c']:g} u={pr['u']:g}: sphere quadrature {a:.6e}, "
                         f"spherical closed form {b:.6e} (rel diff {rel:.2e})")
        else:
            lines.append(f"  total flux c={pr['c']:g} u={pr['u']:g}: {pr['integrated']:.6e}")
    lines.append("")
    npass = sum(r["pass"] == "true" for r in rows)
    lines.append(f"== identities: {npass}/{len(rows)} passed ==")
    for r in rows:
        lines.append(f"  {'PASS' if r['pass'] == 'true' else 'FAIL'} {r['name']:<32} t={float(r['t']):<12.5g} "
                     f"rel={float(r['rel_residual']):.3e} tol={float(r['tolerance']):.1e}")
    lines.append("")
    lines.append(f"overall: {'PASS' if summary['passed'] else 'FAIL'}")
    return "\n".join(lines) + "\n"
