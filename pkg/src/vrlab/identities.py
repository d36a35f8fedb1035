"""Runnable checks of the integral identities behind the radiation formulas."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from . import _kernels
from .radiation import RadiationTerm, SphereQuadrature, field_integral_grid, poynting_density, predict_vn
from .retarded import far_field
from .solver import SourceHistory, WindowError

STENCIL = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
OFFSETS = (-2, -1, 0, 1, 2)


@dataclass(frozen=True)
class IdentityResult:
    """One identity evaluated at one instant.

    ``left`` and ``right`` are stored before differencing (scalars or
    3-vectors). ``rel_residual`` divides by ``max(|left|, |right|, scale)``
    where ``scale`` is the identity's natural magnitude when both sides
    should vanish.
    """

    name: str
    t: float
    left: float | np.ndarray
    right: float | np.ndarray
    abs_residual: float
    rel_residual: float
    tolerance: float
    passed: bool
    budget: dict = field(default_factory=dict)

    @classmethod
    def build(cls, name: str, t: float, left, right, tolerance: float, scale: float = 0.0,
              budget: dict | None = None) -> "IdentityResult":
        left = np.asarray(left, dtype=float)
        right = np.asarray(right, dtype=float)
        ab = _mag(left - right)
        denom = max(_mag(left), _mag(right), abs(float(scale)))
        rel = ab / denom if denom > 0 else 0.0
        as_out = lambda a: float(a) if a.ndim == 0 else a
        return cls(name, float(t), as_out(left), as_out(right), ab, rel, float(tolerance),
                   bool(rel <= tolerance), dict(budget or {}))


def _mag(a: np.ndarray) -> float:
    # scaled Euclidean norm; squaring tiny components directly underflows
    m = float(np.max(np.abs(a))) if a.size else 0.0
    return m * float(np.linalg.norm(a / m)) if m > 0 and np.isfinite(m) else m


def _cols(a: np.ndarray):
    return tuple(np.ascontiguousarray(a[:, k]) for k in range(3))


def _unit(xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    n = np.linalg.norm(xi)
    if not n > 0:
        raise ValueError("xi must be non-zero")
    return xi / n


def _stencil_frame(history: SourceHistory, t: float) -> int:
    k = history.frame_index(t)
    if not 2 <= k <= history.n_frames - 3:
        raise WindowError(f"t = {t} is too close to the history boundary for a 5-point stencil")
    return k


def _three_point(series: np.ndarray, k: int, dt: float) -> np.ndarray:
    return (series[k + 1] - series[k - 1]) / (2 * dt)


def dt_phi2_at_particles(history: SourceHistory, k: int) -> np.ndarray:
    """``d/dt phi2(t, x)`` at fixed ``x = x_i(t_k)`` by a 5-point frame stencil.

    Each particle's own contribution is removed per frame, matching the
    pair-excluding particle field.
    """
    ens = history.ensembles[k]
    tx = _cols(ens.x)
    eps2 = history.eps**2
    acc = np.zeros(len(ens))
    for off, c in zip(OFFSETS, STENCIL):
        if c == 0.0:
            continue
        src = history.ensembles[k + off]
        pot = _kernels.pair_potential(*tx, *_cols(src.x), src.w, eps2)
        self_term = src.w / np.sqrt(np.sum((ens.x - src.x) ** 2, axis=1) + eps2)
        acc += c * -(pot - self_term)
    return acc / history.dt_rec


def _xi_label(xi: np.ndarray) -> str:
    for lab, e in zip("xyz", np.eye(3)):
        if np.array_equal(xi, e):
            return lab
    return "xi"


def check_vp_identities(history: SourceHistory, t: float, xi, tolerance: float = 1e-2,
                        route: str = "pair") -> list[IdentityResult]:
    """The five Vlasov-Poisson integral identities at frame time ``t``.

    1. ``sum w grad phi2 = 0``
    2. ``sum w (dt phi2 + p.grad phi2) = -2 dEkin/dt``
    3. ``sum w p.grad phi2 = -dEkin/dt``
    4. ``sum w (xi.p)(xi.grad phi2) = -1/2 d/dt sum w (xi.p)^2``
    5. ``sum w (xi.x)(xi.grad phi2) = -|xi|^2 Epot - (1/4pi) int |xi.grad phi2|^2``

    Particle sums evaluate the f-weighted integrals, 5-point frame stencils
    the time derivatives, and the pair kernel (``route="pair"``) or grid
    quadrature (``route="grid"``) the field integral. ``xi`` is one vector
    or a sequence of vectors; with several, identities 4 and 5 are repeated
    per vector and named ``<identity>@x``, ``@y``, ``@z`` (coordinate axes)
    or ``@xi``.
    """
    if history.mode != "gravity":
        raise ValueError("the Vlasov-Poisson identities need a gravity history")
    xis = np.atleast_2d(np.asarray(xi, dtype=float))
    k = _stencil_frame(history, t)
    ens = history.ensembles[k]
    w, x, p = ens.w, ens.x, ens.p
    g = history.particle_field(k)
    dt = history.dt_rec
    n = len(ens)
    rms = float(np.sqrt(np.sum(w * np.sum(x**2, axis=1)) / np.sum(w)))
    soft = (history.eps / rms) ** 2
    roundoff = np.finfo(float).eps * np.sqrt(n)

    def deriv(series):
        d5 = history.stencil_derivative(series, k)
        d3 = _three_point(np.asarray(series, dtype=float), k, dt)
        return d5, abs(d5 - d3) / max(abs(d5), 1e-300)

    out = []
    vec = w @ g
    out.append(IdentityResult.build(
        "vp1_force_balance", t, vec, np.zeros(3), tolerance,
        scale=float(np.sum(w * np.linalg.norm(g, axis=1))),
        budget={"roundoff": roundoff, "dominant": "roundoff"}))

    dek, st = deriv(history.ekin)
    pg = float(np.sum(w * np.sum(p * g, axis=1)))
    dphi = dt_phi2_at_particles(history, k)
    out.append(IdentityResult.build(
        "vp2_transport_potential", t, float(w @ dphi) + pg, -2 * dek, tolerance,
        budget={"stencil": st, "dominant": "stencil"}))
    out.append(IdentityResult.build(
        "vp3_power", t, pg, -dek, tolerance, budget={"stencil": st, "dominant": "stencil"}))

    F = RadiationTerm(history, "pair").field_tensor(k) if route == "pair" else None
    for v in xis:
        sfx = f"@{_xi_label(v)}" if len(xis) > 1 else ""
        pxi = np.array([e.w @ (e.p @ v) ** 2 for e in history.ensembles[k - 2:k + 3]])
        pad = np.zeros(history.n_frames)
        pad[k - 2:k + 3] = pxi
        dpx, st4 = deriv(pad)
        out.append(IdentityResult.build(
            "vp4_directional_power" + sfx, t, float(w @ ((p @ v) * (g @ v))), -0.5 * dpx, tolerance,
            scale=float(w @ np.abs((p @ v) * (g @ v))),
            budget={"stencil": st4, "dominant": "stencil"}))

        if route == "pair":
            Fxi = float(v @ F @ v)
            budget = {"softening": soft, "dominant": "softening"}
        else:
            Fxi = field_integral_grid(ens, history.grid, history.bandwidth, v)
            budget = {"softening": soft, "grid": (history.bandwidth / rms) ** 2,
                      "noise": 1 / np.sqrt(n), "dominant": "grid"}
        out.append(IdentityResult.build(
            "vp5_virial_field" + sfx, t, float(w @ ((x @ v) * (g @ v))),
            -float(v @ v) * history.epot[k] - Fxi / (4 * np.pi), tolerance, budget=budget))
    return out


def check_radiation_identities(history: SourceHistory, xbar, u: float, r: float, c: float,
                               tolerance: float = 1e-6) -> list[IdentityResult]:
    """Algebraic far-field relations at one (xbar, u, r, c).

    EM: ``xbar.E = 0``, ``xbar.B = 0``, ``xbar x E = B`` and
    ``xbar.(B x E) = -|xbar x E|^2`` on the transverse far field; the direct
    form's agreement is reported alongside. VN: ``xbar.grad phi =
    -dtphi / c``.
    """
    xbar = np.asarray(xbar, dtype=float)
    s = far_field(history, xbar, u, r, c)
    t = s.t
    out = []
    if s.kind == "EM":
        E, B = s.E, s.B
        nE, nB = float(np.linalg.norm(E)), float(np.linalg.norm(B))
        cr = np.cross(xbar, E)
        out.append(IdentityResult.build("far_xbar_dot_E", t, float(xbar @ E), 0.0, tolerance, scale=nE))
        out.append(IdentityResult.build("far_xbar_dot_B", t, float(xbar @ B), 0.0, tolerance, scale=nB))
        out.append(IdentityResult.build("far_xbar_cross_E_minus_B", t, cr, B, tolerance))
        out.append(IdentityResult.build("far_flux_equals_minus_cross_sq", t, poynting_density(s),
                                        -float(cr @ cr), tolerance))
        out.append(IdentityResult.build(
            "far_direct_vs_transverse", t, s.extra["E_direct"], E, 1e-3, scale=s.extra["direct_terms"],
            budget={"continuity": s.extra["direct_mismatch"], "dominant": "continuity"}))
    else:
        gp = float(xbar @ s.gradphi)
        out.append(IdentityResult.build("far_vn_gradient_vs_time", t, gp, -s.dtphi / c, tolerance))
    return out


def check_spherical_reductions(history: SourceHistory, u: float, xbar=(0.0, 0.0, 1.0),
                               tolerance: float = 1e-3, quad: SphereQuadrature | None = None
                               ) -> list[IdentityResult]:
    """Reductions of the radiation term for spherically symmetric sources.

    ``dR/dt = (8/3) dEkin/dt``, the integrated scalar flux against its
    spherical closed form, the two moment reductions at the nearest frame,
    and the spread of ``dR/dt`` over the six axis directions.
    """
    term = RadiationTerm(history)
    xbar = _unit(xbar)
    _, dM = term.matrices(u)
    dek = float(history.interpolate_scalar(history.ekin, u, derivative=True))
    out = [IdentityResult.build("sph_dR_dt", u, float(xbar @ dM @ xbar), 8.0 / 3.0 * dek, tolerance)]
    pred = predict_vn(history, xbar, u, 1.0, 1.0, quad=quad)
    out.append(IdentityResult.build("sph_integrated_flux", u, pred["integrated"],
                                    pred["spherical_integrated"], tolerance))
    k = history.frame_index(history.t0 + round((u - history.t0) / history.dt_rec) * history.dt_rec)
    ens = history.ensembles[k]
    F = term.field_tensor(k)
    out.append(IdentityResult.build("sph_field_integral", history.times[k], float(xbar @ F @ xbar) / (4 * np.pi),
                                    -2.0 / 3.0 * history.epot[k], tolerance))
    out.append(IdentityResult.build("sph_momentum_moment", history.times[k], float(ens.w @ (ens.p @ xbar) ** 2),
                                    2.0 / 3.0 * history.ekin[k], tolerance))
    axes = np.vstack([np.eye(3), -np.eye(3)])
    vals = np.einsum("ia,ab,ib->i", axes, dM, axes)
    mean = float(np.mean(vals))
    out.append(IdentityResult.build("sph_axis_spread", u, float(vals.max() - vals.min()), 0.0, tolerance,
                                    scale=abs(mean), budget={"values": vals.tolist()}))
    return out


CSV_HEADER = ["name", "t", "left", "right", "abs_residual", "rel_residual", "tolerance", "pass"]


def _fmt(v) -> str:
    a = np.asarray(v, dtype=float)
    if a.ndim == 0:
        return repr(float(a))
    return ";".join(repr(float(e)) for e in a.ravel())


def write_identities_csv(results: Iterable[IdentityResult], dest: str | Path | TextIO) -> None:
    """Flat CSV, vectors written as ``;``-separated components."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in results:
        w.writerow([r.name, _fmt(r.t), _fmt(r.left), _fmt(r.right), _fmt(r.abs_residual),
                    _fmt(r.rel_residual), _fmt(r.tolerance), str(r.passed).lower()])
    if isinstance(dest, (str, Path)):
        Path(dest).write_text(buf.getvalue())
    else:
        dest.write(buf.getvalue())
