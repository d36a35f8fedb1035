"""Flux densities, sphere quadrature, closed-form radiation predictions and order scans."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import fft, stats

from . import _kernels
from .kinetic import Grid, ParticleEnsemble, deposit_values
from .retarded import FieldSample, far_field, retarded_field
from .solver import SourceHistory

# ---------------------------------------------------------------------------
# sphere quadrature
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SphereQuadrature:
    """Gauss-Legendre in cos(theta) times the uniform rule in azimuth."""

    nodes: np.ndarray
    weights: np.ndarray

    @classmethod
    def gauss(cls, n_theta: int = 16, n_phi: int = 32) -> "SphereQuadrature":
        ct, wt = np.polynomial.legendre.leggauss(n_theta)
        phi = (np.arange(n_phi) + 0.5) * (2 * np.pi / n_phi)
        st = np.sqrt(1.0 - ct**2)
        nodes = np.stack([
            np.outer(st, np.cos(phi)).ravel(),
            np.outer(st, np.sin(phi)).ravel(),
            np.repeat(ct, n_phi),
        ], axis=1)
        weights = np.repeat(wt, n_phi) * (2 * np.pi / n_phi)
        return cls(nodes, weights)


def sphere_integrate(f: Callable[[np.ndarray], float] | np.ndarray, quad: SphereQuadrature) -> float:
    """``sum_i w_i f(omega_i)``; ``f`` may be a callable or precomputed node values."""
    if callable(f):
        vals = np.array([f(w) for w in quad.nodes], dtype=float)
    else:
        vals = np.asarray(f, dtype=float)
    return float(quad.weights @ vals)


# ---------------------------------------------------------------------------
# flux
# ---------------------------------------------------------------------------


def poynting_density(sample: FieldSample) -> float:
    """Bare outward flux ``xbar.(B x E)`` (EM) or ``xbar.(dtphi gradphi)`` (VN)."""
    xb = sample.xbar
    if sample.kind == "EM":
        return float(xb @ np.cross(sample.B, sample.E))
    return float(sample.dtphi * (xb @ sample.gradphi))


def flux_density(sample: FieldSample) -> float:
    """Energy flux per unit area and time through the sphere ``|x| = r``.

    ``(c/4pi) xbar.(B x E)`` for EM samples and ``(c^4/4pi) xbar.(dtphi gradphi)``
    for VN samples. The matter contribution is absent because the
    particles never reach the flux radius.
    """
    pref = sample.c / (4 * np.pi) if sample.kind == "EM" else sample.c**4 / (4 * np.pi)
    return pref * poynting_density(sample)


# ---------------------------------------------------------------------------
# predictions
# ---------------------------------------------------------------------------


def predict_dipole(DD, xbar, r: float, c: float) -> dict:
    """Dipole radiation: density ``-c^-4 r^-2 |xbar x DD|^2``, total ``-(2/3) c^-3 |DD|^2``."""
    DD = np.asarray(DD, dtype=float)
    xbar = np.asarray(xbar, dtype=float)
    if abs(np.linalg.norm(xbar) - 1.0) > 1e-12:
        raise ValueError("xbar must be a unit vector")
    cr = np.cross(xbar, DD)
    return {
        "density": -float(cr @ cr) / (c**4 * r**2),
        "integrated": -2.0 / 3.0 * float(DD @ DD) / c**3,
    }


def _pair_tensor(ens: ParticleEnsemble, eps: float) -> tuple[float, np.ndarray]:
    x = ens.x
    out = _kernels.pair_tensor(*(np.ascontiguousarray(x[:, a]) for a in range(3)), ens.w, eps * eps)
    S = float(out[0])
    T = np.array([[out[1], out[4], out[5]], [out[4], out[2], out[6]], [out[5], out[6], out[3]]])
    return S, T


def field_integral_tensor(ens: ParticleEnsemble, eps: float) -> np.ndarray:
    """Symmetric matrix ``F`` with ``xi.F.xi = int |xi . grad phi2|^2 dx`` (pair route).

    Uses the pair kernel ``2 pi (|xi|^2 - (xi.d)^2/|d|^2) / s`` with the
    softened distance ``s``; it reduces to the exact free-space double
    integral of point masses as the softening vanishes.
    """
    S, T = _pair_tensor(ens, eps)
    return 2 * np.pi * (S * np.eye(3) - T)


def field_integral_grid(ens: ParticleEnsemble, grid: Grid, bandwidth: float, xi) -> float:
    """``int |xi . grad phi2|^2 dx`` by node quadrature of the deposited density.

    The double integral ``sum rho rho K_xi h^6`` with the free-space kernel
    ``K_xi(d) = 2 pi (|xi|^2/|d| - (xi.d)^2/|d|^3)`` is evaluated as a padded
    FFT convolution; the singular node uses the cell average of ``K_xi``.
    """
    xi = np.asarray(xi, dtype=float)
    rho = deposit_values(ens.x, ens.w, grid, bandwidth)[0]
    n = grid.n
    m = 2 * n
    off = np.concatenate([np.arange(n), np.arange(-n, 0)]) * grid.h
    d = np.meshgrid(off, off, off, indexing="ij")
    r2 = d[0] ** 2 + d[1] ** 2 + d[2] ** 2
    r2[0, 0, 0] = 1.0
    proj = xi[0] * d[0] + xi[1] * d[1] + xi[2] * d[2]
    K = 2 * np.pi * (xi @ xi / np.sqrt(r2) - proj**2 / r2**1.5)
    # cube average of 1/|d| over a cell of side h is 2.3800772.../h; the
    # (xi.d)^2/|d|^3 part averages to a third of it by symmetry
    K[0, 0, 0] = 2 * np.pi * (xi @ xi) * (2.0 / 3.0) * _CUBE_INV_R / grid.h
    conv = fft.irfftn(fft.rfftn(rho, s=(m, m, m)) * fft.rfftn(K), s=(m, m, m))[:n, :n, :n]
    return float(np.sum(rho * conv) * grid.h**6)


# int over the unit cube centred at 0 of 1/|x|
_CUBE_INV_R = 2.380077276305


class RadiationTerm:
    """Quadratic-form representation of the direction-dependent radiation term.

    ``R(xi, t) = xi . M(t) . xi`` with
    ``M = -F/(4 pi) - sum w p p^T + 4 E_kin I``, where ``F`` is the field
    integral tensor. Frame matrices are computed lazily and cached on the
    history.
    """

    def __init__(self, history: SourceHistory, route: str = "pair"):
        if history.mode != "gravity":
            raise ValueError("the radiation term needs a gravity history")
        if route not in ("pair", "grid"):
            raise ValueError(f"unknown field-integral route {route!r}")
        self.h = history
        self.route = route
        self._cache = history._stacks.setdefault(("calR", route), {})

    def field_tensor(self, k: int) -> np.ndarray:
        key = ("F", k)
        if key not in self._cache:
            ens = self.h.ensembles[k]
            if self.route == "pair":
                self._cache[key] = field_integral_tensor(ens, self.h.eps)
            else:
                F = np.empty((3, 3))
                e = np.eye(3)
                for a in range(3):
                    F[a, a] = field_integral_grid(ens, self.h.grid, self.h.bandwidth, e[a])
                for a, b in ((0, 1), (0, 2), (1, 2)):
                    s = field_integral_grid(ens, self.h.grid, self.h.bandwidth, e[a] + e[b])
                    F[a, b] = F[b, a] = 0.5 * (s - F[a, a] - F[b, b])
                self._cache[key] = F
        return self._cache[key]

    def momentum_tensor(self, k: int) -> np.ndarray:
        ens = self.h.ensembles[k]
        return (ens.w[:, None] * ens.p).T @ ens.p

    def matrix(self, k: int) -> np.ndarray:
        return (-self.field_tensor(k) / (4 * np.pi) - self.momentum_tensor(k)
                + 4 * self.h.ekin[k] * np.eye(3))

    def frames_for(self, u: float) -> range:
        self.h.check_window(u, u, "radiation term")
        k = int(np.floor((u - self.h.t0) / self.h.dt_rec + 1e-9))
        return range(k - 2, min(k + 4, self.h.n_frames))

    def matrices(self, u: float) -> tuple[np.ndarray, np.ndarray]:
        """``M(u)`` and ``dM/du`` by cubic Hermite with 5-point slopes (exact stencil at frames)."""
        ks = self.frames_for(u)
        series = np.zeros((self.h.n_frames, 3, 3))
        for k in ks:
            series[k] = self.matrix(k)
        M = self.h.interpolate_scalar(series, u)
        dM = self.h.interpolate_scalar(series, u, derivative=True)
        return M, dM

    def __call__(self, xbar, u: float) -> dict:
        M, dM = self.matrices(u)
        xbar = np.asarray(xbar, dtype=float)
        return {"R": float(xbar @ M @ xbar), "dR_dt": float(xbar @ dM @ xbar)}


def compute_calR(history: SourceHistory, xbar, u: float, route: str = "pair") -> dict:
    """Radiation term ``R(xbar, u)`` and its u-derivative.

    ``R = -(1/4pi) int |xbar.grad phi2|^2 - sum w (xbar.p)^2 + 4 E_kin``.
    The field integral uses the pair kernel (``route="pair"``) or node
    quadrature of the deposited density (``route="grid"``); the u-derivative
    is the 5-point stencil at frame times and the derivative of the cubic
    Hermite interpolant in between.
    """
    return RadiationTerm(history, route)(xbar, u)


def predict_vn(history: SourceHistory, directions, u: float, r: float, c: float,
               quad: SphereQuadrature | None = None, route: str = "pair") -> dict:
    """Monopole scalar radiation predictions.

    ``density = -c^-9 r^-2 (dR/dt)^2`` for every direction in ``directions``
    (a single unit vector gives a scalar), ``integrated =
    -(1/(4 pi c^5)) oint (dR/dt)^2`` over ``quad`` and
    ``spherical_integrated = -(64/9) c^-5 (dE_kin/dt)^2``.
    """
    term = RadiationTerm(history, route)
    _, dM = term.matrices(u)
    d = np.asarray(directions, dtype=float)
    single = d.ndim == 1
    d = np.atleast_2d(d)
    dR = np.einsum("ia,ab,ib->i", d, dM, d)
    quad = quad or SphereQuadrature.gauss()
    dRq = np.einsum("ia,ab,ib->i", quad.nodes, dM, quad.nodes)
    dek = float(history.interpolate_scalar(history.ekin, u, derivative=True))
    dens = -dR**2 / (c**9 * r**2)
    return {
        "density": float(dens[0]) if single else dens,
        "dR_dt": float(dR[0]) if single else dR,
        "integrated": -sphere_integrate(dRq**2, quad) / (4 * np.pi * c**5),
        "spherical_integrated": -64.0 / 9.0 * dek**2 / c**5,
        "dEkin_dt": dek,
    }


# ---------------------------------------------------------------------------
# order scans
# ---------------------------------------------------------------------------


@dataclass
class RadiationReport:
    """Measured versus predicted flux densities over a (c, r, u) scan.

    ``measured`` is the bare flux ``xbar.(B x E)`` or ``xbar.(dtphi gradphi)``
    of the exact retarded field at ``x = r xbar``, ``t = u + r/c``;
    ``predicted`` is the matching closed-form density; ``residual`` is their
    difference.
    """

    scenario: str
    mode: str
    c_list: list
    r_list: list
    u_list: list
    points: list = field(default_factory=list)
    fits: list = field(default_factory=list)
    tolerances: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "scenario": self.scenario,
            "mode": self.mode,
            "axes": {"c": self.c_list, "r": self.r_list, "u": self.u_list},
            "points": self.points,
            "fits": self.fits,
            "tolerances": self.tolerances,
            "extras": self.extras,
        }
        return json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["c", "r", "u", "measured", "predicted", "residual"])
        for p in self.points:
            w.writerow([repr(float(p[k])) for k in ("c", "r", "u", "measured", "predicted", "residual")])
        return buf.getvalue()

    @classmethod
    def from_json(cls, text: str) -> "RadiationReport":
        d = json.loads(text)
        ax = d.get("axes", {})
        return cls(d["scenario"], d["mode"], ax.get("c", []), ax.get("r", []), ax.get("u", []),
                   d.get("points", []), d.get("fits", []), d.get("tolerances", {}), d.get("extras", {}))

    def fit(self, name: str) -> dict | None:
        for f in self.fits:
            if f["name"] == name:
                return f
        return None


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def fit_exponent(xs: Sequence[float], ys: Sequence[float]) -> dict:
    """Least-squares slope of ``log|y|`` against ``log x`` with a 95% half-width."""
    lx = np.log(np.asarray(xs, dtype=float))
    ly = np.log(np.abs(np.asarray(ys, dtype=float)))
    n = lx.size
    if n < 2:
        raise ValueError("need at least two points to fit an exponent")
    A = np.column_stack([lx, np.ones(n)])
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ coef
    rss = float(resid @ resid)
    if n > 2:
        sxx = float(np.sum((lx - lx.mean()) ** 2))
        se = math.sqrt(rss / (n - 2) / sxx)
        half = float(stats.t.ppf(0.975, n - 2) * se)
    else:
        half = float("nan")
    return {"exponent": float(coef[0]), "intercept": float(coef[1]), "half_width": half,
            "fit_residual": math.sqrt(rss / n)}


def measure_point(history: SourceHistory, xbar, u: float, r: float, c: float) -> dict:
    """One scan point: exact retarded flux and closed-form prediction."""
    xbar = np.asarray(xbar, dtype=float)
    s = retarded_field(history, u + r / c, r * xbar, c, u=u)
    measured = poynting_density(s)
    if history.mode == "plasma":
        DD = history.interpolate_scalar(history.DD, u)
        pred = predict_dipole(DD, xbar, r, c)["density"]
        signal = pred
    else:
        pred = predict_vn(history, xbar, u, r, c)["density"]
        signal = pred
    return {"c": float(c), "r": float(r), "u": float(u), "measured": measured, "predicted": pred,
            "residual": measured - pred, "signal": signal, "direction": xbar.tolist()}


def order_scan(history: SourceHistory, c_list, r_list, u_list, xbar, *, scenario: str = "",
               r_fit_c: float | None = None, c_fit_r: float | None = None,
               noise_floor: float = 1e-12, progress=None) -> RadiationReport:
    """Scan (c, r, u) and fit residual exponents.

    The r-fit uses the points at ``c = r_fit_c`` (default: the largest c)
    and fits ``|residual|`` against ``r``. The c-fit uses the points at
    ``r = c_fit_r`` (default: the largest r) and fits ``|residual|/|signal|``
    against ``c``. A scan whose predicted signal is below ``noise_floor``
    times the measured magnitude scale everywhere is flagged static and not
    fitted.
    """
    if not len(c_list) or not len(r_list) or not len(u_list):
        raise ValueError("scan axes must be non-empty")
    c_list = [float(c) for c in c_list]
    r_list = [float(r) for r in r_list]
    u_list = [float(u) for u in u_list]
    r_fit_c = float(r_fit_c) if r_fit_c is not None else max(c_list)
    c_fit_r = float(c_fit_r) if c_fit_r is not None else max(r_list)
    report = RadiationReport(scenario, history.mode, c_list, r_list, u_list)
    pairs = [(c, r) for c in c_list for r in r_list]
    pairs += [(r_fit_c, r) for r in r_list if (r_fit_c, r) not in pairs]
    pairs += [(c, c_fit_r) for c in c_list if (c, c_fit_r) not in pairs]
    for u in u_list:
        for c, r in pairs:
            report.points.append(measure_point(history, xbar, u, r, c))
            if progress:
                progress(f"c={c:g} r={r:g} u={u:g}")
    for u in u_list:
        pts = [p for p in report.points if p["u"] == u]
        scale = max(abs(p["measured"]) for p in pts) or 1.0
        if all(abs(p["signal"]) <= noise_floor * max(scale, 1e-300) for p in pts) or all(p["signal"] == 0 for p in pts):
            report.fits.append({"name": "static", "u": u, "flag": "no fit: signal below noise floor"})
            continue
        rp = sorted((p for p in pts if p["c"] == r_fit_c and p["r"] in r_list), key=lambda p: p["r"])
        if len(rp) >= 2:
            f = fit_exponent([p["r"] for p in rp], [p["residual"] for p in rp])
            f.update(name="r_exponent", u=u, fixed_c=r_fit_c, relative_to_signal=False)
            report.fits.append(f)
            g = fit_exponent([p["r"] for p in rp], [p["measured"] for p in rp])
            g.update(name="r_signal_exponent", u=u, fixed_c=r_fit_c, relative_to_signal=False)
            report.fits.append(g)
        cp = sorted((p for p in pts if p["r"] == c_fit_r and p["c"] in c_list), key=lambda p: p["c"])
        if len(cp) >= 2:
            f = fit_exponent([p["c"] for p in cp], [p["residual"] / p["signal"] for p in cp])
            f.update(name="c_exponent", u=u, fixed_r=c_fit_r, relative_to_signal=True)
            report.fits.append(f)
    return report
