"""Retarded and far-field evaluation of the electromagnetic and scalar-gravity fields.

Sources are the gridded Newtonian moments of a :class:`SourceHistory`.
Spatial derivatives live on the source (4th-order stencils on the grid),
time dependence comes from cubic Hermite interpolation of the frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .solver import SourceHistory, WindowError

EXACT, FAR, FAR_TAYLOR = 1, 0, 2


@dataclass(frozen=True)
class FieldSample:
    """Field values at one spacetime point for one value of ``c``.

    For ``kind == "EM"`` the pair is (E, B); for ``kind == "VN"`` it is
    (dtphi, gradphi). ``extra`` holds auxiliary results, e.g. the direct
    far-field form next to the transverse one.
    """

    t: float
    x: np.ndarray
    c: float
    kind: str
    provenance: str
    E: np.ndarray | None = None
    B: np.ndarray | None = None
    dtphi: float | None = None
    gradphi: np.ndarray | None = None
    u: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def r(self) -> float:
        return float(np.linalg.norm(self.x))

    @property
    def xbar(self) -> np.ndarray:
        return self.x / self.r


def retarded_time(x, t: float, y, c: float) -> float:
    """``t - |y - x| / c``."""
    if not c > 0:
        raise ValueError("c must be positive")
    return t - float(np.linalg.norm(np.asarray(y, dtype=float) - np.asarray(x, dtype=float))) / c


def _kind(history: SourceHistory, kind: str | None) -> str:
    expected = "EM" if history.mode == "plasma" else "VN"
    if kind is None:
        return expected
    if kind != expected:
        raise ValueError(f"{kind} fields need a {'plasma' if kind == 'EM' else 'gravity'} history")
    return kind


def _source_time_range(history: SourceHistory, x: np.ndarray, u: float, c: float, mode: int):
    y = history.nodes
    r = float(np.linalg.norm(x))
    if mode == EXACT:
        dist = np.linalg.norm(x - y, axis=1)
        shift = (2.0 * (y @ x) - np.sum(y * y, axis=1)) / (r + dist)
    else:
        shift = y @ (x / r)
    return u + shift.min() / c, u + shift.max() / c


class _Quadrature:
    """Hermite-interpolated node sums over the active grid of a history."""

    def __init__(self, history: SourceHistory):
        self.h = history
        self.nodes = np.ascontiguousarray(history.nodes)
        self.h3 = history.grid.h ** 3
        self.w = np.empty(self.nodes.shape[0])

    def sums(self, stack: np.ndarray, u: float, x: np.ndarray, c: float, mode: int):
        lo, hi = _source_time_range(self.h, x, u, c, FAR if mode == FAR_TAYLOR else mode)
        if mode == FAR_TAYLOR:
            lo = hi = u
        self.h.check_window(lo, hi, "retarded quadrature")
        out = np.empty((2, stack.shape[2]))
        if mode == FAR_TAYLOR:
            out[:] = self._taylor(stack, u, x, c)
        else:
            bad = _kernels.retarded_sum(self.nodes, stack, self.h.t0, self.h.dt_rec, u,
                                        np.asarray(x, dtype=float), c, mode, self.w, out)
            if bad >= 0:
                raise WindowError(f"source node {bad} falls outside the recorded window")
        return out * self.h3

    def _taylor(self, stack, u, x, c):
        # first-order expansion in the shift c^{-1} xbar.y about u
        xb = np.asarray(x, dtype=float) / np.linalg.norm(x)
        shift = self.nodes @ xb / c
        v, dv = hermite_at(self.h, stack, u)
        return np.stack([(v + shift[:, None] * dv).sum(axis=0), dv.sum(axis=0)])


def hermite_at(history: SourceHistory, stack: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Node-wise Hermite value and time derivative of ``stack`` at one time ``t``."""
    history.check_window(t, t)
    dt = history.dt_rec
    s = (t - history.t0) / dt
    k = int(np.floor(s))
    tau = s - k
    slope = lambda i: (stack[i - 2] - 8 * stack[i - 1] + 8 * stack[i + 1] - stack[i + 2]) / 12.0
    y0, y1, m0, m1 = stack[k], stack[k + 1], slope(k), slope(k + 1)
    t2, t3 = tau * tau, tau**3
    v = (2 * t3 - 3 * t2 + 1) * y0 + (t3 - 2 * t2 + tau) * m0 + (-2 * t3 + 3 * t2) * y1 + (t3 - t2) * m1
    dv = ((6 * t2 - 6 * tau) * y0 + (3 * t2 - 4 * tau + 1) * m0 + (-6 * t2 + 6 * tau) * y1
          + (3 * t2 - 2 * tau) * m1) / dt
    return v, dv


def _quad(history: SourceHistory) -> _Quadrature:
    q = history._stacks.get("_quad")
    if q is None:
        q = _Quadrature(history)
        history._stacks["_quad"] = q
    return q


def vn_stacks(history: SourceHistory, c: float) -> tuple[np.ndarray, np.ndarray]:
    """Matter density ``rho0 + c^-2 mu2`` and its gradient, per frame and active node."""
    key = ("vn", float(c))
    cached = history._stacks.get(key)
    if cached is None:
        mu = np.ascontiguousarray(history.stack("rho") + history.stack("mu2") / c**2)
        gmu = np.ascontiguousarray(history.stack("grad_rho") + history.stack("grad_mu2") / c**2)
        history._stacks = {k: v for k, v in history._stacks.items() if not (isinstance(k, tuple) and k[0] == "vn")}
        cached = (mu, gmu)
        history._stacks[key] = cached
    return cached


def retarded_field(history: SourceHistory, t: float, x, c: float, kind: str | None = None,
                   u: float | None = None) -> FieldSample:
    """Exact retarded field at ``(t, x)`` by quadrature over the moment grid.

    EM: ``E = -sum h^3 (grad rho + c^-2 dt j)(t_y, y)/|y - x|`` and
    ``B = c^-1 sum h^3 curl j(t_y, y)/|y - x|``.
    VN: ``dtphi = -c^-2 sum h^3 dt mu(t_y, y)/|y - x|`` and
    ``gradphi = -c^-2 sum h^3 grad mu(t_y, y)/|y - x|``.

    Passing ``u = t - |x|/c`` avoids the cancellation in ``t - |x|/c`` for
    very large ``|x|``; ``t`` is then only recorded.

    Raises
    ------
    WindowError
        If any retarded source time lies outside the interpolable window.
    """
    kind = _kind(history, kind)
    x = np.asarray(x, dtype=float)
    r = float(np.linalg.norm(x))
    if u is None:
        u = t - r / c
    q = _quad(history)
    if kind == "EM":
        grad_rho = q.sums(history.stack("grad_rho"), u, x, c, EXACT)
        j = q.sums(history.stack("j"), u, x, c, EXACT)
        curl = q.sums(history.stack("curl_j"), u, x, c, EXACT)
        E = -(grad_rho[0] + j[1] / c**2)
        B = curl[0] / c
        return FieldSample(t, x, c, kind, "exact-retarded", E=E, B=B, u=u)
    mu, gmu = vn_stacks(history, c)
    m = q.sums(mu, u, x, c, EXACT)
    g = q.sums(gmu, u, x, c, EXACT)
    return FieldSample(t, x, c, kind, "exact-retarded", dtphi=float(-m[1, 0] / c**2),
                       gradphi=-g[0] / c**2, u=u)


def far_field(history: SourceHistory, xbar, u: float, r: float, c: float, kind: str | None = None,
              taylor: bool = False, agreement_tol: float | None = None) -> FieldSample:
    """Radiation-zone field at ``x = r xbar``, ``t = u + r/c``.

    EM samples carry the transverse form in ``E``/``B`` (u-derivative of the
    projected current integral by a 5-point stencil with spacing ``dt_rec``)
    and the direct form in ``extra["E_direct"]``/``extra["B_direct"]``;
    ``extra["direct_mismatch"]`` is their relative difference and
    ``extra["direct_terms"]`` the size of the largest direct-form term. With
    ``agreement_tol`` set, a larger mismatch raises ``AssertionError``.
    ``taylor`` replaces the shifted source time by a first-order expansion.
    """
    kind = _kind(history, kind)
    xbar = np.asarray(xbar, dtype=float)
    if abs(np.linalg.norm(xbar) - 1.0) > 1e-12:
        raise ValueError("xbar must be a unit vector")
    mode = FAR_TAYLOR if taylor else FAR
    q = _quad(history)
    x = r * xbar
    t = u + r / c
    if kind == "EM":
        dt = history.dt_rec
        js = [q.sums(history.stack("j"), u + s * dt, xbar, c, mode)[0] for s in (-2, -1, 1, 2)]
        dJ = (js[0] - 8 * js[1] + 8 * js[2] - js[3]) / (12 * dt)
        E = -(dJ - (xbar @ dJ) * xbar) / (c**2 * r)
        B = -np.cross(xbar, dJ) / (c**2 * r)
        grad_rho = q.sums(history.stack("grad_rho"), u, xbar, c, mode)
        j = q.sums(history.stack("j"), u, xbar, c, mode)
        curl = q.sums(history.stack("curl_j"), u, xbar, c, mode)
        E_dir = -(grad_rho[0] + j[1] / c**2) / r
        B_dir = curl[0] / (c * r)
        scale = max(np.linalg.norm(E), 1e-300)
        mismatch = max(np.linalg.norm(E_dir - E), np.linalg.norm(B_dir - B)) / scale
        terms = max(np.linalg.norm(grad_rho[0]), np.linalg.norm(j[1]) / c**2) / r
        if agreement_tol is not None and mismatch > agreement_tol:
            raise AssertionError(f"direct and transverse far fields differ by {mismatch:.3e}")
        return FieldSample(t, x, c, kind, "far-field", E=E, B=B, u=u,
                           extra={"E_direct": E_dir, "B_direct": B_dir, "direct_mismatch": mismatch,
                                  "direct_terms": terms})
    mu, gmu = vn_stacks(history, c)
    m = q.sums(mu, u, xbar, c, mode)
    g = q.sums(gmu, u, xbar, c, mode)
    return FieldSample(t, x, c, kind, "far-field", dtphi=float(-m[1, 0] / (c**2 * r)),
                       gradphi=-g[0] / (c**2 * r), u=u)
