"""Particle solver for the Newtonian-limit plasma and gravity systems.

The history recorded here is the single source consumed by the retarded
field, radiation and identity modules.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import _kernels
from .kinetic import (
    EnergyEntry,
    Grid,
    MomentField,
    ParticleEnsemble,
    deposit_values,
    dipole_moment,
    kinetic_energy,
    read_snapshot,
    write_snapshot,
)

log = logging.getLogger(__name__)

MODES = ("plasma", "gravity")
SCALARS_HEADER = ["t", "Dx", "Dy", "Dz", "DDx", "DDy", "DDz", "Ekin", "Epot"]


class EnergyDriftError(RuntimeError):
    """Raised when the recorded total energy leaves the configured tolerance."""

    def __init__(self, frame: int, drift: float, tol: float):
        super().__init__(f"energy drift {drift:.3e} exceeds tolerance {tol:.1e} at frame {frame}")
        self.frame = frame
        self.drift = drift


class WindowError(ValueError):
    """Raised when a requested time lies outside the recorded history."""


def _cols(a: np.ndarray):
    return tuple(np.ascontiguousarray(a[:, k]) for k in range(3))


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def field_at(ens: ParticleEnsemble, x: np.ndarray, mode: str, eps: float) -> np.ndarray:
    """Softened direct-sum field at arbitrary points.

    Returns ``E0 = sum q (x - y)/s^3`` in plasma mode and
    ``grad phi2 = sum m (x - y)/s^3`` in gravity mode.
    """
    _check_mode(mode)
    if not eps > 0:
        raise ValueError("softening must be positive")
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    g = _kernels.pair_field(*_cols(pts), *_cols(ens.x), ens.source_weights(mode), eps * eps)
    out = np.stack(g, axis=1)
    return out[0] if np.ndim(x) == 1 else out


def _self_field(ens: ParticleEnsemble, mode: str, eps: float, with_potential: bool):
    q = ens.source_weights(mode)
    if with_potential:
        gx, gy, gz, pot = _kernels.pair_field_potential(*_cols(ens.x), *_cols(ens.x), q, eps * eps)
        return np.stack([gx, gy, gz], axis=1), pot - q / eps
    g = _kernels.pair_field(*_cols(ens.x), *_cols(ens.x), q, eps * eps)
    return np.stack(g, axis=1), None


def acceleration(ens: ParticleEnsemble, mode: str, eps: float, field: np.ndarray | None = None) -> np.ndarray:
    """``sign * E0`` for plasma, ``-grad phi2`` for gravity."""
    if field is None:
        field, _ = _self_field(ens, mode, eps, False)
    if mode == "plasma":
        return ens.species[:, None] * field
    return -field


def step(ens: ParticleEnsemble, dt: float, mode: str, eps: float,
         acc: np.ndarray | None = None) -> ParticleEnsemble:
    """One kick-drift-kick step of length ``dt`` (negative ``dt`` steps backwards)."""
    _check_mode(mode)
    if acc is None:
        acc = acceleration(ens, mode, eps)
    p = ens.p + 0.5 * dt * acc
    x = ens.x + dt * p
    moved = ens.with_state(ens.time + dt, x, p)
    acc1 = acceleration(moved, mode, eps)
    return moved.with_state(moved.time, x, p + 0.5 * dt * acc1)


def dipole_accel(ens: ParticleEnsemble, eps: float, field: np.ndarray | None = None) -> np.ndarray:
    """``sum_i w_i E0(x_i)``: unsigned weights, signed sources, no self term."""
    if field is None:
        field, _ = _self_field(ens, "plasma", eps, False)
    return ens.w @ field


@dataclass(frozen=True)
class Numerics:
    """Integration and recording parameters."""

    dt: float
    dt_rec: float
    eps: float
    grid_n: int = 64
    bandwidth_cells: int = 2
    energy_tol: float = 1e-5

    @property
    def substeps(self) -> int:
        m = self.dt_rec / self.dt
        mr = int(round(m))
        if mr < 1 or abs(m - mr) > 1e-9 * m:
            raise ValueError(f"dt = {self.dt} must divide dt_rec = {self.dt_rec}")
        return mr


@dataclass
class _Frame:
    ens: ParticleEnsemble
    energy: EnergyEntry
    D: np.ndarray
    DD: np.ndarray
    potential: np.ndarray | None  # softened potential at particles (gravity only)
    field: np.ndarray | None  # field at particles


def _frame(ens: ParticleEnsemble, mode: str, eps: float, field: np.ndarray, pot: np.ndarray) -> _Frame:
    q = ens.source_weights(mode)
    epot = 0.5 * float(q @ pot)
    if mode == "gravity":
        epot = -epot
        D = ens.w @ ens.x
        DD = -(ens.w @ field)
    else:
        D = dipole_moment(ens)
        DD = dipole_accel(ens, eps, field)
    e = EnergyEntry(ens.time, kinetic_energy(ens), epot)
    return _Frame(ens, e, D, DD, pot, field)


def _run_direction(ens: ParticleEnsemble, mode: str, num: Numerics, nframes: int) -> list[_Frame]:
    """Record ``nframes`` frames after ``ens`` (exclusive), stepping forward."""
    frames = []
    field, pot = _self_field(ens, mode, num.eps, True)
    m = num.substeps
    acc = acceleration(ens, mode, num.eps, field)
    x, p, t = ens.x, ens.p, ens.time
    for _ in range(nframes):
        for s in range(m):
            p = p + 0.5 * num.dt * acc
            x = x + num.dt * p
            t = ens.time + (len(frames) * m + s + 1) * num.dt
            cur = ens.with_state(t, x, p)
            last = s == m - 1
            field, pot = _self_field(cur, mode, num.eps, last)
            acc = acceleration(cur, mode, num.eps, field)
            p = p + 0.5 * num.dt * acc
        frames.append(_frame(ens.with_state(t, x, p), mode, num.eps, field, pot))
    return frames


def evolve(initial: ParticleEnsemble, mode: str, numerics: Numerics, window: tuple[float, float],
           progress=None) -> "SourceHistory":
    """Integrate forward and (via momentum reversal) backward from ``t = 0``.

    The window end points are rounded outward to whole multiples of
    ``dt_rec``. Raises :class:`EnergyDriftError` when the relative energy
    drift at any frame exceeds ``numerics.energy_tol``.
    """
    _check_mode(mode)
    t_min, t_max = window
    if not t_min <= 0.0 <= t_max:
        raise ValueError(f"window must contain t = 0, got [{t_min}, {t_max}]")
    if initial.time != 0.0:
        raise ValueError("initial ensemble must be at t = 0")
    n_back = int(np.ceil(-t_min / numerics.dt_rec - 1e-9))
    n_fwd = int(np.ceil(t_max / numerics.dt_rec - 1e-9))
    field, pot = _self_field(initial, mode, numerics.eps, True)
    f0 = _frame(initial, mode, numerics.eps, field, pot)
    fwd = _run_direction(initial, mode, numerics, n_fwd)
    if progress:
        progress(f"forward: {n_fwd} frames")
    back = _run_direction(initial.reversed(), mode, numerics, n_back)
    if progress:
        progress(f"backward: {n_back} frames")
    # undo the reversal: positions and energies are even, momenta and odd derivatives flip
    restored = []
    for fr in back:
        ens = fr.ens.reversed()
        restored.append(_Frame(ens, EnergyEntry(ens.time, fr.energy.ekin, fr.energy.epot),
                               fr.D, fr.DD, fr.potential, fr.field))
    frames = restored[::-1] + [f0] + fwd
    hist = SourceHistory(
        mode=mode,
        times=np.array([f.ens.time for f in frames]),
        dt_rec=numerics.dt_rec,
        eps=numerics.eps,
        ensembles=[f.ens for f in frames],
        ekin=np.array([f.energy.ekin for f in frames]),
        epot=np.array([f.energy.epot for f in frames]),
        D=np.array([f.D for f in frames]),
        DD=np.array([f.DD for f in frames]),
        grid_n=numerics.grid_n,
        bandwidth_cells=numerics.bandwidth_cells,
        _potentials=[f.potential for f in frames],
        _fields=[f.field for f in frames],
    )
    drift = hist.energy_drift_series()
    bad = np.flatnonzero(drift > numerics.energy_tol)
    if bad.size:
        k = int(bad[np.argmin(np.abs(hist.times[bad]))])
        raise EnergyDriftError(k, float(drift[k]), numerics.energy_tol)
    return hist


# ---------------------------------------------------------------------------
# history
# ---------------------------------------------------------------------------


def stencil_gradient(a: np.ndarray, h: float) -> np.ndarray:
    """4th-order centered gradient of a scalar grid; nodes outside are zero."""
    pad = np.pad(a, 2)
    out = np.empty((3,) + a.shape)
    n = a.shape[0]
    for ax in range(3):
        def sl(off):
            idx = [slice(2, 2 + n)] * 3
            idx[ax] = slice(2 + off, 2 + off + n)
            return pad[tuple(idx)]
        out[ax] = (sl(-2) - 8.0 * sl(-1) + 8.0 * sl(1) - sl(2)) / (12.0 * h)
    return out


def stencil_divergence(v: np.ndarray, h: float) -> np.ndarray:
    return sum(stencil_gradient(v[a], h)[a] for a in range(3))


def stencil_curl(v: np.ndarray, h: float) -> np.ndarray:
    g = [stencil_gradient(v[a], h) for a in range(3)]  # g[a][b] = d_b v_a
    return np.stack([g[2][1] - g[1][2], g[0][2] - g[2][0], g[1][0] - g[0][1]])


@dataclass
class SourceHistory:
    """Time-indexed record of a Newtonian run.

    Particle snapshots and scalars are stored eagerly; gridded moments
    are deposited on first use and cached. Gridded stacks are restricted
    to the active nodes (union of all frame supports, dilated by the
    stencil half-width) and have shape (n_frames, n_active, n_comp).
    """

    mode: str
    times: np.ndarray
    dt_rec: float
    eps: float
    ensembles: list[ParticleEnsemble]
    ekin: np.ndarray
    epot: np.ndarray
    D: np.ndarray
    DD: np.ndarray
    grid_n: int = 64
    bandwidth_cells: int = 2
    _potentials: list = field(default_factory=list, repr=False)
    _fields: list = field(default_factory=list, repr=False)
    _stacks: dict = field(default_factory=dict, repr=False)

    # -- bookkeeping -------------------------------------------------------

    @property
    def n_frames(self) -> int:
        return len(self.times)

    @property
    def t0(self) -> float:
        return float(self.times[0])

    def frame_index(self, t: float) -> int:
        k = (t - self.t0) / self.dt_rec
        kr = int(round(k))
        if abs(k - kr) > 1e-6 or not 0 <= kr < self.n_frames:
            raise WindowError(f"t = {t} is not a recorded frame time")
        return kr

    def energy_drift_series(self) -> np.ndarray:
        e = self.ekin + self.epot
        k0 = int(np.argmin(np.abs(self.times)))
        return np.abs(e - e[k0]) / abs(e[k0])

    @property
    def energy_drift(self) -> float:
        return float(np.max(self.energy_drift_series()))

    def uniform_spacing_error(self) -> float:
        d = np.diff(self.times)
        return float(np.max(np.abs(d - self.dt_rec)) / self.dt_rec) if d.size else 0.0

    def potential(self, k: int) -> np.ndarray:
        """Softened potential sum at the particles of frame ``k`` (lazily computed)."""
        while len(self._potentials) < self.n_frames:
            self._potentials.append(None)
        if self._potentials[k] is None:
            ens = self.ensembles[k]
            q = ens.source_weights(self.mode)
            pot = _kernels.pair_potential(*_cols(ens.x), *_cols(ens.x), q, self.eps**2)
            self._potentials[k] = pot - q / self.eps
        return self._potentials[k]

    def particle_field(self, k: int) -> np.ndarray:
        """Field (``E0`` or ``grad phi2``) at the particles of frame ``k``."""
        while len(self._fields) < self.n_frames:
            self._fields.append(None)
        if self._fields[k] is None:
            self._fields[k], _ = _self_field(self.ensembles[k], self.mode, self.eps, False)
        return self._fields[k]

    def phi2(self, k: int) -> np.ndarray:
        """Gravity potential ``phi2 = -sum m/s`` at the particles of frame ``k``."""
        return -self.potential(k)

    # -- grids -------------------------------------------------------------

    @cached_property
    def support_radius(self) -> float:
        return float(max(np.max(np.linalg.norm(e.x, axis=1)) for e in self.ensembles))

    @cached_property
    def grid(self) -> Grid:
        return Grid.around(self.support_radius * (1 + 1e-9), self.grid_n, self.bandwidth_cells)

    @property
    def bandwidth(self) -> float:
        return self.bandwidth_cells * self.grid.h

    def with_grid(self, grid: Grid, bandwidth: float | None = None) -> "SourceHistory":
        """Shallow copy that deposits on a different grid."""
        h = SourceHistory(self.mode, self.times, self.dt_rec, self.eps, self.ensembles, self.ekin,
                          self.epot, self.D, self.DD, grid.n, self.bandwidth_cells,
                          self._potentials, self._fields)
        h.__dict__["grid"] = grid
        if bandwidth is not None:
            h.bandwidth_cells = bandwidth / grid.h
        return h

    def mu2_weights(self, k: int) -> np.ndarray:
        """Post-Newtonian matter correction per particle.

        ``w (phi2(t, x_i(t)) - phi2(0, x_i(0)) - |p_i|^2 / 2)``: the first
        two terms follow from the exponential weight factor carried along
        characteristics, the last from the Lorentz factor in ``mu``.
        """
        k0 = self.frame_index(0.0)
        ens = self.ensembles[k]
        return ens.w * (self.phi2(k) - self.phi2(k0) - 0.5 * np.sum(ens.p**2, axis=1))

    def base_frame(self, k: int, grid: Grid | None = None) -> np.ndarray:
        """Deposited base components of frame ``k`` on the full grid.

        Plasma: (rho, jx, jy, jz). Gravity: (rho0, mu2).
        """
        g = grid or self.grid
        ens = self.ensembles[k]
        bw = self.bandwidth_cells * g.h
        if self.mode == "plasma":
            q = ens.charges
            vals = np.column_stack([q, q[:, None] * ens.p])
        else:
            vals = np.column_stack([ens.w, self.mu2_weights(k)])
        return deposit_values(ens.x, vals, g, bw)

    def _build_stacks(self) -> None:
        g = self.grid
        base = [self.base_frame(k) for k in range(self.n_frames)]
        mask = np.zeros((g.n,) * 3, dtype=bool)
        for b in base:
            mask |= np.any(b != 0.0, axis=0)
        mask = ndimage.binary_dilation(mask, structure=ndimage.generate_binary_structure(3, 1), iterations=2)
        idx = np.flatnonzero(mask.ravel())
        self._stacks["active"] = idx
        self._stacks["nodes"] = g.node_coords(idx)
        nf, na = self.n_frames, idx.size
        if self.mode == "plasma":
            names = {"rho": 1, "grad_rho": 3, "j": 3, "curl_j": 3}
        else:
            names = {"rho": 1, "mu2": 1, "grad_rho": 3, "grad_mu2": 3}
        for name, m in names.items():
            self._stacks[name] = np.empty((nf, na, m))
        for k, b in enumerate(base):
            flat = lambda a: a.reshape(a.shape[0], -1)[:, idx].T
            self._stacks["rho"][k] = flat(b[0:1])
            self._stacks["grad_rho"][k] = flat(stencil_gradient(b[0], g.h))
            if self.mode == "plasma":
                self._stacks["j"][k] = flat(b[1:4])
                self._stacks["curl_j"][k] = flat(stencil_curl(b[1:4], g.h))
            else:
                self._stacks["mu2"][k] = flat(b[1:2])
                self._stacks["grad_mu2"][k] = flat(stencil_gradient(b[1], g.h))

    def stack(self, name: str) -> np.ndarray:
        if "active" not in self._stacks:
            self._build_stacks()
        return self._stacks[name]

    @property
    def nodes(self) -> np.ndarray:
        return self.stack("nodes")

    def moment_field(self, k: int, kind: str) -> MomentField:
        """Full-grid :class:`MomentField` of frame ``k``."""
        g = self.grid
        ens = self.ensembles[k]
        bw = self.bandwidth
        if kind in ("E0", "grad_phi2"):
            return field_moment(ens, g, bw, self.mode, self.eps)
        if kind == "rho":
            vals = ens.source_weights(self.mode)
        elif kind == "j":
            vals = ens.source_weights(self.mode)[:, None] * ens.p
        elif kind == "mu":
            vals = ens.w
        else:
            raise ValueError(f"unknown kind {kind!r}")
        return MomentField(g, deposit_values(ens.x, vals, g, bw), kind)

    # -- continuity ----------------------------------------------------------

    def continuity_residual(self, k: int, grid: Grid | None = None, bandwidth: float | None = None,
                            spacing: float | None = None, numerics: Numerics | None = None) -> float:
        """Relative L2 norm of ``(rho(t+d) - rho(t-d))/(2d) + div j(t)``.

        With ``spacing`` (and ``numerics``) the neighbouring densities come
        from single integrator steps of that length around frame ``k``;
        otherwise from frames ``k +- 1``.
        """
        g = grid or self.grid
        bw = bandwidth if bandwidth is not None else self.bandwidth
        ens = self.ensembles[k]
        q = ens.source_weights(self.mode)
        if spacing is None:
            if not 0 < k < self.n_frames - 1:
                raise WindowError("continuity needs an interior frame")
            e_plus, e_minus, d = self.ensembles[k + 1], self.ensembles[k - 1], self.dt_rec
        else:
            e_plus = step(ens, spacing, self.mode, self.eps)
            e_minus = step(ens, -spacing, self.mode, self.eps)
            d = spacing
        rp = deposit_values(e_plus.x, q, g, bw)[0]
        rm = deposit_values(e_minus.x, q, g, bw)[0]
        j = deposit_values(ens.x, q[:, None] * ens.p, g, bw)
        dj = stencil_divergence(j, g.h)
        drho = (rp - rm) / (2 * d)
        res = drho + dj
        return float(np.sqrt(np.sum(res**2)) / np.sqrt(np.sum(drho**2) + np.sum(dj**2)))

    # -- interpolation ---------------------------------------------------------

    def check_window(self, lo: float, hi: float, what: str = "evaluation") -> None:
        """Cubic Hermite with 4th-order slopes needs two extra frames each side."""
        a = self.t0 + 2 * self.dt_rec
        b = self.times[-1] - 3 * self.dt_rec
        if lo < a - 1e-12 or hi > b + 1e-12:
            raise WindowError(
                f"{what} needs source times [{lo:.6g}, {hi:.6g}] but the history supports "
                f"[{a:.6g}, {b:.6g}]; extend the window to at least "
                f"[{min(lo, a) - 2 * self.dt_rec:.6g}, {max(hi, b) + 3 * self.dt_rec:.6g}]"
            )

    def interpolate_scalar(self, series: np.ndarray, t: float, derivative: bool = False) -> np.ndarray:
        """Cubic Hermite interpolation of a per-frame series (last axes arbitrary)."""
        self.check_window(t, t)
        series = np.asarray(series, dtype=float)
        nf = self.n_frames
        stack = series.reshape(nf, 1, -1)
        out = np.empty((2, stack.shape[2]))
        w = np.empty(1)
        node = np.zeros((1, 3))
        # reuse the compiled kernel with a single node at the origin
        _kernels.retarded_sum(node, np.ascontiguousarray(stack), self.t0, self.dt_rec, t,
                              np.array([1.0, 0.0, 0.0]), 1.0, 0, w, out)
        res = out[1] if derivative else out[0]
        return res.reshape(series.shape[1:])

    def stencil_derivative(self, series: np.ndarray, k: int) -> np.ndarray:
        """5-point centered first derivative of a per-frame series at frame ``k``."""
        if not 2 <= k <= self.n_frames - 3:
            raise WindowError(f"frame {k} is too close to the history boundary for a 5-point stencil")
        s = np.asarray(series, dtype=float)
        return (s[k - 2] - 8 * s[k - 1] + 8 * s[k + 1] - s[k + 2]) / (12 * self.dt_rec)

    # -- serialisation ---------------------------------------------------------

    def save(self, directory: str | Path) -> Path:
        """Write frames.bin, moments.bin, scalars.csv and meta.json."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        with open(d / "frames.bin", "wb") as fh:
            for ens in self.ensembles:
                write_snapshot(ens, fh)
        with open(d / "scalars.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SCALARS_HEADER)
            for k in range(self.n_frames):
                w.writerow([repr(float(v)) for v in
                            (self.times[k], *self.D[k], *self.DD[k], self.ekin[k], self.epot[k])])
        self._write_moments(d / "moments.bin")
        meta = {"mode": self.mode, "dt_rec": self.dt_rec, "eps": self.eps, "grid_n": self.grid_n,
                "bandwidth_cells": self.bandwidth_cells, "n_frames": self.n_frames}
        (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        return d

    def _write_moments(self, path: Path) -> None:
        names = ["rho", "j"] if self.mode == "plasma" else ["rho", "mu2"]
        idx = self.stack("active")
        g = self.grid
        with open(path, "wb") as fh:
            comps = ",".join(names).encode()
            fh.write(struct.pack("<4sIIdddI", b"VRLM", 1, self.n_frames, *g.center, g.n))
            fh.write(struct.pack("<ddQI", g.h, self.bandwidth, idx.size, len(comps)))
            fh.write(comps)
            fh.write(idx.astype("<i8").tobytes())
            for k in range(self.n_frames):
                block = np.concatenate([self.stack(nm)[k] for nm in names], axis=1)
                fh.write(block.astype("<f8").tobytes())

    @classmethod
    def load(cls, directory: str | Path) -> "SourceHistory":
        d = Path(directory)
        missing = [f for f in ("frames.bin", "scalars.csv", "meta.json") if not (d / f).exists()]
        if missing:
            raise FileNotFoundError(f"history directory {d} is missing: {', '.join(missing)}")
        meta = json.loads((d / "meta.json").read_text())
        ens = []
        with open(d / "frames.bin", "rb") as fh:
            data = fh.read()
        buf = io.BytesIO(data)
        while buf.tell() < len(data):
            ens.append(read_snapshot(buf))
        with open(d / "scalars.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        if rows[0] != SCALARS_HEADER:
            raise ValueError(f"unexpected scalars header {rows[0]}")
        s = np.array([[float(v) for v in r] for r in rows[1:]])
        return cls(
            mode=meta["mode"], times=s[:, 0], dt_rec=meta["dt_rec"], eps=meta["eps"], ensembles=ens,
            ekin=s[:, 7], epot=s[:, 8], D=s[:, 1:4], DD=s[:, 4:7], grid_n=meta["grid_n"],
            bandwidth_cells=meta["bandwidth_cells"],
        )


def field_moment(ens: ParticleEnsemble, grid: Grid, bandwidth: float, mode: str, eps: float) -> MomentField:
    """Softened field of the deposited density on the grid (free-space FFT convolution)."""
    from scipy import fft

    q = ens.source_weights(mode)
    rho = deposit_values(ens.x, q, grid, bandwidth)[0]
    n = grid.n
    m = 2 * n
    off = np.concatenate([np.arange(n), np.arange(-n, 0)]) * grid.h
    dx, dy, dz = np.meshgrid(off, off, off, indexing="ij")
    s3 = (dx * dx + dy * dy + dz * dz + eps * eps) ** -1.5
    rho_hat = fft.rfftn(rho, s=(m, m, m))
    out = np.empty((3, n, n, n))
    for a, d in enumerate((dx, dy, dz)):
        k_hat = fft.rfftn(d * s3)
        out[a] = fft.irfftn(rho_hat * k_hat, s=(m, m, m))[:n, :n, :n] * grid.h**3
    return MomentField(grid, out, "E0" if mode == "plasma" else "grad_phi2")
