"""Phase-space profiles, particle ensembles, gridded moments and scalar diagnostics."""

from __future__ import annotations

import io
import itertools
import struct
from dataclasses import dataclass, field, replace
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from . import _kernels

# integral of (1 - s^2)^3 over the unit ball
BUMP_BALL_INTEGRAL = 64.0 * np.pi / 315.0
# per-axis second moment of the normalised bump, in units of the radius squared
BUMP_AXIS_VARIANCE = 1.0 / 11.0
# particle-averaged over volume-averaged number density of the bump:
# V int n^2 / (int n)^2 with int_0^1 (1 - s^2)^6 s^2 ds = 1024/45045
BUMP_DENSITY_CONTRAST = (1024.0 / 45045.0) / (3.0 * (16.0 / 315.0) ** 2)

SPECIES_POSITIVE = 1
SPECIES_NEGATIVE = -1
SPECIES_NEUTRAL = 0

MAGIC = b"VRL1"


@dataclass(frozen=True)
class PhaseSpaceProfile:
    """Compactly supported product bump in position and momentum.

    ``f(x, p) = A (1 - |L^{-1}(x - x0)|^2)_+^3 (1 - |p - v(x)|^2 / P^2)_+^3``
    with ``L = diag(radii)`` and drift ``v(x) = bulk - infall * (x - x0)``.

    Attributes
    ----------
    species_sign : int
        +1, -1, or 0 for neutral gravitating matter.
    center : ndarray, shape (3,)
    radii : ndarray, shape (3,)
        Semi-axes of the spatial support.
    p_radius : float
        Thermal momentum radius ``P``.
    total_weight : float
        Total charge magnitude or mass.
    infall : float
        Homologous drift rate; positive values describe contraction.
    bulk : ndarray, shape (3,)
        Uniform drift momentum.
    """

    species_sign: int
    center: np.ndarray
    radii: np.ndarray
    p_radius: float
    total_weight: float
    infall: float = 0.0
    bulk: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def R0(self) -> float:
        return float(np.max(self.radii))

    @property
    def P0(self) -> float:
        """Radius of a momentum ball containing the support."""
        return float(self.p_radius + abs(self.infall) * self.R0 + np.linalg.norm(self.bulk))

    @property
    def amplitude(self) -> float:
        vol = BUMP_BALL_INTEGRAL**2 * float(np.prod(self.radii)) * self.p_radius**3
        return self.total_weight / vol

    @property
    def analytic_integral(self) -> float:
        return self.amplitude * BUMP_BALL_INTEGRAL**2 * float(np.prod(self.radii)) * self.p_radius**3

    @property
    def is_isotropic(self) -> bool:
        return bool(np.all(self.radii == self.radii[0]) and not np.any(self.bulk))

    def drift(self, x: np.ndarray) -> np.ndarray:
        return self.bulk - self.infall * (np.asarray(x) - self.center)

    def value(self, x, p) -> np.ndarray:
        """Evaluate the profile at positions ``x`` and momenta ``p`` (last axis 3)."""
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        sx = np.sum(((x - self.center) / self.radii) ** 2, axis=-1)
        sp = np.sum((p - self.drift(x)) ** 2, axis=-1) / self.p_radius**2
        fx = np.clip(1.0 - sx, 0.0, None) ** 3
        fp = np.clip(1.0 - sp, 0.0, None) ** 3
        return self.amplitude * fx * fp

    def mean_position_sigma(self) -> np.ndarray:
        """Per-axis standard deviation of position under the normalised profile."""
        return self.radii * np.sqrt(BUMP_AXIS_VARIANCE)


def build_profile(
    species_sign: int,
    center: Sequence[float],
    radii: float | Sequence[float],
    p_radius: float,
    total_weight: float,
    infall: float = 0.0,
    bulk: Sequence[float] = (0.0, 0.0, 0.0),
) -> PhaseSpaceProfile:
    """Validate parameters and build a :class:`PhaseSpaceProfile`.

    Raises
    ------
    ValueError
        For non-positive radii, a non-positive weight or an unknown species sign.
    """
    r = np.broadcast_to(np.asarray(radii, dtype=float), (3,)).copy()
    if np.any(r <= 0.0) or not np.all(np.isfinite(r)):
        raise ValueError(f"spatial radii must be positive, got {r.tolist()}")
    if not p_radius > 0.0:
        raise ValueError(f"momentum radius must be positive, got {p_radius}")
    if not total_weight > 0.0:
        raise ValueError(f"total_weight must be positive (sign is carried by the species), got {total_weight}")
    if species_sign not in (SPECIES_POSITIVE, SPECIES_NEGATIVE, SPECIES_NEUTRAL):
        raise ValueError(f"species_sign must be +1, -1 or 0, got {species_sign}")
    c = np.asarray(center, dtype=float).reshape(3).copy()
    b = np.asarray(bulk, dtype=float).reshape(3).copy()
    return PhaseSpaceProfile(int(species_sign), c, r, float(p_radius), float(total_weight), float(infall), b)


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParticleEnsemble:
    """Equal-weight particle representation of a distribution at one time.

    Attributes
    ----------
    time : float
    x, p : ndarray, shape (N, 3)
    w : ndarray, shape (N,)
        Positive weights.
    species : ndarray of int8, shape (N,)
        Species sign per particle (+1, -1, or 0 for gravity).
    """

    time: float
    x: np.ndarray
    p: np.ndarray
    w: np.ndarray
    species: np.ndarray

    def __len__(self) -> int:
        return self.w.shape[0]

    @property
    def charges(self) -> np.ndarray:
        return self.w * self.species

    def source_weights(self, mode: str) -> np.ndarray:
        if mode == "plasma":
            return self.charges
        if mode == "gravity":
            return self.w
        raise ValueError(f"unknown mode {mode!r}")

    def with_state(self, time: float, x: np.ndarray, p: np.ndarray) -> "ParticleEnsemble":
        return replace(self, time=float(time), x=x, p=p)

    def reversed(self) -> "ParticleEnsemble":
        """Same particles with momenta negated and time mirrored."""
        return replace(self, time=-self.time, p=-self.p)

    def check_support(self, R0: float, P1: float, t0: float = 0.0) -> None:
        """Raise if particles leave the declared support for the current time."""
        rmax = float(np.max(np.linalg.norm(self.x, axis=1))) if len(self) else 0.0
        pmax = float(np.max(np.linalg.norm(self.p, axis=1))) if len(self) else 0.0
        if pmax > P1:
            raise ValueError(f"momentum support violated: max|p| = {pmax:.6g} > P1 = {P1:.6g}")
        bound = R0 + P1 * abs(self.time - t0)
        if rmax > bound * (1 + 1e-12):
            raise ValueError(f"position support violated: max|x| = {rmax:.6g} > R0 + P1|t| = {bound:.6g}")

    def __add__(self, other: "ParticleEnsemble") -> "ParticleEnsemble":
        if other.time != self.time:
            raise ValueError("cannot merge ensembles at different times")
        return ParticleEnsemble(
            self.time,
            np.concatenate([self.x, other.x]),
            np.concatenate([self.p, other.p]),
            np.concatenate([self.w, other.w]),
            np.concatenate([self.species, other.species]),
        )


def _octahedral_group() -> np.ndarray:
    mats = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1.0, -1.0), repeat=3):
            m = np.zeros((3, 3))
            for row, (col, s) in enumerate(zip(perm, signs)):
                m[row, col] = s
            mats.append(m)
    return np.array(mats)


def symmetry_group(name: str) -> np.ndarray:
    """Orthogonal matrices of a named finite point group.

    ``none`` (identity), ``mirror`` (x -> -x), ``signflip`` (axis sign flips,
    order 8) and ``octahedral`` (signed permutations, order 48).
    """
    if name == "none":
        return np.eye(3)[None]
    if name == "mirror":
        return np.array([np.eye(3), -np.eye(3)])
    if name == "signflip":
        return np.array([np.diag(s) for s in itertools.product((1.0, -1.0), repeat=3)])
    if name == "octahedral":
        return _octahedral_group()
    raise ValueError(f"unknown symmetry group {name!r}")


def _unit_ball_bump(rng: np.random.Generator, n: int) -> np.ndarray:
    # |u|^2 ~ Beta(3/2, 4) reproduces the radial law s^2 (1 - s^2)^3
    s = np.sqrt(rng.beta(1.5, 4.0, size=n))
    d = rng.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    return s[:, None] * d


def sample_ensemble(
    profile: PhaseSpaceProfile, n: int, seed: int, symmetry: str = "none", time: float = 0.0
) -> ParticleEnsemble:
    """Draw ``n`` equal-weight particles from ``profile``.

    With a symmetry group of order ``g`` only ``n/g`` base particles are
    drawn and every group element is applied to positions and momenta
    relative to the profile center and bulk drift, which makes the
    ensemble's moments exactly invariant under the group.

    Raises
    ------
    ValueError
        If ``n < 1`` or ``n`` is not a multiple of the group order.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    group = symmetry_group(symmetry)
    g = group.shape[0]
    if n % g:
        raise ValueError(f"n = {n} is not a multiple of the {symmetry!r} group order {g}")
    if g > 1 and not (np.allclose(profile.radii, profile.radii[0]) or symmetry in ("signflip", "mirror")):
        raise ValueError(f"{symmetry!r} symmetrisation needs an isotropic spatial profile")
    rng = np.random.Generator(np.random.PCG64(seed))
    m = n // g
    ux = _unit_ball_bump(rng, m)
    up = _unit_ball_bump(rng, m)
    dx = np.concatenate([ux @ R.T for R in group]) * profile.radii
    dq = np.concatenate([up @ R.T for R in group]) * profile.p_radius
    x = profile.center + dx
    p = profile.bulk - profile.infall * dx + dq
    w = np.full(n, profile.total_weight / n)
    species = np.full(n, profile.species_sign, dtype=np.int8)
    return ParticleEnsemble(float(time), x, p, w, species)


def mirror_species(ens: ParticleEnsemble) -> ParticleEnsemble:
    """Point-mirrored copy with flipped species: (x, p, s) -> (-x, -p, -s)."""
    return ParticleEnsemble(ens.time, -ens.x, -ens.p, ens.w.copy(), (-ens.species).astype(np.int8))


# ---------------------------------------------------------------------------
# grids and moments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    """Uniform cubic grid with ``n`` nodes per axis, symmetric about ``center``."""

    center: np.ndarray
    h: float
    n: int

    @property
    def origin(self) -> np.ndarray:
        return self.center - 0.5 * (self.n - 1) * self.h

    @property
    def axis(self) -> np.ndarray:
        half = 0.5 * (self.n - 1)
        return (np.arange(self.n) - half) * self.h

    def node_coords(self, idx: np.ndarray | None = None) -> np.ndarray:
        """Coordinates of flattened node indices (all nodes when ``idx`` is None)."""
        if idx is None:
            idx = np.arange(self.n**3)
        i, j, k = np.unravel_index(idx, (self.n,) * 3)
        ax = self.axis
        return np.stack([ax[i], ax[j], ax[k]], axis=1) + self.center

    @classmethod
    def around(cls, support_radius: float, n: int = 64, bandwidth_cells: int = 2,
               center: Sequence[float] = (0.0, 0.0, 0.0)) -> "Grid":
        """Grid whose half-extent is the support radius plus four bandwidths."""
        margin = 4 * bandwidth_cells
        h = 2.0 * support_radius / (n - 1 - 2 * margin)
        if h <= 0:
            raise ValueError(f"n = {n} too small for a margin of {margin} cells")
        return cls(np.asarray(center, dtype=float), float(h), int(n))

    def refined(self, factor: int = 2) -> "Grid":
        """Same physical extent with the spacing divided by ``factor``."""
        return Grid(self.center, self.h / factor, (self.n - 1) * factor + 1)


MOMENT_KINDS = ("rho", "j", "mu", "E0", "grad_phi2")


@dataclass(frozen=True)
class MomentField:
    """Node values of a gridded moment.

    ``values`` has shape (m, n, n, n) with ``m = 1`` for scalars and 3 for vectors.
    """

    grid: Grid
    values: np.ndarray
    kind: str

    def integral(self) -> np.ndarray:
        return self.values.reshape(self.values.shape[0], -1).sum(axis=1) * self.grid.h**3

    def __add__(self, other: "MomentField") -> "MomentField":
        if other.kind != self.kind or other.grid != self.grid:
            raise ValueError("moment fields must share kind and grid")
        return MomentField(self.grid, self.values + other.values, self.kind)


def _kernel_ratio(grid: Grid, bandwidth: float) -> int:
    k = bandwidth / (2.0 * grid.h)
    kr = int(round(k))
    if kr < 1 or abs(k - kr) > 1e-9 * max(1.0, k):
        raise ValueError(
            f"bandwidth {bandwidth:.6g} must be a positive even multiple of the spacing h = {grid.h:.6g}"
        )
    return kr


def deposit_values(x: np.ndarray, vals: np.ndarray, grid: Grid, bandwidth: float) -> np.ndarray:
    """Deposit arbitrary per-particle columns; returns an (m, n, n, n) array."""
    k = _kernel_ratio(grid, bandwidth)
    g = (x - grid.origin) / grid.h
    lo = np.floor(g).min(axis=0) - 2 * k + 1 if len(x) else np.zeros(3)
    hi = np.floor(g).max(axis=0) + 2 * k if len(x) else np.zeros(3)
    if np.any(lo < 1) or np.any(hi > grid.n - 2):
        ext = float(np.max(np.abs(x - grid.center))) + bandwidth
        have = 0.5 * (grid.n - 3) * grid.h
        raise ValueError(
            f"grid too small: sources plus bandwidth reach {ext:.6g} from the center "
            f"but the grid interior extends to {have:.6g}"
        )
    vals = np.ascontiguousarray(vals, dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    return _kernels.deposit(
        np.ascontiguousarray(x[:, 0]), np.ascontiguousarray(x[:, 1]), np.ascontiguousarray(x[:, 2]),
        vals, grid.origin, grid.h, grid.n, k,
    )


def lorentz_factor(p: np.ndarray, c: float | None) -> np.ndarray:
    """``(1 + |p|^2/c^2)^{-1/2}``, or ones in the Newtonian limit."""
    if c is None:
        return np.ones(p.shape[0])
    return 1.0 / np.sqrt(1.0 + np.sum(p * p, axis=1) / c**2)


def moments(ens: ParticleEnsemble, grid: Grid, bandwidth: float, kind: str,
            c: float | None = None) -> MomentField:
    """Deposit a charge, current or matter moment of ``ens`` on ``grid``.

    ``rho`` combines species as ``f+ - f-``; ``j`` uses ``gamma p`` with
    ``gamma = (1 + p^2/c^2)^{-1/2}`` (``p`` when ``c`` is None); ``mu`` is the
    unsigned ``gamma``-weighted density. Field kinds are produced by the
    solver module.
    """
    if kind == "rho":
        vals = ens.charges if np.any(ens.species) else ens.w
        return MomentField(grid, deposit_values(ens.x, vals, grid, bandwidth), kind)
    if kind == "j":
        q = ens.charges if np.any(ens.species) else ens.w
        vals = (q * lorentz_factor(ens.p, c))[:, None] * ens.p
        return MomentField(grid, deposit_values(ens.x, vals, grid, bandwidth), kind)
    if kind == "mu":
        vals = ens.w * lorentz_factor(ens.p, c)
        return MomentField(grid, deposit_values(ens.x, vals, grid, bandwidth), kind)
    if kind in ("E0", "grad_phi2"):
        raise ValueError(f"kind {kind!r} is a field; use vrlab.solver.field_moment")
    raise ValueError(f"unknown moment kind {kind!r}")


# ---------------------------------------------------------------------------
# scalar diagnostics
# ---------------------------------------------------------------------------


def dipole_moment(source: ParticleEnsemble | MomentField) -> np.ndarray:
    """First moment of the charge density.

    Accepts an ensemble (``sum q x``) or a ``rho`` :class:`MomentField`
    (node quadrature).
    """
    if isinstance(source, ParticleEnsemble):
        return source.charges @ source.x
    if source.kind != "rho":
        raise ValueError(f"dipole_moment needs a rho field, got {source.kind!r}")
    g = source.grid
    ax = g.axis
    rho = source.values[0]
    h3 = g.h**3
    m0 = rho.sum() * h3
    dx = np.einsum("ijk,i->", rho, ax) * h3
    dy = np.einsum("ijk,j->", rho, ax) * h3
    dz = np.einsum("ijk,k->", rho, ax) * h3
    return np.array([dx, dy, dz]) + m0 * g.center


@dataclass(frozen=True)
class EnergyEntry:
    time: float
    ekin: float
    epot: float

    @property
    def total(self) -> float:
        return self.ekin + self.epot


def kinetic_energy(ens: ParticleEnsemble) -> float:
    return 0.5 * float(ens.w @ np.sum(ens.p * ens.p, axis=1))


def potential_at_particles(ens: ParticleEnsemble, mode: str, eps: float) -> np.ndarray:
    """Softened pair potential ``sum_{j != i} q_j / s_ij`` at every particle."""
    q = ens.source_weights(mode)
    x = ens.x
    pot = _kernels.pair_potential(
        *(np.ascontiguousarray(x[:, a]) for a in range(3)),
        *(np.ascontiguousarray(x[:, a]) for a in range(3)),
        q, eps * eps,
    )
    return pot - q / eps


def potential_energy(ens: ParticleEnsemble, mode: str, eps: float, pot: np.ndarray | None = None) -> float:
    """Pairwise softened potential energy, negative for gravity."""
    if pot is None:
        pot = potential_at_particles(ens, mode, eps)
    q = ens.source_weights(mode)
    e = 0.5 * float(q @ pot)
    return -e if mode == "gravity" else e


def energies(ens: ParticleEnsemble, mode: str, eps: float) -> EnergyEntry:
    """Kinetic and softened potential energy of one snapshot."""
    if not eps > 0:
        raise ValueError("softening must be positive")
    return EnergyEntry(ens.time, kinetic_energy(ens), potential_energy(ens, mode, eps))


def default_softening(n: int, radii: Iterable[float]) -> float:
    """Half the mean interparticle spacing seen by a particle of the bump profile.

    The spacing is ``n_p^(-1/3)`` with ``n_p`` the particle-averaged number
    density, which exceeds ``n / volume`` by :data:`BUMP_DENSITY_CONTRAST`.
    """
    vol = 4.0 / 3.0 * np.pi * float(np.prod(list(radii)))
    return 0.5 * (vol / (n * BUMP_DENSITY_CONTRAST)) ** (1.0 / 3.0)


# ---------------------------------------------------------------------------
# binary snapshots
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sIdI")
_SPECIES = struct.Struct("<iQ")


def write_snapshot(ens: ParticleEnsemble, fh: BinaryIO) -> None:
    """Write ``ens`` as a VRL1 record: header, species table, N x 7 float64 rows.

    Particles are grouped by species in order of first appearance.
    """
    seen: list[int] = []
    for s in ens.species.tolist():
        if s not in seen:
            seen.append(s)
    order = np.concatenate([np.flatnonzero(ens.species == s) for s in seen]) if seen else np.arange(0)
    fh.write(_HEADER.pack(MAGIC, 1, float(ens.time), len(seen)))
    for s in seen:
        fh.write(_SPECIES.pack(int(s), int(np.count_nonzero(ens.species == s))))
    rows = np.empty((len(ens), 7), dtype="<f8")
    rows[:, 0:3] = ens.x[order]
    rows[:, 3:6] = ens.p[order]
    rows[:, 6] = ens.w[order]
    fh.write(rows.tobytes())


def read_snapshot(fh: BinaryIO) -> ParticleEnsemble:
    head = fh.read(_HEADER.size)
    if len(head) < _HEADER.size:
        raise EOFError("truncated VRL1 header")
    magic, version, time, nspec = _HEADER.unpack(head)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != 1:
        raise ValueError(f"unsupported VRL1 version {version}")
    table = [_SPECIES.unpack(fh.read(_SPECIES.size)) for _ in range(nspec)]
    n = sum(cnt for _, cnt in table)
    raw = fh.read(56 * n)
    if len(raw) != 56 * n:
        raise EOFError("truncated VRL1 particle block")
    rows = np.frombuffer(raw, dtype="<f8").reshape(n, 7).astype(float)
    species = np.concatenate([np.full(cnt, s, dtype=np.int8) for s, cnt in table]) if table else np.zeros(0, np.int8)
    return ParticleEnsemble(time, rows[:, 0:3].copy(), rows[:, 3:6].copy(), rows[:, 6].copy(), species)


def snapshot_bytes(ens: ParticleEnsemble) -> bytes:
    buf = io.BytesIO()
    write_snapshot(ens, buf)
    return buf.getvalue()
