"""Scenario configuration files.

A scenario is an INI file with the sections ``[scenario]``, one or more
``[species.<name>]``, ``[numerics]``, ``[support]``, ``[scan]`` and
``[identities]``. Vectors and lists are comma separated. See the README for
the full grammar.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .kinetic import PhaseSpaceProfile, build_profile

SYMMETRIES = ("none", "mirror", "signflip", "octahedral")


class ConfigError(ValueError):
    """Invalid scenario configuration."""


@dataclass(frozen=True)
class SpeciesSpec:
    name: str
    profile: PhaseSpaceProfile
    particles: int
    symmetry: str = "none"
    mirror: str | None = None


@dataclass(frozen=True)
class ScanSpec:
    c_list: tuple[float, ...]
    r_factors: tuple[float, ...]
    u_list: tuple[float, ...]
    u0: float
    direction: np.ndarray
    r_fit_c: float | None = None
    c_fit_r: float | None = None
    sphere: tuple[int, int] = (16, 32)


@dataclass(frozen=True)
class IdentitySpec:
    times: tuple[float, ...] = (0.0,)
    xi: np.ndarray | None = None
    tolerance: float = 1e-2
    spherical: bool = False
    spherical_tolerance: float = 1e-3
    radiation_tolerance: float = 1e-6
    dipole_tolerance: float = 1e-3


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated scenario.

    ``r_star = max(2 (R0 + P1), r2_proxy)`` with ``R0`` the initial support
    radius about the origin; scan radii are ``r_factors * r_star``.
    """

    name: str
    mode: str
    seed: int
    species: tuple[SpeciesSpec, ...]
    dt: float
    dt_rec: float
    softening: float | None
    grid_n: int
    bandwidth_cells: int
    energy_tol: float
    window: tuple[float, float]
    p1: float
    r2_proxy: float
    scan: ScanSpec
    identities: IdentitySpec
    source: str = ""
    text: str = ""

    @property
    def n_particles(self) -> int:
        return sum(s.particles * (2 if s.mirror else 1) for s in self.species)

    @property
    def R0(self) -> float:
        return max(float(np.linalg.norm(s.profile.center)) + s.profile.R0 for s in self.species)

    @property
    def r_star(self) -> float:
        return max(2.0 * (self.R0 + self.p1), self.r2_proxy)

    @property
    def p_star(self) -> float:
        return self.p1

    @property
    def r_list(self) -> list[float]:
        return [f * self.r_star for f in self.scan.r_factors]

    def validate(self) -> None:
        for c in self.scan.c_list:
            if not c >= 2 * self.p1:
                raise ConfigError(f"c ≥ 2P1 violated: c = {c:g} < 2P1 = {2 * self.p1:g}")
        for f in self.scan.r_factors:
            if not f >= 2.0:
                raise ConfigError(f"r ≥ 2r★ violated: r = {f * self.r_star:g} < 2r★ = {2 * self.r_star:g}")
        if self.scan.c_fit_r is not None and not self.scan.c_fit_r >= 2 * self.r_star:
            raise ConfigError(f"r ≥ 2r★ violated: r = {self.scan.c_fit_r:g} < 2r★ = {2 * self.r_star:g}")
        for u in self.scan.u_list:
            if not abs(u) <= self.scan.u0:
                raise ConfigError(f"|u| ≤ u0 violated: |u| = {abs(u):g} > u0 = {self.scan.u0:g}")
        if self.scan.r_fit_c is not None and self.scan.r_fit_c not in self.scan.c_list:
            raise ConfigError(f"r_fit_c = {self.scan.r_fit_c:g} is not one of the scan c values")
        if not self.window[0] <= 0.0 <= self.window[1]:
            raise ConfigError(f"window must contain t = 0, got {self.window}")
        if self.dt <= 0 or self.dt_rec <= 0:
            raise ConfigError("dt and dt_rec must be positive")
        m = self.dt_rec / self.dt
        if abs(m - round(m)) > 1e-9 * m:
            raise ConfigError(f"dt = {self.dt:g} must divide dt_rec = {self.dt_rec:g}")
        if self.grid_n < 24:
            raise ConfigError(f"grid_n = {self.grid_n} is too small (need >= 24)")
        names = {s.name for s in self.species}
        for s in self.species:
            if s.mirror and s.mirror in names:
                raise ConfigError(f"mirror species name {s.mirror!r} clashes with a declared species")
            if self.mode == "gravity" and s.profile.species_sign != 0:
                raise ConfigError(f"gravity species {s.name!r} must have sign 0")
            if self.mode == "plasma" and s.profile.species_sign == 0:
                raise ConfigError(f"plasma species {s.name!r} needs sign +1 or -1")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


def _vec(text: str, n: int = 3) -> np.ndarray:
    v = np.array(_floats(text))
    if v.size != n:
        raise ConfigError(f"expected {n} comma-separated numbers, got {text!r}")
    return v


def _get(sec: configparser.SectionProxy, key: str, conv=str, default=None):
    if key not in sec:
        if default is None:
            raise ConfigError(f"[{sec.name}] is missing {key!r}")
        return default
    try:
        return conv(sec[key])
    except ValueError as exc:
        raise ConfigError(f"[{sec.name}] {key}: {exc}") from None


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_config(text: str, source: str = "<string>") -> ScenarioConfig:
    """Parse and validate scenario text."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    cp.read_string(text, source=source)
    for sec in ("scenario", "numerics", "support", "scan"):
        if sec not in cp:
            raise ConfigError(f"missing section [{sec}]")
    sc = cp["scenario"]
    mode = _get(sc, "mode")
    if mode not in ("plasma", "gravity"):
        raise ConfigError(f"mode must be plasma or gravity, got {mode!r}")
    species = []
    for name in cp.sections():
        if not name.startswith("species."):
            continue
        s = cp[name]
        sym = _get(s, "symmetry", str, "none")
        if sym not in SYMMETRIES:
            raise ConfigError(f"[{name}] symmetry must be one of {SYMMETRIES}")
        radii = _floats(_get(s, "radii"))
        try:
            prof = build_profile(
                int(_get(s, "sign", int, 0)),
                _vec(_get(s, "center", str, "0,0,0")),
                radii[0] if len(radii) == 1 else radii,
                _get(s, "p_radius", float),
                _get(s, "total_weight", float),
                infall=_get(s, "infall", float, 0.0),
                bulk=_vec(_get(s, "bulk", str, "0,0,0")),
            )
        except ValueError as exc:
            raise ConfigError(f"[{name}] {exc}") from None
        mirror = _get(s, "mirror", str, "") or None
        species.append(SpeciesSpec(name.split(".", 1)[1], prof, _get(s, "particles", int), sym, mirror))
    if not species:
        raise ConfigError("at least one [species.<name>] section is required")
    nu = cp["numerics"]
    soft = _get(nu, "softening", str, "auto")
    window = _floats(_get(nu, "window"))
    if len(window) != 2:
        raise ConfigError("[numerics] window needs two numbers")
    su = cp["support"]
    sn = cp["scan"]
    r_fit_c = _get(sn, "r_fit_c", float, float("nan"))
    c_fit_r = _get(sn, "c_fit_r", float, float("nan"))
    sphere = tuple(int(v) for v in _floats(_get(sn, "sphere", str, "16, 32")))
    scan = ScanSpec(
        c_list=_floats(_get(sn, "c")),
        r_factors=_floats(_get(sn, "r")),
        u_list=_floats(_get(sn, "u")),
        u0=_get(sn, "u0", float, 1.0),
        direction=_vec(_get(sn, "direction", str, "0, 0.6, 0.8")),
        r_fit_c=None if np.isnan(r_fit_c) else r_fit_c,
        c_fit_r=None if np.isnan(c_fit_r) else c_fit_r,
        sphere=sphere,
    )
    if abs(np.linalg.norm(scan.direction) - 1.0) > 1e-12:
        raise ConfigError("[scan] direction must be a unit vector")
    if len(scan.sphere) != 2:
        raise ConfigError("[scan] sphere needs two integers (n_theta, n_phi)")
    ids = IdentitySpec()
    if "identities" in cp:
        it = cp["identities"]
        ids = IdentitySpec(
            times=_floats(_get(it, "times", str, "0")),
            xi=None if it.get("xi") is None else _vec(_get(it, "xi", str)),
            tolerance=_get(it, "tolerance", float, 1e-2),
            spherical=_get(it, "spherical", _bool, False),
            spherical_tolerance=_get(it, "spherical_tolerance", float, 1e-3),
            radiation_tolerance=_get(it, "radiation_tolerance", float, 1e-6),
            dipole_tolerance=_get(it, "dipole_tolerance", float, 1e-3),
        )
    cfg = ScenarioConfig(
        name=_get(sc, "name"),
        mode=mode,
        seed=_get(sc, "seed", int, 0),
        species=tuple(species),
        dt=_get(nu, "dt", float),
        dt_rec=_get(nu, "dt_rec", float),
        softening=None if soft.strip().lower() == "auto" else float(soft),
        grid_n=_get(nu, "grid_n", int, 64),
        bandwidth_cells=_get(nu, "bandwidth_cells", int, 2),
        energy_tol=_get(nu, "energy_tol", float, 1e-5),
        window=(window[0], window[1]),
        p1=_get(su, "p1", float),
        r2_proxy=_get(su, "r2_proxy", float, 0.0),
        scan=scan,
        identities=ids,
        source=source,
        text=text,
    )
    cfg.validate()
    return cfg


def bundled_scenarios() -> list[str]:
    root = resources.files("vrlab") / "scenarios"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".cfg"))


def load_config(path_or_name: str | Path) -> ScenarioConfig:
    """Load a config file, or a bundled scenario by name."""
    p = Path(path_or_name)
    if p.exists():
        return parse_config(p.read_text(), str(p))
    name = str(path_or_name)
    if name.endswith(".cfg"):
        name = name[:-4]
    res = resources.files("vrlab") / "scenarios" / f"{name}.cfg"
    if res.is_file():
        return parse_config(res.read_text(), f"{name}.cfg")
    raise FileNotFoundError(f"no config file {path_or_name!r} and no bundled scenario of that name "
                            f"(bundled: {', '.join(bundled_scenarios())})")
