import re

import numpy as np
import pytest

from vrlab.config import load_config, parse_config
from vrlab.kinetic import build_profile, energies, sample_ensemble
from vrlab.pipeline import build_history
from vrlab.solver import SourceHistory


def scaled_config(name, particles=None, window=None, **numerics):
    """Bundled scenario text with selected keys replaced, parsed and validated."""
    text = load_config(name).text
    if particles is not None:
        text = re.sub(r"(?m)^particles = \d+", f"particles = {particles}", text)
    if window is not None:
        text = re.sub(r"(?m)^window = .*$", f"window = {window[0]!r}, {window[1]!r}", text)
    for key, val in numerics.items():
        text = re.sub(rf"(?m)^{key} = .*$", f"{key} = {val}", text)
    return parse_config(text, f"{name}-scaled")


def static_history(mode, n=20016, n_frames=12, dt_rec=0.05, weight=0.01, radius=0.5, eps=0.01, seed=11):
    """History whose frames all hold the same particles at rest."""
    sign = 1 if mode == "plasma" else 0
    prof = build_profile(sign, (0, 0, 0), radius, 1e-9, weight)
    e = sample_ensemble(prof, n, seed, "octahedral")
    e = e.with_state(0.0, e.x, np.zeros_like(e.p))
    t = (np.arange(n_frames) - n_frames // 2) * dt_rec
    en = energies(e, mode, eps)
    return SourceHistory(mode, t, dt_rec, eps, [e.with_state(float(ti), e.x, e.p) for ti in t],
                         np.full(n_frames, en.ekin), np.full(n_frames, en.epot),
                         np.zeros((n_frames, 3)), np.zeros((n_frames, 3)))


@pytest.fixture(scope="session")
def small_gravity_cfg():
    return scaled_config("gravity_sphere", particles=1920, window=(-7.68e-6, 7.68e-6))


@pytest.fixture(scope="session")
def small_gravity(small_gravity_cfg):
    return build_history(small_gravity_cfg)


@pytest.fixture(scope="session")
def small_plasma_cfg():
    return scaled_config("plasma_dipole", particles=1000)


@pytest.fixture(scope="session")
def small_plasma(small_plasma_cfg):
    return build_history(small_plasma_cfg)


# criterion number -> (passed, detail); filled by the acceptance tests
ACCEPTANCE: dict[int, tuple[bool, str]] = {}
N_CRITERIA = 10


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
