import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import static_history
from vrlab.radiation import poynting_density
from vrlab.retarded import far_field, hermite_at, retarded_field, retarded_time
from vrlab.solver import SourceHistory, WindowError

R_STAR = 2 * (0.5 + 0.15)


@pytest.mark.parametrize("x, t, y, c, expected", [
    ((5, 0, 0), 1.0, (0, 0, 0), 5.0, 0.0),
    ((1, 2, 3), 0.7, (1, 2, 3), 2.0, 0.7),
    ((0, 3, 4), 2.0, (0, 0, 0), 10.0, 1.5),
])
def test_retarded_time_examples(x, t, y, c, expected):
    assert retarded_time(x, t, y, c) == pytest.approx(expected, abs=1e-15)


def test_retarded_time_rejects_nonpositive_c():
    with pytest.raises(ValueError):
        retarded_time((1, 0, 0), 0.0, (0, 0, 0), 0.0)


@pytest.fixture(scope="module")
def static_plasma():
    return static_history("plasma", n=4800)


@pytest.fixture(scope="module")
def static_gravity():
    return static_history("gravity", n=4800)


@pytest.mark.parametrize("xbar", [(1, 0, 0), (0, 0.6, 0.8), (0.48, -0.6, 0.64)])
def test_static_coulomb_oracle(static_plasma, xbar):
    xbar = np.asarray(xbar, float)
    r, c = 16 * R_STAR, 16.0
    s = retarded_field(static_plasma, r / c, r * xbar, c, u=0.0)
    want = 0.01 * xbar / r**2
    assert np.linalg.norm(s.E - want) <= 1e-4 * np.linalg.norm(want)
    assert np.linalg.norm(s.B) == 0.0
    assert s.kind == "EM" and s.provenance == "exact-retarded"


@pytest.mark.parametrize("xbar", [(1, 0, 0), (0, 0.6, 0.8)])
def test_static_vn_oracle(static_gravity, xbar):
    xbar = np.asarray(xbar, float)
    r, c = 16 * R_STAR, 8.0
    s = retarded_field(static_gravity, r / c, r * xbar, c, u=0.0)
    want = 0.01 * xbar / (c**2 * r**2)
    assert np.linalg.norm(s.gradphi - want) <= 1e-4 * np.linalg.norm(want)
    assert abs(s.dtphi) <= 1e-12 * np.linalg.norm(want)


def test_static_sources_do_not_radiate(static_plasma):
    s = far_field(static_plasma, np.array([0.0, 0.6, 0.8]), -0.05, 100.0, 16.0)
    assert np.linalg.norm(s.E) == 0.0 and poynting_density(s) == 0.0


def test_retarded_field_window_error(static_plasma):
    # with c this small the retarded source times span more than the recorded window
    with pytest.raises(WindowError, match="extend the window"):
        retarded_field(static_plasma, 10.0, (10.0, 0, 0), 0.5)


def test_kind_must_match_mode(static_plasma):
    with pytest.raises(ValueError, match="gravity history"):
        retarded_field(static_plasma, 1.0, (20.0, 0, 0), 20.0, kind="VN")
    with pytest.raises(ValueError, match="unit vector"):
        far_field(static_plasma, np.array([1.0, 1.0, 0.0]), 0.0, 100.0, 16.0)


def _synthetic_history(values):
    nf = values.shape[0]
    t = (np.arange(nf) - nf // 2) * 0.1
    return SourceHistory("plasma", t, 0.1, 0.01, [None] * nf, np.zeros(nf), np.zeros(nf),
                         np.zeros((nf, 3)), np.zeros((nf, 3)))


@settings(max_examples=25, deadline=None)
@given(coef=st.lists(st.floats(-3, 3), min_size=4, max_size=4), tau=st.floats(-0.3, 0.25))
def test_hermite_exact_for_cubic_signals(coef, tau):
    a, b, c, d = coef
    poly = lambda t: a + b * t + c * t**2 + d * t**3
    dpoly = lambda t: b + 2 * c * t + 3 * d * t**2
    t = (np.arange(13) - 6) * 0.1
    stack = poly(t)[:, None, None] * np.ones((1, 2, 1))
    h = _synthetic_history(stack)
    v, dv = hermite_at(h, stack, tau)
    assert np.allclose(v, poly(tau), atol=1e-11)
    assert np.allclose(dv, dpoly(tau), atol=1e-9)
    assert h.interpolate_scalar(poly(t), tau) == pytest.approx(poly(tau), abs=1e-11)
    assert h.interpolate_scalar(poly(t), tau, derivative=True) == pytest.approx(dpoly(tau), abs=1e-9)


def test_far_field_relations_on_dipole(small_plasma):
    xbar = np.array([0.0, 0.6, 0.8])
    s = far_field(small_plasma, xbar, 0.1, 1e3, 16.0)
    assert abs(xbar @ s.E) <= 1e-12 * np.linalg.norm(s.E)
    assert np.allclose(np.cross(xbar, s.E), s.B, rtol=1e-12, atol=0)
    assert s.extra["direct_mismatch"] < 1e-2
    taylor = far_field(small_plasma, xbar, 0.1, 1e3, 16.0, taylor=True)
    assert np.linalg.norm(taylor.E - s.E) <= 0.05 * np.linalg.norm(s.E)
    with pytest.raises(AssertionError, match="differ"):
        far_field(small_plasma, xbar, 0.1, 1e3, 16.0, agreement_tol=1e-16)


def test_exact_retarded_flux_approaches_far_field(small_plasma):
    xbar = np.array([0.0, 0.6, 0.8])
    u, c = 0.1, 16.0
    far = far_field(small_plasma, xbar, u, 1.0, c)
    errs = []
    for r in (100.0, 400.0):
        s = retarded_field(small_plasma, u + r / c, r * xbar, c, u=u)
        errs.append(abs(poynting_density(s) * r**2 - poynting_density(far)) / abs(poynting_density(far)))
    assert errs[1] < errs[0] < 0.2
