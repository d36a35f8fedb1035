import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from vrlab.kinetic import (
    BUMP_AXIS_VARIANCE,
    BUMP_BALL_INTEGRAL,
    BUMP_DENSITY_CONTRAST,
    Grid,
    MomentField,
    ParticleEnsemble,
    build_profile,
    default_softening,
    deposit_values,
    dipole_moment,
    energies,
    lorentz_factor,
    mirror_species,
    moments,
    read_snapshot,
    sample_ensemble,
    snapshot_bytes,
    symmetry_group,
    write_snapshot,
)


def _radial(power_s, power_b=3):
    return integrate.quad(lambda s: (1 - s * s) ** power_b * s**power_s, 0, 1)[0]


def test_bump_constants_match_quadrature():
    assert BUMP_BALL_INTEGRAL == pytest.approx(4 * np.pi * _radial(2), rel=1e-12)
    assert BUMP_AXIS_VARIANCE == pytest.approx(_radial(4) / (3 * _radial(2)), rel=1e-12)
    contrast = (4 * np.pi / 3) * 4 * np.pi * _radial(2, 6) / (4 * np.pi * _radial(2)) ** 2
    assert BUMP_DENSITY_CONTRAST == pytest.approx(contrast, rel=1e-12)


def test_profile_value_integrates_to_total_weight():
    prof = build_profile(1, (0.3, 0, 0), 0.7, 0.2, 2.5, infall=0.4, bulk=(0.05, 0, 0))
    e = np.array([1.0, 0.0, 0.0])

    def f(q, s):
        x = prof.center + s * e
        return prof.value(x, prof.drift(x) + q * e) * (4 * np.pi * s * s) * (4 * np.pi * q * q)

    val, _ = integrate.dblquad(f, 0, prof.R0, 0, prof.p_radius, epsabs=0, epsrel=1e-10)
    assert val == pytest.approx(2.5, rel=1e-8)
    assert prof.analytic_integral == pytest.approx(2.5, rel=1e-14)


@pytest.mark.parametrize("kwargs, msg", [
    (dict(radii=0.0), "radii"),
    (dict(p_radius=-1.0), "momentum radius"),
    (dict(total_weight=0.0), "total_weight"),
    (dict(species_sign=2), "species_sign"),
])
def test_build_profile_rejects(kwargs, msg):
    args = dict(species_sign=1, center=(0, 0, 0), radii=1.0, p_radius=0.1, total_weight=1.0)
    args.update(kwargs)
    with pytest.raises(ValueError, match=msg):
        build_profile(**args)


def test_sample_moments_statistical():
    prof = build_profile(0, (0.1, -0.2, 0.3), (1.0, 0.5, 2.0), 0.2, 1.0)
    ens = sample_ensemble(prof, 40000, seed=4)
    assert ens.w.sum() == pytest.approx(1.0, rel=1e-12)
    var = np.var(ens.x, axis=0)
    expected = prof.mean_position_sigma() ** 2
    # relative standard error of a variance estimate is about sqrt(2/N) times the kurtosis factor
    assert np.allclose(var, expected, rtol=0.03)
    assert np.allclose(ens.x.mean(axis=0), prof.center, atol=5 * np.sqrt(expected / len(ens)).max())
    dp = ens.p - prof.drift(ens.x)
    assert np.allclose(np.var(dp, axis=0), 0.04 * BUMP_AXIS_VARIANCE, rtol=0.03)


@pytest.mark.parametrize("symmetry, order", [("none", 1), ("mirror", 2), ("signflip", 8), ("octahedral", 48)])
def test_symmetry_group_orders(symmetry, order):
    g = symmetry_group(symmetry)
    assert g.shape == (order, 3, 3)
    assert np.allclose(np.einsum("gij,gkj->gik", g, g), np.eye(3))


@pytest.mark.parametrize("symmetry", ["mirror", "signflip", "octahedral"])
def test_symmetrised_ensemble_is_invariant(symmetry):
    prof = build_profile(0, (0, 0, 0), 1.0, 0.3, 1.0, infall=0.5)
    ens = sample_ensemble(prof, 480, seed=1, symmetry=symmetry)
    rows = np.hstack([ens.x, ens.p])
    key = lambda a: a[np.lexsort(np.round(a, 12).T[::-1])]
    for R in symmetry_group(symmetry):
        moved = np.hstack([ens.x @ R.T, ens.p @ R.T])
        assert np.allclose(key(moved), key(rows), atol=1e-14)
    assert np.max(np.abs(ens.w @ ens.x)) < 1e-15


def test_octahedral_second_moment_isotropic():
    prof = build_profile(0, (0, 0, 0), 1.0, 0.3, 1.0)
    ens = sample_ensemble(prof, 960, seed=2, symmetry="octahedral")
    M = np.einsum("i,ia,ib->ab", ens.w, ens.x, ens.x)
    assert np.allclose(M, np.trace(M) / 3 * np.eye(3), atol=1e-15)


def test_sample_rejects_bad_counts():
    prof = build_profile(0, (0, 0, 0), 1.0, 0.3, 1.0)
    with pytest.raises(ValueError, match="multiple"):
        sample_ensemble(prof, 100, 0, "octahedral")
    aniso = build_profile(0, (0, 0, 0), (1.0, 1.0, 2.0), 0.3, 1.0)
    with pytest.raises(ValueError, match="isotropic"):
        sample_ensemble(aniso, 96, 0, "octahedral")
    with pytest.raises(ValueError):
        sample_ensemble(prof, 0, 0)


def test_sampling_is_deterministic():
    prof = build_profile(1, (0, 0, 0), 1.0, 0.3, 1.0)
    a = sample_ensemble(prof, 500, seed=9)
    b = sample_ensemble(prof, 500, seed=9)
    assert snapshot_bytes(a) == snapshot_bytes(b)


def test_mirror_species_doubles_dipole_and_neutralises():
    prof = build_profile(1, (0, 0, 0.2), 0.5, 0.1, 1.0)
    ens = sample_ensemble(prof, 300, seed=3)
    both = ens + mirror_species(ens)
    assert both.charges.sum() == pytest.approx(0.0, abs=1e-15)
    assert np.allclose(dipole_moment(both), 2 * dipole_moment(ens), rtol=1e-14)
    assert np.allclose(dipole_moment(ens), [0, 0, 0.2], atol=0.02)


def _random_ensemble(seed, n=200, radius=1.0, species=1):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-radius, radius, (n, 3))
    p = rng.normal(size=(n, 3))
    w = rng.uniform(0.5, 1.5, n)
    return ParticleEnsemble(0.0, x, p, w, np.full(n, species, dtype=np.int8))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k=st.sampled_from([1, 2, 3]))
def test_deposition_reproduces_low_moments(seed, k):
    ens = _random_ensemble(seed)
    grid = Grid.around(1.8, n=48, bandwidth_cells=k)
    bw = 2 * k * grid.h
    rho = moments(ens, grid, bw, "rho")
    q = ens.charges
    assert rho.integral()[0] == pytest.approx(q.sum(), rel=1e-12)
    assert np.allclose(dipole_moment(rho), q @ ens.x, rtol=1e-11, atol=1e-12)
    ax = grid.axis
    second = np.einsum("ijk,i->", rho.values[0], ax**2) * grid.h**3
    # the cubic B-spline of scale k h has variance (k h)^2 / 3
    assert second == pytest.approx(q @ ens.x[:, 0] ** 2 + q.sum() * (k * grid.h) ** 2 / 3, rel=1e-11)


def test_current_and_matter_moments():
    ens = _random_ensemble(5)
    grid = Grid.around(1.8, n=40)
    bw = grid.h * 2
    c = 3.0
    j = moments(ens, grid, bw, "j", c=c)
    gam = 1 / np.sqrt(1 + np.sum(ens.p**2, axis=1) / c**2)
    assert np.allclose(j.integral(), (ens.charges * gam) @ ens.p, rtol=1e-12)
    mu = moments(ens, grid, bw, "mu", c=c)
    assert mu.integral()[0] == pytest.approx(ens.w @ gam, rel=1e-12)
    with pytest.raises(ValueError, match="field"):
        moments(ens, grid, bw, "E0")


def test_deposition_rejects_small_grid_and_bad_bandwidth():
    ens = _random_ensemble(1, radius=1.0)
    grid = Grid.around(0.5, n=32)
    with pytest.raises(ValueError, match="grid too small"):
        deposit_values(ens.x, ens.w, grid, 2 * grid.h)
    grid = Grid.around(2.0, n=32)
    with pytest.raises(ValueError, match="even multiple"):
        deposit_values(ens.x, ens.w, grid, 3 * grid.h)


def test_moment_field_addition_requires_matching_grid():
    ens = _random_ensemble(2)
    g1 = Grid.around(1.8, n=40)
    g2 = Grid.around(1.8, n=42)
    a = moments(ens, g1, 2 * g1.h, "rho")
    b = moments(ens, g2, 2 * g2.h, "rho")
    assert np.allclose((a + a).values, 2 * a.values)
    with pytest.raises(ValueError):
        a + b
    with pytest.raises(ValueError):
        dipole_moment(MomentField(g1, a.values, "mu"))


@pytest.mark.parametrize("mode, sign, expected", [("gravity", 0, -1.0), ("plasma", 1, 1.0)])
def test_two_body_potential_energy(mode, sign, expected):
    d = 5.0
    eps = 1e-3
    ens = ParticleEnsemble(0.0, np.array([[0, 0, 0], [d, 0, 0]], float), np.zeros((2, 3)),
                           np.ones(2), np.full(2, sign, dtype=np.int8))
    en = energies(ens, mode, eps)
    assert en.epot == pytest.approx(expected / d, rel=1e-6)
    assert en.ekin == 0.0
    with pytest.raises(ValueError):
        energies(ens, mode, 0.0)


def test_lorentz_factor():
    p = np.array([[0.0, 0.0, 0.0], [3.0, 4.0, 0.0]])
    assert np.allclose(lorentz_factor(p, 5.0), [1.0, 1 / np.sqrt(2)])
    assert np.all(lorentz_factor(p, None) == 1.0)


def test_default_softening_formula():
    n = 20000
    eps = default_softening(n, (1.0, 1.0, 1.0))
    assert eps == pytest.approx(0.5 * (4 * np.pi / 3 / (n * BUMP_DENSITY_CONTRAST)) ** (1 / 3), rel=1e-14)
    # quadrupling N shrinks eps^2 by 4^(2/3)
    assert (eps / default_softening(4 * n, (1, 1, 1))) ** 2 == pytest.approx(4 ** (2 / 3), rel=1e-12)


def test_snapshot_round_trip():
    a = _random_ensemble(7, n=50, species=1)
    b = _random_ensemble(8, n=30, species=-1)
    ens = a + b
    blob = snapshot_bytes(ens)
    assert blob[:4] == b"VRL1"
    back = read_snapshot(io.BytesIO(blob))
    assert snapshot_bytes(back) == blob
    assert np.array_equal(back.x, ens.x) and np.array_equal(back.p, ens.p)
    assert np.array_equal(back.species, ens.species)
    buf = io.BytesIO()
    write_snapshot(ens, buf)
    write_snapshot(ens, buf)
    buf.seek(0)
    assert read_snapshot(buf).time == read_snapshot(buf).time == 0.0


def test_snapshot_errors():
    blob = snapshot_bytes(_random_ensemble(1, n=5))
    with pytest.raises(ValueError, match="magic"):
        read_snapshot(io.BytesIO(b"XXXX" + blob[4:]))
    with pytest.raises(EOFError):
        read_snapshot(io.BytesIO(blob[:-8]))


def test_support_check():
    prof = build_profile(0, (0, 0, 0), 1.0, 0.1, 1.0)
    ens = sample_ensemble(prof, 100, 0)
    ens.check_support(1.0, 0.1)
    with pytest.raises(ValueError, match="momentum support"):
        ens.check_support(1.0, 0.01)
    with pytest.raises(ValueError, match="position support"):
        ens.check_support(0.1, 0.2)
