import csv
import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vrlab.identities import (
    CSV_HEADER,
    IdentityResult,
    check_radiation_identities,
    check_spherical_reductions,
    check_vp_identities,
    write_identities_csv,
)
from vrlab.kinetic import Grid
from vrlab.solver import WindowError

VP_NAMES = ["vp1_force_balance", "vp2_transport_potential", "vp3_power", "vp4_directional_power",
            "vp5_virial_field"]


@given(left=st.floats(-1e6, 1e6), right=st.floats(-1e6, 1e6), tol=st.floats(1e-12, 1.0))
def test_identity_result_passes_iff_within_tolerance(left, right, tol):
    r = IdentityResult.build("x", 0.0, left, right, tol)
    assert r.abs_residual == abs(left - right)
    assert r.passed == (r.rel_residual <= tol)
    assert 0.0 <= r.rel_residual <= 2.0


def test_identity_result_scale_for_vanishing_sides():
    r = IdentityResult.build("x", 0.0, [1e-9, 0, 0], [0, 0, 0], 1e-6, scale=1.0)
    assert r.rel_residual == pytest.approx(1e-9) and r.passed
    assert IdentityResult.build("x", 0.0, 0.0, 0.0, 1e-6).rel_residual == 0.0


def test_vp_identities_on_small_sphere(small_gravity):
    res = check_vp_identities(small_gravity, 0.0, (0.0, 0.6, 0.8))
    assert [r.name for r in res] == VP_NAMES
    by = {r.name: r for r in res}
    # identities 1 to 4 hold for the particle representation up to roundoff and time stencils
    assert by["vp1_force_balance"].rel_residual < 1e-12
    for name in VP_NAMES[1:4]:
        assert by[name].rel_residual < 1e-3
    assert by["vp5_virial_field"].budget["dominant"] == "softening"
    assert by["vp5_virial_field"].budget["softening"] > 0


def test_vp_identities_per_direction(small_gravity):
    xis = [(1.0, 0, 0), (0, 1.0, 0), (0, 0, 1.0), (0, 0.6, 0.8)]
    res = check_vp_identities(small_gravity, 0.0, xis)
    names = [r.name for r in res]
    assert names[:3] == VP_NAMES[:3]
    assert names[3:] == [f"{n}@{lab}" for lab in ("x", "y", "z", "xi") for n in VP_NAMES[3:]]
    single = {r.name: r for r in check_vp_identities(small_gravity, 0.0, (0, 0.6, 0.8))}
    by = {r.name: r for r in res}
    for n in VP_NAMES[3:]:
        assert by[f"{n}@xi"].left == single[n].left and by[f"{n}@xi"].right == single[n].right


def test_directional_power_vanishes_at_rest():
    from conftest import static_history

    h = static_history("gravity", n=480)
    vp4 = {r.name: r for r in check_vp_identities(h, 0.0, (0, 0.6, 0.8))}["vp4_directional_power"]
    assert vp4.left == 0.0 and vp4.right == 0.0 and vp4.passed


def test_vp_identities_grid_route(small_gravity):
    pair = check_vp_identities(small_gravity, 0.0, (0, 0, 1))[-1]
    grid = check_vp_identities(small_gravity, 0.0, (0, 0, 1), route="grid")[-1]
    assert grid.left == pair.left
    assert grid.budget["dominant"] == "grid"
    assert grid.right == pytest.approx(pair.right, rel=0.05)


def test_vp_identity_errors(small_gravity, small_plasma):
    with pytest.raises(ValueError, match="gravity"):
        check_vp_identities(small_plasma, 0.0, (0, 0, 1))
    with pytest.raises(WindowError, match="boundary"):
        check_vp_identities(small_gravity, float(small_gravity.times[1]), (0, 0, 1))


def test_spherical_reductions(small_gravity):
    res = check_spherical_reductions(small_gravity, 0.0, (0, 0.6, 0.8))
    assert [r.name for r in res] == ["sph_dR_dt", "sph_integrated_flux", "sph_field_integral",
                                     "sph_momentum_moment", "sph_axis_spread"]
    assert all(r.passed for r in res), [(r.name, r.rel_residual) for r in res if not r.passed]


def test_radiation_identities_dipole(small_plasma):
    res = check_radiation_identities(small_plasma, (0.0, 0.6, 0.8), 0.1, 1e3, 16.0)
    assert [r.name for r in res] == ["far_xbar_dot_E", "far_xbar_dot_B", "far_xbar_cross_E_minus_B",
                                     "far_flux_equals_minus_cross_sq", "far_direct_vs_transverse"]
    assert all(r.rel_residual <= 1e-10 for r in res[:4])
    assert res[-1].tolerance == 1e-3


def test_radiation_identities_vn(small_gravity):
    # at this small N a 64^3 deposit is noise dominated; a coarser grid resolves the source
    h = small_gravity.with_grid(Grid.around(small_gravity.support_radius * (1 + 1e-9), 32, 2))
    (res,) = check_radiation_identities(h, (0.0, 0.6, 0.8), 0.0, 40.0, 8.0, tolerance=1e-2)
    assert res.name == "far_vn_gradient_vs_time"
    assert res.passed


def test_identities_csv(small_plasma, tmp_path):
    res = check_radiation_identities(small_plasma, (0.0, 0.6, 0.8), 0.1, 1e3, 16.0)
    write_identities_csv(res, tmp_path / "ids.csv")
    rows = list(csv.reader(io.StringIO((tmp_path / "ids.csv").read_text())))
    assert rows[0] == CSV_HEADER
    assert len(rows) == len(res) + 1
    assert rows[3][3].count(";") == 2
    assert {r[-1] for r in rows[1:]} <= {"true", "false"}
    buf = io.StringIO()
    write_identities_csv(res, buf)
    assert buf.getvalue() == (tmp_path / "ids.csv").read_text()
    assert float(rows[1][5]) == res[0].rel_residual
