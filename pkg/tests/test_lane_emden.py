import dataclasses
import math

import numpy as np
import pytest

from kslab.core import fields, lane_emden
from kslab.errors import DomainError, NumericalFailure
from kslab.models import sphere_area

# n = 3 Lane-Emden: first zero and -xi^2 theta'(xi) there
XI_1 = 6.89684862
MASS_N3 = 2.01823595


@pytest.fixture(scope="module")
def shot_d3():
    return lane_emden.shoot(3, 0.0)


@pytest.fixture(scope="module")
def shot_d3_plateau():
    return lane_emden.shoot(3, 0.5)


def test_shoot_rejects_d2_and_negative_gamma():
    with pytest.raises(DomainError):
        lane_emden.shoot(2, 0.0)
    with pytest.raises(DomainError):
        lane_emden.shoot(3, -0.1)


def test_d3_shot_matches_lane_emden_n3(shot_d3):
    assert shot_d3.R == pytest.approx(XI_1, rel=1e-6)
    assert shot_d3.radial_mass == pytest.approx(MASS_N3, rel=1e-6)
    assert shot_d3.f[0] == pytest.approx(1.0, abs=1e-6)
    assert abs(shot_d3.f[-1]) <= 1e-12


@pytest.mark.parametrize("d", [3, 4, 5])
@pytest.mark.parametrize("gamma", [0.0, 0.3, 1.0])
def test_mass_two_ways(d, gamma):
    sol = lane_emden.shoot(d, gamma)
    assert abs(sol.radial_mass - sol.boundary_mass()) <= 1e-8 * sol.radial_mass
    quadrature = lane_emden.quadrature_mass(sol)
    assert abs(quadrature - sol.boundary_mass()) <= 1e-8 * quadrature


def test_quadrature_mass_sees_a_shortened_profile(shot_d3):
    clipped = dataclasses.replace(shot_d3, R=0.5 * shot_d3.R)
    assert lane_emden.quadrature_mass(clipped) < 0.99 * shot_d3.boundary_mass()


def test_plateau_start(shot_d3_plateau):
    assert shot_d3_plateau.r_start == 0.5
    assert shot_d3_plateau.f[0] == pytest.approx(1.0, abs=1e-14)
    np.testing.assert_allclose(shot_d3_plateau.f_at(np.array([0.1, 0.4])), 1.0)


def test_f_at_agrees_with_samples(shot_d3):
    np.testing.assert_allclose(shot_d3.f_at(shot_d3.r[1:-1]), shot_d3.f[1:-1], rtol=1e-12)


def test_gamma_grid():
    grid = lane_emden.gamma_grid(1e-6, 1.0, 5)
    assert grid[0] == 0.0
    assert len(grid) == 6
    assert grid == sorted(grid)
    assert lane_emden.gamma_grid(0.0, 1.0, 3, spacing="linear", include_zero=False) == [0.0, 0.5, 1.0]
    with pytest.raises(DomainError):
        lane_emden.gamma_grid(0.0, 1.0, 3, spacing="log")
    with pytest.raises(DomainError):
        lane_emden.gamma_grid(0.1, 1.0, 3, spacing="cubic")


def test_mass_curve_d4_is_flat_then_nondecreasing():
    rows = lane_emden.mass_curve(4, lane_emden.gamma_grid(1e-6, 1.0, 8))
    base = rows[0].M
    assert rows[0].gamma == 0.0
    for a, b in zip(rows, rows[1:]):
        assert b.M >= a.M - 1e-9 * base
    for row in rows:
        if row.gamma <= 0.1:
            assert abs(row.M - base) <= 1e-8 * base


def test_mass_curve_workers_do_not_change_results():
    gammas = [0.0, 0.2, 0.7]
    serial = lane_emden.mass_curve(3, gammas)
    threaded = lane_emden.mass_curve(3, gammas, workers=2)
    assert serial == threaded


@pytest.mark.parametrize("gamma", [0.2, 0.5, 1.0])
def test_variation_matches_finite_difference(gamma):
    sol = lane_emden.shoot(3, gamma)
    analytic = lane_emden.variation(sol).dM_dgamma
    h = 1e-4
    plus = lane_emden.shoot(3, gamma + h, n_samples=2).radial_mass
    minus = lane_emden.shoot(3, gamma - h, n_samples=2).radial_mass
    assert analytic == pytest.approx((plus - minus) / (2.0 * h), rel=1e-4)


def test_variation_at_zero_gamma_is_rejected(shot_d3):
    with pytest.raises(DomainError):
        lane_emden.variation(shot_d3)


def test_adjoint_terminal_values(shot_d3_plateau):
    adjoint = lane_emden.adjoint_check(shot_d3_plateau, r0=0.6)
    assert adjoint.r[0] == pytest.approx(0.6)
    assert adjoint.r[-1] == pytest.approx(shot_d3_plateau.R)
    assert adjoint.p1[-1] == pytest.approx(0.0, abs=1e-14)
    assert adjoint.p2[-1] == pytest.approx(-1.0)
    assert np.all(adjoint.p1[:-10] < 0.0)
    assert adjoint.p2[0] > adjoint.p2[-1]
    assert adjoint.sign_switch is None


@pytest.mark.parametrize("d, gamma", [(3, 0.2), (3, 1.0), (4, 0.5)])
def test_adjoint_first_component_keeps_its_sign(d, gamma):
    sol = lane_emden.shoot(d, gamma)
    adjoint = lane_emden.adjoint_check(sol, r0=1e-3)
    assert np.max(adjoint.p1) <= 1e-14
    assert adjoint.sign_switch is None


def test_adjoint_rejects_r0_outside_support(shot_d3_plateau):
    with pytest.raises(DomainError):
        lane_emden.adjoint_check(shot_d3_plateau, r0=shot_d3_plateau.R + 1.0)


@pytest.mark.parametrize("d", [3, 4])
def test_substitution_residual_is_small(d):
    sol = lane_emden.shoot(d, 0.3)
    assert lane_emden.substitution_check(sol) <= 1e-5


def test_critical_mass_d3():
    mass = lane_emden.critical_mass_sub(3)
    # sigma_3 * (m/(m-1))^(3/2) * M_rad = 4 pi * 8 * M_rad
    assert mass == pytest.approx(32.0 * math.pi * MASS_N3, rel=1e-6)
    _, direct = lane_emden.direct_profile(3)
    assert direct == pytest.approx(mass, rel=1e-6)


def test_direct_profile_dilation_keeps_mass():
    rho, total = lane_emden.direct_profile(3, n_cells=2048)
    scaled, scaled_total = lane_emden.direct_profile(3, n_cells=2048, r_max=rho.grid.r_max * 2.0,
                                                     scale=0.5)
    assert scaled_total == pytest.approx(total)
    assert fields.mass(scaled) == pytest.approx(fields.mass(rho), rel=1e-4)
    assert scaled.values[0] == pytest.approx(0.125 * rho.values[0], rel=1e-6)


def test_direct_profile_rejects_short_grid():
    with pytest.raises(DomainError):
        lane_emden.direct_profile(3, r_max=5.0)


def test_liouville_profile_mass():
    h, total = lane_emden.liouville_profile(1.0)
    assert total == pytest.approx(8.0 * math.pi, rel=1e-3)
    r0 = h.r[0]
    assert h.values[0] == pytest.approx(math.log(8.0) - 2.0 * math.log(1.0 + r0**2), rel=1e-12)


def test_liouville_shooting_matches_closed_form():
    assert lane_emden.shoot_liouville(1.0) <= 1e-8
    assert lane_emden.shoot_liouville(0.5) <= 1e-8


def test_shooting_dump_rows(shot_d3):
    rows = lane_emden.shooting_dump(shot_d3)
    assert len(rows) == lane_emden.N_SAMPLES
    r0, f0, _ = rows[0]
    assert r0 == pytest.approx(lane_emden.TAYLOR_RADIUS)
    assert f0 == pytest.approx(1.0, abs=1e-6)
    assert rows[-1][0] == pytest.approx(shot_d3.R)


def test_sphere_area_values():
    assert sphere_area(2) == pytest.approx(2.0 * math.pi)
    assert sphere_area(3) == pytest.approx(4.0 * math.pi)


def test_concavity_horizon_bounds_the_first_zero(shot_d3):
    sol = shot_d3
    decreasing = [i for i in range(1, len(sol.r) - 1)
                  if sol.f[i] + sol.r[i] * sol.fprime[i] < 0]
    assert decreasing
    for i in decreasing[::50]:
        bound = lane_emden._concavity_horizon(3, sol.r[i], sol.f[i], sol.fprime[i])
        assert sol.R < bound
    assert lane_emden._concavity_horizon(3, 0.1, 1.0, -0.01) == math.inf


def test_shoot_reaches_the_zero_through_the_concavity_horizon(monkeypatch):
    monkeypatch.setattr(lane_emden, "_radius_estimate", lambda d, gamma, coefficient: 3.0)
    sol = lane_emden.shoot(3, 0.0)
    assert sol.R == pytest.approx(XI_1, rel=1e-7)


def test_shoot_fails_loudly_without_a_zero(monkeypatch):
    monkeypatch.setattr(lane_emden, "_radius_estimate", lambda d, gamma, coefficient: 0.01)
    with pytest.raises(NumericalFailure, match="no first zero"):
        lane_emden.shoot(3, 0.0)


def test_shot_is_stable_under_tolerance_refinement():
    loose = lane_emden.shoot(3, 0.5, rtol=1e-10, atol=1e-12, n_samples=2)
    tight = lane_emden.shoot(3, 0.5, rtol=1e-12, atol=1e-14, n_samples=2)
    assert loose.R == pytest.approx(tight.R, rel=1e-8)
    assert loose.radial_mass == pytest.approx(tight.radial_mass, rel=1e-8)


@pytest.mark.parametrize("gamma", [0.2, 0.5, 1.0])
def test_mass_grows_with_gamma_in_d3(gamma):
    sol = lane_emden.shoot(3, gamma)
    assert lane_emden.variation(sol).dM_dgamma > 0


def test_direct_profile_is_nonincreasing():
    rho, _ = lane_emden.direct_profile(3, n_cells=2048)
    assert np.all(np.diff(rho.values) <= 0.0)


@pytest.mark.parametrize("scale", [0.5, 2.0])
def test_grid_mass_of_a_dilated_profile_is_the_critical_mass(scale):
    critical = lane_emden.critical_mass_sub(3)
    rho, _ = lane_emden.direct_profile(3, scale=scale)
    assert fields.mass(rho) == pytest.approx(critical, rel=1e-3)


def test_liouville_enclosed_mass_matches_closed_form():
    shot, closed = lane_emden.liouville_enclosed_mass(1.0)
    assert closed == pytest.approx(8.0 * math.pi * 100.0 / 101.0)
    assert shot == pytest.approx(closed, rel=1e-8)
    with pytest.raises(DomainError):
        lane_emden.liouville_enclosed_mass(-1.0)
