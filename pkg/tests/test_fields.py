import math

import numpy as np
import pytest

from kslab.core import fields
from kslab.errors import DomainError
from kslab.models import RadialField, RadialGrid, sphere_area
from tests.helpers import barenblatt_3d, flux_laplacian, heat_kernel


def uniform_ball(d: int, radius: float, n_cells: int = 1000, r_max: float = 2.0) -> RadialField:
    grid = RadialGrid(d, r_max, n_cells)
    return RadialField(grid, (grid.centers < radius).astype(float))


def test_grid_rejects_bad_parameters():
    with pytest.raises(DomainError):
        RadialGrid(1, 1.0, 64)
    with pytest.raises(DomainError):
        RadialGrid(2, -1.0, 64)
    with pytest.raises(DomainError):
        RadialGrid(2, 1.0, 4)


def test_field_rejects_wrong_shape_and_nan():
    grid = RadialGrid(2, 1.0, 16)
    with pytest.raises(DomainError):
        RadialField(grid, np.ones(15))
    values = np.ones(16)
    values[3] = np.nan
    with pytest.raises(DomainError):
        RadialField(grid, values)


def test_mass_of_uniform_disk_is_exact():
    rho = uniform_ball(2, radius=1.0)
    assert fields.mass(rho) == pytest.approx(math.pi, rel=1e-12)


def test_mass_of_uniform_ball_d3():
    rho = uniform_ball(3, radius=1.0)
    assert fields.mass(rho) == pytest.approx(4.0 * math.pi / 3.0, rel=1e-5)


def test_mass_rejects_negative_density():
    grid = RadialGrid(2, 1.0, 16)
    values = np.ones(16)
    values[5] = -1e-3
    with pytest.raises(DomainError):
        fields.mass(RadialField(grid, values))


def test_enclosed_mass_ends_at_total():
    rho = heat_kernel(RadialGrid(2, 10.0, 512), t=1.0)
    enclosed = fields.enclosed_mass(rho).values
    assert enclosed[-1] == pytest.approx(fields.mass(rho), rel=1e-14)
    assert np.all(np.diff(enclosed) >= 0)


@pytest.mark.parametrize("d", [2, 3, 4])
def test_radial_velocity_faces(d):
    grid = RadialGrid(d, 5.0, 256)
    rho = RadialField(grid, np.exp(-grid.centers**2))
    velocity = fields.radial_velocity(rho)
    assert velocity.shape == (257,)
    assert velocity[0] == 0.0
    total = fields.mass(rho)
    assert velocity[-1] == pytest.approx(-total / (sphere_area(d) * 5.0**(d - 1)), rel=1e-12)
    assert np.all(velocity[1:] < 0)


@pytest.mark.parametrize("d", [2, 3, 5])
def test_flux_laplacian_inverts_potential(d):
    grid = RadialGrid(d, 8.0, 512)
    rho = RadialField(grid, np.exp(-grid.centers**2 / 2.0))
    lap_u = flux_laplacian(fields.potential(rho)).values
    # the outermost face is no-flux
    np.testing.assert_allclose(lap_u[:-1], -rho.values[:-1], rtol=1e-9, atol=1e-10 * rho.values.max())


def test_potential_takes_point_mass_value_outside():
    grid = RadialGrid(3, 10.0, 400)
    rho = RadialField(grid, np.where(grid.centers < 1.0, 1.0, 0.0))
    u = fields.potential(rho)
    total = fields.mass(rho)
    r_out = grid.centers[-1]
    assert u.values[-1] == pytest.approx(total / (4.0 * math.pi * r_out), rel=1e-12)


@pytest.mark.parametrize("d", [2, 3, 4])
def test_radial_laplacian_of_quadratic(d):
    grid = RadialGrid(d, 3.0, 64)
    field = RadialField(grid, grid.centers**2)
    lap = fields.radial_laplacian(field).values
    np.testing.assert_allclose(lap[:-1], 2.0 * d, rtol=1e-10)


def test_pressure_requires_positive_floor():
    rho = heat_kernel(RadialGrid(2, 10.0, 128), t=1.0)
    with pytest.raises(DomainError):
        fields.pressure(rho, floor=0.0)


def test_pressure_d3_is_scaled_root():
    grid = RadialGrid(3, 2.0, 32)
    rho = RadialField(grid, np.full(32, 8.0))
    np.testing.assert_allclose(fields.pressure(rho).values, 4.0 * 2.0)


@pytest.mark.parametrize("t", [0.5, 1.0])
def test_delta_of_heat_kernel(t):
    rho = heat_kernel(RadialGrid(2, 10.0, 1024), t=t)
    result = fields.v_and_delta(rho, chi=1.0)
    assert result.delta == pytest.approx(-1.0 / t, abs=1e-6)
    assert result.index < rho.grid.n_cells - 1


def test_delta_without_coupling_is_li_yau_quantity():
    rho = heat_kernel(RadialGrid(2, 10.0, 1024), t=0.25)
    assert fields.v_and_delta(rho, chi=0.0).delta == pytest.approx(-4.0, rel=1e-7)


def test_delta_of_barenblatt_is_minus_one_over_t():
    t = 2.0
    rho = barenblatt_3d(RadialGrid(3, 8.0, 512), t)
    assert fields.v_and_delta(rho, chi=0.0).delta == pytest.approx(-1.0 / t, rel=1e-8)


def test_delta_of_negligible_density_raises():
    grid = RadialGrid(2, 1.0, 32)
    with pytest.raises(DomainError):
        fields.v_and_delta(RadialField(grid, np.zeros(32)))


def test_q_of_u_vanishes_for_constant_density():
    grid = RadialGrid(2, 4.0, 256)
    rho = RadialField(grid, np.full(256, 3.0))
    assert fields.q_of_u(rho) == pytest.approx(0.0, abs=1e-9)


def test_q_of_u_of_uniform_ball_peaks_at_the_edge():
    rho = uniform_ball(3, radius=1.0, n_cells=2000, r_max=4.0)
    assert fields.q_of_u(rho) == pytest.approx(1.0, rel=2e-2)


def test_entropy_of_uniform_disk():
    grid = RadialGrid(2, 2.0, 1000)
    level = 2.5
    rho = RadialField(grid, np.where(grid.centers < 1.0, level, 0.0))
    energy = fields.free_energy(rho, floor=1e-12)
    assert energy.entropy_or_lm == pytest.approx(math.pi * level * math.log(level), rel=1e-12)
    assert energy.total == pytest.approx(energy.entropy_or_lm - 0.5 * energy.interaction)


def test_lm_term_d3():
    grid = RadialGrid(3, 2.0, 1000)
    rho = RadialField(grid, np.where(grid.centers < 1.0, 8.0, 0.0))
    energy = fields.free_energy(rho)
    # rho^m / (m - 1) = 16 * 3
    assert energy.entropy_or_lm == pytest.approx(48.0 * fields.mass(rho) / 8.0, rel=1e-12)


def test_second_moment_of_gaussian():
    grid = RadialGrid(2, 12.0, 2048)
    width = 1.3
    rho = RadialField(grid, np.exp(-grid.centers**2 / (2.0 * width**2)))
    record = fields.moments(rho)
    assert record.second_moment == pytest.approx(2.0 * width**2 * record.mass, rel=1e-5)
    assert 0 < record.log_moment < record.second_moment


def test_h_lambda_vanishes_on_its_own_profile():
    grid = RadialGrid(2, 50.0, 4096)
    rho = RadialField(grid, fields.liouville_density(grid.centers, 2.0))
    assert fields.h_lambda(rho, 2.0) == pytest.approx(0.0, abs=1e-14)
    assert fields.h_lambda(rho, 1.0) > 0


def test_h_lambda_needs_d2():
    grid = RadialGrid(3, 1.0, 16)
    with pytest.raises(DomainError):
        fields.h_lambda(RadialField(grid, np.ones(16)), 1.0)


def test_tail_exponent_recovers_power_law():
    grid = RadialGrid(3, 40.0, 1024)
    rho = RadialField(grid, (1.0 + grid.centers)**-3.5)
    assert fields.tail_exponent(rho, (10.0, 20.0)) == pytest.approx(3.5, abs=1e-9)


def test_tail_exponent_rejects_bad_window():
    grid = RadialGrid(3, 40.0, 1024)
    rho = RadialField(grid, (1.0 + grid.centers)**-3.5)
    with pytest.raises(DomainError):
        fields.tail_exponent(rho, (20.0, 10.0))


def test_delta_of_liouville_profile_vanishes():
    grid = RadialGrid(2, 50.0, 4096)
    rho = RadialField(grid, fields.liouville_density(grid.centers, 1.0))
    assert fields.v_and_delta(rho).delta == pytest.approx(0.0, abs=1e-3 * rho.values.max())


def test_laplacian_of_v_matches_pressure_plus_density():
    rho = heat_kernel(RadialGrid(2, 10.0, 2048), t=0.5)
    p = fields.pressure(rho)
    direct = fields.radial_laplacian(p.with_values(p.values - fields.potential(rho).values)).values
    via_identity = fields.v_and_delta(rho, chi=1.0).laplacian_v.values
    np.testing.assert_allclose(direct[:-1], via_identity[:-1], atol=1e-3 * rho.values.max())


def test_gaussian_entropy():
    t = 0.5
    rho = heat_kernel(RadialGrid(2, 12.0, 2048), t=t)
    energy = fields.free_energy(rho)
    assert energy.entropy_or_lm == pytest.approx(-math.log(4.0 * math.pi * t) - 1.0, rel=1e-5)


def test_free_energy_of_stationary_profile_is_near_zero():
    from kslab.core import lane_emden
    rho, _ = lane_emden.direct_profile(3)
    energy = fields.free_energy(rho)
    assert abs(energy.total) <= 1e-2 * energy.entropy_or_lm


def test_two_dimensional_potential_is_logarithmic_outside_a_bump():
    grid = RadialGrid(2, 20.0, 2000)
    total = 3.0
    shape = np.exp(-grid.centers**2 / (2.0 * 0.1**2))
    rho = RadialField(grid, shape * total / fields.mass(RadialField(grid, shape)))
    u = fields.potential(rho)
    outside = grid.centers > 2.0
    expected = -total / (2.0 * math.pi) * np.log(grid.centers[outside])
    np.testing.assert_allclose(u.values[outside], expected, atol=1e-4)


def test_h_lambda_of_zero_density_is_the_weight_integral():
    grid = RadialGrid(2, 50.0, 4096)
    value = fields.h_lambda(RadialField(grid, np.zeros(4096)), 1.0)
    assert value == pytest.approx(math.sqrt(8.0) * math.pi * math.log(1.0 + 50.0**2), rel=1e-3)


def test_delta_converges_under_refinement():
    # d=3 Gaussian: the minimum of Delta p + rho sits at r = 0 with value -7
    errors = []
    for n_cells in (128, 256, 512):
        grid = RadialGrid(3, 6.0, n_cells)
        rho = RadialField(grid, np.exp(-grid.centers**2))
        errors.append(abs(fields.v_and_delta(rho, chi=1.0).delta + 7.0))
    assert errors[1] <= 0.5 * errors[0]
    assert errors[2] <= 0.5 * errors[1]


def test_q_of_u_converges_under_refinement():
    def q_at(n_cells):
        grid = RadialGrid(3, 6.0, n_cells)
        return fields.q_of_u(RadialField(grid, np.exp(-grid.centers**2)))

    reference = q_at(4096)
    for n_cells in (128, 256, 512):
        dr = 6.0 / n_cells
        assert abs(q_at(n_cells) - reference) <= dr**2
