import math

import numpy as np

from kslab.models import DiagnosticsRecord, RadialField, RadialGrid


def heat_kernel(grid: RadialGrid, t: float, total: float = 1.0) -> RadialField:
    """d=2 heat kernel of mass ``total`` at time t."""
    r = grid.centers
    return RadialField(grid, total / (4.0 * math.pi * t) * np.exp(-r**2 / (4.0 * t)))


def barenblatt_3d(grid: RadialGrid, t: float, level: float = 0.5) -> RadialField:
    """Porous-medium source solution for d=3, m=4/3, up to its mass normalization."""
    kappa = 1.0 / 24.0
    r = grid.centers
    return RadialField(grid, np.maximum(level - kappa * r**2 * t**(-2.0 / 3.0), 0.0)**3 / t)


def make_record(t: float, linf: float = 1.0, m2: float = 1.0, dt: float = 1e-3,
                delta: float = math.nan, free_energy: float = 0.0, mass: float = 1.0,
                entropy_or_lm: float = 0.0, q_of_u: float = 0.0) -> DiagnosticsRecord:
    return DiagnosticsRecord(t=t, mass=mass, linf=linf, delta=delta, t_linf=t * linf,
                             t_delta=t * delta, entropy_or_lm=entropy_or_lm, interaction=0.0,
                             free_energy=free_energy, m2=m2, log_moment=0.0, q_of_u=q_of_u,
                             h_lambda=math.nan, tail_beta=math.nan, dt=dt)


def flux_laplacian(field: RadialField) -> RadialField:
    """Conservative radial Laplacian with the solver's face radii and no-flux end faces."""
    grid = field.grid
    f = field.values
    flux = np.zeros(grid.n_cells + 1)
    flux[1:-1] = grid.faces[1:-1]**(grid.d - 1) * (f[1:] - f[:-1]) / grid.dr
    return field.with_values((flux[1:] - flux[:-1]) / (grid.centers**(grid.d - 1) * grid.dr))
