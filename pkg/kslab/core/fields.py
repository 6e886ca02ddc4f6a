"""Radial fields and the observables of the critical Keller-Segel flow.

Every function here is pure. Integrals use the midpoint rule on cell
centers, ``sum(sigma_d * r_i^(d-1) * rho_i * dr)``, which is the same
discrete mass the finite-volume solver conserves.
"""
import math
from typing import Optional, Tuple

import numpy as np

from kslab.errors import DomainError
from kslab.models import (DeltaResult, FreeEnergyBreakdown, MomentsRecord,
                          RadialField, critical_exponent)

DEFAULT_FLOOR_REL = 1e-14


def _require_nonnegative(rho: RadialField) -> None:
    if np.any(rho.values < 0):
        worst = float(rho.values.min())
        raise DomainError(f"density has negative values (min {worst:.3e})")


def mass(rho: RadialField) -> float:
    _require_nonnegative(rho)
    return float(np.sum(rho.grid.weights * rho.values))


def enclosed_mass(rho: RadialField) -> RadialField:
    """Mass inside the outer face of each cell; the last entry equals ``mass(rho)``."""
    _require_nonnegative(rho)
    return rho.with_values(np.cumsum(rho.grid.weights * rho.values))


def radial_velocity(rho: RadialField) -> np.ndarray:
    """u'(r) on the n_cells + 1 faces, u' = -m_<(r) / (sigma_d r^(d-1)); zero at r = 0."""
    grid = rho.grid
    inside = np.concatenate(([0.0], enclosed_mass(rho).values))
    faces = grid.faces
    velocity = np.zeros_like(faces)
    velocity[1:] = -inside[1:] / (grid.sigma * faces[1:]**(grid.d - 1))
    return velocity


def _exterior_potential(d: int, sigma: float, total: float, r: float) -> float:
    if d == 2:
        return -total / (2.0 * math.pi) * math.log(r)
    return total * r**(2 - d) / ((d - 2) * sigma)


def potential(rho: RadialField) -> RadialField:
    """Newtonian potential of a radial density, all mass taken inside the grid.

    The outermost cell takes the exterior (point-mass) value, inner cells are
    obtained by integrating the face velocities inwards. The flux-form
    discrete Laplacian of the result is exactly -rho.
    """
    grid = rho.grid
    velocity = radial_velocity(rho)
    total = float(np.sum(grid.weights * rho.values))
    u = np.empty(grid.n_cells)
    u[-1] = _exterior_potential(grid.d, grid.sigma, total, float(grid.centers[-1]))
    # u_i = u_{i+1} - u'(r_{i+1/2}) * dr
    increments = -velocity[1:-1] * grid.dr
    u[:-1] = u[-1] + np.cumsum(increments[::-1])[::-1]
    return rho.with_values(u)


def radial_laplacian(field: RadialField) -> RadialField:
    """Centered f'' + (d-1) f'/r with mirrored ends; at the first cell d * f''(0)."""
    grid = field.grid
    d, dr, r = grid.d, grid.dr, grid.centers
    padded = np.concatenate(([field.values[0]], field.values, [field.values[-1]]))
    second = (padded[2:] - 2.0 * padded[1:-1] + padded[:-2]) / dr**2
    first = (padded[2:] - padded[:-2]) / (2.0 * dr)
    out = second + (d - 1) * first / r
    out[0] = d * (field.values[1] - field.values[0]) / dr**2
    return field.with_values(out)


def default_floor(rho: RadialField, floor_rel: float = DEFAULT_FLOOR_REL) -> float:
    peak = float(np.max(rho.values)) if rho.values.size else 0.0
    return floor_rel * max(peak, np.finfo(float).tiny)


def pressure(rho: RadialField, floor: Optional[float] = None) -> RadialField:
    """log(rho) for d=2, m/(m-1) rho^(m-1) for d>2."""
    if floor is None:
        floor = default_floor(rho)
    if not floor > 0:
        raise DomainError(f"pressure floor must be positive, got {floor}")
    d = rho.grid.d
    if d == 2:
        return rho.with_values(np.log(np.maximum(rho.values, floor)))
    m = critical_exponent(d)
    return rho.with_values(m / (m - 1.0) * np.maximum(rho.values, 0.0)**(m - 1.0))


def v_and_delta(rho: RadialField, floor: Optional[float] = None, chi: float = 1.0,
                exclude_below_floor: Optional[bool] = None) -> DeltaResult:
    """Delta v = Delta_h p + chi * rho and its minimum over admissible cells.

    The outermost cell is never admissible. When cells below the floor are
    excluded (always for d=2) a cell is admissible only if it and both
    neighbours sit above the floor.
    """
    _require_nonnegative(rho)
    if floor is None:
        floor = default_floor(rho)
    lap_v = radial_laplacian(pressure(rho, floor)).values + chi * rho.values

    admissible = np.ones(rho.grid.n_cells, dtype=bool)
    admissible[-1] = False
    if exclude_below_floor is None:
        exclude_below_floor = rho.grid.d == 2
    if exclude_below_floor:
        above = rho.values > floor
        padded = np.concatenate(([above[0]], above, [above[-1]]))
        admissible &= padded[:-2] & padded[1:-1] & padded[2:]
        if not np.any(admissible):
            raise DomainError("density identically negligible")

    candidates = np.where(admissible, lap_v, np.inf)
    index = int(np.argmin(candidates))
    return DeltaResult(rho.with_values(lap_v), float(candidates[index]), index)


def q_of_u(rho: RadialField) -> float:
    """sup_r |u'' - u'/r|, the eigenvalue gap of the Hessian of a radial potential."""
    velocity = radial_velocity(rho)
    grid = rho.grid
    u_second = (velocity[1:] - velocity[:-1]) / grid.dr
    u_first = 0.5 * (velocity[1:] + velocity[:-1])
    gap = np.abs(u_second - u_first / grid.centers)
    return float(np.max(gap)) if gap.size else 0.0


def free_energy(rho: RadialField, floor: Optional[float] = None) -> FreeEnergyBreakdown:
    """Entropy (d=2) or L^m term minus half the interaction; cells at or below floor count as 0 log 0."""
    _require_nonnegative(rho)
    grid = rho.grid
    values = rho.values
    if grid.d == 2:
        positive = values > (floor if floor is not None else 0.0)
        integrand = np.zeros_like(values)
        integrand[positive] = values[positive] * np.log(values[positive])
    else:
        m = critical_exponent(grid.d)
        integrand = values**m / (m - 1.0)
    entropy_or_lm = float(np.sum(grid.weights * integrand))
    interaction = float(np.sum(grid.weights * values * potential(rho).values))
    return FreeEnergyBreakdown(entropy_or_lm, interaction, entropy_or_lm - 0.5 * interaction)


def moments(rho: RadialField) -> MomentsRecord:
    _require_nonnegative(rho)
    grid = rho.grid
    weighted = grid.weights * rho.values
    return MomentsRecord(
        mass=float(np.sum(weighted)),
        second_moment=float(np.sum(weighted * grid.centers**2)),
        log_moment=float(np.sum(weighted * np.log1p(grid.centers))),
    )


def liouville_density(r: np.ndarray, lam: float) -> np.ndarray:
    """u_lambda(r) = 8 lambda / (lambda + r^2)^2."""
    return 8.0 * lam / (lam + np.asarray(r, dtype=float)**2)**2


def h_lambda(rho: RadialField, lam: float) -> float:
    if rho.grid.d != 2:
        raise DomainError(f"H_lambda is defined for d=2 only, got d={rho.grid.d}")
    if not lam > 0:
        raise DomainError(f"lambda must be positive, got {lam}")
    _require_nonnegative(rho)
    u_lam = liouville_density(rho.r, lam)
    integrand = (np.sqrt(rho.values) - np.sqrt(u_lam))**2 / np.sqrt(u_lam)
    return float(np.sum(rho.grid.weights * integrand))


def tail_exponent(rho: RadialField, window: Tuple[float, float]) -> float:
    """Least-squares decay rate beta of rho ~ (1 + r)^(-beta) on the window."""
    r_lo, r_hi = window
    if not 0 < r_lo < r_hi <= rho.grid.r_max:
        raise DomainError(f"invalid tail window ({r_lo}, {r_hi})")
    selected = (rho.r >= r_lo) & (rho.r <= r_hi)
    if np.count_nonzero(selected) < 2:
        raise DomainError("tail window holds fewer than two cells")
    values = rho.values[selected]
    if np.any(values <= 0):
        raise DomainError("density must be strictly positive on the tail window")
    slope, _ = np.polyfit(np.log1p(rho.r[selected]), np.log(values), 1)
    return float(-slope)


def radial_l1(field: RadialField) -> float:
    return float(np.sum(field.grid.weights * np.abs(field.values)))
