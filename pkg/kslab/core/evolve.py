"""Radial finite-volume kernels for d_t rho = Laplacian(rho^m) - div(rho grad u), -Laplacian(u) = rho.

Explicit Euler in time, central differences for rho^m, first-order upwind
drift with the face velocity taken from the enclosed mass. Fluxes vanish at
r = 0 and r = r_max, so the midpoint mass telescopes exactly.
"""
import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import beta as beta_fn

from kslab.core import bounds, fields, lane_emden
from kslab.errors import ConfigError, DomainError, NumericalFailure
from kslab.models import (PROFILES, BlowupReport, DiagnosticsRecord, EntropyDecayReport,
                          InequalityReport, RadialField, RadialGrid, SolverConfig, SolverState,
                          sphere_area)

NEGATIVE_TOLERANCE = 1e-12


def _barenblatt(grid: RadialGrid, total: float, t0: float) -> np.ndarray:
    """Source-type solution at time t0 for m = 2 - 2/d (the heat kernel when d = 2)."""
    d = grid.d
    r = grid.centers
    if d == 2:
        return total / (4.0 * math.pi * t0) * np.exp(-r**2 / (4.0 * t0))
    q = d / (d - 2.0)
    kappa = (d - 2.0) / (4.0 * d * (d - 1.0))
    shape_integral = sphere_area(d) * 0.5 * beta_fn(d / 2.0, q + 1.0)
    level = (total * kappa**(d / 2.0) / shape_integral)**(1.0 / (q + d / 2.0))
    return np.maximum(level - kappa * r**2 * t0**(-2.0 / d), 0.0)**q / t0


def _sample_profile(config: SolverConfig, grid: RadialGrid) -> Tuple[np.ndarray, Optional[float]]:
    r = grid.centers
    name = config.profile
    if name == "gaussian":
        return np.exp(-r**2 / (2.0 * config.width**2)), config.mass or 1.0
    if name == "uniform_ball":
        values = (r <= config.radius).astype(float)
        return values, config.mass or 1.0
    if name == "liouville":
        return fields.liouville_density(r, config.lam), config.mass
    if name == "power_tail":
        if config.beta <= config.d:
            raise ConfigError(f"power_tail needs beta > d, got beta={config.beta}")
        return (1.0 + r)**(-config.beta), config.mass or 1.0
    if name == "barenblatt":
        return _barenblatt(grid, config.mass or 1.0, config.t0), config.mass or 1.0
    if name == "lane_emden_stationary":
        if config.mass is not None:
            logging.warning("lane_emden_stationary carries its own mass; ignoring the mass parameter")
        profile, _ = lane_emden.direct_profile(config.d, n_cells=config.n_cells,
                                               r_max=config.r_max, scale=config.lam)
        return profile.values, None
    raise ConfigError(f"unknown profile '{name}', expected one of {', '.join(PROFILES)}")


def init_profile(config: SolverConfig, outer_warn_rel: float = 1e-8) -> SolverState:
    grid = config.grid()
    values, target = _sample_profile(config, grid)
    rho = RadialField(grid, values)
    sampled = fields.mass(rho)
    if sampled <= 0:
        raise ConfigError(f"profile '{config.profile}' has no mass on the grid")
    if target is not None:
        rho = rho.with_values(values * (target / sampled))
    peak = float(np.max(rho.values))
    if rho.values[-1] > outer_warn_rel * peak:
        logging.warning(f"Profile '{config.profile}' reaches the outer cell "
                        f"(rho={rho.values[-1]:.3e}, peak {peak:.3e}); enlarge r_max")
    return SolverState(t=0.0, rho=rho)


def cfl_dt(state: SolverState, config: SolverConfig) -> float:
    rho = state.rho.values
    grid = state.rho.grid
    if not np.any(rho > 0):
        return config.t_end
    diffusivity = float(np.max(config.m * rho**(config.m - 1.0)))
    bound = grid.dr**2 / (2.0 * grid.d * diffusivity) if diffusivity > 0 else math.inf
    velocity = np.zeros(grid.n_cells + 1)
    if config.chi:
        velocity[1:-1] = config.chi * fields.radial_velocity(state.rho)[1:-1]
        speed = float(np.max(np.abs(velocity)))
        if speed > 0:
            bound = min(bound, grid.dr / speed)

    # per-cell outflow rate of the update; near r = 0 the face/volume ratio reaches 2^(d-1)
    area = grid.faces**(grid.d - 1)
    volume = grid.centers**(grid.d - 1) * grid.dr
    rate = diffusivity * (area[1:] + area[:-1]) / (volume * grid.dr)
    rate += (np.maximum(velocity[1:], 0.0) * area[1:] + np.maximum(-velocity[:-1], 0.0) * area[:-1]) / volume
    worst = float(np.max(rate))
    if worst > 0:
        bound = min(bound, 1.0 / worst)
    if not math.isfinite(bound):
        return config.t_end
    return config.cfl_safety * bound


def face_fluxes(rho: RadialField, config: SolverConfig) -> np.ndarray:
    values = rho.values
    grid = rho.grid
    flux = np.zeros(grid.n_cells + 1)
    powered = values**config.m
    flux[1:-1] = -(powered[1:] - powered[:-1]) / grid.dr
    if config.chi:
        velocity = fields.radial_velocity(rho)[1:-1]
        upwind = np.where(velocity > 0, values[:-1], values[1:])
        flux[1:-1] += config.chi * upwind * velocity
    return flux


def step(state: SolverState, dt: float, config: SolverConfig) -> SolverState:
    rho = state.rho
    grid = rho.grid
    flux = face_fluxes(rho, config) * grid.faces**(grid.d - 1)
    updated = rho.values - dt * (flux[1:] - flux[:-1]) / (grid.centers**(grid.d - 1) * grid.dr)

    peak = float(np.max(np.abs(updated))) if np.all(np.isfinite(updated)) else math.nan
    if not math.isfinite(peak) or updated.min() < -NEGATIVE_TOLERANCE * peak:
        worst = int(np.nanargmin(updated)) if np.any(np.isfinite(updated)) else -1
        raise NumericalFailure(
            f"step {state.steps + 1} at t={state.t:.6g} produced "
            f"{'NaN' if not math.isfinite(peak) else 'negative density'} (dt={dt:.3e})",
            state_dump={"t": state.t, "step": state.steps + 1, "dt": dt, "cell": worst,
                        "rho": rho.values.tolist()})
    return SolverState(t=state.t + dt, rho=rho.with_values(np.maximum(updated, 0.0)),
                       steps=state.steps + 1, last_dt=dt)


def diagnose(state: SolverState, config: SolverConfig, floor_rel: float = 1e-14) -> DiagnosticsRecord:
    rho = state.rho
    t = state.t
    floor = fields.default_floor(rho, floor_rel)
    moments = fields.moments(rho)
    linf = float(np.max(rho.values))
    delta = math.nan
    if t > 0:
        try:
            delta = fields.v_and_delta(rho, floor, chi=config.chi).delta
        except DomainError as e:
            logging.debug(f"delta unavailable at t={t:.6g}: {e}")
    energy = fields.free_energy(rho, floor)
    h_value = fields.h_lambda(rho, config.h_lambda_lambda) if rho.grid.d == 2 else math.nan
    try:
        tail_beta = fields.tail_exponent(rho, config.tail_window())
    except DomainError:
        tail_beta = math.nan
    return DiagnosticsRecord(
        t=t, mass=moments.mass, linf=linf, delta=delta, t_linf=t * linf, t_delta=t * delta,
        entropy_or_lm=energy.entropy_or_lm, interaction=energy.interaction,
        free_energy=energy.total, m2=moments.second_moment, log_moment=moments.log_moment,
        q_of_u=fields.q_of_u(rho), h_lambda=h_value, tail_beta=tail_beta, dt=state.last_dt)


def _slope(times: Sequence[float], values: Sequence[float]) -> float:
    if len(times) < 2:
        return math.nan
    slope, _ = np.polyfit(np.asarray(times, dtype=float), np.asarray(values, dtype=float), 1)
    return float(slope)


def detect_blowup(history: Sequence[DiagnosticsRecord], t_end: float,
                  linf_factor: float = 1e3, dt_fraction: float = 1e-12,
                  m2_drop_rel: float = 1e-2) -> BlowupReport:
    """Three evidence channels: L-infinity growth, dt collapse, decreasing second moment.

    The reported channel is the first that fired in that order; ``evidence``
    carries the numbers of every channel that fired.
    """
    if len(history) < 2:
        raise DomainError("blow-up detection needs at least two records")
    first, last = history[0], history[-1]
    fired: List[str] = []
    evidence = {}
    if last.linf > linf_factor * first.linf:
        fired.append("linf")
        evidence.update(t=last.t, linf=last.linf, linf_ratio=last.linf / first.linf)
    collapsed = [r for r in history[1:] if 0 < r.dt < dt_fraction * t_end]
    if collapsed:
        fired.append("dt")
        evidence.update(t_collapse=collapsed[0].t, dt=collapsed[0].dt)
    if len(history) >= 3:
        slope = _slope([r.t for r in history], [r.m2 for r in history])
        drop = first.m2 - last.m2
        if slope < 0 and drop > m2_drop_rel * first.m2:
            fired.append("m2")
            evidence.update(m2_slope=slope, m2_drop=drop)
    if not fired:
        return BlowupReport(False)
    return BlowupReport(True, fired[0], evidence, tuple(fired))


def entropy_decay_check(history: Sequence[DiagnosticsRecord], d: int = 2,
                        early_fraction: float = 0.5) -> EntropyDecayReport:
    """E(t) <= -M log(c0 t): reports sup(E + M log t), the implied c0 and the early slope of E/M vs -log t."""
    if d != 2:
        raise DomainError("entropy decay check applies to d=2")
    timed = [r for r in history if r.t > 0 and math.isfinite(r.entropy_or_lm)]
    if len(timed) < 2:
        raise DomainError("entropy decay check needs two records with t > 0")
    total = timed[0].mass
    shifted = [r.entropy_or_lm + total * math.log(r.t) for r in timed]
    sup_value = max(shifted)
    early = timed[:max(2, int(len(timed) * early_fraction))]
    fitted = _slope([-math.log(r.t) for r in early], [r.entropy_or_lm / total for r in early])
    c0 = math.exp(-sup_value / total) if math.isfinite(sup_value) else 0.0
    return EntropyDecayReport(sup_shifted_entropy=sup_value, c0=c0, fitted_slope=fitted,
                              holds=math.isfinite(sup_value) and c0 > 0)


def free_energy_dissipation_check(history: Sequence[DiagnosticsRecord],
                                  tol_rel: float = 1e-6) -> InequalityReport:
    energies = [r.free_energy for r in history]
    tolerance = tol_rel * (1.0 + abs(energies[0])) if energies else 0.0
    increase = max((b - a for a, b in zip(energies, energies[1:])), default=0.0)
    return InequalityReport(inequality="F(t_k+1) <= F(t_k) + tol", lhs=float(increase),
                            rhs=float(tolerance), margin=float(tolerance - increase),
                            passed=bool(increase <= tolerance))


def riccati_trajectory_check(history: Sequence[DiagnosticsRecord], coefficient: float,
                             slack: float = 0.1) -> InequalityReport:
    """Discrete delta' >= coefficient * delta^2 on consecutive records with negative delta."""
    timed = [r for r in history if r.t > 0 and math.isfinite(r.delta)]
    violations = 0
    pairs = 0
    for a, b in zip(timed, timed[1:]):
        if a.delta >= 0 or b.delta >= 0 or b.t <= a.t:
            continue
        pairs += 1
        rate = (b.delta - a.delta) / (b.t - a.t)
        required = coefficient * max(a.delta, b.delta)**2
        if rate < (1.0 - slack) * required:
            violations += 1
    if violations:
        logging.warning(f"delta' >= c delta^2 violated on {violations} of {pairs} record pairs")
    return InequalityReport(inequality="delta' >= c delta^2", lhs=float(violations), rhs=0.0,
                            margin=float(-violations), passed=violations == 0)


def second_moment_slope(history: Sequence[DiagnosticsRecord], t_lo: float = 0.0,
                        t_hi: float = math.inf) -> float:
    window = [r for r in history if t_lo <= r.t <= t_hi]
    return _slope([r.t for r in window], [r.m2 for r in window])


def predicted_m2_slope(d: int, chi: int, record: DiagnosticsRecord) -> float:
    """dm2/dt from the virial identities at the state summarized by ``record``."""
    if d == 2:
        return 4.0 * record.mass * (1.0 - chi * record.mass / (8.0 * math.pi))
    if chi:
        return 2.0 * (d - 2.0) * record.free_energy
    m = 2.0 - 2.0 / d
    return 2.0 * d * (m - 1.0) * record.entropy_or_lm


def empirical_c_envelope(history: Sequence[DiagnosticsRecord]) -> List[Tuple[float, float]]:
    """Running sup over t' <= t of |t' delta(t')| / (1 + t')."""
    envelope: List[Tuple[float, float]] = []
    running = 0.0
    for r in history:
        if r.t > 0 and math.isfinite(r.delta):
            running = max(running, abs(r.t * r.delta) / (1.0 + r.t))
            envelope.append((r.t, running))
    return envelope


def q_ratio_series(history: Sequence[DiagnosticsRecord], d: int) -> List[Tuple[float, float]]:
    series = []
    for r in history:
        if r.t > 0 and math.isfinite(r.delta) and r.delta != 0:
            series.append((r.t, r.q_of_u / bounds.q_growth(d, r.delta)))
    return series
