"""Radial shooting for the Lane-Emden control family and the Liouville profile.

The normalized family solves

    (r^(d-1) f')' + r^(d-1) f_+^q = 0,   q = d / (d - 2),

from f = 1, f' = -gamma / d at r = gamma (f = 1 on the plateau [0, gamma]).
The state carried by the integrator is (f, r^(d-1) f', radial mass), so the
mass and its flux form -R^(d-1) f'(R) come out of the same integration;
quadrature_mass integrates f_+^q from the dense output separately.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.optimize import bisect, brentq

from kslab.errors import DomainError, NumericalFailure
from kslab.models import (AdjointSolution, MassCurveRow, RadialField, RadialGrid,
                          ShootingSolution, VariationSolution, critical_exponent,
                          sphere_area)

TAYLOR_RADIUS = 1e-3
ZERO_TOLERANCE = 1e-12
HORIZON_FACTOR = 10.0
N_SAMPLES = 2001

DEFAULT_RTOL = 1e-12
DEFAULT_ATOL = 1e-14
DEFAULT_METHOD = "DOP853"


@dataclass(frozen=True)
class _Trajectory:
    dense: Any
    r_start: float
    R: float
    y_end: np.ndarray


def _check_dimension(d: int) -> None:
    if int(d) != d or d < 3:
        raise DomainError(f"Lane-Emden shooting needs an integer d >= 3, got {d}")


def _series(d: int, q: float, coefficient: float, r: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """f and f' near the origin for coefficient * Laplacian(f) + f^q = 0, f(0) = 1."""
    a4 = q / (8.0 * d * (d + 2.0) * coefficient**2)
    f = 1.0 - r**2 / (2.0 * d * coefficient) + a4 * r**4
    fprime = -r / (d * coefficient) + 4.0 * a4 * r**3
    return f, fprime


def _radius_estimate(d: int, gamma: float, coefficient: float) -> float:
    # crude first scale; the horizon itself comes from _concavity_horizon
    return gamma + 2.0 * d * math.sqrt(coefficient)


def _concavity_horizon(d: int, r: float, f: float, fprime: float) -> float:
    """Radius where the tangent of u(s) = s f(s^(1/(d-2))), s = r^(d-2), taken at r, hits zero.

    u is concave while f > 0, so the first zero of f lies before this radius.
    Returns inf while u is still increasing at r.
    """
    slope = f + r * fprime / (d - 2.0)
    if slope >= 0:
        return math.inf
    s = r**(d - 2)
    return (s - s * f / slope)**(1.0 / (d - 2))


def _integrate(d: int, gamma: float, coefficient: float, rtol: float, atol: float,
               method: str) -> _Trajectory:
    q = d / (d - 2.0)

    def rhs(r, y):
        f_plus = max(y[0], 0.0)
        weight = r**(d - 1)
        source = weight * f_plus**q
        return [y[1] / weight, -source / coefficient, source]

    def hits_zero(r, y):
        return y[0]

    hits_zero.terminal = True
    hits_zero.direction = -1

    if gamma > 0:
        r_start = gamma
        y0 = [1.0, -gamma**d / (d * coefficient), gamma**d / d]
    else:
        r_start = TAYLOR_RADIUS
        f0, fp0 = _series(d, q, coefficient, np.array(r_start))
        start_mass = r_start**d / d - q * r_start**(d + 2) / (2.0 * d * coefficient * (d + 2.0))
        y0 = [float(f0), float(r_start**(d - 1) * fp0), start_mass]

    scale = _radius_estimate(d, gamma, coefficient)
    horizon = scale
    head = solve_ivp(rhs, (r_start, scale), y0, method=method, rtol=rtol, atol=atol,
                     events=hits_zero)
    if head.status == -1:
        raise NumericalFailure(f"integrator failed for d={d}, gamma={gamma}: {head.message}")
    if len(head.t_events[0]) == 0:
        r_end = float(head.t[-1])
        bound = _concavity_horizon(d, r_end, float(head.y[0, -1]),
                                   float(head.y[1, -1]) / r_end**(d - 1))
        horizon = min(bound * (1.0 + 1e-9), HORIZON_FACTOR * scale)
        logging.debug(f"shoot d={d} gamma={gamma}: no zero before {scale:.6g}, "
                      f"concavity horizon {horizon:.6g}")
    sol = solve_ivp(rhs, (r_start, horizon), y0, method=method, rtol=rtol, atol=atol,
                    events=hits_zero, dense_output=True)
    if sol.status == -1:
        raise NumericalFailure(f"integrator failed for d={d}, gamma={gamma}: {sol.message}")
    if sol.status != 1 or len(sol.t_events[0]) == 0:
        raise NumericalFailure(
            f"no first zero before r={horizon:.6g} (d={d}, gamma={gamma})",
            state_dump={"d": d, "gamma": gamma, "horizon": horizon, "f_end": float(sol.y[0, -1])})

    R = float(sol.t_events[0][0])
    if abs(sol.sol(R)[0]) > ZERO_TOLERANCE:
        lo = float(sol.t[-2]) if len(sol.t) > 1 else r_start
        hi = R * (1.0 + 1e-8)
        if sol.sol(lo)[0] > 0 > sol.sol(hi)[0]:
            R = bisect(lambda r: sol.sol(r)[0], lo, hi, xtol=1e-15, maxiter=500)
    y_end = np.asarray(sol.sol(R), dtype=float)
    if abs(y_end[0]) > ZERO_TOLERANCE:
        raise NumericalFailure(f"first zero not resolved: |f(R)| = {abs(y_end[0]):.3e}")
    return _Trajectory(sol.sol, r_start, R, y_end)


def shoot(d: int, gamma: float = 0.0, rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL,
          method: str = DEFAULT_METHOD, n_samples: int = N_SAMPLES) -> ShootingSolution:
    _check_dimension(d)
    if not (gamma >= 0 and math.isfinite(gamma)):
        raise DomainError(f"gamma must be a finite nonnegative number, got {gamma}")

    trajectory = _integrate(d, gamma, 1.0, rtol, atol, method)
    r = np.linspace(trajectory.r_start, trajectory.R, n_samples)
    states = trajectory.dense(r)
    f = states[0].copy()
    fprime = states[1] / r**(d - 1)
    f[-1] = trajectory.y_end[0]
    fprime[-1] = trajectory.y_end[1] / trajectory.R**(d - 1)

    logging.debug(f"shoot d={d} gamma={gamma}: R={trajectory.R:.12g}, "
                  f"mass={trajectory.y_end[2]:.15g}")
    return ShootingSolution(d=d, gamma=float(gamma), r=r, f=f, fprime=fprime, R=trajectory.R,
                            radial_mass=float(trajectory.y_end[2]), r_start=trajectory.r_start,
                            dense=trajectory.dense)


def quadrature_mass(sol: ShootingSolution, epsrel: float = 1e-12, limit: int = 200) -> float:
    """Integral of r^(d-1) f_+^q over [0, R] by adaptive quadrature of the dense output."""
    d, q = sol.d, sol.q

    def integrand(r: float) -> float:
        f = float(sol.f_at(r)[0])
        return r**(d - 1) * max(f, 0.0)**q

    if sol.gamma > 0:
        inner = sol.gamma**d / d
    else:
        inner, _ = quad(integrand, 0.0, sol.r_start, epsabs=0.0, epsrel=epsrel, limit=limit)
    body, _ = quad(integrand, sol.r_start, sol.R, epsabs=0.0, epsrel=epsrel, limit=limit)
    return float(inner + body)


def gamma_grid(gamma_min: float, gamma_max: float, points: int, spacing: str = "log",
               include_zero: bool = True) -> List[float]:
    if points < 1:
        raise DomainError("points must be >= 1")
    if spacing == "log":
        if not 0 < gamma_min <= gamma_max:
            raise DomainError("log spacing needs 0 < gamma_min <= gamma_max")
        values = np.geomspace(gamma_min, gamma_max, points)
    elif spacing == "linear":
        if not 0 <= gamma_min <= gamma_max:
            raise DomainError("linear spacing needs 0 <= gamma_min <= gamma_max")
        values = np.linspace(gamma_min, gamma_max, points)
    else:
        raise DomainError(f"unknown spacing '{spacing}'")
    grid = sorted(set(float(g) for g in values) | ({0.0} if include_zero else set()))
    return grid


def mass_curve(d: int, gammas: Iterable[float], rtol: float = DEFAULT_RTOL,
               atol: float = DEFAULT_ATOL, method: str = DEFAULT_METHOD,
               workers: int = 1) -> List[MassCurveRow]:
    """M(gamma) and R(gamma) of the normalized family, without the sigma_d factor."""
    _check_dimension(d)
    ordered = sorted(float(g) for g in gammas)

    def one(gamma: float) -> MassCurveRow:
        sol = shoot(d, gamma, rtol=rtol, atol=atol, method=method, n_samples=2)
        return MassCurveRow(gamma=gamma, M=sol.radial_mass, R=sol.R)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, ordered))
    else:
        rows = [one(gamma) for gamma in ordered]
    logging.info(f"Mass curve d={d}: {len(rows)} points, "
                 f"M in [{min(r.M for r in rows):.12g}, {max(r.M for r in rows):.12g}]"
                 if rows else f"Mass curve d={d}: empty gamma grid")
    return rows


def variation(sol: ShootingSolution, rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL,
              method: str = DEFAULT_METHOD, n_samples: int = N_SAMPLES) -> VariationSolution:
    """w = df/dgamma along the shot; dM/dgamma = -R^(d-1) w'(R)."""
    if sol.gamma <= 0:
        raise DomainError("variation at gamma = 0 is degenerate (w vanishes identically)")
    d, q, gamma = sol.d, sol.q, sol.gamma

    def rhs(r, z):
        f_plus = max(z[0], 0.0)
        weight = r**(d - 1)
        return [z[1] / weight,
                -weight * f_plus**q,
                z[3] / weight,
                -q * f_plus**(q - 1.0) * weight * z[2]]

    z0 = [1.0, -gamma**d / d, gamma / d, 0.0]
    r_eval = np.linspace(gamma, sol.R, n_samples)
    result = solve_ivp(rhs, (gamma, sol.R), z0, method=method, rtol=rtol, atol=atol,
                       t_eval=r_eval)
    if not result.success:
        raise NumericalFailure(f"variation integration failed: {result.message}")
    w = result.y[2]
    wprime = result.y[3] / result.t**(d - 1)
    return VariationSolution(r=result.t, w=w, wprime=wprime, dM_dgamma=float(-result.y[3, -1]))


def adjoint_check(sol: ShootingSolution, r0: float, rtol: float = 1e-10, atol: float = 1e-12,
                  method: str = DEFAULT_METHOD, n_samples: int = N_SAMPLES) -> AdjointSolution:
    """Integrate the costate pair backwards from (p1, p2)(R) = (0, -1) down to r0."""
    if not 0 < r0 < sol.R:
        raise DomainError(f"r0 must lie in (0, R={sol.R}), got {r0}")
    d, q = sol.d, sol.q

    def rhs(r, p):
        f_plus = max(float(sol.f_at(r)[0]), 0.0)
        weight = r**(d - 1)
        p1_minus = max(-p[0], 0.0)
        return [-q * p[1] * weight * f_plus**(q - 1.0), -p1_minus / weight]

    r_eval = np.linspace(sol.R, r0, n_samples)
    result = solve_ivp(rhs, (sol.R, r0), [0.0, -1.0], method=method, rtol=rtol, atol=atol,
                       t_eval=r_eval, dense_output=True)
    if not result.success:
        raise NumericalFailure(f"adjoint integration failed: {result.message}")

    # t runs from R down to r0; skip the imposed zero at R
    p1 = result.y[0]
    sign_switch: Optional[float] = None
    for k in range(1, len(p1) - 1):
        if p1[k] < 0 <= p1[k + 1]:
            lo, hi = result.t[k + 1], result.t[k]
            sign_switch = float(brentq(lambda r: result.sol(r)[0], lo, hi, xtol=1e-14)) \
                if result.sol(lo)[0] * result.sol(hi)[0] < 0 else float(lo)
            break

    return AdjointSolution(r=result.t[::-1].copy(), p1=result.y[0][::-1].copy(),
                           p2=result.y[1][::-1].copy(), sign_switch=sign_switch)


def substitution_check(sol: ShootingSolution, n_points: int = 400) -> float:
    """Scaled residual of (d-2)^2 u'' + u^q / s^2 = 0 for u(s) = s f(r), s = r^(d-2).

    u'' is taken by central differences of u'(s) = f + r f' / (d - 2) evaluated
    on the dense output. Raises when the sampled u'' is positive anywhere.
    """
    d, q = sol.d, sol.q
    k = d - 2.0
    s_start, s_end = sol.r_start**k, sol.R**k
    eps = 2e-5 * s_end
    s = np.linspace(s_start + 2.0 * eps, s_end - 2.0 * eps, n_points)

    def u_prime(s_values: np.ndarray) -> np.ndarray:
        r = s_values**(1.0 / k)
        states = sol.dense(r)
        return states[0] + r * (states[1] / r**(d - 1)) / k

    u_second = (u_prime(s + eps) - u_prime(s - eps)) / (2.0 * eps)
    r = s**(1.0 / k)
    u = s * sol.dense(r)[0]
    source = np.maximum(u, 0.0)**q / s**2
    residual = k**2 * u_second + source
    scale = float(np.max(np.abs(source)))
    if np.any(u_second > 1e-6 * scale):
        worst = float(s[np.argmax(u_second)])
        raise NumericalFailure(f"u is not concave near s={worst:.6g}")
    return float(np.max(np.abs(residual)) / scale)


def _coefficient(d: int) -> float:
    m = critical_exponent(d)
    return m / (m - 1.0)


def critical_mass_sub(d: int, rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL,
                      method: str = DEFAULT_METHOD) -> float:
    _check_dimension(d)
    q = d / (d - 2.0)
    mu = _coefficient(d)**((d - 2.0) / 2.0)
    return sphere_area(d) * mu**q * shoot(d, 0.0, rtol=rtol, atol=atol, method=method,
                                          n_samples=2).radial_mass


def direct_profile(d: int, n_cells: int = 4096, r_max: Optional[float] = None,
                   scale: float = 1.0, rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL,
                   method: str = DEFAULT_METHOD) -> Tuple[RadialField, float]:
    """rho_bar = h^q for (m/(m-1)) Laplacian(h) + h^q = 0, h(0) = 1.

    ``scale`` applies the mass-preserving dilation rho -> scale^d rho(scale * r).
    """
    _check_dimension(d)
    if not scale > 0:
        raise DomainError(f"scale must be positive, got {scale}")
    q = d / (d - 2.0)
    coefficient = _coefficient(d)
    trajectory = _integrate(d, 0.0, coefficient, rtol, atol, method)
    support = trajectory.R / scale
    if r_max is None:
        r_max = 1.25 * support
    if r_max < support:
        raise DomainError(f"r_max={r_max} does not cover the support radius {support:.6g}")

    grid = RadialGrid(d, float(r_max), n_cells)
    x = scale * grid.centers
    h = np.zeros(grid.n_cells)
    inner = x <= trajectory.r_start
    body = (~inner) & (x < trajectory.R)
    h[inner] = _series(d, q, coefficient, x[inner])[0]
    h[body] = trajectory.dense(x[body])[0]
    rho_bar = scale**d * np.maximum(h, 0.0)**q
    total = sphere_area(d) * float(trajectory.y_end[2])
    logging.info(f"Lane-Emden profile d={d}: support {support:.12g}, mass {total:.15g}")
    return RadialField(grid, rho_bar), total


def liouville_profile(lam: float, r_max: float = 1e3, n_cells: int = 2**16) -> Tuple[RadialField, float]:
    """h = log(8 lambda / (lambda + r^2)^2) on a d=2 grid and the quadrature mass of e^h."""
    if not lam > 0:
        raise DomainError(f"lambda must be positive, got {lam}")
    grid = RadialGrid(2, r_max, n_cells)
    r = grid.centers
    h = np.log(8.0 * lam) - 2.0 * np.log(lam + r**2)
    total = float(np.sum(grid.weights * np.exp(h)))
    return RadialField(grid, h), total


def _integrate_liouville(lam: float, r_end: float, rtol: float, atol: float, method: str,
                         n_samples: int):
    """State (h, r h') of h'' + h'/r + e^h = 0, h(0) = log(8/lambda), from the series start."""
    if not lam > 0:
        raise DomainError(f"lambda must be positive, got {lam}")
    if not r_end > TAYLOR_RADIUS:
        raise DomainError(f"r_end must exceed {TAYLOR_RADIUS}, got {r_end}")
    h0 = math.log(8.0 / lam)
    peak = math.exp(h0)
    a4 = peak**2 / 64.0
    r0 = TAYLOR_RADIUS
    y0 = [h0 - peak * r0**2 / 4.0 + a4 * r0**4,
          r0 * (-peak * r0 / 2.0 + 4.0 * a4 * r0**3)]

    def rhs(r, y):
        return [y[1] / r, -r * math.exp(y[0])]

    r_eval = np.linspace(r0, r_end, n_samples)
    result = solve_ivp(rhs, (r0, r_end), y0, method=method, rtol=rtol, atol=atol, t_eval=r_eval)
    if not result.success:
        raise NumericalFailure(f"Liouville shooting failed: {result.message}")
    return result


def shoot_liouville(lam: float, r_end: float = 10.0, rtol: float = DEFAULT_RTOL,
                    atol: float = DEFAULT_ATOL, method: str = DEFAULT_METHOD,
                    n_samples: int = 1001) -> float:
    """Max |h_shot - h_closed| on [1e-3, r_end]."""
    result = _integrate_liouville(lam, r_end, rtol, atol, method, n_samples)
    closed = np.log(8.0 * lam) - 2.0 * np.log(lam + result.t**2)
    return float(np.max(np.abs(result.y[0] - closed)))


def liouville_enclosed_mass(lam: float, r_end: float = 10.0, rtol: float = DEFAULT_RTOL,
                            atol: float = DEFAULT_ATOL,
                            method: str = DEFAULT_METHOD) -> Tuple[float, float]:
    """Shot mass -2 pi r h'(r) inside r_end and the closed form 8 pi r^2 / (lambda + r^2)."""
    result = _integrate_liouville(lam, r_end, rtol, atol, method, 2)
    shot = -2.0 * math.pi * float(result.y[1, -1])
    return shot, 8.0 * math.pi * r_end**2 / (lam + r_end**2)


def shooting_dump(sol: ShootingSolution) -> Sequence[Tuple[float, float, float]]:
    return sol.dump_rows()
