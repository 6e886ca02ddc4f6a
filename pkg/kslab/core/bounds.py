"""Explicit small-mass constants, the delta comparison curve and inequality checkers.

The d=2 chain is closed form. For d>2 the L-infinity constant is obtained by
re-running the radial optimization that produces it, and the Q(u) constant is
an explicit instantiation of the cutoff argument with the radius optimized
numerically; both are one concrete choice of constants, not sharp values.
"""
import logging
import math
from typing import Dict, List, Optional

import numpy as np
from scipy.optimize import bisect, brentq, minimize_scalar

from kslab.core import fields
from kslab.errors import DomainError
from kslab.models import (InequalityReport, RadialField, SmallMassConstants, critical_exponent,
                          sphere_area)

# cutoff: |grad chi| <= C_GRAD / R; |Laplacian chi| <= c_lap / R^2 with c_lap = d unless given
C_GRAD = 1.0


def _check_d(d: int, minimum: int = 2) -> None:
    if int(d) != d or d < minimum:
        raise DomainError(f"dimension must be an integer >= {minimum}, got {d}")


def ball_volume(d: int) -> float:
    return sphere_area(d) / d


def naive_linfty_constant_closed_form(d: int, M: float) -> float:
    """d^(d/(d-2)) / (2^((2d-2)/(d-2)) (d-1)(d+2)) * (M / omega_d)^(2/d)."""
    _check_d(d, 3)
    prefactor = d**(d / (d - 2.0)) / (2.0**((2.0 * d - 2.0) / (d - 2.0)) * (d - 1.0) * (d + 2.0))
    return prefactor * (M / ball_volume(d))**(2.0 / d)


def naive_linfty_constant(d: int, M: float) -> float:
    """L-infinity / |delta| constant from minimizing a r^-(d-2) + b r^2 over r (b at |delta| = 1)."""
    _check_d(d, 3)
    if not M > 0:
        raise DomainError(f"mass must be positive, got {M}")
    a = 2.0 * (d - 1.0) / (d - 2.0) * (M / ball_volume(d))**((d - 2.0) / d)
    b = 1.0 / (2.0 * (d + 2.0))

    def objective(log_r: float) -> float:
        r = math.exp(log_r)
        return a * r**(-(d - 2.0)) + b * r**2

    r_star = math.log((d - 2.0) * a / (2.0 * b)) / d
    result = minimize_scalar(objective, bracket=(r_star - 1.0, r_star, r_star + 1.0),
                             method="brent", options={"xtol": 1e-14})
    ratio = (d - 2.0) / (2.0 * (d - 1.0))  # (m - 1) / m
    return (ratio * float(result.fun))**(d / (d - 2.0))


def printed_prefactor_candidates(d: int) -> Dict[str, float]:
    """The two printed prefactor variants next to the derived one, for the discrepancy record."""
    _check_d(d, 3)
    tail = (d - 2.0) / (4.0 * (d - 1.0) * (d + 2.0))
    return {
        "exponent_d_over_d_minus_1": 2.0**(d / (d - 1.0)) * tail,
        "exponent_d_over_d_minus_2": 2.0**(d / (d - 2.0)) * tail,
        "derived": naive_linfty_constant_closed_form(d, ball_volume(d)),
    }


def _c0_ratio(d: int, M: float) -> float:
    if d == 2:
        return math.e * M / (8.0 * math.pi)
    return naive_linfty_constant(d, M)


def c0_pole(d: int) -> float:
    """Mass at which the C0 formula stops applying."""
    _check_d(d)
    if d == 2:
        return 8.0 * math.pi / math.e
    prefactor = naive_linfty_constant_closed_form(d, ball_volume(d))
    return ball_volume(d) * prefactor**(-d / 2.0)


def c0_small_mass(d: int, M: float) -> float:
    _check_d(d)
    if not M >= 0:
        raise DomainError(f"mass must be nonnegative, got {M}")
    if M == 0:
        return 0.0
    ratio = _c0_ratio(d, M)
    if ratio >= 1.0:
        raise DomainError(f"formula inapplicable: M={M} is at or above the pole {c0_pole(d):.12g}")
    return ratio / (1.0 - ratio)


def _q_bound_at_radius(d: int, R: float, M: float, delta_bar: float, l2: float,
                       c_grad: float, c_lap: float) -> float:
    sigma = sphere_area(d)
    omega = ball_volume(d)
    m = critical_exponent(d)
    local = (2.0 / m) * delta_bar * l2**(2.0 / d)
    vol_3R = omega * 3.0**d * R**d
    fisher = 0.5 * d * (c_lap * R**-2 * l2 * math.sqrt(vol_3R)
                        + local * vol_3R**((d - 1.0) / d))
    near = (local * (sigma * (d - 1.0) / d)**((d - 1.0) / d) * 2.0 * R
            + 2.0 * c_grad * R**(1.0 - d) * math.sqrt(M * fisher)
            + c_lap * R**-d * l2 * math.sqrt(omega * (2.0 * R)**d)) / sigma
    far = math.sqrt(d / sigma) * l2 * R**(-d / 2.0)
    return near + far


def q_bound_constant(d: int, M: float, c_grad: float = C_GRAD,
                     c_lap: Optional[float] = None) -> float:
    """K(M) with Q(u) <= K(M) * max(|delta|, ||rho||_inf) for d > 2.

    Uses ||rho||_2 <= sqrt(M * delta_bar); the bound is homogeneous of degree
    one in delta_bar, so it is evaluated at delta_bar = 1 and minimized in R.
    """
    _check_d(d, 3)
    if M == 0:
        return 0.0
    c_lap = float(d) if c_lap is None else c_lap
    l2 = math.sqrt(M)
    result = minimize_scalar(
        lambda log_R: _q_bound_at_radius(d, math.exp(log_R), M, 1.0, l2, c_grad, c_lap),
        bounds=(-20.0, 20.0), method="bounded", options={"xatol": 1e-10})
    return float(result.fun)


def c1_small_mass(d: int, M: float) -> float:
    c0 = c0_small_mass(d, M)
    if d == 2:
        return 2.0 * M / (4.0 * math.pi) * (c0 + 1.0)
    return q_bound_constant(d, M) * max(1.0, c0)


def small_mass_constants(d: int, M: float) -> SmallMassConstants:
    c0 = c0_small_mass(d, M)
    c1 = c1_small_mass(d, M)
    coefficient = 1.0 - (d - 1.0)**2 / (2.0 * d) * c1**2
    return SmallMassConstants(d=d, M=M, C0=c0, C1=c1, threshold_ok=coefficient > 0,
                              coefficient=coefficient)


def _threshold_gap(d: int, M: float) -> float:
    return (d - 1.0)**2 / (2.0 * d) * c1_small_mass(d, M)**2 - 1.0


def epsilon_threshold_bisection(d: int) -> float:
    """Largest M with ((d-1)^2 / 2d) C1(M)^2 < 1, by bisection below the C0 pole."""
    _check_d(d)
    pole = c0_pole(d)
    lo, hi = pole * 1e-12, pole * (1.0 - 1e-12)
    if d == 2:
        return float(bisect(lambda M: _threshold_gap(d, M), lo, hi, xtol=1e-15, maxiter=500))
    return float(brentq(lambda M: _threshold_gap(d, M), lo, hi, xtol=1e-12 * pole, maxiter=500))


def epsilon_threshold(d: int) -> float:
    _check_d(d)
    if d == 2:
        return 8.0 * math.pi / (2.0 + math.e)
    value = epsilon_threshold_bisection(d)
    logging.debug(f"epsilon threshold d={d}: {value:.12g}")
    return value


def predicted_delta_constant(d: int, M: float) -> float:
    """C in delta(t) >= -C/t from delta' >= coefficient * delta^2."""
    constants = small_mass_constants(d, M)
    if not constants.threshold_ok:
        raise DomainError(f"M={M} is above the small-mass threshold for d={d}")
    return 1.0 / constants.coefficient


def delta_comparison(t: float, c: float, delta0: float = -math.inf) -> float:
    if not t > 0:
        raise DomainError(f"t must be positive, got {t}")
    if not c > 0:
        raise DomainError(f"c must be positive, got {c}")
    return max(delta0, -1.0 / (c * t))


def subcritical_q_exponent(d: int) -> float:
    _check_d(d, 3)
    return (d * d + 4.0) / (d * (d + 2.0))


def q_growth(d: int, delta: float) -> float:
    """Growth rate in |delta| that Q(u) is compared against in the subcritical regime."""
    magnitude = abs(delta)
    if d == 2:
        return magnitude / math.sqrt(math.log(magnitude + math.e))
    return magnitude**subcritical_q_exponent(d)


def _report(name: str, lhs: float, rhs: float, slack: float,
            location: Optional[float] = None) -> InequalityReport:
    passed = lhs <= rhs + slack * abs(rhs)
    return InequalityReport(inequality=name, lhs=float(lhs), rhs=float(rhs),
                            margin=float(rhs - lhs), passed=bool(passed), location=location)


def check_q_inequality_2d(rho: RadialField, delta: float,
                          slack: float = 0.05) -> List[InequalityReport]:
    """Q(u) <= ||Laplacian rho||_1 / 4 pi and ||Laplacian rho||_1 <= 2M|delta| + 2M||rho||_inf."""
    if rho.grid.d != 2:
        raise DomainError("check_q_inequality_2d needs d=2")
    q_value = fields.q_of_u(rho)
    lap_l1 = fields.radial_l1(fields.radial_laplacian(rho))
    total = fields.mass(rho)
    linf = float(np.max(rho.values))
    return [
        _report("q_of_u <= |lap rho|_1 / 4pi", q_value, lap_l1 / (4.0 * math.pi), slack),
        _report("|lap rho|_1 <= 2M|delta| + 2M|rho|_inf", lap_l1,
                2.0 * total * abs(delta) + 2.0 * total * linf, slack),
    ]


def check_laplacian_lower(rho: RadialField, delta: float,
                          tolerance_rel: float = 1e-3) -> InequalityReport:
    """Pointwise Laplacian(rho) >= -(2/m) delta_bar rho^(2/d), delta_bar = max(|delta|, ||rho||_inf)."""
    d = rho.grid.d
    m = critical_exponent(d)
    linf = float(np.max(rho.values)) if rho.values.size else 0.0
    delta_bar = max(abs(delta), linf)
    lap = fields.radial_laplacian(rho).values
    bound = (2.0 / m) * delta_bar * np.maximum(rho.values, 0.0)**(2.0 / d)
    excess = lap + bound
    worst = int(np.argmin(excess))
    tolerance = tolerance_rel * max(linf, np.finfo(float).tiny)
    return InequalityReport(
        inequality="lap rho >= -(2/m) delta_bar rho^(2/d)",
        lhs=float(excess[worst]),
        rhs=-tolerance,
        margin=float(excess[worst] + tolerance),
        passed=bool(excess[worst] >= -tolerance),
        location=float(rho.r[worst]),
    )
