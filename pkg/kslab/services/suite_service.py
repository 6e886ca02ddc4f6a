import logging
import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config.settings import Settings
from kslab.core import bounds, evolve, fields, lane_emden
from kslab.errors import LabError
from kslab.models import RadialField, RunResult, SolverConfig, SuiteCheck
from .evolve_service import EvolveService

LIOUVILLE_MASS_TOL = 1e-3
TWO_WAYS_TOL = 1e-8
MONOTONE_SLACK = 1e-9
PLATEAU_TOL = 1e-8
VARIATION_TOL = 1e-4
CRITICAL_MASS_TOL = 1e-6
EPSILON_TOL = 1e-10
LI_YAU_TOL = 1e-2
ARONSON_BENILAN_TOL = 2e-2
M2_SLOPE_TOL = 0.02
MASS_DRIFT_TOL = 1e-10
STATIONARY_TOL = 1e-3
Q_SLACK = 0.05

# bulk floors for the classical Li-Yau / Aronson-Benilan checks; the fronts are excluded
HEAT_BULK_FLOOR_REL = 1e-8
PME_BULK_FLOOR_REL = 1e-3


class AcceptanceSuiteService:
    """The acceptance battery: quick shooting and constant checks plus the evolution runs.

    ``quick`` keeps checks 1-6, a single coarse second-moment run and the
    blow-up indicator.
    """

    def __init__(self, settings: Settings, evolve_service: EvolveService):
        self.settings = settings
        self.evolve_service = evolve_service

    @property
    def _ode(self) -> Dict[str, object]:
        return {"rtol": self.settings.ODE_RTOL, "atol": self.settings.ODE_ATOL,
                "method": self.settings.ODE_METHOD}

    def run(self, quick: bool = False) -> List[SuiteCheck]:
        checks: List[Tuple[str, Callable[[], List[SuiteCheck]]]] = [
            ("liouville_mass", self.check_liouville_mass),
            ("mass_two_ways", self.check_mass_two_ways),
            ("mass_curve_plateau", lambda: self.check_mass_curve(points=12 if quick else 50)),
            ("variation_identity", self.check_variation),
            ("critical_mass_consistency", self.check_critical_mass),
            ("epsilon_closed_form", self.check_epsilon),
        ]
        if quick:
            checks.append(("second_moment_identity",
                           lambda: self.check_second_moment(masses=(4.0 * math.pi,), n_cells=1024,
                                                            t_end=0.25)))
            checks.append(("supercritical_blowup",
                           lambda: self.check_blowup(n_cells=512, require_linf=False)))
        else:
            checks.extend([
                ("li_yau_heat", self.check_li_yau_heat),
                ("aronson_benilan", self.check_aronson_benilan),
                ("second_moment_identity", self.check_second_moment),
                ("small_mass_keller_segel", self.check_small_mass),
                ("stationary_profile", self.check_stationary),
                ("supercritical_blowup", self.check_blowup),
            ])

        results: List[SuiteCheck] = []
        for name, check in checks:
            logging.info(f"Suite check {name} started")
            try:
                outcome = check()
            except LabError as e:
                logging.error(f"Suite check {name} raised: {e}", exc_info=True)
                outcome = [SuiteCheck(name, False, math.nan, math.nan,
                                      {"error": f"{type(e).__name__}: {e}"})]
            for item in outcome:
                level = logging.INFO if item.passed else logging.WARNING
                logging.log(level, f"Suite check {item.name}: "
                                   f"{'pass' if item.passed else 'FAIL'} "
                                   f"(value={item.value:.6g}, tolerance={item.tolerance:.3g})")
            results.extend(outcome)
        failed = sum(1 for r in results if not r.passed)
        logging.info(f"Suite finished: {len(results) - failed} passed, {failed} failed")
        return results

    def check_liouville_mass(self) -> List[SuiteCheck]:
        target = 8.0 * math.pi
        _, total = lane_emden.liouville_profile(1.0, r_max=1e3, n_cells=2**16)
        deviation = lane_emden.shoot_liouville(1.0, **self._ode)
        error = abs(total - target) / target
        return [
            SuiteCheck("liouville_mass", error <= LIOUVILLE_MASS_TOL, error, LIOUVILLE_MASS_TOL,
                       {"mass": total, "target": target}),
            SuiteCheck("liouville_shooting", deviation <= 1e-8, deviation, 1e-8),
        ]

    def check_mass_two_ways(self) -> List[SuiteCheck]:
        worst = 0.0
        cases = {}
        for d in (3, 4, 5):
            for gamma in (0.0, 0.3, 1.0):
                sol = lane_emden.shoot(d, gamma, **self._ode)
                quadrature = lane_emden.quadrature_mass(sol)
                error = abs(quadrature - sol.boundary_mass()) / quadrature
                cases[f"d={d},gamma={gamma}"] = error
                worst = max(worst, error)
        return [SuiteCheck("mass_two_ways", worst <= TWO_WAYS_TOL, worst, TWO_WAYS_TOL, cases)]

    def check_mass_curve(self, points: int = 50) -> List[SuiteCheck]:
        gammas = lane_emden.gamma_grid(1e-6, 1.0, points)
        rows = lane_emden.mass_curve(4, gammas, workers=self.settings.MASS_CURVE_WORKERS,
                                     **self._ode)
        base = rows[0].M
        drops = [a.M - b.M for a, b in zip(rows, rows[1:])]
        worst_drop = max(drops, default=0.0)
        plateau = max(abs(r.M - base) for r in rows if r.gamma <= 0.1)
        return [
            SuiteCheck("mass_curve_monotone", worst_drop <= MONOTONE_SLACK * base,
                       worst_drop / base, MONOTONE_SLACK, {"points": len(rows)}),
            SuiteCheck("mass_curve_plateau", plateau <= PLATEAU_TOL * base, plateau / base,
                       PLATEAU_TOL, {"M0": base}),
        ]

    def check_variation(self) -> List[SuiteCheck]:
        h = 1e-4
        worst = 0.0
        cases = {}
        for gamma in (0.2, 0.5, 1.0):
            sol = lane_emden.shoot(3, gamma, **self._ode)
            analytic = lane_emden.variation(sol, **self._ode).dM_dgamma
            plus = lane_emden.shoot(3, gamma + h, n_samples=2, **self._ode).radial_mass
            minus = lane_emden.shoot(3, gamma - h, n_samples=2, **self._ode).radial_mass
            finite_difference = (plus - minus) / (2.0 * h)
            error = abs(analytic - finite_difference) / abs(analytic)
            cases[f"gamma={gamma}"] = {"dM_dgamma": analytic, "finite_difference": finite_difference}
            worst = max(worst, error)
        return [SuiteCheck("variation_identity", worst <= VARIATION_TOL, worst, VARIATION_TOL, cases)]

    def check_critical_mass(self) -> List[SuiteCheck]:
        sub = lane_emden.critical_mass_sub(3, **self._ode)
        _, direct = lane_emden.direct_profile(3, **self._ode)
        error = abs(sub - direct) / sub
        return [SuiteCheck("critical_mass_consistency", error <= CRITICAL_MASS_TOL, error,
                           CRITICAL_MASS_TOL, {"critical_mass_sub": sub, "direct_profile": direct})]

    def check_epsilon(self) -> List[SuiteCheck]:
        closed = 8.0 * math.pi / (2.0 + math.e)
        numeric = bounds.epsilon_threshold_bisection(2)
        error = abs(numeric - closed)
        rounded_ok = round(bounds.epsilon_threshold(2), 4) == 5.3267
        return [SuiteCheck("epsilon_closed_form", error <= EPSILON_TOL and rounded_ok, error,
                           EPSILON_TOL, {"closed_form": closed, "bisection": numeric})]

    def _bulk_delta(self, rho: RadialField, chi: int, floor_rel: float) -> float:
        floor = fields.default_floor(rho, floor_rel)
        return fields.v_and_delta(rho, floor, chi=chi, exclude_below_floor=True).delta

    def _classical_check(self, name: str, config: SolverConfig, ages: Sequence[float],
                         floor_rel: float, tolerance: float,
                         start_age: float = 0.0) -> List[SuiteCheck]:
        result = self.evolve_service.run(config)
        deviations = {}
        for t, snapshot in result.snapshots:
            age = t + start_age
            if not any(abs(age - a) <= 1e-9 for a in ages):
                continue
            delta = self._bulk_delta(snapshot, 0, floor_rel)
            deviations[f"t={age:.6g}"] = abs(age * delta + 1.0)
        worst = max(deviations.values(), default=math.inf)
        return [SuiteCheck(name, worst <= tolerance, worst, tolerance,
                           {"deviations": deviations, **self._conservation(result)})]

    def check_li_yau_heat(self, n_cells: int = 4096) -> List[SuiteCheck]:
        # the heat kernel at age t0 is the initial Gaussian
        t0 = 0.1
        ages = (0.1, 0.25, 0.5, 1.0)
        config = SolverConfig(d=2, chi=0, profile="barenblatt", mass=1.0, t0=t0, r_max=10.0,
                              n_cells=n_cells, t_end=ages[-1] - t0, output_stride=20000,
                              snapshot_times=[a - t0 for a in ages])
        return self._classical_check("li_yau_heat", config, ages, HEAT_BULK_FLOOR_REL, LI_YAU_TOL,
                                     start_age=t0)

    def check_aronson_benilan(self, n_cells: int = 1024) -> List[SuiteCheck]:
        # a small uniform ball; by t = 0.5 the run is close to the source solution
        ages = (0.5, 0.75, 1.0)
        config = SolverConfig(d=3, chi=0, profile="uniform_ball", radius=0.1, mass=1.0, r_max=4.0,
                              n_cells=n_cells, t_end=ages[-1], output_stride=20000,
                              snapshot_times=list(ages))
        return self._classical_check("aronson_benilan", config, ages, PME_BULK_FLOOR_REL,
                                     ARONSON_BENILAN_TOL)

    def _conservation(self, result: RunResult) -> Dict[str, float]:
        first, last = result.records[0], result.records[-1]
        return {"mass_drift_rel": abs(last.mass - first.mass) / first.mass}

    def check_second_moment(self, masses: Optional[Sequence[float]] = None, n_cells: int = 2048,
                            t_end: float = 0.5) -> List[SuiteCheck]:
        if masses is None:
            masses = (2.0 * math.pi, 4.0 * math.pi, 6.0 * math.pi, 8.0 * math.pi)
        checks = []
        for total in masses:
            config = SolverConfig(d=2, chi=1, profile="gaussian", mass=total, width=1.0, r_max=7.0,
                                  n_cells=n_cells, t_end=t_end, output_stride=500)
            result = self.evolve_service.run(config)
            slope = evolve.second_moment_slope(result.records, 0.0, t_end)
            predicted = evolve.predicted_m2_slope(2, 1, result.records[0])
            label = f"second_moment_M={total / math.pi:.3g}pi"
            if abs(total - 8.0 * math.pi) < 1e-12:
                error = abs(slope) / (4.0 * total)
                detail = {"slope": slope}
            else:
                error = abs(slope - predicted) / abs(predicted)
                detail = {"slope": slope, "predicted": predicted}
            detail.update(self._conservation(result))
            checks.append(SuiteCheck(label, error <= M2_SLOPE_TOL, error, M2_SLOPE_TOL, detail))
        return checks

    def check_small_mass(self) -> List[SuiteCheck]:
        total = bounds.epsilon_threshold(2) / 2.0
        window = (0.05, 1.0)
        config = SolverConfig(d=2, chi=1, profile="barenblatt", mass=total, t0=1e-3, r_max=10.0,
                              n_cells=2048, t_end=window[1], output_stride=1000,
                              snapshot_times=[0.05, 0.1, 0.25, 0.5, 1.0])
        result = self.evolve_service.run(config)
        records = [r for r in result.records if window[0] <= r.t <= window[1]]
        predicted = bounds.predicted_delta_constant(2, total)
        drift = self._conservation(result)["mass_drift_rel"]
        dissipation = evolve.free_energy_dissipation_check(result.records)
        sup_t_linf = max((r.t_linf for r in records), default=math.inf)
        inf_t_delta = min((r.t_delta for r in records if math.isfinite(r.t_delta)), default=-math.inf)
        checks = [
            SuiteCheck("small_mass_conservation", drift <= MASS_DRIFT_TOL, drift, MASS_DRIFT_TOL),
            SuiteCheck("small_mass_free_energy", dissipation.passed, dissipation.lhs,
                       dissipation.rhs),
            SuiteCheck("small_mass_t_linf", math.isfinite(sup_t_linf), sup_t_linf, 0.0),
            SuiteCheck("small_mass_t_delta", inf_t_delta >= -2.0 * predicted, inf_t_delta,
                       -2.0 * predicted, {"predicted_constant": predicted}),
        ]

        worst_margin = math.inf
        failures = []
        for t, snapshot in result.snapshots:
            delta = fields.v_and_delta(snapshot).delta
            for report in bounds.check_q_inequality_2d(snapshot, delta, slack=Q_SLACK):
                worst_margin = min(worst_margin, report.margin)
                if not report.passed:
                    failures.append({"t": t, **report.to_dict()})
        checks.append(SuiteCheck("q_inequality_snapshots", not failures and bool(result.snapshots),
                                 worst_margin, Q_SLACK,
                                 {"snapshots": len(result.snapshots), "failures": failures}))
        return checks

    def check_stationary(self) -> List[SuiteCheck]:
        config = SolverConfig(d=3, chi=1, profile="lane_emden_stationary", lam=0.5, r_max=32.0,
                              n_cells=4096, t_end=1.0, output_stride=2000,
                              snapshot_times=[0.25, 0.5, 1.0])
        initial = self.evolve_service.init_profile(config).rho
        result = self.evolve_service.run(config)
        scale = float(np.max(initial.values))
        worst = max((float(np.max(np.abs(snapshot.values - initial.values))) / scale
                     for _, snapshot in result.snapshots), default=math.inf)
        return [SuiteCheck("stationary_profile", worst <= STATIONARY_TOL, worst, STATIONARY_TOL,
                           self._conservation(result))]

    def check_blowup(self, n_cells: int = 2048, require_linf: bool = True) -> List[SuiteCheck]:
        # upwinding adds a diffusion of order dr / (core radius), so the collapse stalls
        # a few cells wide; the L-infinity channel needs dr well below 1e-2
        total = 10.0 * math.pi
        config = SolverConfig(d=2, chi=1, profile="gaussian", mass=total, width=0.5, r_max=6.0,
                              n_cells=n_cells, t_end=1.0, output_stride=200)
        result = self.evolve_service.run(config)
        slope = evolve.second_moment_slope(result.records)
        channels = list(result.blowup.channels)
        detail = {"channel": result.blowup.channel, "channels": channels,
                  "t_final": result.final_state.t, "slope": slope,
                  "linf_ratio": result.records[-1].linf / result.records[0].linf}
        flagged = result.blowup.flagged and ("linf" in channels or not require_linf)
        return [
            SuiteCheck("supercritical_blowup_flag", flagged, float(flagged), 1.0, detail),
            SuiteCheck("supercritical_m2_slope", slope < 0, slope, 0.0),
        ]
