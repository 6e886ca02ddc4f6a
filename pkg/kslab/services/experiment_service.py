import logging
import math
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from config.settings import Settings
from kslab.core import bounds, fields, lane_emden
from kslab.errors import DomainError, NumericalFailure
from kslab.models import ExperimentConfig, InequalityReport, SolverConfig, SuiteCheck
from kslab.utils import output_writer
from kslab.utils.diagnostics_queue import CsvDiagnosticsQueue
from .evolve_service import EvolveService
from .suite_service import AcceptanceSuiteService

CRITICAL_MASS_COLUMNS = ("d", "method", "mass", "reference", "rel_error")


def _snapshot_name(t: float) -> str:
    return f"snapshot_t{format(t, '.6g')}.csv"


class ExperimentService:
    """Runs one subcommand and writes everything it produces under the output directory."""

    def __init__(self, settings: Settings, evolve_service: EvolveService,
                 suite_service: AcceptanceSuiteService):
        self.settings = settings
        self.evolve_service = evolve_service
        self.suite_service = suite_service

    @property
    def _ode(self) -> Dict[str, Any]:
        return {"rtol": self.settings.ODE_RTOL, "atol": self.settings.ODE_ATOL,
                "method": self.settings.ODE_METHOD}

    def echo_config(self, config: ExperimentConfig) -> Path:
        return output_writer.write_json(config.to_dict(), config.output_dir / "config.json")

    def mass_curve(self, d: int, gamma_min: float, gamma_max: float, points: int,
                   spacing: str, include_zero: bool, output_dir: Path, fmt: str = "csv",
                   dump_gamma: Optional[float] = None) -> List[Any]:
        gammas = lane_emden.gamma_grid(gamma_min, gamma_max, points, spacing, include_zero)
        rows = lane_emden.mass_curve(d, gammas, workers=self.settings.MASS_CURVE_WORKERS,
                                     **self._ode)
        output_writer.write_outputs(rows, fmt, output_dir / f"mass_curve.{fmt}",
                                    columns=output_writer.MASS_CURVE_COLUMNS)
        if dump_gamma is not None:
            sol = lane_emden.shoot(d, dump_gamma, **self._ode)
            output_writer.write_csv(output_dir / "shooting.csv", output_writer.SHOOTING_COLUMNS,
                                    lane_emden.shooting_dump(sol))
        return rows

    def critical_mass(self, dims: Sequence[int], output_dir: Path) -> List[Dict[str, Any]]:
        rows: List[Dict[str, Any]] = []
        for d in dims:
            if d == 2:
                target = 8.0 * math.pi
                _, total = lane_emden.liouville_profile(1.0)
                deviation = lane_emden.shoot_liouville(1.0, **self._ode)
                logging.info(f"Liouville shooting deviation from the closed form: {deviation:.3e}")
                shot, closed = lane_emden.liouville_enclosed_mass(1.0, **self._ode)
                rows.append({"d": 2, "method": "liouville_quadrature", "mass": total,
                             "reference": target, "rel_error": abs(total - target) / target})
                rows.append({"d": 2, "method": "liouville_shooting", "mass": shot,
                             "reference": closed, "rel_error": abs(shot - closed) / closed})
                continue
            sub = lane_emden.critical_mass_sub(d, **self._ode)
            _, direct = lane_emden.direct_profile(d, **self._ode)
            rows.append({"d": d, "method": "subsolution_shooting", "mass": sub,
                         "reference": direct, "rel_error": abs(sub - direct) / direct})
            rows.append({"d": d, "method": "direct_profile", "mass": direct,
                         "reference": sub, "rel_error": abs(sub - direct) / sub})
        output_writer.write_csv(output_dir / "critical_mass.csv", CRITICAL_MASS_COLUMNS,
                                ([row[c] for c in CRITICAL_MASS_COLUMNS] for row in rows))
        return rows

    def constants(self, d: int, masses: Optional[Sequence[float]], output_dir: Path) -> Dict[str, Any]:
        epsilon = bounds.epsilon_threshold(d)
        if not masses:
            masses = [fraction * epsilon for fraction in (0.25, 0.5, 0.75)]
        table = []
        for total in masses:
            try:
                constants = bounds.small_mass_constants(d, total)
            except DomainError as e:
                table.append({"M": total, "error": str(e)})
                continue
            entry = {"M": total, "C0": constants.C0, "C1": constants.C1,
                     "coefficient": constants.coefficient, "threshold_ok": constants.threshold_ok}
            if constants.threshold_ok:
                entry["predicted_delta_constant"] = 1.0 / constants.coefficient
            table.append(entry)

        payload: Dict[str, Any] = {
            "d": d,
            "m": 2.0 - 2.0 / d,
            "epsilon_threshold": epsilon,
            "epsilon_threshold_bisection": bounds.epsilon_threshold_bisection(d),
            "c0_pole": bounds.c0_pole(d),
            "small_mass": table,
        }
        if d >= 3:
            payload["subcritical_q_exponent"] = bounds.subcritical_q_exponent(d)
            payload["naive_linfty_prefactor"] = bounds.printed_prefactor_candidates(d)
            payload["q_bound_constant"] = {str(total): bounds.q_bound_constant(d, total)
                                           for total in masses}
        output_writer.write_json(payload, output_dir / "constants.json")
        return payload

    def evolve(self, config: SolverConfig, output_dir: Path, run_id: str = "run") -> Dict[str, Any]:
        sink = CsvDiagnosticsQueue(output_dir / "diagnostics.csv", run_id=run_id,
                                   flush_every=self.settings.DIAGNOSTICS_FLUSH_EVERY)
        try:
            result = self.evolve_service.run(config, sink=sink)
        finally:
            sink.close()
        for t, snapshot in result.snapshots:
            output_writer.write_field_csv(snapshot, output_dir / _snapshot_name(t))
        # the summary is rebuilt from the CSV so both stay in step
        persisted = output_writer.read_diagnostics_csv(sink.path)
        if len(persisted) != len(result.records):
            raise NumericalFailure(f"{sink.path} holds {len(persisted)} records, "
                                   f"the run produced {len(result.records)}")
        summary = self.evolve_service.summarize(replace(result, records=persisted))
        summary["snapshots"] = [_snapshot_name(t) for t, _ in result.snapshots]
        output_writer.write_json(summary, output_dir / "run_summary.json")
        return summary

    def check(self, snapshot: Path, d: int, delta: Optional[float], chi: int,
              output_dir: Path) -> List[InequalityReport]:
        rho = output_writer.read_field_csv(snapshot, d)
        if delta is None:
            delta = fields.v_and_delta(rho, fields.default_floor(rho, self.settings.PRESSURE_FLOOR_REL),
                                       chi=chi).delta
        reports: List[InequalityReport] = []
        if d == 2:
            reports.extend(bounds.check_q_inequality_2d(rho, delta))
        reports.append(bounds.check_laplacian_lower(rho, delta))
        output_writer.write_json({"snapshot": str(snapshot), "delta": delta,
                                  "reports": [r.to_dict() for r in reports]},
                                 output_dir / "check_report.json")
        return reports

    def suite(self, quick: bool, output_dir: Path) -> List[SuiteCheck]:
        results = self.suite_service.run(quick=quick)
        output_writer.write_json({"quick": quick, "checks": [r.to_dict() for r in results]},
                                 output_dir / "suite_report.json")
        return results
