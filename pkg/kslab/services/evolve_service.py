import logging
import math
from typing import Any, Dict, List, Optional, Tuple

from config.settings import Settings
from kslab.core import bounds, evolve, fields
from kslab.errors import DomainError, NumericalFailure
from kslab.models import (BlowupReport, DiagnosticsRecord, RadialField, RunResult, SolverConfig,
                          SolverState)
from kslab.utils.diagnostics_queue import DiagnosticsQueue, MemoryDiagnosticsQueue


class EvolveService:

    def __init__(self, settings: Settings):
        self.settings = settings

    def init_profile(self, config: SolverConfig) -> SolverState:
        return evolve.init_profile(config, outer_warn_rel=self.settings.OUTER_CELL_WARN_REL)

    @staticmethod
    def _log_record(record: DiagnosticsRecord) -> None:
        logging.debug(f"t={record.t:.6g} linf={record.linf:.6g} delta={record.delta:.6g} "
                      f"F={record.free_energy:.6g}")

    def _emit(self, record: DiagnosticsRecord, history: List[DiagnosticsRecord],
              sink: DiagnosticsQueue) -> None:
        history.append(record)
        sink.add_record(record, callback=self._log_record)

    def _detect(self, history: List[DiagnosticsRecord], config: SolverConfig):
        return evolve.detect_blowup(history, config.t_end,
                                    linf_factor=self.settings.BLOWUP_LINF_FACTOR,
                                    dt_fraction=self.settings.BLOWUP_DT_FRACTION,
                                    m2_drop_rel=self.settings.BLOWUP_M2_DROP_REL)

    def run(self, config: SolverConfig, sink: Optional[DiagnosticsQueue] = None) -> RunResult:
        if sink is None:
            sink = MemoryDiagnosticsQueue(run_id=f"d{config.d}-{config.profile}",
                                          flush_every=self.settings.DIAGNOSTICS_FLUSH_EVERY)
        state = self.init_profile(config)
        floor_rel = config.floor_rel
        history: List[DiagnosticsRecord] = []
        snapshots: List[Tuple[float, RadialField]] = []
        pending_snapshots = sorted(t for t in config.snapshot_times if 0 < t <= config.t_end)
        if any(t == 0 for t in config.snapshot_times):
            snapshots.append((0.0, state.rho))

        logging.info(f"Run started: d={config.d} chi={config.chi} profile={config.profile} "
                     f"mass={fields.mass(state.rho):.12g} n_cells={config.n_cells} "
                     f"t_end={config.t_end}")
        self._emit(evolve.diagnose(state, config, floor_rel), history, sink)
        blowup = BlowupReport(False)
        t_end = config.t_end

        while state.t < t_end:
            if state.steps >= config.max_steps:
                raise NumericalFailure(f"max_steps={config.max_steps} reached at t={state.t:.6g}",
                                       state_dump={"t": state.t, "steps": state.steps})
            dt = evolve.cfl_dt(state, config)
            if dt < self.settings.BLOWUP_DT_FRACTION * t_end:
                collapsed = SolverState(state.t, state.rho, state.steps, dt)
                self._emit(evolve.diagnose(collapsed, config, floor_rel), history, sink)
                blowup = self._detect(history, config)
                break

            next_stop = pending_snapshots[0] if pending_snapshots else t_end
            dt = min(dt, next_stop - state.t)
            state = evolve.step(state, dt, config)
            if abs(next_stop - state.t) <= 1e-12 * t_end:
                state.t = next_stop
            if pending_snapshots and state.t >= pending_snapshots[0]:
                snapshots.append((state.t, state.rho))
                pending_snapshots.pop(0)

            if state.steps % config.output_stride == 0 or state.t >= t_end:
                self._emit(evolve.diagnose(state, config, floor_rel), history, sink)
                outer = state.rho.values[-1]
                if outer > self.settings.OUTER_CELL_WARN_REL * history[-1].linf:
                    logging.warning(f"Outer-cell density {outer:.3e} at t={state.t:.6g} "
                                    f"exceeds {self.settings.OUTER_CELL_WARN_REL:g} of the peak")
                blowup = self._detect(history, config)
                if blowup.terminal:
                    logging.warning(f"Blow-up detected at t={state.t:.6g} "
                                    f"via {blowup.channel}: {blowup.evidence}")
                    break

        sink.close()
        logging.info(f"Run ended at t={state.t:.6g} after {state.steps} steps, "
                     f"{len(history)} records, blow-up={blowup.flagged}")
        return RunResult(config=config, records=history, final_state=state, blowup=blowup,
                         snapshots=snapshots)

    def summarize(self, result: RunResult) -> Dict[str, Any]:
        """Trajectory properties collected alongside the diagnostics CSV."""
        config = result.config
        history = result.records
        summary: Dict[str, Any] = {
            "t_final": result.final_state.t,
            "steps": result.final_state.steps,
            "blowup": {"flagged": result.blowup.flagged, "channel": result.blowup.channel,
                       "evidence": result.blowup.evidence,
                       "channels": list(result.blowup.channels)},
            "mass_drift_rel": (abs(history[-1].mass - history[0].mass) / history[0].mass
                               if history and history[0].mass > 0 else 0.0),
        }
        if len(history) >= 2:
            summary["m2_slope"] = evolve.second_moment_slope(history)
            summary["m2_slope_predicted"] = evolve.predicted_m2_slope(config.d, config.chi, history[0])
            envelope = evolve.empirical_c_envelope(history)
            summary["c_emp"] = envelope[-1][1] if envelope else None
            timed = [r for r in history if r.t > 0]
            summary["sup_t_linf"] = max((r.t_linf for r in timed), default=None)
            finite = [r.t_delta for r in timed if math.isfinite(r.t_delta)]
            summary["inf_t_delta"] = min(finite, default=None)
            ratios = evolve.q_ratio_series(history, config.d)
            summary["max_q_ratio"] = max((v for _, v in ratios), default=None)
        if config.chi and len(history) >= 2:
            summary["free_energy"] = evolve.free_energy_dissipation_check(history).to_dict()
            total = history[0].mass
            try:
                constants = bounds.small_mass_constants(config.d, total)
            except DomainError:
                constants = None
            if constants is not None and constants.threshold_ok:
                summary["riccati"] = evolve.riccati_trajectory_check(
                    history, constants.coefficient).to_dict()
                summary["predicted_delta_constant"] = 1.0 / constants.coefficient
        if config.d == 2 and sum(1 for r in history if r.t > 0) >= 2:
            report = evolve.entropy_decay_check(history)
            summary["entropy_decay"] = {"sup_shifted_entropy": report.sup_shifted_entropy,
                                        "c0": report.c0, "fitted_slope": report.fitted_slope,
                                        "holds": report.holds}
        return summary
