"""Command-line entry point: one subcommand per experiment, JSON config files, CSV/JSON outputs."""
import json
import logging
import math
from pathlib import Path
from typing import Any, Callable, Dict, List, Literal, Optional, Type

import click
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from config.settings import Settings, get_settings
from kslab.app.factories.build_services import build_core_services
from kslab.errors import ConfigError, LabError, NumericalFailure, SuiteFailure
from kslab.models import PROFILES, DiagnosticsRecord, ExperimentConfig, SolverConfig
from kslab.services.experiment_service import CRITICAL_MASS_COLUMNS
from kslab.utils import output_writer


class MassCurveParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    d: int = Field(ge=3)
    gamma_min: float = Field(default=1e-6, ge=0)
    gamma_max: float = Field(default=1.0, gt=0)
    points: int = Field(default=50, ge=1)
    spacing: Literal["log", "linear"] = "log"
    include_zero: bool = True
    format: Literal["csv", "json"] = "csv"
    dump_gamma: Optional[float] = Field(default=None, ge=0)


class CriticalMassParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    d: List[int] = Field(default_factory=lambda: [2, 3, 4, 5])


class ConstantsParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    d: int = Field(ge=2)
    mass: List[float] = Field(default_factory=list)


class CheckParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    snapshot: Path
    d: int = Field(ge=2)
    delta: Optional[float] = None
    chi: int = Field(default=1, ge=0, le=1)


class SuiteParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    quick: bool = False


PARAMS_MODELS: Dict[str, Type[BaseModel]] = {
    "mass-curve": MassCurveParams,
    "critical-mass": CriticalMassParams,
    "constants": ConstantsParams,
    "evolve": SolverConfig,
    "check": CheckParams,
    "suite": SuiteParams,
}


def _validation_message(error: ValidationError) -> str:
    first = error.errors()[0]
    key = ".".join(str(part) for part in first["loc"])
    message = first["msg"]
    if first["type"] == "extra_forbidden":
        return f"unknown key '{key}'"
    if first["type"] == "missing":
        return f"missing required key '{key}'"
    return f"invalid value for '{key}': {message}" if key else message


def _read_config_file(path: Path, command: str) -> Dict[str, Any]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a JSON object")
    # a config.json echoed by a previous run
    if "command" in data and "params" in data:
        if data["command"] != command:
            raise ConfigError(f"{path} was written by '{data['command']}', not '{command}'")
        data = data["params"]
    return dict(data)


def parse_config(command: str, flags: Dict[str, Any], config_file: Optional[Path],
                 output_dir: Optional[Path], settings: Settings) -> ExperimentConfig:
    """Merge file values and flags (flags win) and validate them against the command's model."""
    if command not in PARAMS_MODELS:
        raise ConfigError(f"unknown command '{command}'")
    values = _read_config_file(config_file, command) if config_file else {}
    values.update({key: value for key, value in flags.items()
                   if value is not None and value != ()})
    if command == "evolve":
        values.setdefault("floor_rel", settings.PRESSURE_FLOOR_REL)
    try:
        params = PARAMS_MODELS[command].model_validate(values)
    except ValidationError as e:
        raise ConfigError(_validation_message(e)) from e
    return ExperimentConfig(command=command, params=params,
                            output_dir=Path(output_dir) if output_dir else settings.output_path)


def common_options(fn: Callable) -> Callable:
    fn = click.option("--output-dir", type=click.Path(file_okay=False, path_type=Path),
                      default=None, help="Output directory (env KSLAB_OUTPUT_DIR).")(fn)
    fn = click.option("--config", "config_file",
                      type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None,
                      help="JSON file with the same keys as the flags.")(fn)
    return click.pass_context(fn)


def _dispatch(ctx: click.Context, command: str, flags: Dict[str, Any], config_file: Optional[Path],
              output_dir: Optional[Path], handler: Callable[[ExperimentConfig, Any], None]) -> None:
    settings = ctx.obj["settings"]
    experiments = ctx.obj["services"]["experiment_service"]
    config = None
    try:
        config = parse_config(command, flags, config_file, output_dir, settings)
        experiments.echo_config(config)
        handler(config, experiments)
    except LabError as e:
        if isinstance(e, NumericalFailure) and e.state_dump and config is not None:
            dump = output_writer.write_json(e.state_dump, config.output_dir / "failure_state.json")
            logging.error(f"Numerical failure state written to {dump}")
        click.echo(f"error: {e}", err=True)
        ctx.exit(e.exit_code)


HELP = f"""Critical-exponent Keller-Segel lab.

\b
Outputs (all under the output directory, CSV values printed with 17 significant digits):
  config.json           resolved parameters of the run (accepted back by --config)
  mass_curve.csv        {','.join(output_writer.MASS_CURVE_COLUMNS)}
  shooting.csv          {','.join(output_writer.SHOOTING_COLUMNS)}
  critical_mass.csv     {','.join(CRITICAL_MASS_COLUMNS)}
  constants.json        threshold, small-mass constants and exponents
  diagnostics.csv       {','.join(DiagnosticsRecord.columns())}
  snapshot_t<T>.csv     {','.join(output_writer.FIELD_COLUMNS)}
  run_summary.json      blow-up evidence, moment slopes and monitored properties
  check_report.json     inequality, lhs, rhs, margin, pass
  suite_report.json     acceptance checks with values and tolerances

\b
Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 acceptance failure.
"""


@click.group(help=HELP)
@click.pass_context
def main(ctx: click.Context):
    settings = get_settings()
    ctx.obj = {"settings": settings, "services": build_core_services(settings)}


@main.command("mass-curve")
@click.option("--d", type=int, default=None, help="Dimension d >= 3.")
@click.option("--gamma-min", type=float, default=None, help="Smallest positive gamma [1e-6].")
@click.option("--gamma-max", type=float, default=None, help="Largest gamma [1].")
@click.option("--points", type=int, default=None, help="Grid points [50].")
@click.option("--spacing", type=click.Choice(["log", "linear"]), default=None, help="Grid spacing [log].")
@click.option("--include-zero/--no-include-zero", default=None, help="Add gamma = 0 [yes].")
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default=None, help="Output format [csv].")
@click.option("--dump-gamma", type=float, default=None, help="Also write the (r, f, f') shot for this gamma.")
@common_options
def mass_curve(ctx, d, gamma_min, gamma_max, points, spacing, include_zero, fmt, dump_gamma,
               config_file, output_dir):
    """M(gamma) and R(gamma) of the normalized Lane-Emden shooting family."""
    def handler(config: ExperimentConfig, experiments) -> None:
        p = config.params
        rows = experiments.mass_curve(p.d, p.gamma_min, p.gamma_max, p.points, p.spacing,
                                      p.include_zero, config.output_dir, fmt=p.format,
                                      dump_gamma=p.dump_gamma)
        click.echo(f"{len(rows)} points, M({rows[0].gamma:g}) = {rows[0].M:.15g}" if rows else "no points")

    flags = {"d": d, "gamma_min": gamma_min, "gamma_max": gamma_max, "points": points,
             "spacing": spacing, "include_zero": include_zero, "format": fmt,
             "dump_gamma": dump_gamma}
    _dispatch(ctx, "mass-curve", flags, config_file, output_dir, handler)


@main.command("critical-mass")
@click.option("--d", type=int, multiple=True, help="Dimensions (repeatable) [2 3 4 5].")
@common_options
def critical_mass(ctx, d, config_file, output_dir):
    """Critical mass from the Liouville profile (d=2) and the Lane-Emden profile (d>2)."""
    def handler(config: ExperimentConfig, experiments) -> None:
        for row in experiments.critical_mass(config.params.d, config.output_dir):
            click.echo(f"d={row['d']} {row['method']}: {row['mass']:.15g} "
                       f"(rel. error {row['rel_error']:.3e})")

    _dispatch(ctx, "critical-mass", {"d": list(d) or None}, config_file, output_dir, handler)


@main.command()
@click.option("--d", type=int, default=None, help="Dimension d >= 2.")
@click.option("--mass", type=float, multiple=True, help="Masses for the constants table (repeatable).")
@common_options
def constants(ctx, d, mass, config_file, output_dir):
    """Small-mass threshold, C0/C1 constants and subcritical exponents."""
    def handler(config: ExperimentConfig, experiments) -> None:
        payload = experiments.constants(config.params.d, config.params.mass, config.output_dir)
        click.echo(f"epsilon_{payload['d']} = {payload['epsilon_threshold']:.4f}")
        for entry in payload["small_mass"]:
            if "error" in entry:
                click.echo(f"M={entry['M']:.6g}: {entry['error']}")
            else:
                click.echo(f"M={entry['M']:.6g}: C0={entry['C0']:.6g} C1={entry['C1']:.6g} "
                           f"coefficient={entry['coefficient']:.6g}")

    _dispatch(ctx, "constants", {"d": d, "mass": list(mass) or None}, config_file, output_dir,
              handler)


@main.command()
@click.option("--d", type=int, default=None, help="Dimension d >= 2.")
@click.option("--m", type=float, default=None, help="Diffusion exponent; must equal 2 - 2/d.")
@click.option("--r-max", type=float, default=None, help="Outer radius [10].")
@click.option("--n-cells", type=int, default=None, help="Number of cells [1024].")
@click.option("--chi", type=float, default=None, help="0 = pure diffusion, 1 = Keller-Segel [1].")
@click.option("--t-end", type=float, default=None, help="Final time [1].")
@click.option("--cfl-safety", type=float, default=None, help="CFL safety factor in (0, 1] [0.45].")
@click.option("--output-stride", type=int, default=None, help="Steps between diagnostics records [100].")
@click.option("--max-steps", type=int, default=None, help="Step limit.")
@click.option("--profile", type=click.Choice(PROFILES), default=None, help="Initial profile [gaussian].")
@click.option("--mass", type=float, default=None, help="Total mass of the initial profile.")
@click.option("--width", type=float, default=None, help="Gaussian width.")
@click.option("--radius", type=float, default=None, help="uniform_ball radius.")
@click.option("--lam", type=float, default=None, help="liouville lambda / lane_emden_stationary dilation.")
@click.option("--beta", type=float, default=None, help="power_tail decay exponent (> d).")
@click.option("--t0", type=float, default=None, help="barenblatt starting age.")
@click.option("--floor-rel", type=float, default=None, help="Relative density floor for log/pressure.")
@click.option("--snapshot-time", type=float, multiple=True, help="Snapshot time (repeatable).")
@click.option("--h-lambda", type=float, default=None, help="lambda of the H functional (d=2).")
@click.option("--tail-r-lo", type=float, default=None, help="Tail fit window start.")
@click.option("--tail-r-hi", type=float, default=None, help="Tail fit window end.")
@common_options
def evolve(ctx, d, m, r_max, n_cells, chi, t_end, cfl_safety, output_stride, max_steps, profile,
           mass, width, radius, lam, beta, t0, floor_rel, snapshot_time, h_lambda, tail_r_lo,
           tail_r_hi, config_file, output_dir):
    """Radial Keller-Segel (or pure diffusion) run with diagnostics and snapshots."""
    def handler(config: ExperimentConfig, experiments) -> None:
        summary = experiments.evolve(config.params, config.output_dir)
        blowup = summary["blowup"]
        click.echo(f"t_final={summary['t_final']:.6g} steps={summary['steps']} "
                   f"mass_drift_rel={summary['mass_drift_rel']:.3e}")
        if blowup["flagged"]:
            click.echo(f"blow-up detected via {blowup['channel']}")
        if math.isfinite(summary.get("inf_t_delta") or math.nan):
            click.echo(f"inf t*delta = {summary['inf_t_delta']:.6g}")

    flags = {"d": d, "m": m, "r_max": r_max, "n_cells": n_cells, "chi": chi, "t_end": t_end,
             "cfl_safety": cfl_safety, "output_stride": output_stride, "max_steps": max_steps,
             "profile": profile, "mass": mass, "width": width, "radius": radius, "lam": lam,
             "beta": beta, "t0": t0, "floor_rel": floor_rel,
             "snapshot_times": list(snapshot_time) or None, "h_lambda_lambda": h_lambda,
             "tail_r_lo": tail_r_lo, "tail_r_hi": tail_r_hi}
    _dispatch(ctx, "evolve", flags, config_file, output_dir, handler)


@main.command()
@click.option("--snapshot", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="Snapshot CSV with columns r,value.")
@click.option("--d", type=int, default=None, help="Dimension of the snapshot.")
@click.option("--delta", type=float, default=None, help="delta to test against (computed if omitted).")
@click.option("--chi", type=int, default=None, help="Coupling used when delta is computed [1].")
@common_options
def check(ctx, snapshot, d, delta, chi, config_file, output_dir):
    """Inequality checkers on a density snapshot."""
    def handler(config: ExperimentConfig, experiments) -> None:
        p = config.params
        if not p.snapshot.exists():
            raise ConfigError(f"snapshot '{p.snapshot}' does not exist")
        reports = experiments.check(p.snapshot, p.d, p.delta, p.chi, config.output_dir)
        for report in reports:
            click.echo(f"{'pass' if report.passed else 'FAIL'}  {report.inequality}  "
                       f"lhs={report.lhs:.6g} rhs={report.rhs:.6g}")

    flags = {"snapshot": snapshot, "d": d, "delta": delta, "chi": chi}
    _dispatch(ctx, "check", flags, config_file, output_dir, handler)


@main.command()
@click.option("--quick/--full", default=None, help="Reduced battery [full].")
@common_options
def suite(ctx, quick, config_file, output_dir):
    """Acceptance battery; exits 4 when any check fails."""
    def handler(config: ExperimentConfig, experiments) -> None:
        results = experiments.suite(config.params.quick, config.output_dir)
        for item in results:
            click.echo(f"{'pass' if item.passed else 'FAIL'}  {item.name}  value={item.value:.6g}")
        failed = [item.name for item in results if not item.passed]
        if failed:
            raise SuiteFailure(f"{len(failed)} acceptance checks failed: {', '.join(failed)}")
        click.echo(f"{len(results)} checks passed")

    _dispatch(ctx, "suite", {"quick": quick}, config_file, output_dir, handler)
