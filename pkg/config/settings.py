import logging
from pydantic_settings import BaseSettings, SettingsConfigDict
from pydantic import AliasChoices, Field, ValidationError, computed_field, field_validator
from pathlib import Path
from typing import Optional


class Settings(BaseSettings):
    OUTPUT_DIR: str = Field(
        default="output",
        validation_alias=AliasChoices("KSLAB_OUTPUT_DIR", "OUTPUT_DIR"),
        description="Directory receiving CSV/JSON outputs; --output-dir overrides it")
    LOG_LEVEL: str = Field(default="INFO")

    ODE_RTOL: float = Field(default=1e-12, gt=0)
    ODE_ATOL: float = Field(default=1e-14, gt=0)
    ODE_METHOD: str = Field(default="DOP853",
                            description="Adaptive Runge-Kutta with dense output")
    MASS_CURVE_WORKERS: int = Field(default=1, ge=1)

    DIAGNOSTICS_FLUSH_EVERY: int = Field(default=32, ge=1)
    PRESSURE_FLOOR_REL: float = Field(default=1e-14, gt=0)

    BLOWUP_LINF_FACTOR: float = Field(default=1e3, gt=1)
    BLOWUP_DT_FRACTION: float = Field(default=1e-12, gt=0)
    BLOWUP_M2_DROP_REL: float = Field(default=1e-2, gt=0)
    OUTER_CELL_WARN_REL: float = Field(default=1e-8, gt=0)

    @field_validator("ODE_METHOD", mode="before")
    @classmethod
    def check_ode_method(cls, v):
        method = str(v).strip().upper()
        if method not in ("DOP853", "RK45"):
            raise ValueError("ODE_METHOD must be DOP853 or RK45")
        return method

    @field_validator("LOG_LEVEL", mode="before")
    @classmethod
    def normalize_log_level(cls, v):
        return str(v).strip().upper() if v else "INFO"

    @computed_field
    @property
    def output_path(self) -> Path:
        return Path(self.OUTPUT_DIR)

    @computed_field
    @property
    def log_level_value(self) -> int:
        level = logging.getLevelName(self.LOG_LEVEL)
        return level if isinstance(level, int) else logging.INFO

    model_config = SettingsConfigDict(env_file='.env',
                                      env_file_encoding='utf-8',
                                      extra='ignore',
                                      populate_by_name=True)


_settings_instance: Optional[Settings] = None


def get_settings() -> Settings:
    global _settings_instance
    if _settings_instance is None:
        try:
            _settings_instance = Settings()
            if _settings_instance.ODE_RTOL > 1e-8:
                logging.warning(
                    f"ODE_RTOL={_settings_instance.ODE_RTOL} is loose; "
                    "the mass identity checks expect 1e-8 or tighter.")
            if _settings_instance.ODE_METHOD == "RK45":
                logging.warning(
                    "ODE_METHOD=RK45 selected. Shooting tolerances below 1e-10 will be slow.")

        except ValidationError as e:
            logging.critical(
                f"Pydantic validation error while loading settings: {e}")

            raise SystemExit(
                f"CRITICAL SETTINGS ERROR: {e}. Please check your .env file and Settings model."
            )
    return _settings_instance
