import pytest

import config.settings as settings_module
from config.settings import Settings
from kslab.services.evolve_service import EvolveService


@pytest.fixture
def settings(tmp_path) -> Settings:
    return Settings(OUTPUT_DIR=str(tmp_path / "output"))


@pytest.fixture
def evolve_service(settings) -> EvolveService:
    return EvolveService(settings)


@pytest.fixture
def fresh_settings(monkeypatch, tmp_path):
    """Reset the cached settings so CLI invocations read the patched environment."""
    monkeypatch.setattr(settings_module, "_settings_instance", None)
    monkeypatch.setenv("KSLAB_OUTPUT_DIR", str(tmp_path / "env_output"))
    yield tmp_path / "env_output"
