from typing import Any, Dict

from config.settings import Settings
from kslab.services.evolve_service import EvolveService
from kslab.services.experiment_service import ExperimentService
from kslab.services.suite_service import AcceptanceSuiteService


def build_core_services(settings: Settings) -> Dict[str, Any]:
    evolve_service = EvolveService(settings)
    suite_service = AcceptanceSuiteService(settings, evolve_service)
    experiment_service = ExperimentService(settings, evolve_service, suite_service)

    return {
        "evolve_service": evolve_service,
        "suite_service": suite_service,
        "experiment_service": experiment_service,
    }
