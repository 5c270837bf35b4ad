from __future__ import annotations

from her2pss.core.settings import Settings, get_settings
from her2pss.services.consensus_service import ConsensusService
from her2pss.services.core_extraction_service import CoreExtractionService
from her2pss.services.inference_service import InferenceService
from her2pss.services.montecarlo_service import MonteCarloService
from her2pss.services.pss_service import PssService
from her2pss.services.report_service import EvaluationService
from her2pss.services.synthetic import SyntheticService
from her2pss.services.training_service import TrainingService


def get_core_extraction_service(settings: Settings | None = None) -> CoreExtractionService:
    return CoreExtractionService(settings=settings or get_settings())


def get_pss_service(settings: Settings | None = None) -> PssService:
    return PssService(settings=settings or get_settings())


def get_training_service(settings: Settings | None = None) -> TrainingService:
    return TrainingService(settings=settings or get_settings())


def get_inference_service(settings: Settings | None = None) -> InferenceService:
    return InferenceService(settings=settings or get_settings())


def get_montecarlo_service(settings: Settings | None = None) -> MonteCarloService:
    return MonteCarloService(settings=settings or get_settings())


def get_consensus_service(settings: Settings | None = None) -> ConsensusService:
    return ConsensusService(settings=settings or get_settings())


def get_evaluation_service(settings: Settings | None = None) -> EvaluationService:
    return EvaluationService(settings=settings or get_settings())


def get_synthetic_service(settings: Settings | None = None) -> SyntheticService:
    return SyntheticService(settings=settings or get_settings())
