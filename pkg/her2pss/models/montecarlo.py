from __future__ import annotations

from dataclasses import dataclass, field

from her2pss.core.errors import ConfigError
from her2pss.models.classifier import Prediction
from her2pss.models.report import ConfusionMatrix
from her2pss.models.scores import Her2Score

# Grid used when k varies with N held at 200.
REFERENCE_K_GRID: tuple[int, ...] = (*range(1, 21), 30, 50, 100)
REFERENCE_N_GRID: tuple[int, ...] = tuple(range(1, 201))
DESK_TRIALS = 1_000


@dataclass(frozen=True)
class PredictionPool:
    predictions: dict[str, list[Prediction]]
    labels: dict[str, Her2Score]

    def __post_init__(self) -> None:
        unlabeled = [sid for sid in self.predictions if sid not in self.labels]
        if unlabeled:
            raise ConfigError(f"{len(unlabeled)} pooled samples have no label, e.g. {unlabeled[0]!r}")
        if not self.predictions:
            raise ConfigError("Prediction pool is empty")

    @property
    def sample_ids(self) -> list[str]:
        return list(self.predictions)

    @property
    def pool_size(self) -> int:
        """Smallest per-sample pool; every trial draws at most this many."""
        return min(len(preds) for preds in self.predictions.values())


@dataclass(frozen=True)
class SweepStats:
    n: int
    k: int
    trials: int
    accuracy_min: float
    accuracy_median: float
    accuracy_max: float
    confusion_at_min: ConfusionMatrix
    confusion_at_median: ConfusionMatrix
    confusion_at_max: ConfusionMatrix
    accuracies: tuple[float, ...] = field(default=(), repr=False)
