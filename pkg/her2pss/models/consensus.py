from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from her2pss.models.scores import Her2Score, Vote

ADJUDICATOR_ID = "ADJ"


class Outcome(str, Enum):
    LABELED = "labeled"
    ADJUDICATED = "adjudicated"
    EXCLUDED = "excluded"


class ExclusionReason(str, Enum):
    NON_DIAGNOSTIC_MAJORITY = "non_diagnostic_majority"
    UNRESOLVED_DISCORDANCE = "unresolved_discordance"
    ADJUDICATOR_MISMATCH = "adjudicator_mismatch"


@dataclass(frozen=True)
class VoteRecord:
    core_id: str
    votes: dict[str, Vote]
    adjudicator_vote: Her2Score | None = None


@dataclass(frozen=True)
class ConsensusResult:
    """`score` is set for labeled and adjudicated outcomes, `reason` for exclusions."""

    core_id: str
    outcome: Outcome
    score: Her2Score | None = None
    reason: ExclusionReason | None = None


@dataclass
class ConsensusSummary:
    labeled: int = 0
    adjudicated: int = 0
    excluded: dict[ExclusionReason, int] = field(
        default_factory=lambda: {reason: 0 for reason in ExclusionReason}
    )

    @property
    def total(self) -> int:
        return self.labeled + self.adjudicated + sum(self.excluded.values())

    def as_dict(self) -> dict[str, int]:
        return {
            "labeled": self.labeled,
            "adjudicated": self.adjudicated,
            **{f"excluded_{reason.value}": count for reason, count in self.excluded.items()},
        }
