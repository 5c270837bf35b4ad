from __future__ import annotations

from enum import Enum, IntEnum

from her2pss.core.errors import DomainError

NUM_CLASSES = 4


class Her2Score(IntEnum):
    """Ordinal HER2 IHC score. Rendered "0", "1+", "2+", "3+"."""

    ZERO = 0
    ONE_PLUS = 1
    TWO_PLUS = 2
    THREE_PLUS = 3

    @property
    def label(self) -> str:
        return "0" if self is Her2Score.ZERO else f"{int(self)}+"

    @classmethod
    def parse(cls, raw: str | int) -> Her2Score:
        """Accept 0..3 as ints or strings, with or without the trailing '+'."""
        text = str(raw).strip()
        if text.endswith("+"):
            text = text[:-1]
        try:
            return cls(int(text))
        except ValueError as e:
            raise DomainError(f"Not a HER2 score: {raw!r}") from e


class NonDiagnostic(Enum):
    """A pathologist's 'unscorable' vote. Only valid in voting contexts."""

    ND = "ND"

    @property
    def label(self) -> str:
        return self.value


NON_DIAGNOSTIC = NonDiagnostic.ND

Vote = Her2Score | NonDiagnostic


def parse_vote(raw: str) -> Vote:
    if str(raw).strip().upper() == NON_DIAGNOSTIC.value:
        return NON_DIAGNOSTIC
    return Her2Score.parse(raw)


def require_score(value: object) -> Her2Score:
    """Reject the non-diagnostic sentinel where only scores are meaningful."""
    if isinstance(value, NonDiagnostic):
        raise DomainError("Non-diagnostic votes cannot be scored or tallied")
    if isinstance(value, Her2Score):
        return value
    return Her2Score.parse(value)  # type: ignore[arg-type]
