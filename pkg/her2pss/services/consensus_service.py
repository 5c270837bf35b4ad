"""Pathologist consensus voting.

1. Non-diagnostic votes forming a strict majority exclude the core.
2. Otherwise a unique most-voted score with at least two votes labels it.
3. A tie between leaders with >= 2 votes, or no score with two votes,
   needs the adjudicator: their score must equal a tied leader (tie case)
   or any cast score (no-pair case), else the core is excluded.
4. Adjudication needed but missing excludes the core as unresolved.
"""

from __future__ import annotations

import csv
import logging
from collections import Counter
from collections.abc import Iterable, Sequence
from pathlib import Path

from her2pss.core.errors import (
    DuplicateRecordError,
    InputOutputError,
    MalformedRecordError,
    ParseError,
)
from her2pss.core.settings import Settings, get_settings
from her2pss.models.consensus import (
    ADJUDICATOR_ID,
    ConsensusResult,
    ConsensusSummary,
    ExclusionReason,
    Outcome,
    VoteRecord,
)
from her2pss.models.scores import Her2Score, NonDiagnostic, parse_vote

logger = logging.getLogger(__name__)


def _excluded(core_id: str, reason: ExclusionReason) -> ConsensusResult:
    return ConsensusResult(core_id=core_id, outcome=Outcome.EXCLUDED, reason=reason)


def resolve(rec: VoteRecord) -> ConsensusResult:
    if not rec.votes:
        raise MalformedRecordError(f"Core {rec.core_id!r} has no votes")

    scores = [v for v in rec.votes.values() if not isinstance(v, NonDiagnostic)]
    non_diagnostic = len(rec.votes) - len(scores)
    if 2 * non_diagnostic > len(rec.votes):
        return _excluded(rec.core_id, ExclusionReason.NON_DIAGNOSTIC_MAJORITY)

    tally = Counter(scores)
    top = max(tally.values(), default=0)
    leaders = {score for score, count in tally.items() if count == top}
    if top >= 2 and len(leaders) == 1:
        return ConsensusResult(core_id=rec.core_id, outcome=Outcome.LABELED, score=leaders.pop())

    if rec.adjudicator_vote is None:
        return _excluded(rec.core_id, ExclusionReason.UNRESOLVED_DISCORDANCE)

    acceptable = leaders if top >= 2 else set(tally)
    if rec.adjudicator_vote in acceptable:
        return ConsensusResult(
            core_id=rec.core_id, outcome=Outcome.ADJUDICATED, score=rec.adjudicator_vote
        )
    return _excluded(rec.core_id, ExclusionReason.ADJUDICATOR_MISMATCH)


def resolve_batch(records: Sequence[VoteRecord]) -> tuple[list[ConsensusResult], ConsensusSummary]:
    seen: set[str] = set()
    for rec in records:
        if rec.core_id in seen:
            raise DuplicateRecordError(f"Duplicate core_id {rec.core_id!r}")
        seen.add(rec.core_id)

    results = [resolve(rec) for rec in records]
    summary = ConsensusSummary()
    for result in results:
        if result.outcome is Outcome.LABELED:
            summary.labeled += 1
        elif result.outcome is Outcome.ADJUDICATED:
            summary.adjudicated += 1
        else:
            summary.excluded[result.reason] += 1  # type: ignore[index]
    return results, summary


def parse_votes(rows: Iterable[dict[str, str]], *, source: str | None = None) -> list[VoteRecord]:
    """Rows `core_id,pathologist_id,score`; records come out in first-appearance order."""
    votes: dict[str, dict[str, object]] = {}
    adjudicators: dict[str, Her2Score] = {}
    for line, row in enumerate(rows, start=2):
        core_id = (row.get("core_id") or "").strip()
        pathologist = (row.get("pathologist_id") or "").strip()
        raw_score = (row.get("score") or "").strip()
        if not core_id or not pathologist or not raw_score:
            raise ParseError("core_id, pathologist_id and score are required", path=source, line=line)
        try:
            vote = parse_vote(raw_score)
        except ValueError as e:
            raise ParseError(str(e), path=source, line=line) from e

        per_core = votes.setdefault(core_id, {})
        if pathologist == ADJUDICATOR_ID:
            if isinstance(vote, NonDiagnostic):
                raise ParseError("the adjudicator must give a score", path=source, line=line)
            if core_id in adjudicators:
                raise ParseError(f"second adjudicator vote for {core_id!r}", path=source, line=line)
            adjudicators[core_id] = vote
            continue
        if pathologist in per_core:
            raise ParseError(f"{pathologist!r} voted twice on {core_id!r}", path=source, line=line)
        per_core[pathologist] = vote

    return [
        VoteRecord(core_id=cid, votes=dict(v), adjudicator_vote=adjudicators.get(cid))  # type: ignore[arg-type]
        for cid, v in votes.items()
    ]


def read_votes_csv(path: str | Path) -> list[VoteRecord]:
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"core_id", "pathologist_id", "score"} <= set(reader.fieldnames):
                raise ParseError("expected header core_id,pathologist_id,score", path=str(path), line=1)
            return parse_votes(reader, source=str(path))
    except FileNotFoundError as e:
        raise InputOutputError(f"Votes file not found: {path}") from e
    except OSError as e:
        raise InputOutputError(f"Cannot read {path}: {e}") from e


def _vote_text(vote: object) -> str:
    if isinstance(vote, NonDiagnostic):
        return vote.value
    return str(int(vote))  # type: ignore[call-overload]


def write_votes_csv(path: str | Path, records: Iterable[VoteRecord]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["core_id", "pathologist_id", "score"])
            for rec in records:
                for pathologist, vote in rec.votes.items():
                    writer.writerow([rec.core_id, pathologist, _vote_text(vote)])
                if rec.adjudicator_vote is not None:
                    writer.writerow([rec.core_id, ADJUDICATOR_ID, _vote_text(rec.adjudicator_vote)])
    except OSError as e:
        raise InputOutputError(f"Cannot write {path}: {e}") from e
    return path


def write_results_csv(path: str | Path, results: Iterable[ConsensusResult]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["core_id", "outcome", "score_or_reason"])
            for r in results:
                detail = r.score.label if r.score is not None else r.reason.value  # type: ignore[union-attr]
                writer.writerow([r.core_id, r.outcome.value, detail])
    except OSError as e:
        raise InputOutputError(f"Cannot write {path}: {e}") from e
    return path


class ConsensusService:
    def __init__(self, settings: Settings | None = None):
        self._settings = settings or get_settings()

    def run(self, votes_path: Path, out_path: Path) -> ConsensusSummary:
        records = read_votes_csv(votes_path)
        results, summary = resolve_batch(records)
        write_results_csv(out_path, results)
        logger.info(
            "Resolved %d cores: %s",
            summary.total,
            ", ".join(f"{key}={value}" for key, value in summary.as_dict().items()),
        )
        return summary
