import csv
import itertools
import random
from collections import Counter

import pytest

from her2pss.core.errors import DuplicateRecordError, MalformedRecordError, ParseError
from her2pss.core.settings import Settings
from her2pss.models.consensus import ExclusionReason, Outcome, VoteRecord
from her2pss.models.scores import NON_DIAGNOSTIC, Her2Score
from her2pss.services.consensus_service import (
    ConsensusService,
    read_votes_csv,
    resolve,
    resolve_batch,
    write_votes_csv,
)

_RATERS = ("P1", "P2", "P3", "P4", "P5")


def _record(core_id, votes, adjudicator=None):
    return VoteRecord(core_id=core_id, votes=dict(zip(_RATERS, votes)), adjudicator_vote=adjudicator)


def _oracle(votes, adjudicator):
    """Independent restatement of the voting rules, over raw vote lists."""
    nd = sum(1 for v in votes if v is NON_DIAGNOSTIC)
    if nd * 2 > len(votes):
        return Outcome.EXCLUDED, None
    counts = Counter(v for v in votes if v is not NON_DIAGNOSTIC)
    ranked = counts.most_common()
    if ranked and ranked[0][1] >= 2 and (len(ranked) == 1 or ranked[1][1] < ranked[0][1]):
        return Outcome.LABELED, ranked[0][0]
    if adjudicator is None:
        return Outcome.EXCLUDED, None
    if ranked and ranked[0][1] >= 2:
        allowed = [s for s, c in ranked if c == ranked[0][1]]
    else:
        allowed = list(counts)
    if adjudicator in allowed:
        return Outcome.ADJUDICATED, adjudicator
    return Outcome.EXCLUDED, None


def test_all_five_rater_score_combinations_match_oracle():
    for votes in itertools.product(list(Her2Score), repeat=5):
        for adjudicator in (None, Her2Score.ZERO, Her2Score.THREE_PLUS):
            result = resolve(_record("c", votes, adjudicator))
            assert (result.outcome, result.score) == _oracle(list(votes), adjudicator), (votes, adjudicator)


def test_combinations_with_non_diagnostic_votes_match_oracle():
    choices = [*Her2Score, NON_DIAGNOSTIC]
    for votes in itertools.product(choices, repeat=3):
        for adjudicator in (None, Her2Score.ONE_PLUS):
            record = VoteRecord(core_id="c", votes=dict(zip(_RATERS, votes)), adjudicator_vote=adjudicator)
            result = resolve(record)
            assert (result.outcome, result.score) == _oracle(list(votes), adjudicator), (votes, adjudicator)


def test_resolution_ignores_which_pathologist_cast_which_vote():
    rng = random.Random(5)
    for votes in itertools.product(list(Her2Score), repeat=5):
        for adjudicator in (None, Her2Score.TWO_PLUS):
            expected = resolve(_record("c", votes, adjudicator))
            shuffled = list(votes)
            rng.shuffle(shuffled)
            raters = list(_RATERS)
            rng.shuffle(raters)
            record = VoteRecord(core_id="c", votes=dict(zip(raters, shuffled)), adjudicator_vote=adjudicator)
            assert resolve(record) == expected, (votes, shuffled)


def test_agreeing_votes_keep_a_labeled_outcome():
    choices = [*Her2Score, NON_DIAGNOSTIC]
    for votes in itertools.product(choices, repeat=5):
        result = resolve(_record("c", votes))
        if result.outcome is not Outcome.LABELED:
            continue
        label = result.score

        extra = VoteRecord(core_id="c", votes={**dict(zip(_RATERS, votes)), "P6": label})
        assert resolve(extra) == result, votes

        for i, vote in enumerate(votes):
            if vote is label:
                continue
            moved = list(votes)
            moved[i] = label
            assert resolve(_record("c", moved)) == result, (votes, i)


def test_summary_over_all_combinations():
    records = [
        _record(f"c{i}", votes) for i, votes in enumerate(itertools.product(list(Her2Score), repeat=5))
    ]
    results, summary = resolve_batch(records)
    assert summary.total == 4 ** 5
    assert summary.adjudicated == 0
    expected_labeled = sum(1 for r in records if _oracle(list(r.votes.values()), None)[0] is Outcome.LABELED)
    assert summary.labeled == expected_labeled
    assert summary.excluded[ExclusionReason.UNRESOLVED_DISCORDANCE] == 4 ** 5 - expected_labeled
    assert len(results) == len(records)


def test_examples():
    zero, one, two = Her2Score.ZERO, Her2Score.ONE_PLUS, Her2Score.TWO_PLUS
    nd = NON_DIAGNOSTIC
    assert resolve(_record("a", [one, one, two, two, zero])).reason is ExclusionReason.UNRESOLVED_DISCORDANCE
    assert resolve(_record("a", [one, one, two, two, zero], two)).score == two
    assert resolve(_record("a", [one, one, two, two, zero], zero)).reason is ExclusionReason.ADJUDICATOR_MISMATCH
    assert resolve(_record("a", [nd, nd, nd, one, one])).reason is ExclusionReason.NON_DIAGNOSTIC_MAJORITY
    assert resolve(_record("a", [nd, nd, one, one, two])).score == one


def test_no_votes_is_malformed():
    with pytest.raises(MalformedRecordError):
        resolve(VoteRecord(core_id="x", votes={}))


def test_duplicate_core_ids():
    record = _record("dup", [Her2Score.ZERO] * 5)
    with pytest.raises(DuplicateRecordError):
        resolve_batch([record, record])


def test_votes_csv_roundtrip(tmp_path):
    zero, two = Her2Score.ZERO, Her2Score.TWO_PLUS
    records = [
        _record("a", [zero, NON_DIAGNOSTIC, two, two, zero], two),
        _record("b", [Her2Score.THREE_PLUS] * 5),
    ]
    path = write_votes_csv(tmp_path / "votes.csv", records)
    assert read_votes_csv(path) == records


def test_votes_csv_errors(tmp_path):
    path = tmp_path / "votes.csv"
    path.write_text("core_id,pathologist_id,score\na,P1,2\na,P1,3\n")
    with pytest.raises(ParseError) as exc:
        read_votes_csv(path)
    assert exc.value.line == 3

    path.write_text("core_id,pathologist_id,score\na,ADJ,ND\n")
    with pytest.raises(ParseError):
        read_votes_csv(path)

    path.write_text("core,who,score\n")
    with pytest.raises(ParseError):
        read_votes_csv(path)


def test_service_writes_results(tmp_path):
    votes = tmp_path / "votes.csv"
    votes.write_text(
        "core_id,pathologist_id,score\n"
        "a,P1,1+\na,P2,1+\na,P3,2+\n"
        "b,P1,0\nb,P2,1\nb,P3,2\nb,ADJ,1\n"
        "c,P1,ND\nc,P2,ND\nc,P3,3\n"
    )
    out = tmp_path / "labels.csv"

    summary = ConsensusService(settings=Settings()).run(votes, out)

    assert (summary.labeled, summary.adjudicated) == (1, 1)
    rows = list(csv.reader(out.open()))
    assert rows == [
        ["core_id", "outcome", "score_or_reason"],
        ["a", "labeled", "1+"],
        ["b", "adjudicated", "1+"],
        ["c", "excluded", "non_diagnostic_majority"],
    ]
