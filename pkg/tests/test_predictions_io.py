import json
import math

import pytest

from her2pss.core.errors import DomainError, InputOutputError, ParseError
from her2pss.models.classifier import ConfidenceRule
from her2pss.models.scores import Her2Score
from her2pss.services.confidence import confidence, make_prediction
from her2pss.services.predictions_io import (
    load_external_predictions,
    parse_predictions,
    write_predictions,
)


def _row(sid: str, index: int, probs) -> str:
    return json.dumps({"sample_id": sid, "pss_index": index, "probs": probs})


def test_confidence_rules():
    probs = [0.1, 0.2, 0.3, 0.4]
    assert confidence(probs, ConfidenceRule.TOP1) == pytest.approx(0.4)
    assert confidence(probs, ConfidenceRule.MARGIN) == pytest.approx(0.1)
    assert confidence([0.25] * 4, ConfidenceRule.ENTROPY) == pytest.approx(0.0)
    assert confidence([1.0, 0.0, 0.0, 0.0], ConfidenceRule.ENTROPY) == pytest.approx(1.0)
    expected = 1.0 + sum(p * math.log(p) for p in probs) / math.log(4)
    assert confidence(probs, ConfidenceRule.ENTROPY) == pytest.approx(expected)


def test_argmax_ties_go_to_lowest_class():
    pred = make_prediction([0.4, 0.4, 0.1, 0.1], pss_index=0, sample_id="s")
    assert pred.argmax_score == Her2Score.ZERO


def test_make_prediction_rejects_off_simplex():
    with pytest.raises(DomainError):
        make_prediction([0.5, 0.5, 0.5, 0.5], pss_index=0, sample_id="s")


def test_parse_groups_and_sorts():
    lines = [
        _row("b", 1, [0.1, 0.2, 0.3, 0.4]),
        _row("a", 0, [0.7, 0.1, 0.1, 0.1]),
        "",
        _row("b", 0, [0.25, 0.25, 0.25, 0.25]),
    ]
    pool = parse_predictions(lines)
    assert list(pool) == ["b", "a"]
    assert [p.pss_index for p in pool["b"]] == [0, 1]
    assert pool["a"][0].argmax_score == Her2Score.ZERO


def test_parse_renormalizes_small_drift():
    pool = parse_predictions([_row("s", 0, [0.25, 0.25, 0.25, 0.25005])])
    assert sum(pool["s"][0].probs) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize(
    "bad",
    [
        "{not json",
        json.dumps({"sample_id": "s", "pss_index": 0}),
        _row("s", 0, [0.5, 0.5]),
        _row("s", -1, [0.25] * 4),
        _row("s", 0, [0.5, 0.5, 0.5, 0.5]),
        _row("s", 0, [1.1, -0.1, 0.0, 0.0]),
    ],
)
def test_parse_errors_carry_line_numbers(bad):
    with pytest.raises(ParseError) as exc:
        parse_predictions([_row("ok", 0, [0.25] * 4), bad], source="preds.jsonl")
    assert exc.value.line == 2
    assert "preds.jsonl" in str(exc.value)


def test_duplicate_rows_rejected():
    with pytest.raises(ParseError):
        parse_predictions([_row("s", 0, [0.25] * 4), _row("s", 0, [0.25] * 4)])


def test_write_and_load(tmp_path):
    preds = [
        make_prediction([0.1, 0.2, 0.3, 0.4], pss_index=i, sample_id="s", rule=ConfidenceRule.TOP1)
        for i in range(3)
    ]
    path = write_predictions(tmp_path / "p.jsonl", preds)
    loaded = load_external_predictions(path, ConfidenceRule.TOP1)
    assert loaded == {"s": preds}


def test_missing_file_is_io_error(tmp_path):
    with pytest.raises(InputOutputError):
        load_external_predictions(tmp_path / "missing.jsonl")
