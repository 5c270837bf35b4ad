import csv
import itertools
import json

import numpy as np
import pytest

from her2pss.core.errors import ArityError, ConfigError, ParseError
from her2pss.core.rng import SeededRng
from her2pss.core.settings import Settings
from her2pss.models.classifier import ConfidenceRule
from her2pss.models.inference import InferenceConfig
from her2pss.models.montecarlo import REFERENCE_K_GRID, PredictionPool
from her2pss.models.scores import Her2Score
from her2pss.services.confidence import make_prediction
from her2pss.services.inference_service import score_predictions
from her2pss.services.montecarlo_service import (
    MonteCarloService,
    PoolArrays,
    k_sweep_grid,
    load_labels,
    parse_grid,
    run_trial,
    sweep,
)
from her2pss.services.predictions_io import write_predictions


def _pool(seed: int = 0, samples: int = 6, size: int = 5) -> PredictionPool:
    rng = np.random.default_rng(seed)
    predictions, labels = {}, {}
    for s in range(samples):
        sid = f"s{s}"
        raw = rng.dirichlet(np.ones(4) * 0.7, size=size)
        predictions[sid] = [
            make_prediction(row / row.sum(), pss_index=i, sample_id=sid) for i, row in enumerate(raw)
        ]
        labels[sid] = Her2Score(int(rng.integers(0, 4)))
    return PredictionPool(predictions=predictions, labels=labels)


def _subset_correct(pool: PredictionPool, sid: str, indices, k: int) -> bool:
    preds = [pool.predictions[sid][i] for i in indices]
    result = score_predictions(preds, InferenceConfig(n=len(preds), k=k), sample_id=sid)
    return result.final_score == pool.labels[sid]


def test_trial_matches_transcript_of_its_draws():
    pool = _pool(1)
    arrays = PoolArrays.from_pool(pool)
    n, k = 3, 2

    acc, cm = run_trial(arrays, n, k, SeededRng(99))

    keys = SeededRng(99).next_block(len(arrays.sample_ids) * arrays.pool_size)
    keys = keys.reshape(len(arrays.sample_ids), arrays.pool_size)
    correct = 0
    for row, sid in enumerate(arrays.sample_ids):
        subset = np.argsort(keys[row], kind="stable")[:n]
        correct += _subset_correct(pool, sid, sorted(subset.tolist()), k)
    assert cm.total == len(arrays.sample_ids)
    assert acc == pytest.approx(correct / cm.total)


def test_mean_accuracy_matches_enumeration():
    pool = _pool(2, samples=4, size=5)
    n, k = 3, 1
    expected = np.mean(
        [
            np.mean([_subset_correct(pool, sid, combo, k) for combo in itertools.combinations(range(5), n)])
            for sid in pool.sample_ids
        ]
    )
    stats = sweep(pool, [n], [k], trials=3000, seed=5, with_replacement=False)[0]
    assert np.mean(stats.accuracies) == pytest.approx(expected, abs=0.03)


def test_full_pool_has_no_variance():
    pool = _pool(3)
    stats = sweep(pool, [5], [2], trials=20, seed=0)[0]
    assert stats.accuracy_min == stats.accuracy_median == stats.accuracy_max
    assert stats.confusion_at_min == stats.confusion_at_max


def test_single_trial_collapses_statistics():
    stats = sweep(_pool(4), [3], [1], trials=1, seed=8)[0]
    assert stats.accuracy_min == stats.accuracy_median == stats.accuracy_max


def test_statistics_are_ordered_and_backed_by_matrices():
    stats = sweep(_pool(5), [2], [1], trials=101, seed=3)[0]
    assert stats.accuracy_min <= stats.accuracy_median <= stats.accuracy_max
    for accuracy, cm in (
        (stats.accuracy_min, stats.confusion_at_min),
        (stats.accuracy_median, stats.confusion_at_median),
        (stats.accuracy_max, stats.confusion_at_max),
    ):
        assert cm.correct / cm.total == pytest.approx(accuracy)
    assert stats.accuracy_median == sorted(stats.accuracies)[50]


def test_sweep_is_deterministic_and_thread_independent():
    pool = _pool(6)
    a = sweep(pool, [1, 2, 3], [1, 2], trials=30, seed=11, workers=1)
    b = sweep(pool, [1, 2, 3], [1, 2], trials=30, seed=11, workers=4)
    assert a == b


def test_with_replacement_allows_repeats():
    stats = sweep(_pool(7), [5], [5], trials=50, seed=1, with_replacement=True)[0]
    assert len(stats.accuracies) == 50


def test_cells_with_k_above_n_are_skipped():
    stats = sweep(_pool(8), [1, 3], [1, 2], trials=2, seed=0)
    assert [(s.n, s.k) for s in stats] == [(1, 1), (3, 1), (3, 2)]


def test_n_above_pool_size():
    with pytest.raises(ArityError):
        sweep(_pool(9, size=4), [5], [1], trials=1, seed=0)


def test_unlabeled_pool_sample():
    pool = _pool(10)
    with pytest.raises(ConfigError):
        PredictionPool(predictions=pool.predictions, labels={})


def test_parse_grid():
    assert parse_grid("paper") == parse_grid(" Reference ") == k_sweep_grid() == list(REFERENCE_K_GRID)
    assert k_sweep_grid()[-4:] == [20, 30, 50, 100]
    assert parse_grid("1:5") == [1, 2, 3, 4, 5]
    assert parse_grid("2:10:4,1") == [1, 2, 6, 10]
    assert len(parse_grid("1:200")) == 200
    for bad in ("", "0", "5:1", "a", "1:2:0"):
        with pytest.raises(ConfigError):
            parse_grid(bad)


def test_load_labels(tmp_path):
    path = tmp_path / "labels.csv"
    path.write_text("sample_id,score\na,0\nb,2+\nc,3\n")
    assert load_labels(path) == {"a": Her2Score.ZERO, "b": Her2Score.TWO_PLUS, "c": Her2Score.THREE_PLUS}

    path.write_text("sample_id,score\na,0\na,1\n")
    with pytest.raises(ParseError) as exc:
        load_labels(path)
    assert exc.value.line == 3

    path.write_text("sample_id,score\na,5\n")
    with pytest.raises(ParseError):
        load_labels(path)


def test_service_writes_csv_and_json(tmp_path):
    pool = _pool(12)
    preds_path = write_predictions(
        tmp_path / "p.jsonl", [p for preds in pool.predictions.values() for p in preds]
    )
    labels_path = tmp_path / "labels.csv"
    labels_path.write_text(
        "sample_id,score\n" + "".join(f"{sid},{s.label}\n" for sid, s in pool.labels.items())
    )
    out = tmp_path / "sweep.csv"

    stats = MonteCarloService(settings=Settings()).run(
        preds_path,
        labels_path,
        out,
        n_grid=[1, 5],
        k_grid=[1],
        trials=4,
        seed=2,
        rule=ConfidenceRule.MARGIN,
        include_accuracies=True,
    )

    rows = list(csv.DictReader(out.open()))
    assert [(r["n"], r["k"], r["trials"]) for r in rows] == [("1", "1", "4"), ("5", "1", "4")]
    assert rows[0]["acc_min"] == f"{stats[0].accuracy_min:.6f}"
    document = json.loads(out.with_suffix(".json").read_text())
    assert document["schema"] == "pss-sweep/1"
    assert document["confidence_rule"] == "margin"
    assert len(document["cells"][0]["accuracies"]) == 4
    assert len(document["cells"][1]["confusion_median"]) == 4
