import csv
import json

import numpy as np
import pytest
from typer.testing import CliRunner

from her2pss import dependencies
from her2pss.core.errors import TrainingDivergedError
from her2pss.core.settings import get_settings
from her2pss.main import create_app
from her2pss.models.inference import InferenceConfig
from her2pss.services.confidence import make_prediction
from her2pss.services.inference_service import build_report, score_predictions
from her2pss.services.predictions_io import write_predictions

runner = CliRunner()


@pytest.fixture(autouse=True)
def _clean_settings(monkeypatch):
    monkeypatch.delenv("PSS_CONFIG", raising=False)
    monkeypatch.delenv("PSS_THREADS", raising=False)
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


def _invoke(*args):
    return runner.invoke(create_app(), ["--log-level", "ERROR", *args])


class _FakeInferenceService:
    def __init__(self):
        self.calls = []

    def score(self, cfg, pss_cfg, seed, **kwargs):
        self.calls.append((cfg, pss_cfg, seed, kwargs))
        preds = [make_prediction([0.1, 0.2, 0.6, 0.1], pss_index=i, sample_id="fake") for i in range(cfg.n)]
        return build_report(score_predictions(preds, cfg))


class _FakeTrainingService:
    def __init__(self, error):
        self.error = error

    def run(self, *args, **kwargs):
        raise self.error


def test_help_lists_commands():
    result = runner.invoke(create_app(), ["--help"])
    assert result.exit_code == 0
    for command in ("extract-cores", "sample-pss", "synth", "train", "score", "montecarlo", "consensus", "evaluate"):
        assert command in result.stdout


def test_score_uses_protocol_defaults(monkeypatch, tmp_path):
    fake = _FakeInferenceService()
    monkeypatch.setattr(dependencies, "get_inference_service", lambda settings=None: fake)

    result = _invoke("score", "--core", str(tmp_path / "c.png"), "--model", str(tmp_path / "m.pssm"))

    assert result.exit_code == 0, result.output
    cfg, pss_cfg, seed, kwargs = fake.calls[0]
    assert cfg == InferenceConfig()
    assert pss_cfg is None
    assert seed == 0
    report = json.loads(result.stdout)
    assert (report["n"], report["k"]) == (20, 5)
    assert report["final_score"] == "2+"


def test_score_flags_and_config_file(monkeypatch, tmp_path):
    fake = _FakeInferenceService()
    monkeypatch.setattr(dependencies, "get_inference_service", lambda settings=None: fake)
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"inference": {"n": 30, "k": 3}, "seed": 11}))

    result = _invoke(
        "--config", str(config), "score", "--preds", str(tmp_path / "p.jsonl"),
        "--k", "4", "--confidence", "MARGIN", "--patch-size", "64", "--report", str(tmp_path / "r.json"),
    )

    assert result.exit_code == 0, result.output
    cfg, pss_cfg, seed, _ = fake.calls[0]
    assert (cfg.n, cfg.k, cfg.confidence_rule.value) == (30, 4, "margin")
    assert pss_cfg.patch_size == 64
    assert seed == 11
    assert json.loads((tmp_path / "r.json").read_text())["k"] == 4


def test_score_without_a_source_is_a_config_error():
    assert _invoke("score").exit_code == 3


def test_missing_config_file_is_an_io_error(tmp_path):
    result = _invoke("--config", str(tmp_path / "missing.json"), "consensus", "--votes", "v.csv", "--out", "o.csv")
    assert result.exit_code == 2


def test_invalid_k_is_a_config_error(monkeypatch):
    monkeypatch.setattr(dependencies, "get_inference_service", lambda settings=None: _FakeInferenceService())
    assert _invoke("score", "--preds", "p.jsonl", "--n", "3", "--k", "5").exit_code == 3


@pytest.mark.parametrize(
    ("error", "code"),
    [(TrainingDivergedError("loss is nan"), 4), (RuntimeError("boom"), 1)],
)
def test_train_error_exit_codes(monkeypatch, tmp_path, error, code):
    monkeypatch.setattr(dependencies, "get_training_service", lambda settings=None: _FakeTrainingService(error))
    result = _invoke("train", "--manifest", str(tmp_path / "m.json"), "--out", str(tmp_path / "m.pssm"))
    assert result.exit_code == code


def _synth_and_train(tmp_path):
    data = tmp_path / "data"
    result = _invoke(
        "synth", "--out", str(data), "--classes", "2", "--per-class", "3", "--diameter", "64", "--split", "1:1:1"
    )
    assert result.exit_code == 0, result.output
    assert len(list(data.glob("*.png"))) == 6

    model = tmp_path / "model.pssm"
    result = _invoke(
        "train", "--manifest", str(data / "manifest.json"), "--out", str(model), "--max-epochs", "0",
        "--patch-size", "16", "--n-full", "2", "--n-half", "1",
    )
    assert result.exit_code == 0, result.output
    assert "no training steps" in result.stdout
    assert model.is_file()
    return data, model


def test_synth_train_and_score_end_to_end(tmp_path):
    data, model = _synth_and_train(tmp_path)

    result = _invoke(
        "score", "--core", str(data / "core_1_0000.png"), "--model", str(model), "--n", "3", "--k", "2",
        "--provenance",
    )
    assert result.exit_code == 0, result.output
    report = json.loads(result.stdout)
    assert report["sample_id"] == "core_1_0000"
    assert sum(report["histogram"]) == 2
    assert len(report["provenance"]) == 2


def test_score_is_byte_identical_for_the_same_seed(tmp_path):
    data, model = _synth_and_train(tmp_path)
    args = ("score", "--core", str(data / "core_0_0001.png"), "--model", str(model), "--n", "4", "--k", "2",
            "--seed", "5", "--provenance")

    first, second = _invoke(*args), _invoke(*args)

    assert first.exit_code == second.exit_code == 0, first.output
    assert first.stdout == second.stdout
    assert json.loads(first.stdout)["sample_id"] == "core_0_0001"


@pytest.mark.parametrize(
    "args",
    [
        ("extract-cores", "--out", "cores"),
        ("score", "--preds", "p.jsonl", "--n", "abc"),
        ("montecarlo", "--preds", "p.jsonl", "--labels", "l.csv", "--out", "s.csv", "--trials", "0"),
        ("no-such-command",),
    ],
)
def test_usage_errors_are_config_errors(args):
    assert _invoke(*args).exit_code == 3


def test_unknown_global_option_is_a_config_error():
    assert _invoke("--threads", "many", "consensus", "--votes", "v.csv", "--out", "o.csv").exit_code == 3


def test_extract_cores_from_synthetic_slide(tmp_path):
    slide = tmp_path / "slide.png"
    result = _invoke("synth-wsi", "--out", str(slide), "--n-cores", "12", "--radius", "400", "--seed", "0")
    assert result.exit_code == 0, result.output

    cores = tmp_path / "cores"
    result = _invoke("extract-cores", "--wsi", str(slide), "--out", str(cores))

    assert result.exit_code == 0, result.output
    assert "12 cores written" in result.stdout
    assert len(list(cores.glob("slide_core*.png"))) == 12
    assert len((cores / "slide_detections.jsonl").read_text().splitlines()) == 12


def test_extract_cores_missing_slide_is_an_io_error(tmp_path):
    missing = tmp_path / "nowhere.png"
    result = _invoke("extract-cores", "--wsi", str(missing), "--out", str(tmp_path / "cores"))
    assert result.exit_code == 2
    assert str(missing) in result.stderr


def _write_sweep_inputs(tmp_path, samples=3, size=100):
    rng = np.random.default_rng(4)
    preds = []
    for s in range(samples):
        raw = rng.dirichlet(np.ones(4), size=size)
        preds += [make_prediction(row / row.sum(), pss_index=i, sample_id=f"s{s}") for i, row in enumerate(raw)]
    preds_path = write_predictions(tmp_path / "preds.jsonl", preds)
    labels_path = tmp_path / "labels.csv"
    labels_path.write_text("sample_id,score\n" + "".join(f"s{s},{s % 4}\n" for s in range(samples)))
    return preds_path, labels_path


def test_montecarlo_named_k_grid(tmp_path):
    preds, labels = _write_sweep_inputs(tmp_path)
    out = tmp_path / "sweep.csv"

    result = _invoke(
        "montecarlo", "--preds", str(preds), "--labels", str(labels), "--out", str(out),
        "--n-grid", "100", "--k-grid", "paper", "--trials", "2",
    )

    assert result.exit_code == 0, result.output
    assert "23 cells written" in result.stdout
    cells = json.loads(out.with_suffix(".json").read_text())["cells"]
    assert [c["k"] for c in cells] == [*range(1, 21), 30, 50, 100]
    assert {c["n"] for c in cells} == {100}


def test_montecarlo_single_trial_collapses_the_envelope(tmp_path):
    preds, labels = _write_sweep_inputs(tmp_path, samples=4, size=6)
    out = tmp_path / "sweep.csv"

    result = _invoke(
        "montecarlo", "--preds", str(preds), "--labels", str(labels), "--out", str(out),
        "--n-grid", "1:6", "--k-grid", "1:3", "--trials", "1",
    )

    assert result.exit_code == 0, result.output
    with out.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 15
    for row in rows:
        assert row["trials"] == "1"
        assert row["acc_min"] == row["acc_median"] == row["acc_max"]


def test_consensus_command(tmp_path):
    votes = tmp_path / "votes.csv"
    votes.write_text("core_id,pathologist_id,score\na,P1,3+\na,P2,3+\na,P3,0\n")
    out = tmp_path / "labels.csv"

    result = _invoke("consensus", "--votes", str(votes), "--out", str(out))

    assert result.exit_code == 0, result.output
    assert "labeled=1" in result.stdout
    assert out.read_text().splitlines()[1] == "a,labeled,3+"


def test_evaluate_needs_reports(tmp_path):
    labels = tmp_path / "labels.csv"
    labels.write_text("sample_id,score\na,0\n")
    (tmp_path / "empty").mkdir()
    result = _invoke("evaluate", "--reports", str(tmp_path / "empty"), "--labels", str(labels), "--out", str(tmp_path))
    assert result.exit_code == 2
