import json

import numpy as np
import pytest

from her2pss.core.errors import CapacityError, ConfigError
from her2pss.core.settings import Settings
from her2pss.models.imaging import SyntheticCoreSpec
from her2pss.models.scores import Her2Score
from her2pss.services.dataset_service import load_manifest
from her2pss.services.imaging import brown_signal, read_image
from her2pss.services.synthetic import SyntheticService, generate_synthetic_core, generate_synthetic_wsi


def test_synthetic_core_is_deterministic():
    spec = SyntheticCoreSpec.for_class(Her2Score.TWO_PLUS, diameter=128, texture_seed=11)
    a = generate_synthetic_core(spec)
    b = generate_synthetic_core(spec)
    assert a.dtype == np.uint8 and a.shape[2] == 3
    assert np.array_equal(a, b)


def test_synthetic_core_has_white_corners():
    core = generate_synthetic_core(SyntheticCoreSpec.for_class(Her2Score.ZERO, diameter=128))
    assert np.all(core[0, 0] == 255)
    assert np.all(core[-1, -1] == 255)


def test_brown_signal_grows_with_class():
    signals = [
        brown_signal(generate_synthetic_core(SyntheticCoreSpec.for_class(score, diameter=192, texture_seed=3)))
        for score in Her2Score
    ]
    assert signals == sorted(signals)
    assert signals[0] < signals[-1]


def test_synthetic_wsi_truth_matches_layout():
    slide, truth = generate_synthetic_wsi(5, 40, seed=9)
    assert len(truth) == 5
    for circle in truth:
        assert circle.r == 40
        assert circle.r <= circle.cx <= slide.shape[1] - circle.r
        assert circle.r <= circle.cy <= slide.shape[0] - circle.r
        assert not np.all(slide[circle.cy, circle.cx] == 255)
    for i, a in enumerate(truth):
        for b in truth[i + 1:]:
            assert np.hypot(a.cx - b.cx, a.cy - b.cy) > 2 * 40


def test_synthetic_wsi_capacity():
    with pytest.raises(CapacityError):
        generate_synthetic_wsi(10, 40, seed=0, width=200, height=200)


def test_write_dataset_counts_and_manifest(tmp_path):
    service = SyntheticService(settings=Settings())
    manifest_path = service.write_dataset(tmp_path, classes=4, per_class=5, diameter=64, seed=1)

    manifest = load_manifest(manifest_path)
    assert len(manifest.cores) == 20
    assert len(list(tmp_path.glob("core_*.png"))) == 20
    for score in Her2Score:
        assert sum(1 for e in manifest.cores if e.score == score) == 5
    first = manifest.cores[0]
    assert read_image(tmp_path / first.path).shape[2] == 3


def test_write_dataset_is_independent_of_threads(tmp_path):
    one = SyntheticService(settings=Settings(PSS_THREADS=1))
    four = SyntheticService(settings=Settings(PSS_THREADS=4))
    a = one.write_dataset(tmp_path / "a", classes=2, per_class=3, diameter=64, seed=5)
    b = four.write_dataset(tmp_path / "b", classes=2, per_class=3, diameter=64, seed=5)
    assert a.read_text() == b.read_text()
    for png in sorted((tmp_path / "a").glob("*.png")):
        assert png.read_bytes() == (tmp_path / "b" / png.name).read_bytes()


def test_write_dataset_rejects_bad_class_count(tmp_path):
    with pytest.raises(ConfigError):
        SyntheticService(settings=Settings()).write_dataset(tmp_path, classes=5)


def test_write_wsi_writes_truth(tmp_path):
    slide_path, truth_path = SyntheticService(settings=Settings()).write_wsi(
        tmp_path / "slide.tif", n_cores=3, radius=30, seed=2
    )
    assert slide_path.is_file()
    assert truth_path.name == "slide_truth.json"
    truth = json.loads(truth_path.read_text())
    assert [set(t) for t in truth] == [{"cx", "cy", "r"}] * 3
