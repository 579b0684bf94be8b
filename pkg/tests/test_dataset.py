import numpy as np
import pytest

from plfm.data_model import OpticalImage, grayscale
from plfm.dataset import (DatasetError, SceneConfig, apply_clouds, cumulative_histogram,
                          dissimilarity, estimate_coverage, load_index, read_split, scan_index,
                          simulate_sar, speckle, split_dataset, split_rois, synth_scene, write_index,
                          write_series, write_split)
from plfm.dataset.store import DatasetIndex
from plfm.dataset.synth import cloud_regime
from plfm.pipeline import cgan_pairs, convlstm_pairs, dihedral, load_series


# ---------------------------------------------------------------- speckle / SAR

@pytest.mark.parametrize("looks", [1, 4])
def test_speckle_moments(looks):
    s = speckle((400, 500), looks, seed=0)
    assert s.mean() == pytest.approx(1.0, abs=0.01)
    assert s.var() == pytest.approx(1.0 / looks, rel=0.03)
    assert s.min() >= 0


def test_simulate_sar_contract():
    gray = np.random.default_rng(1).uniform(0, 1, (300, 300))
    sar = simulate_sar(gray, 1, seed=2)
    assert sar.values.shape == (300, 300, 1) and sar.looks == 1
    ratio = sar.values[..., 0] / np.maximum(gray, 1e-9)
    assert ratio.mean() == pytest.approx(1.0, abs=0.02)
    assert np.all(simulate_sar(np.zeros((4, 4)), 1, seed=0).values == 0)
    with pytest.raises(ValueError):
        simulate_sar(gray, 0)
    with pytest.raises(ValueError):
        simulate_sar(gray + 1.0)


# ---------------------------------------------------------------- clouds / scenes

def test_apply_clouds_coverage_and_zero():
    img = OpticalImage(np.full((64, 64, 3), 0.3))
    same, mask = apply_clouds(img, 0.0, 0.9, seed=0)
    assert np.array_equal(same.values, img.values) and not mask.any()
    for cov in (0.2, 0.5, 0.8):
        cloudy, mask = apply_clouds(img, cov, 0.9, seed=1)
        assert mask.mean() == pytest.approx(cov, abs=0.05)
        assert cloudy.values[mask].mean() > img.values.mean()
    with pytest.raises(ValueError):
        apply_clouds(img, 1.5, 0.5)


def test_cloud_regimes():
    assert cloud_regime(0.3, 0.3) == "thin"
    assert cloud_regime(0.3, 0.8) == "thick"
    assert cloud_regime(0.97, 0.8) == "full"


def test_synth_scene_is_deterministic():
    a = synth_scene(3, SceneConfig(size=32))
    b = synth_scene(3, SceneConfig(size=32))
    for fa, fb in zip(a.cloudy + a.sar, b.cloudy + b.sar):
        assert np.array_equal(fa.values, fb.values)
    c = synth_scene(4, SceneConfig(size=32))
    assert not np.array_equal(a.optical[0].values, c.optical[0].values)
    assert len(a.optical) == 4 and a.optical[0].shape == (32, 32, 3)
    assert all(0 <= f.values.min() and f.values.max() <= 1 for f in a.optical + a.cloudy)


def test_synth_scene_drift_is_gradual():
    s = synth_scene(5, SceneConfig(size=32, coverage=0.0))
    d01 = np.abs(s.optical[1].values - s.optical[0].values).mean()
    d03 = np.abs(s.optical[3].values - s.optical[0].values).mean()
    assert 0 < d01 < 0.1 and d03 < 0.2


def test_scene_config_validation():
    with pytest.raises(ValueError):
        synth_scene(0, SceneConfig(size=8))
    with pytest.raises(ValueError):
        synth_scene(0, SceneConfig(coverage=[0.1, 0.2]))


# ---------------------------------------------------------------- histograms / split

def test_dissimilarity_identical_is_zero():
    imgs = [np.random.default_rng(i).uniform(size=(4, 4, 3)) for i in range(3)]
    h = cumulative_histogram(imgs, 20)
    assert h.counts[-1] == 3 * 48
    assert np.all(np.diff(h.counts) >= 0)
    assert dissimilarity(h, h, 3) == 0.0
    assert dissimilarity(h, h, 3, normalized=True) == 0.0


def test_dissimilarity_hand_computed():
    ht = cumulative_histogram([np.array([[[0.1]], [[0.9]]])], bins=2)
    hv = cumulative_histogram([np.array([[[0.1]], [[0.1]]])], bins=2)
    # train cumulative [1, 2], val [2, 2] -> |1-2| / (1 + 2)
    assert dissimilarity(ht, hv, 1) == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        dissimilarity(ht, cumulative_histogram([np.zeros((2, 2, 1))], bins=3), 1)


def _two_mode_corpus(n=20):
    out = {}
    for i in range(n):
        rng = np.random.default_rng(i)
        level = 0.2 if i % 2 else 0.7
        out[f"r{i:02d}"] = [np.clip(rng.normal(level, 0.05, (4, 4, 3)), 0, 1) for _ in range(2)]
    return out


def test_split_argmin_and_sizes():
    res = split_rois(_two_mode_corpus(), iterations=60, n=8, bins=20, seed=1)
    assert res.dissimilarity == res.trace.min()
    assert res.dissimilarity < np.median(res.trace)
    assert len(res.val_ids) == 4 and len(res.test_ids) == 2 and len(res.train_ids) == 14
    labels = res.labels()
    assert len(labels) == 20 and set(labels.values()) == {"train", "val", "test"}
    again = split_rois(_two_mode_corpus(), iterations=60, n=8, bins=20, seed=1)
    assert again.val_ids == res.val_ids and again.test_ids == res.test_ids


def test_split_errors():
    with pytest.raises(ValueError):
        split_rois({"a": [np.zeros((2, 2, 3))], "b": [np.zeros((2, 2, 3))]}, iterations=3)
    with pytest.raises(ValueError):
        split_rois(_two_mode_corpus(), iterations=0)


def test_full_scale_split_cardinalities():
    # 141 ROIs: 28 validation, then 10% of the remaining 113
    rois = 141
    val = int(round(0.2 * rois))
    test = int(round(0.1 * (rois - val)))
    assert (val, test, rois - val - test) == (28, 11, 102)


# ---------------------------------------------------------------- storage

def _write_corpus(root, n=3, size=16):
    entries = []
    for i in range(n):
        entries += write_series(root, synth_scene(i, SceneConfig(size=size, coverage=0.5), f"roi{i}"))
    write_index(DatasetIndex(root, entries))
    return entries


def test_store_round_trip(tmp_path):
    entries = _write_corpus(tmp_path)
    index = load_index(tmp_path)
    assert index.entries == entries
    assert index.rois() == ["roi0", "roi1", "roi2"]
    rescanned = scan_index(tmp_path)
    assert [e.optical_path for e in rescanned.entries] == [e.optical_path for e in entries]
    s = load_series(tmp_path, index, "roi1")
    ref = synth_scene(1, SceneConfig(size=16, coverage=0.5))
    assert np.allclose(s.optical[2].values, ref.optical[2].values, atol=1e-6)
    assert np.array_equal(s.cloud_masks[1], ref.cloud_masks[1])


def test_store_split_files(tmp_path):
    _write_corpus(tmp_path)
    assert read_split(tmp_path) is None
    index = load_index(tmp_path)
    with pytest.raises(DatasetError):
        index.rois_in("train")
    res = split_dataset(index, iterations=5, n=2, bins=10, seed=0)
    write_split(tmp_path, res.labels())
    assert read_split(tmp_path) == res.labels()
    assert load_index(tmp_path).rois_in("val") == sorted(res.val_ids)


def test_store_errors(tmp_path):
    with pytest.raises(DatasetError):
        load_index(tmp_path / "nope")
    assert load_index(tmp_path).entries == []
    _write_corpus(tmp_path, n=1)
    (tmp_path / "roi0" / "t1" / "s1.f32").write_bytes(b"\0" * 8)
    with pytest.raises(DatasetError, match="s1.f32"):
        load_index(tmp_path)


def test_white_pixel_coverage():
    v = np.zeros((10, 10, 3))
    v[:3] = 0.95
    assert estimate_coverage(v) == pytest.approx(0.3)
    assert estimate_coverage(v, threshold=0.99) == 0.0


def test_pair_builders_and_augmentation():
    s = synth_scene(0, SceneConfig(size=16))
    pairs = convlstm_pairs([s], 3)
    assert len(pairs) == 1 and pairs[0][0].shape == (3, 16, 16, 3)
    assert len(convlstm_pairs([s], 3, augment=True)) == 8
    assert len(cgan_pairs([s])) == 4 and len(cgan_pairs([s], augment=True)) == 32
    x = np.arange(16.0).reshape(4, 4, 1)
    imgs = {dihedral(x, k).tobytes() for k in range(8)}
    assert len(imgs) == 8
    assert np.array_equal(dihedral(x, 0), x)
    assert np.allclose(grayscale(dihedral(s.optical[0].values, 5)),
                       dihedral(grayscale(s.optical[0].values)[..., None], 5)[..., 0])
