import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from onn.classifier import CoreCnnSpec, TrainConfig, build_core_cnn, build_focal_views, extract_hidden
from onn.dataset import generate_shapes_dataset
from onn.pyramid import DEFAULT_FOCAL_POINTS, PyramidConfig, build_pyramid, stats
from onn.unifier import (
    CacheError,
    FeatureCache,
    UnifierNet,
    UnifierSpec,
    build_feature_cache,
    evaluate_merged,
    evaluate_unified,
    load_feature_cache,
    merge_focal_predictions,
    merged_by_image,
    model_checksum,
    predict_merged,
    predict_unified,
    pyramid_features,
    train_unifier,
    unified_probabilities,
)

CFG = PyramidConfig(64, 16, 3)
SPEC = CoreCnnSpec(input_size=16, blocks=((4, 1), (8, 1)), hidden=10, num_classes=3)


@pytest.fixture(scope="module")
def setup():
    split = generate_shapes_dataset(3, 4, 64, seed=2)
    samples = split.all_samples()
    core = build_core_cnn(SPEC, seed=1)
    cache = build_feature_cache(core, build_focal_views(samples, CFG), CFG, batch=7)
    return samples, core, cache


def test_cache_shape_and_keys(setup):
    samples, core, cache = setup
    assert len(cache) == 12 * 5 and cache.width == 30 and cache.num_images == 12
    assert cache.checksum == model_checksum(core)
    assert sorted(zip(cache.ids.tolist(), cache.focal.tolist())) == sorted(
        (s.id, f) for s in samples for f in range(5)
    )


def test_every_record_equals_a_fresh_forward_pass(setup):
    samples, core, cache = setup
    for s in samples:
        img = s.load()
        for f, point in enumerate(DEFAULT_FOCAL_POINTS):
            rec = cache.record(s.id, f)
            assert np.array_equal(rec, pyramid_features(core, img, point, CFG))
            views = build_pyramid(img, point, CFG).views
            for lv in views:
                single = extract_hidden(core, lv.view.to_chw()[None])[0]
                assert np.array_equal(rec[cache.level_slice(lv.level)], single)


def test_cache_from_samples_matches_cache_from_views(setup):
    samples, core, cache = setup
    again = build_feature_cache(core, samples, CFG, batch=256)
    assert np.array_equal(again.features, cache.features)


def test_round_trip_and_header(setup, tmp_path):
    _, _, cache = setup
    path = tmp_path / "c.onnc"
    cache.save(path)
    raw = path.read_bytes()
    assert raw[:4] == b"ONNC" and int.from_bytes(raw[4:8], "little") == 1
    assert raw[8:40] == cache.checksum
    assert [int.from_bytes(raw[40 + 4 * i:44 + 4 * i], "little") for i in range(5)] == [10, 3, 3, 5, 12]
    assert len(raw) == 60 + len(cache) * (8 + 4 * 30)
    for mmap in (True, False):
        back = load_feature_cache(path, mmap=mmap)
        assert np.array_equal(back.features, cache.features)
        assert np.array_equal(back.ids, cache.ids) and np.array_equal(back.labels, cache.labels)


def test_corrupt_cache_files(setup, tmp_path):
    _, _, cache = setup
    path = tmp_path / "c.onnc"
    cache.save(path)
    raw = path.read_bytes()
    (tmp_path / "t.onnc").write_bytes(raw[:-3])
    with pytest.raises(CacheError, match="truncated"):
        load_feature_cache(tmp_path / "t.onnc")
    (tmp_path / "m.onnc").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CacheError, match="magic"):
        load_feature_cache(tmp_path / "m.onnc")
    (tmp_path / "h.onnc").write_bytes(raw[:20])
    with pytest.raises(CacheError, match="header"):
        load_feature_cache(tmp_path / "h.onnc")


def test_cache_invariants():
    z = np.zeros
    with pytest.raises(CacheError, match="duplicate"):
        FeatureCache(2, 1, 2, 1, z(2, np.uint32), z(2, np.uint16), z(2, np.uint16), z((2, 2), np.float32))
    with pytest.raises(CacheError, match="width"):
        FeatureCache(2, 2, 2, 1, z(1, np.uint32), z(1, np.uint16), z(1, np.uint16), z((1, 2), np.float32))


def test_unifier_training_builds_no_pyramids(setup):
    _, _, cache = setup
    stats.reset()
    res = train_unifier(cache, UnifierSpec(30, 3, hidden=8), TrainConfig(batch_size=4, max_epochs=3, top_k=2), cache)
    assert stats.builds == 0 and stats.resamples == 0
    assert len(res.history) == 3


def test_unifier_rejects_wrong_width(setup):
    _, _, cache = setup
    with pytest.raises(ValueError, match="31-wide"):
        train_unifier(cache, UnifierSpec(31, 3), TrainConfig(max_epochs=1, top_k=2), cache)


def test_merge_fixture():
    got = merge_focal_predictions([[0.6, 0.3, 0.1], [0.2, 0.5, 0.3], [0.4, 0.4, 0.2]])
    np.testing.assert_allclose(got, [0.4, 0.4, 0.2], atol=1e-12)
    assert int(np.argmax(got)) == 0  # tie goes to the lower class index


def test_merge_errors():
    with pytest.raises(ValueError):
        merge_focal_predictions([])
    with pytest.raises(ValueError, match="equal-width"):
        merge_focal_predictions([[0.5, 0.5], [0.2, 0.3, 0.5]])


prob_sets = st.integers(1, 6).flatmap(
    lambda k: st.lists(st.lists(st.floats(0.01, 1.0), min_size=k, max_size=k), min_size=1, max_size=5)
)


@settings(max_examples=200)
@given(prob_sets, st.randoms())
def test_merge_properties(vectors, rnd):
    vecs = [np.array(v) / np.sum(v) for v in vectors]
    merged = merge_focal_predictions(vecs)
    shuffled = list(vecs)
    rnd.shuffle(shuffled)
    np.testing.assert_allclose(merge_focal_predictions(shuffled), merged, atol=1e-12)
    np.testing.assert_allclose(merge_focal_predictions([vecs[0]]), vecs[0], atol=1e-12)
    np.testing.assert_allclose(merge_focal_predictions([vecs[0]] * 3), vecs[0], atol=1e-12)
    assert merged.sum() == pytest.approx(1.0)


def test_end_to_end_prediction_paths(setup):
    samples, core, cache = setup
    uni = UnifierNet(UnifierSpec(30, 3, hidden=8), seed=3)
    img = samples[0].load()
    single = predict_unified(core, uni, img, DEFAULT_FOCAL_POINTS[1], CFG)
    assert np.array_equal(predict_merged(core, uni, img, [DEFAULT_FOCAL_POINTS[1]], CFG), single.astype(np.float64))
    order = [DEFAULT_FOCAL_POINTS[i] for i in (4, 0, 2)]
    a = predict_merged(core, uni, img, order, CFG)
    b = predict_merged(core, uni, img, order[::-1], CFG)
    np.testing.assert_allclose(a, b, atol=1e-12)
    with pytest.raises(ValueError):
        predict_merged(core, uni, img, [], CFG)
    probs = unified_probabilities(uni, cache.features)
    ids, merged, labels = merged_by_image(cache, probs)
    i = int(np.flatnonzero(ids == samples[0].id)[0])
    np.testing.assert_allclose(merged[i], predict_merged(core, uni, img, DEFAULT_FOCAL_POINTS, CFG), atol=1e-6)


def test_unified_accuracy_is_mean_single_focal_accuracy(setup):
    _, _, cache = setup
    uni = UnifierNet(UnifierSpec(30, 3, hidden=8), seed=4)
    acc, _ = evaluate_unified(uni, cache, k=2)
    probs = unified_probabilities(uni, cache.features)
    per = [np.mean(np.argmax(probs[cache.focal == f], 1) == cache.labels[cache.focal == f]) for f in range(5)]
    assert acc == pytest.approx(np.mean(per))
    m_acc, m_top = evaluate_merged(uni, cache, k=2)
    assert 0 <= m_acc <= m_top <= 1
