import numpy as np
import pytest

from hiermotion import skeleton as sk
from hiermotion.core import RootTransform
from hiermotion.metrics import foot_sliding, penetration_ratio
from hiermotion.synthetic import (GenConfig, generate_records, load_dataset, make_dataset, make_scene, make_sequence,
                                  pre_goal, split_ids, voxelize_box, walk_frame_count)


def test_voxelize_half_metre_cube():
    grid = voxelize_box(0.5, 0.5, 0.5, 0.25)
    assert grid.sum() == 8
    ix, iy, iz = np.nonzero(grid)
    assert set(ix) == {3, 4} and set(iy) == {0, 1} and set(iz) == {3, 4}


def test_voxelize_full_and_thin():
    assert voxelize_box(2.0, 2.0, 2.0, 0.25).sum() == 512
    assert voxelize_box(0.5, 0.1, 0.5, 0.25).sum() == 0


def test_config_rejects_bad_values():
    with pytest.raises(ValueError):
        GenConfig(n_sequences=0)
    with pytest.raises(ValueError):
        GenConfig(seat_height_range=(0.5, 0.4))


def test_scene_reproducible_and_anchors_free():
    for seed in range(20):
        a = make_scene(GenConfig(), np.random.default_rng(seed))
        b = make_scene(GenConfig(), np.random.default_rng(seed))
        oa, ob = a.objects[0], b.objects[0]
        assert np.array_equal(oa.grid, ob.grid) and oa.frame.allclose(ob.frame, 0.0)
        nx = np.nonzero(oa.grid.any((1, 2)))[0]
        nz = np.nonzero(oa.grid.any((0, 1)))[0]
        assert len(nx) % 2 == 0 and len(nz) % 2 == 0
        # the seat anchor sits on top of the box, inside its footprint
        for action in ("sit", "lie"):
            anchor = oa.anchors_for(action)[0]
            top = np.array([anchor.position[0], oa.top_height() + 0.01, anchor.position[1]])
            below = top - [0, 0.02, 0]
            assert not a.contains(top[None])[0] and a.contains(below[None])[0]
        assert not a.contains(np.array([[*pre_goal(oa, "sit").position[:1], 0.1,
                                         pre_goal(oa, "sit").position[1]]]))[0]


def test_walk_frame_count_is_segment_multiple():
    cfg = GenConfig()
    for length in (0.1, 1.0, 3.7, 9.9):
        n = walk_frame_count(length, cfg)
        assert n % 60 == 0 and n >= 60


def _scene():
    return make_scene(GenConfig(), np.random.default_rng(4))


def test_start_on_anchor_is_blend_only():
    scene = _scene()
    anchor = scene.objects[0].anchors_for("sit")[0]
    seq = make_sequence(scene, anchor, "sit", np.random.default_rng(0))
    assert len(seq) == 61
    np.testing.assert_allclose(seq.root_pos[-1], anchor.position, atol=1e-12)


def test_sequence_endpoints_exact():
    scene = _scene()
    obj = scene.objects[0]
    start = np.array([-3.0, -3.0])
    for action in ("sit", "lie"):
        pose = sk.canonical_goal_pose(action, obj.top_height())
        seq = make_sequence(scene, start, action, np.random.default_rng(1), goal_pose=pose)
        np.testing.assert_allclose(seq.root_pos[0], start, atol=1e-12)
        anchor = obj.anchors_for(action)[0]
        np.testing.assert_allclose(seq.root_pos[-1], anchor.position, atol=1e-12)
        np.testing.assert_allclose(seq.root_facing[-1], anchor.facing, atol=1e-12)
        np.testing.assert_allclose(seq.joints[-1], pose, atol=1e-12)
        assert (len(seq) - 1) % 60 == 0
        assert seq.actions[-1] == sk.action_index(action)


def test_gait_period_from_foot_heights():
    scene = _scene()
    seq = make_sequence(scene, np.array([-3.0, -3.0]), "sit", np.random.default_rng(2))
    walk = np.nonzero(seq.actions == sk.action_index("walk"))[0]
    n = (len(walk) // 60) * 60
    y = seq.joints[:n, sk.FEET[0], 1]
    y = y - y.mean()
    ac = np.array([np.dot(y[:-k], y[k:]) / (n - k) for k in range(10, 50)])
    assert abs(10 + int(np.argmax(ac)) - GenConfig().gait_period) <= 1


def test_records_reproducible(small_records):
    again = generate_records(GenConfig(seed=3, n_sequences=6))
    for a, b in zip(small_records, again):
        assert np.array_equal(a.motion.joints, b.motion.joints)
        assert a.boundary == b.boundary


def test_record_structure(small_records):
    for rec in small_records:
        app, lv = rec.approach(), rec.leave()
        assert (len(app) - 1) % 60 == 0 and (len(lv) - 1) % 60 == 0
        np.testing.assert_array_equal(app.joints[-1], lv.joints[0])
        np.testing.assert_allclose(app.root_pos[-1], rec.goal.root.position, atol=1e-12)
        np.testing.assert_allclose(lv.root_pos[-1], rec.endpoint.position, atol=1e-12)
        assert penetration_ratio(rec.motion, rec.scene) == 0.0


def test_walk_sliding_is_small(small_records):
    for rec in small_records:
        walk = rec.approach()
        n = int((walk.actions == sk.action_index("walk")).sum()) // 60 * 60
        assert foot_sliding(walk.slice(0, n)) < 0.3


def test_split_ids():
    train, val = split_ids(100)
    assert len(train) == 90 and len(val) == 10 and not set(train) & set(val)
    assert split_ids(5) == ([0, 1, 2, 3, 4], [])


def test_dataset_hash_and_reload(tmp_path):
    cfg = GenConfig(seed=5, n_sequences=4)
    h1 = make_dataset(cfg, tmp_path / "a")
    h2 = make_dataset(cfg, tmp_path / "b")
    assert h1 == h2
    assert make_dataset(GenConfig(seed=6, n_sequences=4), tmp_path / "c") != h1
    recs = load_dataset(tmp_path / "a")
    ref = generate_records(cfg)
    for a, b in zip(recs, ref):
        np.testing.assert_allclose(a.motion.joints, b.motion.joints, atol=1e-9)
        assert a.goal.action == b.goal.action
    assert len(load_dataset(tmp_path / "a", "train")) == 4


def test_milestone_counts_vary():
    recs = generate_records(GenConfig(seed=11, n_sequences=12))
    counts = {(len(r.approach()) - 1) // 60 for r in recs} | {(len(r.leave()) - 1) // 60 for r in recs}
    assert len(counts) >= 3
    assert all(1 <= c <= 12 for c in counts)


def test_load_dataset_missing(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path)


def test_root_transform_helper_roundtrip():
    r = RootTransform.from_heading([1.0, 2.0], 0.3)
    assert abs(r.heading - 0.3) < 1e-12
