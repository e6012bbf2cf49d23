import numpy as np
import pytest

from hiermotion import skeleton as sk
from hiermotion.core import GoalSpec, Pose, RootTransform, SceneObject
from hiermotion.pipeline import (SUBMODELS, DenoiserConfig, ModelBundle, PipelineConfig, StartSpec, blend_weights,
                                 build_milestone_condition, empty_object, generate_interaction, generate_leg,
                                 legs_from_record, sample_goal, untrained_bundle)
from hiermotion.sensing import Scene

TINY = PipelineConfig(T=8, denoiser=DenoiserConfig(dim=32, heads=2, blocks=1, ff_mult=2), steps=5)


@pytest.fixture(scope="module")
def bundle(small_records):
    return untrained_bundle(small_records, TINY, seed=0)


def test_blend_weights():
    assert blend_weights(1).tolist() == [1.0]
    np.testing.assert_allclose(blend_weights(5), [0, 0.25, 0.5, 0.75, 1.0])
    with pytest.raises(ValueError):
        blend_weights(0)


def test_legs_split_record(small_records):
    rec = small_records[0]
    app, lv = legs_from_record(rec)
    assert len(app.seq) + len(lv.seq) - 1 == len(rec.motion)
    assert app.goal is rec.goal
    assert lv.obj.grid.sum() == 0 and lv.obj.frame is rec.endpoint
    assert lv.goal.action == sk.action_index("idle")
    np.testing.assert_array_equal(app.milestone_frames, 60 * np.arange(1, app.n_milestones + 1))


def test_milestone_condition_tokens(small_records):
    rec = small_records[0]
    leg = legs_from_record(rec)[0]
    cond = build_milestone_condition(leg.start, leg.goal, rec.scene)
    assert list(cond) == ["I_s", "I_g", "O_s", "O_g", "g", "s"]
    again = build_milestone_condition(leg.start, leg.goal, rec.scene)
    assert all(np.array_equal(cond[k], again[k]) for k in cond)
    # swapping start and goal roots swaps the object and occupancy tokens
    swapped = build_milestone_condition(StartSpec(leg.goal.root, leg.start.action, leg.start.pose),
                                        GoalSpec(leg.start.root, leg.goal.action, leg.goal.pose), rec.scene,
                                        leg.obj)
    assert np.array_equal(swapped["I_s"], cond["I_g"]) and np.array_equal(swapped["O_g"], cond["O_s"])


def _single_anchor_obj():
    grid = np.zeros((8, 8, 8), np.uint8)
    grid[2:6, 0:2, 2:6] = 1
    anchor = RootTransform([0.0, 0.0], [0.0, 1.0])
    return SceneObject(grid, 0.25, RootTransform.identity(), ((anchor, "sit"),))


def test_sample_goal_without_noise_is_anchor():
    obj = _single_anchor_obj()
    goal = sample_goal(obj, "sit", np.random.default_rng(0), noise=0.0)
    assert goal.root.allclose(obj.anchors_for("sit")[0], 0.0)
    with pytest.raises(ValueError):
        sample_goal(obj, "lie", np.random.default_rng(0))


def test_sample_goal_pose_never_inside():
    from hiermotion.synthetic import make_object

    obj = make_object(RootTransform.from_heading([0.3, -0.2], 0.7), 0.9, 0.45, 1.35, 0.225)
    scene = Scene((obj,))
    rng = np.random.default_rng(1)
    pose = sk.canonical_goal_pose("sit", obj.top_height())
    from hiermotion.core import local_to_world_joints

    for _ in range(1000):
        g = sample_goal(obj, "sit", rng, scene, noise=0.1)
        assert not scene.contains(local_to_world_joints(g.root.position, g.root.facing, pose)).any()


def test_sample_goal_two_anchor_ratio():
    grid = np.zeros((8, 8, 8), np.uint8)
    a = RootTransform([-0.5, 0.0], [0.0, 1.0])
    b = RootTransform([0.5, 0.0], [0.0, 1.0])
    obj = SceneObject(grid, 0.25, RootTransform.identity(), ((a, "sit"), (b, "sit")))
    rng = np.random.default_rng(2)
    left = np.mean([sample_goal(obj, "sit", rng, noise=0.0).root.position[0] < 0 for _ in range(2000)])
    assert abs(left - 0.5) < 0.05


@pytest.mark.parametrize("n", [1, 2, 3])
def test_leg_structure(bundle, small_records, n):
    rec = small_records[1]
    leg = legs_from_record(rec)[0]
    res = generate_leg(bundle, leg.start, leg.goal, rec.scene, np.random.default_rng(n), n=n)
    m = res.motion
    assert len(m) == 61 + 60 * (n - 1) and res.n_milestones == n
    assert m.root(0).allclose(leg.start.root, 0.0)
    np.testing.assert_array_equal(m.joints[0], leg.start.pose.joints)
    assert m.actions[0] == leg.start.action
    for k in range(1, n + 1):
        assert m.root(60 * k).allclose(res.milestone_roots[k - 1], 0.0)
        np.testing.assert_array_equal(m.joints[60 * k], res.milestone_poses[k - 1])
    assert m.root(len(m) - 1).allclose(leg.goal.root, 0.0)
    np.testing.assert_array_equal(m.joints[-1], leg.goal.pose.joints)


def test_leg_sampled_length_in_range(bundle, small_records):
    rec = small_records[2]
    leg = legs_from_record(rec)[1]
    res = generate_leg(bundle, leg.start, leg.goal, rec.scene, np.random.default_rng(0))
    assert 1 <= res.n_milestones <= 12 and len(res.motion) == 1 + 60 * res.n_milestones


def test_leg_rejects_bad_count(bundle, small_records):
    rec = small_records[0]
    leg = legs_from_record(rec)[0]
    with pytest.raises(ValueError):
        generate_leg(bundle, leg.start, leg.goal, rec.scene, np.random.default_rng(0), n=13)


def test_interaction_shares_goal_frame(bundle, small_records):
    rec = small_records[0]
    leg = legs_from_record(rec)[0]
    obj = rec.scene.objects[0]
    res = generate_interaction(leg.start, obj, rec.endpoint, rec.scene, bundle, np.random.default_rng(3),
                               action=rec.goal.action)
    app, lv = res.legs
    assert len(res.motion) == len(app.motion) + len(lv.motion) - 1
    assert res.boundary == len(app.motion) - 1
    assert res.motion.root(res.boundary).allclose(res.goal.root, 0.0)
    np.testing.assert_array_equal(res.motion.joints[res.boundary], res.goal.pose.joints)
    assert res.motion.root(len(res.motion) - 1).allclose(rec.endpoint, 0.0)
    np.testing.assert_array_equal(res.motion.joints[-1], lv.milestone_poses[-1])


def test_generation_is_deterministic(bundle, small_records):
    rec = small_records[0]
    leg = legs_from_record(rec)[0]
    a = generate_leg(bundle, leg.start, leg.goal, rec.scene, np.random.default_rng(9), n=2)
    b = generate_leg(bundle, leg.start, leg.goal, rec.scene, np.random.default_rng(9), n=2)
    assert np.array_equal(a.motion.joints, b.motion.joints)
    assert np.array_equal(a.motion.root_pos, b.motion.root_pos)


def test_leave_target_is_empty():
    at = RootTransform([1.0, 2.0], [1.0, 0.0])
    obj = empty_object(at)
    assert obj.grid.sum() == 0 and obj.anchors_for("idle")[0] is at


def test_bundle_save_load(bundle, tmp_path):
    hashes = bundle.save(tmp_path)
    assert set(hashes) == set(SUBMODELS)
    back = ModelBundle.load(TINY, tmp_path)
    for name in SUBMODELS:
        a, b = bundle[name].state_dict(), back[name].state_dict()
        assert all(np.array_equal(a[k].numpy(), b[k].numpy()) for k in a)
    (tmp_path / "infill.ckpt").unlink()
    with pytest.raises(FileNotFoundError, match="infill"):
        ModelBundle.load(TINY, tmp_path)


def test_missing_model_key():
    with pytest.raises(KeyError):
        ModelBundle(TINY)["milestones"]


def test_start_spec_coerces_pose():
    s = StartSpec(RootTransform.identity(), "walk", sk.rest_pose())
    assert isinstance(s.pose, Pose) and s.action == sk.action_index("walk")
