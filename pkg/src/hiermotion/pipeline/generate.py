"""Hierarchical generation: goal, goal pose, milestones, milestone poses,
trajectory completion, motion infilling and leg stitching."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import skeleton as sk
from ..core import (GoalSpec, Milestone, MotionSequence, Pose, RootTransform, SceneObject, character_states,
                    concatenate, local_to_world_joints)
from ..diffusion import predict_length, sample
from ..sensing import Scene, environment_occupancy
from ..vqvae import sample_goal_pose as _sample_goal_pose
from .conditions import (SEGMENT, SEGMENT_FRAMES, StartSpec, blend_weights, build_milestone_condition,
                         decode_bidirectional, frame_conditions, goal_pose_of, leg_object, to_milestones)
from .models import ModelBundle, trajectory_condition

MAX_FRAMES = 1500


def _batch(cond: dict) -> dict:
    return {k: np.asarray(v, dtype=float)[None] for k, v in cond.items()}


def goal_is_free(scene: Scene, root: RootTransform, pose: np.ndarray) -> bool:
    """Whether ``pose`` placed at ``root`` keeps every joint out of the scene."""
    world = local_to_world_joints(root.position, root.facing, pose)
    return not bool(scene.contains(world).any())


def sample_goal(obj: SceneObject, action, rng: np.random.Generator, scene: Scene | None = None,
                noise: float = 0.05) -> GoalSpec:
    """Pick an anchor uniformly and jitter its position.

    Jitter that would put the canonical goal pose into the scene is halved
    until it does not; after a few halvings the anchor itself is used.
    """
    anchors = obj.anchors_for(action)
    if not anchors:
        raise ValueError(f"object has no anchor for action {sk.ACTIONS[sk.action_index(action)]!r}")
    anchor = anchors[int(rng.integers(len(anchors)))]
    scene = scene if scene is not None else Scene((obj,), _bounds_around(obj))
    pose = sk.canonical_goal_pose(action, obj.top_height())
    offset = rng.normal(0.0, noise, 2) if noise > 0 else np.zeros(2)
    for _ in range(8):
        root = RootTransform(anchor.position + offset, anchor.facing)
        if goal_is_free(scene, root, pose):
            return GoalSpec(root, action)
        offset = offset / 2
    return GoalSpec(anchor, action)


def _bounds_around(obj: SceneObject, margin: float = 10.0):
    x, z = obj.frame.position
    return (x - margin, z - margin, x + margin, z + margin)


def sample_goal_pose(models: ModelBundle, scene: Scene, goal: GoalSpec, rng: np.random.Generator,
                     temperature: float | None = None) -> Pose:
    occ = environment_occupancy(scene, goal.root, models.cfg.sensor)
    t = models.cfg.temperature if temperature is None else temperature
    return _sample_goal_pose(models["vqvae"], models["prior"], occ, goal.action_onehot, t, rng)


@dataclass
class MilestonePlan:
    vectors: np.ndarray
    roots: list
    contacts: np.ndarray
    states: np.ndarray
    milestones: list = field(default_factory=list)

    def __len__(self):
        return len(self.roots)


def generate_milestones(models: ModelBundle, cond: dict, start_root: RootTransform, goal_root: RootTransform,
                        rng: np.random.Generator, n: int | None = None) -> MilestonePlan:
    """Sample the milestone count and the milestone vectors, then blend the
    start-frame and goal-frame root decodings linearly in milestone index."""
    model = models["milestones"]
    if n is None:
        n = int(predict_length(model, _batch(cond), rng)[0])
    if not 1 <= n <= models.cfg.n_max:
        raise ValueError(f"milestone count {n} outside [1, {models.cfg.n_max}]")
    x = sample(model, _batch(cond), n, models.schedule, rng)[0]
    roots = decode_bidirectional(x, start_root, goal_root, blend_weights(n))
    return MilestonePlan(x, roots, x[:, 8:13].copy(), x[:, 13:].copy(), to_milestones(x, start_root, goal_root))


def _frame_cond(models, scene, obj, roots, contacts, states):
    pos = np.stack([r.position for r in roots])
    fac = np.stack([r.facing for r in roots])
    return frame_conditions(scene, obj, pos, fac, np.clip(contacts, 0.0, 1.0), states, models.cfg.sensor)


def generate_milestone_poses(models: ModelBundle, plan: MilestonePlan, start: StartSpec, goal: GoalSpec,
                             scene: Scene, rng: np.random.Generator, obj: SceneObject | None = None) -> np.ndarray:
    """(N, J, 3) poses, one per milestone, conditioned on start and goal poses."""
    obj = obj if obj is not None else leg_object(scene, goal)
    fc = _frame_cond(models, scene, obj, plan.roots, plan.contacts, plan.states)
    cond = {"theta_s": start.pose.joints.reshape(-1), "theta_g": goal_pose_of(goal).reshape(-1)}
    x = sample(models["milestone-poses"], _batch(cond), len(plan), models.schedule, rng, fc[None])[0]
    return x.reshape(len(plan), sk.N_JOINTS, 3)


@dataclass
class Keyframe:
    root: RootTransform
    contacts: np.ndarray
    state: np.ndarray
    pose: np.ndarray

    def m_vector(self) -> np.ndarray:
        return np.concatenate([np.clip(self.contacts, 0.0, 1.0), self.state])


@dataclass
class Segment:
    roots: list
    contacts: np.ndarray
    states: np.ndarray


def complete_trajectories(models: ModelBundle, pairs: list, scene: Scene, obj: SceneObject,
                          rng: np.random.Generator) -> list[Segment]:
    """Batched :func:`complete_trajectory` over (m_a, m_b) keyframe pairs."""
    conds = [trajectory_condition(scene, obj, a.root, b.root, a.m_vector(), b.m_vector(), models.cfg.sensor)
             for a, b in pairs]
    batch = {k: np.stack([c[k] for c in conds]) for k in conds[0]}
    x = sample(models["trajectory"], batch, SEGMENT_FRAMES, models.schedule, rng)
    w = np.arange(SEGMENT_FRAMES) / SEGMENT
    out = []
    for (a, b), xi in zip(pairs, x):
        roots = decode_bidirectional(xi, a.root, b.root, w)
        roots[0], roots[-1] = a.root, b.root
        contacts, states = xi[:, 8:13].copy(), xi[:, 13:].copy()
        contacts[0], contacts[-1] = a.contacts, b.contacts
        states[0], states[-1] = a.state, b.state
        out.append(Segment(roots, contacts, states))
    return out


def complete_trajectory(models: ModelBundle, m_a: Keyframe, m_b: Keyframe, scene: Scene, obj: SceneObject,
                        rng: np.random.Generator) -> Segment:
    """61 trajectory points between two milestones; endpoints are the milestones."""
    return complete_trajectories(models, [(m_a, m_b)], scene, obj, rng)[0]


def infill_motions(models: ModelBundle, segments: list, pose_pairs: list, scene: Scene, obj: SceneObject,
                   rng: np.random.Generator) -> np.ndarray:
    fc = np.stack([_frame_cond(models, scene, obj, s.roots, s.contacts, s.states) for s in segments])
    batch = {"theta_a": np.stack([a.reshape(-1) for a, _ in pose_pairs]),
             "theta_b": np.stack([b.reshape(-1) for _, b in pose_pairs])}
    x = sample(models["infill"], batch, SEGMENT_FRAMES, models.schedule, rng, fc)
    poses = x.reshape(len(segments), SEGMENT_FRAMES, sk.N_JOINTS, 3)
    for p, (a, b) in zip(poses, pose_pairs):
        p[0], p[-1] = a, b
    return poses


def infill_motion(models: ModelBundle, traj: Segment, pose_a, pose_b, scene: Scene, obj: SceneObject,
                  rng: np.random.Generator) -> np.ndarray:
    """61 poses along a trajectory segment; the ends are the given poses."""
    return infill_motions(models, [traj], [(np.asarray(pose_a), np.asarray(pose_b))], scene, obj, rng)[0]


@dataclass
class LegResult:
    motion: MotionSequence
    n_milestones: int
    milestone_roots: list
    milestone_poses: np.ndarray
    milestones: list


def _start_keyframe(start: StartSpec, scene: Scene) -> Keyframe:
    f = start.frame(scene)
    state = character_states(start.root.position[None], start.root.facing[None], start.pose.joints[None],
                             [start.action])[0]
    return Keyframe(start.root, f.contacts.astype(float), state, start.pose.joints)


def generate_leg(models: ModelBundle, start: StartSpec, goal: GoalSpec, scene: Scene,
                 rng: np.random.Generator, n: int | None = None, root_planner=None) -> LegResult:
    """Run the hierarchy for one leg; the last milestone lands on the goal root.

    ``root_planner(start_root, goal_root, n)`` may replace the sampled
    milestone roots (used by the planner baseline).
    """
    obj = leg_object(scene, goal)
    cfg = models.cfg
    cond = build_milestone_condition(start, goal, scene, obj, cfg.sensor)
    plan = generate_milestones(models, cond, start.root, goal.root, rng, n)
    if root_planner is not None:
        plan.roots = list(root_planner(start.root, goal.root, len(plan)))
    plan.roots[-1] = goal.root
    poses = generate_milestone_poses(models, plan, start, goal, scene, rng, obj)
    if goal.is_interaction:
        poses[-1] = goal_pose_of(goal)
    states = plan.states.copy()
    states[:, :3 * sk.N_JOINTS] = poses.reshape(len(poses), -1)
    keys = [_start_keyframe(start, scene)]
    keys += [Keyframe(r, c, s, p) for r, c, s, p in zip(plan.roots, plan.contacts, states, poses)]
    pairs = list(zip(keys[:-1], keys[1:]))
    segments = complete_trajectories(models, pairs, scene, obj, rng)
    seg_poses = infill_motions(models, segments, [(a.pose, b.pose) for a, b in pairs], scene, obj, rng)

    roots, joints, contacts, states = [], [], [], []
    for k, (seg, p) in enumerate(zip(segments, seg_poses)):
        lo = 0 if k == 0 else 1
        roots += seg.roots[lo:]
        joints.append(p[lo:])
        contacts.append(seg.contacts[lo:])
        states.append(seg.states[lo:])
    contacts = np.concatenate(contacts) > 0.5
    states = np.concatenate(states)
    actions = states[:, -sk.N_ACTIONS:].argmax(-1)
    contacts[0] = keys[0].contacts > 0.5
    actions[0] = start.action
    actions[-1] = goal.action
    motion = MotionSequence(np.stack([r.position for r in roots]), np.stack([r.facing for r in roots]),
                            np.concatenate(joints), contacts, actions, check_step=False)
    return LegResult(motion, len(plan), list(plan.roots), poses, plan.milestones)


@dataclass
class InteractionResult:
    motion: MotionSequence
    legs: list
    goal: GoalSpec
    boundary: int

    def summary(self) -> dict:
        return {"length": len(self.motion), "boundary": self.boundary,
                "n_milestones": [leg.n_milestones for leg in self.legs],
                "goal": {"pos": self.goal.root.position.tolist(), "facing": self.goal.root.facing.tolist(),
                         "action": sk.ACTIONS[self.goal.action]}}


def generate_interaction(start: StartSpec, obj: SceneObject, endpoint: RootTransform, scene: Scene,
                         models: ModelBundle, rng: np.random.Generator, action="sit",
                         goal: GoalSpec | None = None, root_planner=None) -> InteractionResult:
    """Approach ``obj``, interact with it, then leave for ``endpoint``.

    Both legs share the interaction frame, where the sampled goal pose sits.
    """
    if goal is None:
        goal = sample_goal(obj, action, rng, scene, models.cfg.goal_noise)
    if goal.pose is None:
        goal = GoalSpec(goal.root, goal.action, sample_goal_pose(models, scene, goal, rng))
    approach = generate_leg(models, start, goal, scene, rng, root_planner=root_planner)
    leave_start = StartSpec(goal.root, goal.action, goal.pose)
    leave_goal = GoalSpec(endpoint, "idle", Pose(sk.rest_pose()))
    leave = generate_leg(models, leave_start, leave_goal, scene, rng, root_planner=root_planner)
    motion = concatenate([approach.motion, leave.motion], check_step=False)
    if len(motion) > MAX_FRAMES:
        raise ValueError(f"generated motion has {len(motion)} frames, over the {MAX_FRAMES}-frame budget")
    return InteractionResult(motion, [approach, leave], goal, len(approach.motion) - 1)
