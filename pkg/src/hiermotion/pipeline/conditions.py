"""Condition sets and vector encodings shared by training and generation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import skeleton as sk
from ..core import (N_CONTACTS, STATE_DIM, Frame, GoalSpec, Milestone, Pose, RootTransform,
                    SceneObject, blend_roots, character_states, compose, relative)
from ..sensing import (OBJECT_FEATURE_DIM, Scene, SensorConfig, contact_labels_batch,
                       environment_occupancies, object_features)

POSE_DIM = 3 * sk.N_JOINTS
ROOT_DIM = 4
SEGMENT = 60
SEGMENT_FRAMES = SEGMENT + 1
MILESTONE_COND_NAMES = ("I_s", "I_g", "O_s", "O_g", "g", "s")


@dataclass(frozen=True, eq=False)
class StartSpec:
    root: RootTransform
    action: int
    pose: Pose

    def __post_init__(self):
        object.__setattr__(self, "action", sk.action_index(self.action))
        if not isinstance(self.pose, Pose):
            object.__setattr__(self, "pose", Pose(np.asarray(self.pose, dtype=float)))

    def frame(self, scene: Scene) -> Frame:
        contacts = contact_labels_batch(scene, self.root.position[None], self.root.facing[None],
                                        self.pose.joints[None])[0]
        return Frame(self.root, self.pose, contacts, self.action)


@dataclass(frozen=True, eq=False)
class FrameCondition:
    I: np.ndarray
    O: np.ndarray
    c: np.ndarray
    w: np.ndarray

    def vector(self) -> np.ndarray:
        return np.concatenate([self.I, self.O, np.asarray(self.c, dtype=float), self.w])


def frame_cond_dim(sensor: SensorConfig) -> int:
    return OBJECT_FEATURE_DIM + sensor.n_spheres + N_CONTACTS + STATE_DIM


def empty_object(at: RootTransform, cell_size: float = 0.25) -> SceneObject:
    """Object with no occupied cells, used as the target of a leaving leg."""
    return SceneObject(np.zeros((8, 8, 8), dtype=np.uint8), cell_size, at, ((at, "idle"),))


def leg_object(scene: Scene, goal: GoalSpec) -> SceneObject:
    """The object a leg is conditioned on: the nearest scene object for an
    interaction goal, an empty grid at the goal otherwise."""
    if not goal.is_interaction or not scene.objects:
        return empty_object(goal.root)
    d = [np.linalg.norm(o.frame.position - goal.root.position) for o in scene.objects]
    return scene.objects[int(np.argmin(d))]


def goal_pose_of(goal: GoalSpec) -> np.ndarray:
    if goal.pose is not None:
        return goal.pose.joints
    return sk.rest_pose()


def frame_conditions(scene: Scene, obj: SceneObject, positions, facings, contacts, states,
                     sensor: SensorConfig) -> np.ndarray:
    """(F, frame_cond_dim) per-frame conditions computed from given roots."""
    positions = np.asarray(positions, dtype=float)
    facings = np.asarray(facings, dtype=float)
    I = object_features(obj, positions, facings)
    O = environment_occupancies(scene, positions, facings, sensor)
    return np.concatenate([I, O, np.asarray(contacts, dtype=float), np.asarray(states, dtype=float)], 1)


def build_milestone_condition(start: StartSpec, goal: GoalSpec, scene: Scene,
                              obj: SceneObject | None = None,
                              sensor: SensorConfig = SensorConfig()) -> dict:
    """Condition tokens ``I_s, I_g, O_s, O_g, g, s`` for the milestone model."""
    obj = obj if obj is not None else leg_object(scene, goal)
    roots = np.stack([start.root.position, goal.root.position])
    facings = np.stack([start.root.facing, goal.root.facing])
    I = object_features(obj, roots, facings)
    O = environment_occupancies(scene, roots, facings, sensor)
    g = np.concatenate([relative(start.root, goal.root).vector(), sk.one_hot(goal.action),
                        goal_pose_of(goal).reshape(-1)])
    s = np.concatenate([sk.one_hot(start.action), start.pose.joints.reshape(-1)])
    return {"I_s": I[0], "I_g": I[1], "O_s": O[0], "O_g": O[1], "g": g, "s": s}


def milestone_cond_dims(sensor: SensorConfig) -> dict:
    return {"I_s": OBJECT_FEATURE_DIM, "I_g": OBJECT_FEATURE_DIM, "O_s": sensor.n_spheres,
            "O_g": sensor.n_spheres, "g": ROOT_DIM + sk.N_ACTIONS + POSE_DIM, "s": sk.N_ACTIONS + POSE_DIM}


def pose_cond_dims() -> dict:
    return {"theta_a": POSE_DIM, "theta_b": POSE_DIM}


def trajectory_cond_dims(sensor: SensorConfig) -> dict:
    m = N_CONTACTS + STATE_DIM
    return {"I_a": OBJECT_FEATURE_DIM, "I_b": OBJECT_FEATURE_DIM, "O_a": sensor.n_spheres,
            "O_b": sensor.n_spheres, "m_a": m, "m_b": m, "t": ROOT_DIM}


def blend_weights(n: int) -> np.ndarray:
    """Linear share of the goal-side decoding for ``n`` items; 1 when n = 1."""
    if n < 1:
        raise ValueError("need at least one item")
    if n == 1:
        return np.ones(1)
    return np.arange(n) / (n - 1)


def _safe_root(v) -> RootTransform:
    v = np.asarray(v, dtype=float)
    f = v[2:4] if np.linalg.norm(v[2:4]) > 1e-9 else np.array([0.0, 1.0])
    return RootTransform.make(v[:2], f)


def encode_bidirectional(positions, facings, a: RootTransform, b: RootTransform, contacts,
                         states) -> np.ndarray:
    """Rows ``[root from a (4), root from b (4), contacts (5), state]``."""
    positions = np.asarray(positions, dtype=float)
    facings = np.asarray(facings, dtype=float)
    rows = []
    for p, f in zip(positions, facings):
        r = RootTransform(p, f)
        rows.append(np.concatenate([relative(a, r).vector(), relative(b, r).vector()]))
    return np.concatenate([np.array(rows), np.asarray(contacts, dtype=float), np.asarray(states)], 1)


def decode_bidirectional(vectors, a: RootTransform, b: RootTransform,
                         weights) -> list[RootTransform]:
    """Blend of the a-frame and b-frame root decodings per row."""
    out = []
    for v, w in zip(np.asarray(vectors), weights):
        from_a = compose(a, _safe_root(v[0:4]))
        from_b = compose(b, _safe_root(v[4:8]))
        if w == 0.0:
            out.append(from_a)
        elif w == 1.0:
            out.append(from_b)
        else:
            out.append(blend_roots(from_a, from_b, float(w)))
    return out


def to_milestones(vectors, start: RootTransform, goal: RootTransform) -> list[Milestone]:
    v = np.asarray(vectors)
    return [Milestone(_safe_root(r[0:4]), _safe_root(r[4:8]), r[8:13] > 0.5, r[13:]) for r in v]


def states_for(positions, facings, joints, actions, prev=None) -> np.ndarray:
    """Character states with an optional explicit predecessor frame
    ``(position, facing, joints, action)`` for the first row."""
    if prev is None:
        return character_states(positions, facings, joints, actions)
    p, f, j, a = prev
    full = character_states(np.concatenate([[p], positions]), np.concatenate([[f], facings]),
                            np.concatenate([[j], joints]), np.concatenate([[a], actions]))
    return full[1:]
