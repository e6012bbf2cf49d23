"""Data model for skeleton states, motion sequences, milestones and objects.

Root transforms live on the ground plane. A transform maps a root-local
ground point ``v = (x, z)`` to ``position + R(facing) @ v`` where
``R(f) = [[f_z, f_x], [-f_x, f_z]]`` so that local +z maps onto ``facing``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import skeleton as sk

FPS = 30
GRID_SIDE = 8
GRID_CELLS = GRID_SIDE ** 3
N_CONTACTS = len(sk.CONTACT_JOINTS)
STATE_DIM = 6 * sk.N_JOINTS + 8
MILESTONE_DIM = 8 + N_CONTACTS + STATE_DIM


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


def rotation(facing: np.ndarray) -> np.ndarray:
    """Rotation matrices for ``(..., 2)`` facings, shape ``(..., 2, 2)``."""
    f = np.asarray(facing, dtype=float)
    fx, fz = f[..., 0], f[..., 1]
    return np.stack([np.stack([fz, fx], -1), np.stack([-fx, fz], -1)], -2)


def local_to_world_2d(position, facing, v) -> np.ndarray:
    return np.asarray(position) + np.einsum("...ij,...j->...i", rotation(facing), v)


def world_to_local_2d(position, facing, p) -> np.ndarray:
    return np.einsum("...ji,...j->...i", rotation(facing), np.asarray(p) - position)


def local_to_world_joints(position, facing, joints) -> np.ndarray:
    """Map root-local ``(..., J, 3)`` joints into world space.

    ``position``/``facing`` broadcast against the leading dims of ``joints``.
    """
    joints = np.asarray(joints, dtype=float)
    pos = np.asarray(position, dtype=float)[..., None, :]
    fac = np.asarray(facing, dtype=float)[..., None, :]
    xz = local_to_world_2d(pos, fac, joints[..., [0, 2]])
    return np.stack([xz[..., 0], joints[..., 1], xz[..., 1]], -1)


def world_to_local_joints(position, facing, joints) -> np.ndarray:
    joints = np.asarray(joints, dtype=float)
    pos = np.asarray(position, dtype=float)[..., None, :]
    fac = np.asarray(facing, dtype=float)[..., None, :]
    xz = world_to_local_2d(pos, fac, joints[..., [0, 2]])
    return np.stack([xz[..., 0], joints[..., 1], xz[..., 1]], -1)


@dataclass(frozen=True, eq=False)
class RootTransform:
    position: np.ndarray
    facing: np.ndarray

    def __post_init__(self):
        pos = _frozen(self.position)
        fac = _frozen(self.facing)
        if pos.shape != (2,) or fac.shape != (2,):
            raise ValueError("root position and facing must be 2-vectors")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(fac))):
            raise ValueError("root transform is not finite")
        if abs(np.linalg.norm(fac) - 1.0) > 1e-6:
            raise ValueError(f"facing must be unit length, got norm {np.linalg.norm(fac)}")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "facing", fac)

    @classmethod
    def make(cls, position, facing) -> RootTransform:
        """Build a transform, normalizing ``facing``."""
        f = np.asarray(facing, dtype=float)
        n = np.linalg.norm(f)
        if n < 1e-12:
            raise ValueError("facing has zero length")
        return cls(np.asarray(position, dtype=float), f / n)

    @classmethod
    def identity(cls) -> RootTransform:
        return cls(np.zeros(2), np.array([0.0, 1.0]))

    @classmethod
    def from_heading(cls, position, heading: float) -> RootTransform:
        """``heading`` is the angle from +z towards +x, in radians."""
        return cls(np.asarray(position, dtype=float), np.array([np.sin(heading), np.cos(heading)]))

    @property
    def heading(self) -> float:
        return float(np.arctan2(self.facing[0], self.facing[1]))

    def matrix(self) -> np.ndarray:
        m = np.eye(3)
        m[:2, :2] = rotation(self.facing)
        m[:2, 2] = self.position
        return m

    def apply(self, v) -> np.ndarray:
        return local_to_world_2d(self.position, self.facing, v)

    def to_local(self, p) -> np.ndarray:
        return world_to_local_2d(self.position, self.facing, p)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.facing])

    def allclose(self, other: RootTransform, atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.position, other.position, atol=atol)
                    and np.allclose(self.facing, other.facing, atol=atol))

    def __eq__(self, other):
        if not isinstance(other, RootTransform):
            return NotImplemented
        return bool(np.array_equal(self.position, other.position)
                    and np.array_equal(self.facing, other.facing))

    def __repr__(self):
        return f"RootTransform(position={self.position.tolist()}, facing={self.facing.tolist()})"


def compose(a: RootTransform, b: RootTransform) -> RootTransform:
    """Express ``b`` (given in ``a``'s frame) in ``a``'s parent frame."""
    r = rotation(a.facing)
    facing = r @ b.facing
    return RootTransform(a.position + r @ b.position, facing / np.linalg.norm(facing))


def invert(a: RootTransform) -> RootTransform:
    rt = rotation(a.facing).T
    return RootTransform(-(rt @ a.position), np.array([-a.facing[0], a.facing[1]]))


def relative(frm: RootTransform, to: RootTransform) -> RootTransform:
    """``to`` expressed in the frame of ``frm``."""
    return compose(invert(frm), to)


@dataclass(frozen=True, eq=False)
class Pose:
    joints: np.ndarray
    part_map: tuple = sk.PART_GROUPS

    def __post_init__(self):
        j = _frozen(self.joints)
        if j.ndim != 2 or j.shape[1] != 3:
            raise ValueError(f"pose joints must be (J, 3), got {j.shape}")
        if not np.all(np.isfinite(j)):
            raise ValueError("pose contains non-finite coordinates")
        groups = tuple(tuple(int(i) for i in g) for g in self.part_map)
        flat = [i for g in groups for i in g]
        if any(len(g) == 0 for g in groups) or sorted(flat) != list(range(j.shape[0])):
            raise ValueError("part_map must split all joints into disjoint non-empty groups")
        object.__setattr__(self, "joints", j)
        object.__setattr__(self, "part_map", groups)

    @property
    def n_joints(self) -> int:
        return self.joints.shape[0]

    def part(self, i: int) -> np.ndarray:
        return self.joints[list(self.part_map[i])]

    def flat(self) -> np.ndarray:
        return self.joints.reshape(-1).copy()


@dataclass(frozen=True, eq=False)
class Frame:
    root: RootTransform
    pose: Pose
    contacts: np.ndarray
    action: int

    def __post_init__(self):
        c = _frozen(self.contacts, dtype=bool)
        if c.shape != (N_CONTACTS,):
            raise ValueError(f"expected {N_CONTACTS} contacts, got {c.shape}")
        object.__setattr__(self, "contacts", c)
        object.__setattr__(self, "action", sk.action_index(self.action))

    @property
    def action_onehot(self) -> np.ndarray:
        return sk.one_hot(self.action)

    def world_joints(self) -> np.ndarray:
        return local_to_world_joints(self.root.position, self.root.facing, self.pose.joints)


class MotionSequence:
    """A fixed-fps sequence of frames stored as stacked arrays.

    ``root_pos`` (F, 2), ``root_facing`` (F, 2), ``joints`` (F, J, 3),
    ``contacts`` (F, 5) bool and ``actions`` (F,) action indices.
    """

    def __init__(self, root_pos, root_facing, joints, contacts, actions, fps: int = FPS,
                 joint_names: Sequence[str] = sk.JOINT_NAMES, check_step: bool = True):
        self.root_pos = _frozen(root_pos)
        fac = np.asarray(root_facing, dtype=float)
        self.root_facing = _frozen(fac)
        self.joints = _frozen(joints)
        self.contacts = _frozen(contacts, dtype=bool)
        self.actions = _frozen(actions, dtype=np.int64)
        self.fps = int(fps)
        self.joint_names = tuple(joint_names)
        n = len(self.root_pos)
        if n == 0:
            raise ValueError("motion sequence is empty")
        if (self.root_facing.shape != (n, 2) or self.joints.shape[0] != n or self.joints.ndim != 3
                or self.contacts.shape != (n, N_CONTACTS) or self.actions.shape != (n,)):
            raise ValueError("inconsistent motion array shapes")
        if self.joints.shape[1] != len(self.joint_names):
            raise ValueError("joint_names does not match joint count")
        if np.any(np.abs(np.linalg.norm(self.root_facing, axis=1) - 1.0) > 1e-6):
            raise ValueError("root facings must be unit length")
        if not (np.all(np.isfinite(self.root_pos)) and np.all(np.isfinite(self.joints))):
            raise ValueError("motion contains non-finite values")
        if np.any((self.actions < 0) | (self.actions >= sk.N_ACTIONS)):
            raise ValueError("invalid action index in sequence")
        if check_step and n > 1:
            step = np.linalg.norm(np.diff(self.root_pos, axis=0), axis=1).max()
            if step >= 0.5:
                raise ValueError(f"per-frame root displacement {step:.3f} m exceeds 0.5 m")

    def __len__(self):
        return len(self.root_pos)

    @classmethod
    def from_frames(cls, frames: Sequence[Frame], fps: int = FPS) -> MotionSequence:
        return cls(
            [f.root.position for f in frames],
            [f.root.facing for f in frames],
            [f.pose.joints for f in frames],
            [f.contacts for f in frames],
            [f.action for f in frames],
            fps=fps,
        )

    def frame(self, i: int) -> Frame:
        return Frame(RootTransform(self.root_pos[i], self.root_facing[i]), Pose(self.joints[i]),
                     self.contacts[i], int(self.actions[i]))

    @property
    def frames(self) -> list[Frame]:
        return [self.frame(i) for i in range(len(self))]

    def root(self, i: int) -> RootTransform:
        return RootTransform(self.root_pos[i], self.root_facing[i])

    def world_joints(self) -> np.ndarray:
        return local_to_world_joints(self.root_pos, self.root_facing, self.joints)

    def slice(self, start: int, stop: int) -> MotionSequence:
        return MotionSequence(self.root_pos[start:stop], self.root_facing[start:stop],
                              self.joints[start:stop], self.contacts[start:stop],
                              self.actions[start:stop], self.fps, self.joint_names, check_step=False)

    def equals(self, other: MotionSequence) -> bool:
        return (self.fps == other.fps and len(self) == len(other)
                and all(np.array_equal(getattr(self, k), getattr(other, k))
                        for k in ("root_pos", "root_facing", "joints", "contacts", "actions")))


def concatenate(seqs: Sequence[MotionSequence], shared_boundary: bool = True,
                check_step: bool = True) -> MotionSequence:
    """Join sequences; with ``shared_boundary`` the first frame of each later
    sequence is dropped because it duplicates the previous last frame."""
    parts = [seqs[0]]
    for s in seqs[1:]:
        if shared_boundary:
            if len(s) > 1:
                parts.append(s.slice(1, len(s)))
        else:
            parts.append(s)
    return MotionSequence(
        np.concatenate([p.root_pos for p in parts]),
        np.concatenate([p.root_facing for p in parts]),
        np.concatenate([p.joints for p in parts]),
        np.concatenate([p.contacts for p in parts]),
        np.concatenate([p.actions for p in parts]),
        seqs[0].fps, seqs[0].joint_names, check_step=check_step,
    )


def resample(seq: MotionSequence, n: int) -> MotionSequence:
    """Linearly resample to ``n`` frames keeping both endpoints.

    Facings are interpolated then renormalized; contacts and actions take the
    nearest source frame.
    """
    if n < 2:
        raise ValueError("resample needs n >= 2")
    m = len(seq)
    if n == m:
        return seq
    u = np.linspace(0.0, m - 1, n)
    i0 = np.clip(np.floor(u).astype(int), 0, m - 1)
    i1 = np.minimum(i0 + 1, m - 1)
    w = u - i0
    w[-1] = 0.0
    i0[-1] = m - 1
    i1[-1] = m - 1

    def lerp(a):
        shape = (-1,) + (1,) * (a.ndim - 1)
        return a[i0] * (1 - w).reshape(shape) + a[i1] * w.reshape(shape)

    facing = lerp(seq.root_facing)
    norm = np.linalg.norm(facing, axis=1, keepdims=True)
    facing = np.where(norm > 1e-9, facing / np.maximum(norm, 1e-12), seq.root_facing[i0])
    nearest = np.rint(u).astype(int)
    return MotionSequence(lerp(seq.root_pos), facing, lerp(seq.joints), seq.contacts[nearest],
                          seq.actions[nearest], seq.fps, seq.joint_names, check_step=False)


def character_state(cur: Frame, prev: Frame, fps: int = FPS) -> np.ndarray:
    """Character-state feature ``w`` of length ``6J + 8``.

    Layout: root-local joint positions (3J), joint velocities (3J), world
    root forward (2), root velocity in the current root frame (2), action
    one-hot (4). Velocities are finite differences scaled by ``fps``.
    """
    return character_states(
        np.stack([prev.root.position, cur.root.position]),
        np.stack([prev.root.facing, cur.root.facing]),
        np.stack([prev.pose.joints, cur.pose.joints]),
        np.array([prev.action, cur.action]),
        fps=fps, first_is_static=False,
    )[1]


def character_states(root_pos, root_facing, joints, actions, fps: int = FPS,
                     first_is_static: bool = True) -> np.ndarray:
    """Vectorized :func:`character_state` over a whole sequence.

    Frame ``i`` uses frame ``i-1`` as its predecessor; frame 0 uses itself
    (zero velocity) when ``first_is_static``.
    """
    root_pos = np.asarray(root_pos, dtype=float)
    root_facing = np.asarray(root_facing, dtype=float)
    joints = np.asarray(joints, dtype=float)
    n = len(root_pos)
    prev = np.concatenate([[0], np.arange(n - 1)]) if first_is_static else np.arange(-1, n - 1) % n
    jvel = (joints - joints[prev]) * fps
    rvel = world_to_local_2d(root_pos, root_facing, root_pos[prev])
    rvel = -rvel * fps
    onehot = np.eye(sk.N_ACTIONS)[np.asarray(actions, dtype=int)]
    return np.concatenate([joints.reshape(n, -1), jvel.reshape(n, -1), root_facing, rvel, onehot], axis=1)


def sequence_states(seq: MotionSequence) -> np.ndarray:
    return character_states(seq.root_pos, seq.root_facing, seq.joints, seq.actions, seq.fps)


@dataclass(frozen=True, eq=False)
class Milestone:
    root_from_start: RootTransform
    root_from_goal: RootTransform
    contacts: np.ndarray
    state: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "contacts", _frozen(self.contacts, dtype=bool))
        object.__setattr__(self, "state", _frozen(self.state))
        if self.contacts.shape != (N_CONTACTS,):
            raise ValueError("milestone needs 5 contacts")

    @classmethod
    def from_world(cls, world: RootTransform, start: RootTransform, goal: RootTransform,
                   contacts, state) -> Milestone:
        return cls(relative(start, world), relative(goal, world), contacts, state)

    def world_root(self, start: RootTransform, weight: float = 0.0,
                   goal: RootTransform | None = None) -> RootTransform:
        """Blend of the start-frame and goal-frame decodings; ``weight`` is
        the share given to the goal-frame decoding."""
        from_start = compose(start, self.root_from_start)
        if goal is None or weight == 0.0:
            return from_start
        from_goal = compose(goal, self.root_from_goal)
        if weight == 1.0:
            return from_goal
        return blend_roots(from_start, from_goal, weight)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.root_from_start.vector(), self.root_from_goal.vector(),
                               self.contacts.astype(float), self.state])


def blend_roots(a: RootTransform, b: RootTransform, weight: float) -> RootTransform:
    pos = (1.0 - weight) * a.position + weight * b.position
    fac = (1.0 - weight) * a.facing + weight * b.facing
    if np.linalg.norm(fac) < 1e-9:
        fac = a.facing if weight < 0.5 else b.facing
    return RootTransform.make(pos, fac)


@dataclass(frozen=True, eq=False)
class SceneObject:
    """Box-like object voxelized on an 8x8x8 grid.

    The grid spans ``[-4c, 4c] x [0, 8c] x [-4c, 4c]`` in the object frame
    (cell size ``c``), indexed ``grid[ix, iy, iz]``.
    """

    grid: np.ndarray
    cell_size: float
    frame: RootTransform
    goal_anchors: tuple = field(default_factory=tuple)

    def __post_init__(self):
        g = np.asarray(self.grid)
        if g.size != GRID_CELLS:
            raise ValueError(f"object grid must have {GRID_CELLS} cells, got {g.size}")
        g = g.reshape(GRID_SIDE, GRID_SIDE, GRID_SIDE)
        if not np.all((g == 0) | (g == 1)):
            raise ValueError("grid occupancies must be 0 or 1")
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")
        anchors = tuple((a, sk.action_index(act)) for a, act in self.goal_anchors)
        if not anchors:
            raise ValueError("object needs at least one goal anchor")
        object.__setattr__(self, "grid", _frozen(g, dtype=np.uint8))
        object.__setattr__(self, "cell_size", float(self.cell_size))
        object.__setattr__(self, "goal_anchors", anchors)

    def cell_centers_local(self) -> np.ndarray:
        """(512, 3) cell centres in the object frame, row-major (ix, iy, iz)."""
        c = self.cell_size
        idx = np.arange(GRID_SIDE)
        ix, iy, iz = np.meshgrid(idx, idx, idx, indexing="ij")
        return np.stack([(ix + 0.5) * c - 4 * c, (iy + 0.5) * c, (iz + 0.5) * c - 4 * c],
                        -1).reshape(-1, 3)

    def to_local(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        xz = world_to_local_2d(self.frame.position, self.frame.facing, p[..., [0, 2]])
        return np.stack([xz[..., 0], p[..., 1], xz[..., 1]], -1)

    def contains(self, points) -> np.ndarray:
        """Whether world points lie inside an occupied voxel."""
        q = self.to_local(points)
        c = self.cell_size
        idx = np.floor(np.stack([q[..., 0] / c + 4, q[..., 1] / c, q[..., 2] / c + 4], -1)).astype(int)
        ok = np.all((idx >= 0) & (idx < GRID_SIDE), axis=-1)
        safe = np.where(ok[..., None], idx, 0)
        return ok & (self.grid[safe[..., 0], safe[..., 1], safe[..., 2]] == 1)

    def occupied_boxes_local(self) -> tuple[np.ndarray, np.ndarray]:
        """Lower/upper corners (M, 3) of occupied voxels in the object frame."""
        c = self.cell_size
        ix, iy, iz = np.nonzero(self.grid)
        lo = np.stack([ix * c - 4 * c, iy * c, iz * c - 4 * c], -1).astype(float)
        return lo, lo + c

    def distance(self, points) -> np.ndarray:
        """Euclidean distance from world points to the occupied voxels."""
        q = self.to_local(points)
        lo, hi = self.occupied_boxes_local()
        if len(lo) == 0:
            return np.full(q.shape[:-1], np.inf)
        d = np.maximum(np.maximum(lo - q[..., None, :], q[..., None, :] - hi), 0.0)
        return np.linalg.norm(d, axis=-1).min(axis=-1)

    def top_height(self) -> float:
        iy = np.nonzero(self.grid)[1]
        return float((iy.max() + 1) * self.cell_size) if len(iy) else 0.0

    def anchors_for(self, action) -> list[RootTransform]:
        a = sk.action_index(action)
        return [root for root, act in self.goal_anchors if act == a]


@dataclass(frozen=True, eq=False)
class GoalSpec:
    root: RootTransform
    action: int
    pose: Pose | None = None

    def __post_init__(self):
        object.__setattr__(self, "action", sk.action_index(self.action))

    @property
    def action_onehot(self) -> np.ndarray:
        return sk.one_hot(self.action)

    @property
    def is_interaction(self) -> bool:
        return sk.ACTIONS[self.action] in ("sit", "lie")
