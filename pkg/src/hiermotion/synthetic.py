"""Procedural walk-approach-sit/lie-leave sequences in box scenes.

Each record holds one scene and one motion: an approach leg (walk along a
quadratic Bezier path, turn, sit or lie down, hold) followed by a leave leg
(stand up, walk to an endpoint) sharing the interaction frame. Every leg has
``61 + 60k`` frames; walking speed is retimed so that this holds exactly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import skeleton as sk
from .core import (FPS, GoalSpec, MotionSequence, Pose, RootTransform, SceneObject, compose, concatenate,
                   local_to_world_joints, world_to_local_joints)
from .motion_io import dumps, load_motion, load_scene, motion_to_dict, scene_to_dict
from .sensing import Scene, contact_labels_batch

SEGMENT = 60
N_TURN = 15
N_MOVE = 36
THIGH, SHIN = 0.43, 0.44
PATH_CLEARANCE = 0.55
APPROACH_GAP = 0.6


@dataclass(frozen=True)
class GenConfig:
    seed: int = 0
    n_sequences: int = 100
    arena_half: float = 4.0
    object_width_range: tuple = (0.4, 1.2)
    object_depth_range: tuple = (0.4, 2.0)
    seat_height_range: tuple = (0.4, 0.5)
    curvature_range: tuple = (0.0, 0.5)
    gait_period: int = 30
    blend_frames: int = 61
    walk_speed: float = 1.0
    lie_fraction: float = 0.3

    def __post_init__(self):
        checks = {
            "n_sequences": self.n_sequences > 0,
            "arena_half": self.arena_half > 2.0,
            "gait_period": self.gait_period > 1,
            "blend_frames": self.blend_frames >= N_TURN + N_MOVE + 1,
            "walk_speed": self.walk_speed > 0,
            "lie_fraction": 0.0 <= self.lie_fraction <= 1.0,
            "seed": self.seed >= 0,
        }
        for name in ("object_width_range", "object_depth_range", "seat_height_range", "curvature_range"):
            lo, hi = getattr(self, name)
            checks[name] = 0 <= lo <= hi
        bad = [k for k, ok in checks.items() if not ok]
        if bad:
            raise ValueError(f"invalid generator config: {', '.join(bad)}")


def voxelize_box(width: float, height: float, depth: float, cell_size: float) -> np.ndarray:
    """Occupancy grid of a box centred on the object origin and resting on
    the ground; a cell is occupied when its centre lies inside the box."""
    c = cell_size
    centers = (np.arange(8) + 0.5) * c
    x = centers - 4 * c
    inside_x = np.abs(x) <= width / 2 + 1e-9
    inside_y = centers <= height + 1e-9
    inside_z = np.abs(x) <= depth / 2 + 1e-9
    return (inside_x[:, None, None] & inside_y[None, :, None] & inside_z[None, None, :]).astype(np.uint8)


def box_dims(obj: SceneObject) -> tuple[float, float, float]:
    ix, iy, iz = np.nonzero(obj.grid)
    c = obj.cell_size
    return ((ix.max() - ix.min() + 1) * c, (iy.max() + 1) * c, (iz.max() - iz.min() + 1) * c)


def make_object(frame: RootTransform, width: float, height: float, depth: float,
                cell_size: float) -> SceneObject:
    grid = voxelize_box(width, height, depth, cell_size)
    sit = compose(frame, RootTransform(np.array([0.0, depth / 2 - 0.15]), np.array([0.0, 1.0])))
    lie = compose(frame, RootTransform(np.array([0.0, 0.1]), np.array([0.0, 1.0])))
    return SceneObject(grid, cell_size, frame, ((sit, "sit"), (lie, "lie")))


def make_scene(cfg: GenConfig, rng: np.random.Generator) -> Scene:
    """One box object at a uniform position and heading in the arena."""
    c = rng.uniform(*cfg.seat_height_range) / 2
    nx = 2 * int(rng.integers(max(1, round(cfg.object_width_range[0] / (2 * c))),
                              max(1, round(cfg.object_width_range[1] / (2 * c))) + 1))
    nz = 2 * int(rng.integers(max(1, round(cfg.object_depth_range[0] / (2 * c))),
                              max(1, round(cfg.object_depth_range[1] / (2 * c))) + 1))
    nx, nz = min(nx, 8), min(nz, 8)
    half = cfg.arena_half - 1.5
    frame = RootTransform.from_heading(rng.uniform(-half, half, 2), rng.uniform(-np.pi, np.pi))
    obj = make_object(frame, nx * c, 2 * c, nz * c, c)
    a = cfg.arena_half
    return Scene((obj,), (-a, -a, a, a))


def pre_goal(obj: SceneObject, action) -> RootTransform:
    """Standing spot next to the object from which the sit/lie blend starts."""
    a = sk.ACTIONS[sk.action_index(action)]
    anchor = obj.anchors_for(a)[0]
    if a == "sit":
        return RootTransform(anchor.apply(np.array([0.0, 0.75])), anchor.facing)
    width = box_dims(obj)[0]
    return RootTransform(anchor.apply(np.array([-(width / 2 + APPROACH_GAP), 0.0])), anchor.facing)


def goal_pose_for(obj: SceneObject, action, rng: np.random.Generator | None) -> np.ndarray:
    a = sk.ACTIONS[sk.action_index(action)]
    h = obj.top_height()
    if rng is None:
        return sk.canonical_goal_pose(a, h)
    if a == "sit":
        return sk.sit_pose(h, rng.choice(sk.SIT_TORSO), rng.choice(sk.SIT_ARMS), rng.choice(sk.SIT_ARMS),
                           rng.choice(sk.SIT_LEGS))
    if a == "lie":
        return sk.lie_pose(h, rng.choice(sk.LIE_ARMS), rng.choice(sk.LIE_LEGS), float(rng.uniform(0, 0.08)))
    return sk.rest_pose()


def _footprint_distance(obj: SceneObject, pts2d: np.ndarray) -> np.ndarray:
    """Ground-plane distance from points to the object's occupied footprint."""
    c = obj.cell_size
    ix, iz = np.nonzero(obj.grid.any(axis=1))
    lo = np.stack([ix * c - 4 * c, iz * c - 4 * c], -1)
    q = obj.frame.to_local(np.asarray(pts2d, dtype=float))
    d = np.maximum(np.maximum(lo - q[:, None], q[:, None] - (lo + c)), 0.0)
    return np.sqrt((d ** 2).sum(-1)).min(-1)


class _ArcPath:
    def __init__(self, p0, ctrl, p2, n_dense: int = 2048):
        u = np.linspace(0.0, 1.0, n_dense)[:, None]
        self.points = (1 - u) ** 2 * p0 + 2 * (1 - u) * u * ctrl + u ** 2 * p2
        self.points[0], self.points[-1] = p0, p2
        seg = np.linalg.norm(np.diff(self.points, axis=0), axis=1)
        self.s = np.concatenate([[0.0], np.cumsum(seg)])
        self.length = float(self.s[-1])

    def at(self, s) -> tuple[np.ndarray, np.ndarray]:
        s = np.clip(np.asarray(s, dtype=float), 0, self.length)
        x = np.interp(s, self.s, self.points[:, 0])
        z = np.interp(s, self.s, self.points[:, 1])
        pos = np.stack([x, z], -1)
        ds = 1e-3 * max(self.length, 1e-6)
        ahead = np.stack([np.interp(np.minimum(s + ds, self.length), self.s, self.points[:, 0]),
                          np.interp(np.minimum(s + ds, self.length), self.s, self.points[:, 1])], -1)
        behind = np.stack([np.interp(np.maximum(s - ds, 0), self.s, self.points[:, 0]),
                           np.interp(np.maximum(s - ds, 0), self.s, self.points[:, 1])], -1)
        tangent = ahead - behind
        return pos, tangent / np.linalg.norm(tangent, axis=-1, keepdims=True)


def sample_path(scene: Scene, start: np.ndarray, end: np.ndarray, cfg: GenConfig,
                rng: np.random.Generator, tries: int = 1000) -> _ArcPath:
    """Quadratic Bezier from ``start`` to ``end`` avoiding the objects."""
    d = end - start
    dist = np.linalg.norm(d)
    perp = np.array([-d[1], d[0]]) / max(dist, 1e-9)
    xmin, zmin, xmax, zmax = scene.bounds
    lo, hi = cfg.curvature_range
    for i in range(tries):
        # widen the bend gradually when the object blocks the direct route
        widen = 1.5 * i / tries
        k = rng.uniform(lo, hi + widen) * rng.choice([-1.0, 1.0])
        ctrl = start + 0.5 * d + k * dist * perp
        path = _ArcPath(start, ctrl, end)
        pts = path.points[::16]
        if np.any(pts[:, 0] < xmin) or np.any(pts[:, 0] > xmax) or np.any(pts[:, 1] < zmin) \
                or np.any(pts[:, 1] > zmax):
            continue
        if all(_footprint_distance(o, pts).min() >= PATH_CLEARANCE for o in scene.objects):
            return path
    raise RuntimeError(f"no collision-free path found after {tries} tries")


def _two_bone_knee(hip, ankle, forward):
    v = ankle - hip
    d = np.linalg.norm(v, axis=-1, keepdims=True)
    u = v / np.maximum(d, 1e-9)
    a = (THIGH ** 2 - SHIN ** 2 + d ** 2) / (2 * np.maximum(d, 1e-9))
    h = np.sqrt(np.clip(THIGH ** 2 - a ** 2, 0.0, None))
    n = forward - (forward * u).sum(-1, keepdims=True) * u
    n = n / np.maximum(np.linalg.norm(n, axis=-1, keepdims=True), 1e-9)
    straight = hip + u * THIGH / (THIGH + SHIN) * d
    bent = hip + u * a + h * n
    return np.where(d >= THIGH + SHIN, straight, bent)


def walk_cycle(pos: np.ndarray, facing: np.ndarray, period: int, phase0: float = 0.0) -> np.ndarray:
    """Root-local joints for a walk along the given roots.

    Feet are pinned in world space during stance and follow an eased arc
    during swing; knees come from a two-bone solve; arms swing opposite to
    the legs.
    """
    n = len(pos)
    frames = np.arange(n, dtype=float)
    idx = np.arange(n, dtype=float)
    left = np.stack([facing[:, 1], -facing[:, 0]], -1)
    fwd3 = np.stack([facing[:, 0], np.zeros(n), facing[:, 1]], -1)

    def interp(arr, t):
        t = np.clip(t, 0, n - 1)
        return np.stack([np.interp(t, idx, arr[:, k]) for k in range(arr.shape[1])], -1)

    feet = {}
    for side, shift in ((1.0, 0.0), (-1.0, 0.5)):
        tau = (frames + phase0) / period - shift
        k = np.floor(tau)
        frac = tau - k

        def plant(kk):
            t = (kk + 0.25 + shift) * period - phase0
            lv = interp(left, t)
            lv = lv / np.linalg.norm(lv, axis=-1, keepdims=True)
            return interp(pos, t) + 0.1 * side * lv

        p_now, p_next = plant(k), plant(k + 1)
        swing = frac >= 0.5
        s = np.where(swing, (frac - 0.5) / 0.5, 0.0)
        ease = (1 - np.cos(np.pi * s)) / 2
        xz = p_now + (p_next - p_now) * ease[:, None]
        y = sk.ANKLE_HEIGHT + 0.1 * np.sin(np.pi * s)
        feet[side] = np.stack([xz[:, 0], y, xz[:, 1]], -1)

    u = ((frames + phase0) / period) % 1.0
    pelvis_y = sk.PELVIS_HEIGHT - 0.02 + 0.02 * np.cos(4 * np.pi * u)
    world = np.zeros((n, sk.N_JOINTS, 3))
    local = np.zeros((n, sk.N_JOINTS, 3))
    local[:, 0] = np.stack([np.zeros(n), pelvis_y, np.zeros(n)], -1)
    local[:, 1] = np.stack([np.zeros(n), pelvis_y + 0.25, np.zeros(n)], -1)
    local[:, 2] = np.stack([np.zeros(n), pelvis_y + 0.65, np.zeros(n)], -1)
    for hip, side in ((9, 1.0), (12, -1.0)):
        local[:, hip] = np.stack([np.full(n, 0.1 * side), pelvis_y - 0.05, np.zeros(n)], -1)
    world[:] = local_to_world_joints(pos, facing, local)
    for hip, side in ((9, 1.0), (12, -1.0)):
        world[:, hip + 2] = feet[side]
        world[:, hip + 1] = _two_bone_knee(world[:, hip], feet[side], fwd3)
    out = world_to_local_joints(pos, facing, world)
    for sh, side, ankle in ((3, 1.0, 11), (6, -1.0, 14)):
        sy = pelvis_y + 0.5
        swing_z = -0.6 * out[:, ankle, 2]
        out[:, sh] = np.stack([np.full(n, 0.18 * side), sy, np.zeros(n)], -1)
        out[:, sh + 1] = np.stack([np.full(n, 0.20 * side), sy - 0.28, 0.45 * swing_z], -1)
        out[:, sh + 2] = np.stack([np.full(n, 0.20 * side), sy - 0.53 + 0.3 * np.abs(swing_z), swing_z], -1)
    return out


def _smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3 - 2 * s)


def _lerp_heading(f0, f1, s):
    h0 = np.arctan2(f0[0], f0[1])
    h1 = np.arctan2(f1[0], f1[1])
    dh = (h1 - h0 + np.pi) % (2 * np.pi) - np.pi
    h = h0 + dh * s
    return np.stack([np.sin(h), np.cos(h)], -1)


def _clear_lift(scene: Scene, pos, facing, local, margin: float = 0.03) -> np.ndarray:
    """Raise whole-body poses that come within ``margin`` of an object."""
    out = local.copy()
    world = local_to_world_joints(pos, facing, out)
    for obj in scene.objects:
        top = obj.top_height()
        near = obj.distance(world) < margin
        lift = np.where(near, top + margin - world[..., 1], 0.0).max(-1)
        out[..., 1] += np.maximum(lift, 0.0)[:, None]
        world[..., 1] += np.maximum(lift, 0.0)[:, None]
    return out


def interaction_blend(scene: Scene, obj: SceneObject, action, goal_pose: np.ndarray,
                      link_root: RootTransform, link_pose: np.ndarray, blend_frames: int):
    """Turn at the link root, move onto the anchor while blending into the
    goal pose, then hold. Returns (pos, facing, joints, actions)."""
    a = sk.action_index(action)
    anchor = obj.anchors_for(a)[0]
    n_hold = blend_frames - N_TURN - N_MOVE
    pos, fac, joints, acts = [], [], [], []
    rest = sk.rest_pose()
    for b in range(N_TURN):
        s = _smoothstep((b + 1) / N_TURN)
        pos.append(link_root.position)
        fac.append(_lerp_heading(link_root.facing, anchor.facing, s))
        joints.append((1 - s) * link_pose + s * rest)
        acts.append(sk.action_index("walk"))
    for b in range(N_MOVE):
        s = _smoothstep((b + 1) / N_MOVE)
        pos.append((1 - s) * link_root.position + s * anchor.position)
        fac.append(anchor.facing)
        joints.append((1 - s) * rest + s * goal_pose)
        acts.append(a if b == N_MOVE - 1 else sk.action_index("walk"))
    for _ in range(n_hold):
        pos.append(anchor.position)
        fac.append(anchor.facing)
        joints.append(goal_pose)
        acts.append(a)
    pos, fac, joints = np.array(pos), np.array(fac), np.array(joints)
    joints[:-(n_hold + 1)] = _clear_lift(scene, pos[:-(n_hold + 1)], fac[:-(n_hold + 1)],
                                         joints[:-(n_hold + 1)])
    return pos, fac, joints, np.array(acts)


def _walk_frames(path: _ArcPath, n_walk: int, cfg: GenConfig, offset: float):
    s = path.length * (np.arange(n_walk) + offset) / n_walk
    pos, fac = path.at(s)
    return pos, fac, walk_cycle(pos, fac, cfg.gait_period)


def walk_frame_count(length: float, cfg: GenConfig) -> int:
    return SEGMENT * max(1, int(round(length * FPS / (cfg.walk_speed * SEGMENT))))


def _finish(scene, pos, fac, joints, acts) -> MotionSequence:
    contacts = contact_labels_batch(scene, pos, fac, joints)
    return MotionSequence(pos, fac, joints, contacts, acts)


def make_sequence(scene: Scene, start, action, rng: np.random.Generator, cfg: GenConfig = GenConfig(),
                  goal_pose: np.ndarray | None = None) -> MotionSequence:
    """Approach leg: walk from ``start`` to the object, then sit or lie."""
    obj = scene.objects[0]
    start_pos = start.position if isinstance(start, RootTransform) else np.asarray(start, dtype=float)
    anchor = obj.anchors_for(action)[0]
    if goal_pose is None:
        goal_pose = goal_pose_for(obj, action, rng)
    if np.allclose(start_pos, anchor.position, atol=1e-9):
        facing = start.facing if isinstance(start, RootTransform) else anchor.facing
        link = RootTransform(anchor.position, facing)
        parts = interaction_blend(scene, obj, action, goal_pose, link, sk.rest_pose(), cfg.blend_frames)
        return _finish(scene, *parts)
    pg = pre_goal(obj, action)
    path = sample_path(scene, start_pos, pg.position, cfg, rng)
    n_walk = walk_frame_count(path.length, cfg)
    wpos, wfac, wjoints = _walk_frames(path, n_walk, cfg, 0.0)
    link = RootTransform(pg.position, wfac[-1])
    bpos, bfac, bjoints, bacts = interaction_blend(scene, obj, action, goal_pose, link, wjoints[-1],
                                                   cfg.blend_frames)
    pos = np.concatenate([wpos, bpos])
    fac = np.concatenate([wfac, bfac])
    joints = np.concatenate([wjoints, bjoints])
    acts = np.concatenate([np.full(n_walk, sk.action_index("walk")), bacts])
    return _finish(scene, pos, fac, joints, acts)


def make_leave_sequence(scene: Scene, action, goal_pose: np.ndarray, endpoint: np.ndarray,
                        rng: np.random.Generator, cfg: GenConfig = GenConfig()) -> MotionSequence:
    """Leave leg: stand up from the anchor and walk to ``endpoint``."""
    obj = scene.objects[0]
    pg = pre_goal(obj, action)
    path = sample_path(scene, pg.position, np.asarray(endpoint, dtype=float), cfg, rng)
    n_walk = walk_frame_count(path.length, cfg)
    wpos, wfac, wjoints = _walk_frames(path, n_walk, cfg, 1.0)
    link = RootTransform(pg.position, wfac[0])
    bpos, bfac, bjoints, bacts = interaction_blend(scene, obj, action, goal_pose, link, wjoints[0],
                                                   cfg.blend_frames)
    pos = np.concatenate([bpos[::-1], wpos])
    fac = np.concatenate([bfac[::-1], wfac])
    joints = np.concatenate([bjoints[::-1], wjoints])
    acts = np.concatenate([bacts[::-1], np.full(n_walk, sk.action_index("walk"))])
    acts[-1] = sk.action_index("idle")
    return _finish(scene, pos, fac, joints, acts)


def _free_point(scene: Scene, rng: np.random.Generator, avoid: list, min_dist: float, margin: float = 0.5):
    xmin, zmin, xmax, zmax = scene.bounds
    for _ in range(1000):
        p = rng.uniform([xmin + margin, zmin + margin], [xmax - margin, zmax - margin])
        if any(_footprint_distance(o, p[None])[0] < 1.0 for o in scene.objects):
            continue
        if all(np.linalg.norm(p - q) >= min_dist for q in avoid):
            return p
    raise RuntimeError("could not place a free point in the arena")


@dataclass
class Record:
    scene: Scene
    motion: MotionSequence
    boundary: int
    goal: GoalSpec
    endpoint: RootTransform

    def approach(self) -> MotionSequence:
        return self.motion.slice(0, self.boundary + 1)

    def leave(self) -> MotionSequence:
        return self.motion.slice(self.boundary, len(self.motion))


def make_record(cfg: GenConfig, rng: np.random.Generator) -> Record:
    for _ in range(100):
        scene = make_scene(cfg, rng)
        obj = scene.objects[0]
        action = "lie" if rng.random() < cfg.lie_fraction else "sit"
        pg = pre_goal(obj, action).position
        try:
            start = _free_point(scene, rng, [pg], 2.0)
            endpoint = _free_point(scene, rng, [pg], 2.0)
            goal_pose = goal_pose_for(obj, action, rng)
            approach = make_sequence(scene, start, action, rng, cfg, goal_pose)
            leave = make_leave_sequence(scene, action, goal_pose, endpoint, rng, cfg)
        except RuntimeError:
            continue
        motion = concatenate([approach, leave])
        goal = GoalSpec(obj.anchors_for(action)[0], action, Pose(goal_pose))
        return Record(scene, motion, len(approach) - 1, goal, leave.root(len(leave) - 1))
    raise RuntimeError("failed to generate a record")


def _root_json(r: RootTransform) -> dict:
    return {"pos": r.position.tolist(), "facing": r.facing.tolist()}


def record_meta(rec: Record, rid: str) -> dict:
    return {
        "id": rid,
        "motion": f"{rid}.motion.json",
        "scene": f"{rid}.scene.json",
        "boundary": rec.boundary,
        "goal": {"root": _root_json(rec.goal.root), "action": sk.ACTIONS[rec.goal.action],
                 "pose": rec.goal.pose.joints.tolist()},
        "endpoint": _root_json(rec.endpoint),
        "length": len(rec.motion),
    }


def split_ids(n: int) -> tuple[list[int], list[int]]:
    n_val = n // 10
    return list(range(n - n_val)), list(range(n - n_val, n))


def generate_records(cfg: GenConfig) -> list[Record]:
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.n_sequences)
    return [make_record(cfg, np.random.default_rng(s)) for s in streams]


def make_dataset(cfg: GenConfig, out_dir) -> str:
    """Write the dataset directory and return the manifest's sha256."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = generate_records(cfg)
    metas = []
    for i, rec in enumerate(records):
        rid = f"seq_{i:05d}"
        meta = record_meta(rec, rid)
        (out / meta["motion"]).write_text(dumps(motion_to_dict(rec.motion)))
        (out / meta["scene"]).write_text(dumps(scene_to_dict(rec.scene)))
        meta["sha256"] = hashlib.sha256((out / meta["motion"]).read_bytes()).hexdigest()
        metas.append(meta)
    train, val = split_ids(len(records))
    manifest = {
        "kind": "dataset",
        "seed": cfg.seed,
        "config": asdict(cfg),
        "splits": {"train": [metas[i]["id"] for i in train], "validation": [metas[i]["id"] for i in val]},
        "records": metas,
    }
    blob = json.dumps(manifest, sort_keys=True, indent=1).encode()
    (out / "manifest.json").write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def _root_from(d: dict) -> RootTransform:
    return RootTransform.make(d["pos"], d["facing"])


def load_manifest(path) -> dict:
    p = Path(path)
    mf = p / "manifest.json" if p.is_dir() else p
    if not mf.exists():
        raise FileNotFoundError(f"no manifest.json in {path}")
    return json.loads(mf.read_text())


def load_record(root, meta: dict) -> Record:
    root = Path(root)
    goal = meta["goal"]
    pose = Pose(np.asarray(goal["pose"], dtype=float)) if goal.get("pose") is not None else None
    return Record(load_scene(root / meta["scene"]), load_motion(root / meta["motion"]), int(meta["boundary"]),
                  GoalSpec(_root_from(goal["root"]), goal["action"], pose), _root_from(meta["endpoint"]))


def load_dataset(path, split: str | None = None) -> list[Record]:
    """Records of a dataset (or generated motion set) directory, optionally
    restricted to one split."""
    manifest = load_manifest(path)
    metas = manifest["records"]
    if split is not None:
        splits = manifest.get("splits", {})
        if split not in splits:
            raise KeyError(f"dataset has no split {split!r}")
        keep = set(splits[split])
        metas = [m for m in metas if m["id"] in keep]
    return [load_record(path, m) for m in metas]
