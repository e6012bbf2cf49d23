"""Evaluation metrics and the grid A* planner used as a trajectory baseline."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from . import skeleton as sk
from .core import GoalSpec, MotionSequence, RootTransform, resample, sequence_states
from .sensing import Scene

UNREACHABLE = math.inf
PENETRATION_SHELL = 0.02
GROUND_HEIGHT = 0.05


def _as_samples(x, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError(f"{name} must be a (n, d) array of samples")
    return a


def _sqrt_trace_product(a: np.ndarray, b: np.ndarray) -> float:
    """``Tr((A B)^{1/2})`` for symmetric PSD ``A``, ``B`` via
    eigendecompositions of ``A^{1/2} B A^{1/2}``."""
    wa, va = np.linalg.eigh((a + a.T) / 2)
    ra = (va * np.sqrt(np.clip(wa, 0.0, None))) @ va.T
    m = ra @ b @ ra
    w = np.linalg.eigvalsh((m + m.T) / 2)
    return float(np.sqrt(np.clip(w, 0.0, None)).sum())


def frechet_distance(feats_a, feats_b, eps: float = 1e-6) -> float:
    """Frechet distance between Gaussians fitted to two sample sets.

    Covariances get ``eps * I``. When the dimension exceeds the total
    sample count the computation is carried out exactly in the span of the
    centred samples, where both covariances live.
    """
    a = _as_samples(feats_a, "feats_a")
    b = _as_samples(feats_b, "feats_b")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"feature dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    if len(a) < 2 or len(b) < 2:
        raise ValueError("frechet_distance needs at least 2 samples per set")
    d = a.shape[1]
    mu_a, mu_b = a.mean(0), b.mean(0)
    xa = (a - mu_a) / np.sqrt(len(a) - 1)
    xb = (b - mu_b) / np.sqrt(len(b) - 1)
    mean_term = float(((mu_a - mu_b) ** 2).sum())
    if d <= len(a) + len(b):
        ca = xa.T @ xa + eps * np.eye(d)
        cb = xb.T @ xb + eps * np.eye(d)
        fd = mean_term + np.trace(ca) + np.trace(cb) - 2 * _sqrt_trace_product(ca, cb)
    else:
        u, s, _ = np.linalg.svd(np.concatenate([xa, xb]).T, full_matrices=False)
        q = u[:, s > s.max() * 1e-12] if s.max() > 0 else u[:, :0]
        r = q.shape[1]
        pa, pb = xa @ q, xb @ q
        ca = pa.T @ pa + eps * np.eye(r)
        cb = pb.T @ pb + eps * np.eye(r)
        # the orthogonal complement contributes eps + eps - 2 eps = 0
        fd = mean_term + np.trace(ca) + np.trace(cb) - 2 * _sqrt_trace_product(ca, cb)
    fd = float(fd)
    if not math.isfinite(fd):
        raise FloatingPointError("Frechet distance is not finite")
    return max(fd, 0.0)


def apd(samples) -> float:
    """Mean L2 distance over all unordered sample pairs."""
    x = _as_samples(samples, "samples")
    n = len(x)
    if n < 2:
        raise ValueError("APD needs at least 2 samples")
    d = np.concatenate([np.linalg.norm(x[i + 1:] - x[i], axis=1) for i in range(n - 1)])
    return float(d.mean())


def interaction_frame(seq: MotionSequence, action) -> int | None:
    """First frame whose action matches and whose root speed is below 0.05 m/s."""
    a = sk.action_index(action)
    if len(seq) < 2:
        return 0 if seq.actions[0] == a else None
    step = np.linalg.norm(np.diff(seq.root_pos, axis=0), axis=1) * seq.fps
    speed = np.concatenate([step, step[-1:]])
    hits = np.nonzero((seq.actions == a) & (speed < 0.05))[0]
    return int(hits[0]) if len(hits) else None


def goal_errors(seq: MotionSequence, goal: GoalSpec) -> tuple[float, float]:
    """(position error in m, facing error in degrees) at the interaction frame;
    ``(inf, inf)`` when the goal is never reached."""
    i = interaction_frame(seq, goal.action)
    if i is None:
        return UNREACHABLE, UNREACHABLE
    pe = float(np.linalg.norm(seq.root_pos[i] - goal.root.position))
    cos = float(np.clip(np.dot(seq.root_facing[i], goal.root.facing), -1.0, 1.0))
    return pe, math.degrees(math.acos(cos))


_PROBES = np.stack(np.meshgrid([-1, 0, 1], [-1, 0, 1], [-1, 0, 1], indexing="ij"), -1).reshape(-1, 3)


def deep_inside(scene: Scene, points, shell: float = PENETRATION_SHELL) -> np.ndarray:
    """Points inside the scene by more than ``shell``: the point and its 26
    cube-neighbour probes at distance ``shell`` per axis are all occupied."""
    p = np.asarray(points, dtype=float)
    probes = p[..., None, :] + shell * _PROBES
    return scene.contains(probes).all(-1)


def penetration_ratio(seq: MotionSequence, scene: Scene, shell: float = PENETRATION_SHELL) -> float:
    """Percentage of frames with a joint penetrating the scene beyond the shell."""
    if not scene.objects:
        return 0.0
    hit = deep_inside(scene, seq.world_joints(), shell).any(-1)
    return float(100.0 * hit.mean())


def foot_sliding(seq: MotionSequence, height: float = GROUND_HEIGHT) -> float:
    """Mean horizontal foot displacement (cm/frame) over grounded frames.

    Each foot is averaged over the frames where it is below ``height``;
    the result is the mean over feet that touch the ground at all.
    """
    if len(seq) < 2:
        raise ValueError("foot sliding needs at least 2 frames")
    w = seq.world_joints()
    per_foot = []
    for j in sk.FEET:
        grounded = w[:-1, j, 1] < height
        if grounded.any():
            disp = np.linalg.norm(w[1:, j][:, [0, 2]] - w[:-1, j][:, [0, 2]], axis=1)
            per_foot.append(disp[grounded].mean() * 100.0)
    return float(np.mean(per_foot)) if per_foot else 0.0


@dataclass(frozen=True)
class FeatureExtractor:
    """Fixed-size per-sequence features.

    ``motion``: character states resampled to ``length`` frames, flattened.
    ``pose``: root-local joints at the interaction frame (``action`` given).
    ``trajectory``: root positions resampled to ``length`` points.
    """

    mode: str = "motion"
    length: int = 64
    action: int | None = None

    def __post_init__(self):
        if self.mode not in ("motion", "pose", "trajectory"):
            raise ValueError(f"unknown feature mode {self.mode!r}")
        if self.length < 2:
            raise ValueError("feature length must be >= 2")

    @property
    def dim(self) -> int:
        if self.mode == "motion":
            return self.length * (6 * sk.N_JOINTS + 8)
        if self.mode == "pose":
            return 3 * sk.N_JOINTS
        return 2 * self.length

    def __call__(self, seq: MotionSequence) -> np.ndarray:
        if self.mode == "motion":
            return sequence_states(resample(seq, self.length)).reshape(-1)
        if self.mode == "trajectory":
            return resample(seq, self.length).root_pos.reshape(-1)
        i = None if self.action is None else interaction_frame(seq, self.action)
        if i is None:
            i = len(seq) - 1 if self.action is None else _closest_action_frame(seq, self.action)
        return seq.joints[i].reshape(-1)

    def batch(self, seqs) -> np.ndarray:
        return np.stack([self(s) for s in seqs])


def _closest_action_frame(seq: MotionSequence, action) -> int:
    hits = np.nonzero(seq.actions == sk.action_index(action))[0]
    return int(hits[0]) if len(hits) else len(seq) // 2


# --- grid planning -----------------------------------------------------------

@dataclass(frozen=True)
class GroundGrid:
    """Rasterized ground plane: ``blocked[i, k]`` covers x = x0 + (i + 0.5) r,
    z = z0 + (k + 0.5) r."""

    blocked: np.ndarray
    origin: tuple
    resolution: float

    def cell_of(self, xz) -> tuple[int, int]:
        i = int(np.floor((xz[0] - self.origin[0]) / self.resolution))
        k = int(np.floor((xz[1] - self.origin[1]) / self.resolution))
        return (min(max(i, 0), self.blocked.shape[0] - 1), min(max(k, 0), self.blocked.shape[1] - 1))

    def center(self, cell) -> np.ndarray:
        return np.array([self.origin[0] + (cell[0] + 0.5) * self.resolution,
                         self.origin[1] + (cell[1] + 0.5) * self.resolution])


def rasterize(scene: Scene, resolution: float = 0.1, clearance: float = 0.3) -> GroundGrid:
    """Ground cells within ``clearance`` of any object's footprint are blocked."""
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    xmin, zmin, xmax, zmax = scene.bounds
    nx = max(1, int(math.ceil((xmax - xmin) / resolution)))
    nz = max(1, int(math.ceil((zmax - zmin) / resolution)))
    xs = xmin + (np.arange(nx) + 0.5) * resolution
    zs = zmin + (np.arange(nz) + 0.5) * resolution
    gx, gz = np.meshgrid(xs, zs, indexing="ij")
    blocked = np.zeros((nx, nz), dtype=bool)
    for obj in scene.objects:
        pts = np.stack([gx, np.full_like(gx, 0.5 * obj.cell_size), gz], -1)
        blocked |= obj.distance(pts) < clearance
    return GroundGrid(blocked, (xmin, zmin), resolution)


_MOVES = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def _neighbors(blocked: np.ndarray, cell):
    i, k = cell
    nx, nz = blocked.shape
    for di, dk in _MOVES:
        a, b = i + di, k + dk
        if not (0 <= a < nx and 0 <= b < nz) or blocked[a, b]:
            continue
        if di and dk and (blocked[i + di, k] or blocked[i, k + dk]):
            continue  # no corner cutting
        yield (a, b), (math.sqrt(2.0) if di and dk else 1.0)


def astar_grid(blocked, start, goal) -> tuple[list, float]:
    """8-connected A* with a Euclidean heuristic on a boolean grid.

    Ties are broken by (f, h, cell index). Returns (cells, cost); raises
    ``ValueError`` when no path exists.
    """
    blocked = np.asarray(blocked, dtype=bool)
    start, goal = tuple(int(v) for v in start), tuple(int(v) for v in goal)
    for c in (start, goal):
        if not (0 <= c[0] < blocked.shape[0] and 0 <= c[1] < blocked.shape[1]) or blocked[c]:
            raise ValueError(f"cell {c} is blocked or outside the grid")
    nz = blocked.shape[1]

    def h(c):
        return math.hypot(c[0] - goal[0], c[1] - goal[1])

    g = {start: 0.0}
    parent = {start: None}
    heap = [(h(start), h(start), start[0] * nz + start[1], start)]
    closed = set()
    while heap:
        _, _, _, cur = heapq.heappop(heap)
        if cur in closed:
            continue
        if cur == goal:
            path = [cur]
            while parent[path[-1]] is not None:
                path.append(parent[path[-1]])
            return path[::-1], g[cur]
        closed.add(cur)
        for nb, w in _neighbors(blocked, cur):
            ng = g[cur] + w
            if nb not in closed and ng < g.get(nb, math.inf) - 1e-12:
                g[nb] = ng
                parent[nb] = cur
                hn = h(nb)
                heapq.heappush(heap, (ng + hn, hn, nb[0] * nz + nb[1], nb))
    raise ValueError("no path between start and goal")


def dijkstra_cost(blocked, start, goal) -> float:
    """Reference shortest-path cost with the same move set as :func:`astar_grid`."""
    blocked = np.asarray(blocked, dtype=bool)
    start, goal = tuple(start), tuple(goal)
    dist = {start: 0.0}
    heap = [(0.0, start)]
    while heap:
        d, cur = heapq.heappop(heap)
        if cur == goal:
            return d
        if d > dist.get(cur, math.inf):
            continue
        for nb, w in _neighbors(blocked, cur):
            if d + w < dist.get(nb, math.inf):
                dist[nb] = d + w
                heapq.heappush(heap, (d + w, nb))
    return math.inf


def _nearest_free(blocked: np.ndarray, cell) -> tuple[int, int]:
    if not blocked[cell]:
        return cell
    free = np.argwhere(~blocked)
    if len(free) == 0:
        raise ValueError("grid has no free cell")
    d = ((free - np.array(cell)) ** 2).sum(1)
    i, k = free[int(np.argmin(d))]
    return int(i), int(k)


def astar_plan(scene: Scene, start_xz, goal_xz, resolution: float = 0.1,
               clearance: float = 0.3) -> np.ndarray:
    """World-space polyline from ``start_xz`` to ``goal_xz`` around obstacles.

    Blocked start or goal cells (e.g. a seat anchor) are replaced by the
    nearest free cell; the exact endpoints are kept at both ends.
    """
    grid = rasterize(scene, resolution, clearance)
    s = _nearest_free(grid.blocked, grid.cell_of(start_xz))
    g = _nearest_free(grid.blocked, grid.cell_of(goal_xz))
    cells, _ = astar_grid(grid.blocked, s, g)
    pts = [np.asarray(start_xz, dtype=float)] + [grid.center(c) for c in cells[1:-1]] \
        + [np.asarray(goal_xz, dtype=float)]
    return np.array(pts)


def points_along(polyline: np.ndarray, fractions) -> tuple[np.ndarray, np.ndarray]:
    """Positions and unit tangents at arc-length fractions of a polyline."""
    seg = np.linalg.norm(np.diff(polyline, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    fr = np.asarray(fractions, dtype=float)
    pos = np.stack([np.interp(fr * total, s, polyline[:, k]) for k in range(2)], -1)
    tang = []
    for f in fr:
        j = min(max(int(np.searchsorted(s, f * total, side="right")) - 1, 0), len(seg) - 1)
        t = polyline[j + 1] - polyline[j] if total > 0 else np.array([0.0, 1.0])
        n = np.linalg.norm(t)
        tang.append(t / n if n > 1e-12 else np.array([0.0, 1.0]))
    return pos, np.array(tang)


def astar_root_planner(scene: Scene, resolution: float = 0.1, clearance: float = 0.3):
    """Milestone-root replacement for the planner baseline: ``n`` roots evenly
    spaced along the A* path, facing along it; the last root is the goal."""

    def plan(start: RootTransform, goal: RootTransform, n: int) -> list[RootTransform]:
        path = astar_plan(scene, start.position, goal.position, resolution, clearance)
        pos, tang = points_along(path, np.arange(1, n + 1) / n)
        roots = [RootTransform(p, t) for p, t in zip(pos, tang)]
        roots[-1] = goal
        return roots

    return plan


METRIC_FIELDS = ("fd", "apd_m", "apd_p", "apd_t", "pe", "re", "penetration", "sliding", "n_unreachable")


def evaluate_sets(generated: list, reference: list, goals: list, scenes: list,
                  motion_len: int = 64, traj_len: int = 32) -> dict:
    """All report metrics for a generated set against a reference set.

    ``goals`` and ``scenes`` align with ``generated``. PE/RE average over
    reached goals only; unreachable ones are counted separately.
    """
    if len(generated) < 2:
        raise ValueError("evaluation needs at least 2 generated sequences for APD")
    if any(s.joints.shape[1] != reference[0].joints.shape[1] for s in generated):
        raise ValueError("generated and reference skeletons differ")
    motion = FeatureExtractor("motion", motion_len)
    traj = FeatureExtractor("trajectory", traj_len)
    fm_gen, fm_ref = motion.batch(generated), motion.batch(reference)
    poses = np.stack([FeatureExtractor("pose", action=g.action)(s) for s, g in zip(generated, goals)])
    errs = [goal_errors(s, g) for s, g in zip(generated, goals)]
    reached = [e for e in errs if math.isfinite(e[0])]
    return {
        "fd": frechet_distance(fm_gen, fm_ref),
        "apd_m": apd(fm_gen),
        "apd_p": apd(poses),
        "apd_t": apd(traj.batch(generated)),
        "pe": float(np.mean([e[0] for e in reached])) if reached else UNREACHABLE,
        "re": float(np.mean([e[1] for e in reached])) if reached else UNREACHABLE,
        "penetration": float(np.mean([penetration_ratio(s, sc) for s, sc in zip(generated, scenes)])),
        "sliding": float(np.mean([foot_sliding(s) for s in generated])),
        "n_unreachable": len(errs) - len(reached),
    }


__all__ = [
    "FeatureExtractor", "GroundGrid", "METRIC_FIELDS", "UNREACHABLE", "apd", "astar_grid", "astar_plan",
    "astar_root_planner", "deep_inside", "dijkstra_cost", "evaluate_sets", "foot_sliding", "frechet_distance",
    "goal_errors", "interaction_frame", "penetration_ratio", "points_along", "rasterize",
]
