"""Conditioning features: object voxel features, cylindrical occupancies and
contact labels."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import skeleton as sk
from .core import (GRID_CELLS, Frame, RootTransform, SceneObject, local_to_world_2d,
                   local_to_world_joints, world_to_local_2d)

OBJECT_FEATURE_DIM = GRID_CELLS * 4


@dataclass(frozen=True)
class Scene:
    objects: tuple
    bounds: tuple = (-5.0, -5.0, 5.0, 5.0)  # (xmin, zmin, xmax, zmax)

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "bounds", tuple(float(b) for b in self.bounds))
        xmin, zmin, xmax, zmax = self.bounds
        if not (xmin < xmax and zmin < zmax):
            raise ValueError("scene bounds are empty")
        for obj in self.objects:
            x, z = obj.frame.position
            if not (xmin <= x <= xmax and zmin <= z <= zmax):
                raise ValueError("object lies outside the scene bounds")

    def contains(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        inside = np.zeros(p.shape[:-1], dtype=bool)
        for obj in self.objects:
            inside |= obj.contains(p)
        return inside

    def distance(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        d = np.full(p.shape[:-1], np.inf)
        for obj in self.objects:
            d = np.minimum(d, obj.distance(p))
        return d


@dataclass(frozen=True)
class SensorConfig:
    cyl_radius: float = 1.0
    cyl_height: float = 2.0
    n_spheres: int = 128
    sphere_radius: float = 0.1
    rings: int = 2
    levels: int = 8
    spokes: int = 8

    def __post_init__(self):
        for name in ("cyl_radius", "cyl_height", "sphere_radius"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("n_spheres", "rings", "levels", "spokes"):
            if int(getattr(self, name)) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.rings * self.levels * self.spokes != self.n_spheres:
            raise ValueError("n_spheres must equal rings * levels * spokes")

    def lattice_local(self) -> np.ndarray:
        """Sphere centres (n_spheres, 3) in the reference frame, ordered
        level-major, then ring, then spoke."""
        levels = (np.arange(self.levels) + 0.5) * self.cyl_height / self.levels
        radii = (np.arange(self.rings) + 1.0) * self.cyl_radius / self.rings
        angles = 2 * np.pi * np.arange(self.spokes) / self.spokes
        y, r, a = np.meshgrid(levels, radii, angles, indexing="ij")
        return np.stack([r * np.sin(a), y, r * np.cos(a)], -1).reshape(-1, 3)


def object_feature(obj: SceneObject, ref: RootTransform) -> np.ndarray:
    """Cell positions in ``ref``'s frame plus occupancy, flattened to 2048."""
    centers = obj.cell_centers_local()
    world_xz = local_to_world_2d(obj.frame.position, obj.frame.facing, centers[:, [0, 2]])
    ref_xz = world_to_local_2d(ref.position, ref.facing, world_xz)
    feat = np.empty((GRID_CELLS, 4))
    feat[:, 0] = ref_xz[:, 0]
    feat[:, 1] = centers[:, 1]
    feat[:, 2] = ref_xz[:, 1]
    feat[:, 3] = obj.grid.reshape(-1)
    return feat.reshape(-1)


def object_features(obj: SceneObject, positions, facings) -> np.ndarray:
    """Batched :func:`object_feature` for (B, 2) reference roots."""
    positions = np.asarray(positions, dtype=float)
    facings = np.asarray(facings, dtype=float)
    centers = obj.cell_centers_local()
    world_xz = local_to_world_2d(obj.frame.position, obj.frame.facing, centers[:, [0, 2]])
    ref_xz = world_to_local_2d(positions[:, None, :], facings[:, None, :], world_xz[None])
    b = len(positions)
    feat = np.empty((b, GRID_CELLS, 4))
    feat[..., 0] = ref_xz[..., 0]
    feat[..., 1] = centers[:, 1]
    feat[..., 2] = ref_xz[..., 1]
    feat[..., 3] = obj.grid.reshape(-1)
    return feat.reshape(b, -1)


def environment_occupancy(scene: Scene, ref: RootTransform,
                          cfg: SensorConfig = SensorConfig()) -> np.ndarray:
    return environment_occupancies(scene, ref.position[None], ref.facing[None], cfg)[0]


def environment_occupancies(scene: Scene, positions, facings,
                            cfg: SensorConfig = SensorConfig()) -> np.ndarray:
    """Binary occupancy of the cylindrical sphere lattice around each root."""
    lattice = cfg.lattice_local()
    positions = np.asarray(positions, dtype=float)
    facings = np.asarray(facings, dtype=float)
    lattice = np.broadcast_to(lattice, (len(positions),) + lattice.shape)
    world = local_to_world_joints(positions, facings, lattice)
    return scene.contains(world).astype(float)


def contact_labels(frame: Frame, scene: Scene, eps: float = 0.05) -> np.ndarray:
    """Contacts for (pelvis, left foot, right foot, left hand, right hand)."""
    return contact_labels_batch(scene, frame.root.position[None], frame.root.facing[None],
                                frame.pose.joints[None], eps)[0]


def contact_labels_batch(scene: Scene, positions, facings, joints, eps: float = 0.05) -> np.ndarray:
    if not eps > 0:
        raise ValueError("eps must be positive")
    world = local_to_world_joints(positions, facings, np.asarray(joints)[:, list(sk.CONTACT_JOINTS)])
    near = scene.distance(world) <= eps
    feet = np.zeros_like(near)
    feet[:, 1:3] = world[:, 1:3, 1] < eps
    return near | feet
