"""JSON/CSV serialization of motions and scenes."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from . import skeleton as sk
from .core import MotionSequence, RootTransform, SceneObject
from .sensing import Scene


def _root_dict(r: RootTransform) -> dict:
    return {"pos": [float(v) for v in r.position], "facing": [float(v) for v in r.facing]}


def _root_from(d: dict) -> RootTransform:
    return RootTransform.make(d["pos"], d["facing"])


def motion_to_dict(seq: MotionSequence) -> dict:
    frames = []
    for i in range(len(seq)):
        frames.append({
            "root": {"pos": seq.root_pos[i].tolist(), "facing": seq.root_facing[i].tolist()},
            "joints": seq.joints[i].tolist(),
            "contacts": [bool(c) for c in seq.contacts[i]],
            "action": sk.ACTIONS[int(seq.actions[i])],
        })
    return {"fps": seq.fps, "joint_names": list(seq.joint_names), "frames": frames}


def motion_from_dict(d: dict) -> MotionSequence:
    frames = d["frames"]
    return MotionSequence(
        [f["root"]["pos"] for f in frames],
        [f["root"]["facing"] for f in frames],
        [f["joints"] for f in frames],
        [f["contacts"] for f in frames],
        [sk.action_index(f["action"]) for f in frames],
        fps=d["fps"],
        joint_names=d["joint_names"],
        check_step=False,
    )


def dumps(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def save_motion(seq: MotionSequence, path) -> None:
    Path(path).write_text(dumps(motion_to_dict(seq)))


def load_motion(path) -> MotionSequence:
    return motion_from_dict(json.loads(Path(path).read_text()))


def motion_csv(seq: MotionSequence) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["frame", "root_x", "root_z", "facing_x", "facing_z", "action"]
    header += [f"contact_{i}" for i in range(seq.contacts.shape[1])]
    header += [f"{name}_{ax}" for name in seq.joint_names for ax in "xyz"]
    w.writerow(header)
    for i in range(len(seq)):
        row = [i, *(repr(float(v)) for v in seq.root_pos[i]), *(repr(float(v)) for v in seq.root_facing[i]),
               sk.ACTIONS[int(seq.actions[i])], *(int(c) for c in seq.contacts[i]),
               *(repr(float(v)) for v in seq.joints[i].reshape(-1))]
        w.writerow(row)
    return buf.getvalue()


def save_motion_csv(seq: MotionSequence, path) -> None:
    Path(path).write_text(motion_csv(seq))


def object_to_dict(obj: SceneObject) -> dict:
    return {
        "frame": _root_dict(obj.frame),
        "cell_size": obj.cell_size,
        "grid": "".join(str(int(v)) for v in obj.grid.reshape(-1)),
        "goal_anchors": [{"root": _root_dict(r), "action": sk.ACTIONS[a]} for r, a in obj.goal_anchors],
    }


def object_from_dict(d: dict) -> SceneObject:
    grid = np.array([int(ch) for ch in d["grid"]], dtype=np.uint8)
    anchors = tuple((_root_from(a["root"]), a["action"]) for a in d["goal_anchors"])
    return SceneObject(grid, d["cell_size"], _root_from(d["frame"]), anchors)


def scene_to_dict(scene: Scene) -> dict:
    return {"bounds": list(scene.bounds), "objects": [object_to_dict(o) for o in scene.objects]}


def scene_from_dict(d: dict) -> Scene:
    return Scene(tuple(object_from_dict(o) for o in d["objects"]), tuple(d["bounds"]))


def save_scene(scene: Scene, path) -> None:
    Path(path).write_text(dumps(scene_to_dict(scene)))


def load_scene(path) -> Scene:
    return scene_from_dict(json.loads(Path(path).read_text()))
