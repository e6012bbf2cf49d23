"""Toy 15-joint skeleton, body-part groups and canonical poses.

Coordinates are root-local: +y is up, +z is the facing direction and +x is
the character's left. The root sits on the ground directly below the pelvis.
"""

from __future__ import annotations

import numpy as np

JOINT_NAMES = (
    "pelvis",
    "spine",
    "head",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "l_hip",
    "l_knee",
    "l_ankle",
    "r_hip",
    "r_knee",
    "r_ankle",
)
N_JOINTS = len(JOINT_NAMES)

PARENTS = (-1, 0, 1, 1, 3, 4, 1, 6, 7, 0, 9, 10, 0, 12, 13)

# torso/head, left arm, right arm, left leg, right leg
PART_GROUPS = (
    (0, 1, 2),
    (3, 4, 5),
    (6, 7, 8),
    (9, 10, 11),
    (12, 13, 14),
)
N_PARTS = len(PART_GROUPS)

# pelvis, left foot, right foot, left hand, right hand
CONTACT_JOINTS = (0, 11, 14, 5, 8)
FEET = (11, 14)

ACTIONS = ("idle", "walk", "sit", "lie")
N_ACTIONS = len(ACTIONS)

ANKLE_HEIGHT = 0.03
PELVIS_HEIGHT = 0.95
SEAT_CLEARANCE = 0.04


def action_index(action: str | int) -> int:
    if isinstance(action, (int, np.integer)):
        if not 0 <= int(action) < N_ACTIONS:
            raise ValueError(f"invalid action index {action}")
        return int(action)
    try:
        return ACTIONS.index(action)
    except ValueError:
        raise ValueError(f"invalid action label {action!r}; expected one of {ACTIONS}") from None


def one_hot(action: str | int) -> np.ndarray:
    v = np.zeros(N_ACTIONS)
    v[action_index(action)] = 1.0
    return v


def bone_lengths(joints: np.ndarray) -> np.ndarray:
    """Lengths of the 14 parent-child bones of a (..., J, 3) pose array."""
    child = np.arange(1, N_JOINTS)
    parent = np.array(PARENTS[1:])
    return np.linalg.norm(joints[..., child, :] - joints[..., parent, :], axis=-1)


def rest_pose() -> np.ndarray:
    j = np.zeros((N_JOINTS, 3))
    j[0] = (0.0, PELVIS_HEIGHT, 0.0)
    j[1] = (0.0, 1.20, 0.0)
    j[2] = (0.0, 1.60, 0.0)
    for side, s in ((3, 1.0), (6, -1.0)):
        j[side] = (0.18 * s, 1.45, 0.0)
        j[side + 1] = (0.20 * s, 1.17, 0.0)
        j[side + 2] = (0.20 * s, 0.92, 0.02)
    for hip, s in ((9, 1.0), (12, -1.0)):
        j[hip] = (0.10 * s, 0.90, 0.0)
        j[hip + 1] = (0.10 * s, 0.47, 0.02)
        j[hip + 2] = (0.10 * s, ANKLE_HEIGHT, 0.0)
    return j


SIT_TORSO = ("upright", "lean_back", "lean_forward")
SIT_ARMS = ("thighs", "seat", "raised")
SIT_LEGS = ("forward", "tucked")


def sit_pose(seat_height: float, torso: str = "upright", left_arm: str = "thighs",
             right_arm: str = "thighs", legs: str = "forward") -> np.ndarray:
    """Seated pose for a seat whose top surface is at ``seat_height``.

    The pelvis rests just above the seat; thighs point forward (+z).
    """
    h = seat_height + SEAT_CLEARANCE
    j = np.zeros((N_JOINTS, 3))
    lean = {"upright": -0.03, "lean_back": -0.14, "lean_forward": 0.10}[torso]
    j[0] = (0.0, h, 0.0)
    j[1] = (0.0, h + 0.25, lean * 0.5)
    j[2] = (0.0, h + 0.64, lean)
    for sh, s, arm in ((3, 1.0, left_arm), (6, -1.0, right_arm)):
        j[sh] = (0.18 * s, h + 0.50, lean * 0.8)
        if arm == "thighs":
            j[sh + 1] = (0.20 * s, h + 0.26, lean * 0.8 + 0.08)
            j[sh + 2] = (0.15 * s, h + 0.10, 0.30)
        elif arm == "seat":
            j[sh + 1] = (0.24 * s, h + 0.25, lean * 0.8 - 0.05)
            j[sh + 2] = (0.26 * s, h + 0.005, 0.02)
        elif arm == "raised":
            j[sh + 1] = (0.22 * s, h + 0.36, lean * 0.8 + 0.18)
            j[sh + 2] = (0.06 * s, h + 0.50, 0.30)
        else:
            raise ValueError(f"unknown arm variant {arm!r}")
    knee_z, ankle_z = {"forward": (0.41, 0.47), "tucked": (0.38, 0.30)}[legs]
    for hip, s in ((9, 1.0), (12, -1.0)):
        j[hip] = (0.10 * s, h, 0.0)
        j[hip + 1] = (0.12 * s, h + 0.02, knee_z)
        j[hip + 2] = (0.12 * s, ANKLE_HEIGHT, ankle_z)
    return j


LIE_ARMS = ("side", "chest")
LIE_LEGS = ("straight", "bent")


def lie_pose(surface_height: float, arms: str = "side", legs: str = "straight",
             head_raise: float = 0.0) -> np.ndarray:
    """Supine pose on a surface at ``surface_height``, head towards +z."""
    h = surface_height + SEAT_CLEARANCE
    j = np.zeros((N_JOINTS, 3))
    j[0] = (0.0, h, 0.0)
    j[1] = (0.0, h + 0.03, 0.25)
    j[2] = (0.0, h + 0.08 + head_raise, 0.64)
    for sh, s in ((3, 1.0), (6, -1.0)):
        j[sh] = (0.18 * s, h + 0.04, 0.48)
        if arms == "side":
            j[sh + 1] = (0.24 * s, h + 0.03, 0.21)
            j[sh + 2] = (0.25 * s, h + 0.03, -0.04)
        elif arms == "chest":
            j[sh + 1] = (0.22 * s, h + 0.10, 0.25)
            j[sh + 2] = (0.05 * s, h + 0.16, 0.38)
        else:
            raise ValueError(f"unknown arm variant {arms!r}")
    for hip, s in ((9, 1.0), (12, -1.0)):
        j[hip] = (0.10 * s, h, 0.0)
        if legs == "straight":
            j[hip + 1] = (0.10 * s, h + 0.02, -0.43)
            j[hip + 2] = (0.10 * s, h + 0.02, -0.87)
        elif legs == "bent":
            j[hip + 1] = (0.11 * s, h + 0.30, -0.30)
            j[hip + 2] = (0.11 * s, h + 0.03, -0.62)
        else:
            raise ValueError(f"unknown leg variant {legs!r}")
    return j


def canonical_goal_pose(action: str | int, surface_height: float) -> np.ndarray:
    """Default interaction pose used for goal collision checks."""
    a = ACTIONS[action_index(action)]
    if a == "sit":
        return sit_pose(surface_height)
    if a == "lie":
        return lie_pose(surface_height)
    return rest_pose()
