"""Operator feedback mapping.

Forearm squeeze mirrors the virtual-force magnitude of the matching arm;
the right finger follows the gripper grasping force and the left finger the
left end-effector's external contact force. Discrete events acknowledge
with vibration: engaging a function vibrates once, disengaging twice.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SINGLE = "single"
DOUBLE = "double"

DEFAULT_MAX_FORCE = 2.0  # N, full-scale virtual force for squeeze display
DEFAULT_MAX_CONTACT = 60.0  # N, full-scale contact/grasp force


@dataclass
class FeedbackFrame:
    forearm_squeeze: dict = field(default_factory=lambda: {"left": 0.0, "right": 0.0})
    finger_squeeze: dict = field(default_factory=lambda: {"left": 0.0, "right": 0.0})
    vibration: list = field(default_factory=list)  # [{"target", "pattern"}]

    def as_dict(self) -> dict:
        return {
            "forearm_squeeze": dict(self.forearm_squeeze),
            "finger_squeeze": dict(self.finger_squeeze),
            "vibration": [dict(v) for v in self.vibration],
        }


def _unit(value: float, full_scale: float) -> float:
    if full_scale <= 0:
        return 0.0
    return float(np.clip(value / full_scale, 0.0, 1.0))


# event name -> (vibration target, engaged means single)
EVENT_TARGETS = {
    "toggle_right": "right_forearm",
    "toggle_left": "left_forearm",
    "gripper": "right_finger",
    "cp_change": "left_finger",
}


def map_feedback(
    virtual_forces: dict,
    gripper_force: float,
    left_contact_force: float,
    events: list | None = None,
    max_force: float = DEFAULT_MAX_FORCE,
    max_contact: float = DEFAULT_MAX_CONTACT,
) -> FeedbackFrame:
    """Build one feedback frame.

    virtual_forces maps side -> 3-vector (or None); events are
    (name, engaged) pairs for this step.
    """
    frame = FeedbackFrame()
    for side in ("left", "right"):
        vec = virtual_forces.get(side)
        magnitude = float(np.linalg.norm(vec)) if vec is not None else 0.0
        frame.forearm_squeeze[side] = _unit(magnitude, max_force)
    frame.finger_squeeze["right"] = _unit(gripper_force, max_contact)
    frame.finger_squeeze["left"] = _unit(left_contact_force, max_contact)
    for name, engaged in events or []:
        target = EVENT_TARGETS.get(name)
        if target is None:
            continue
        frame.vibration.append(
            {"target": target, "pattern": SINGLE if engaged else DOUBLE}
        )
    return frame
