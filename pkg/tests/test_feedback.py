import numpy as np

from teleosim.feedback import DOUBLE, SINGLE, map_feedback


class TestSqueeze:
    def test_zero_force_zero_squeeze(self):
        frame = map_feedback({"left": np.zeros(3), "right": None}, 0.0, 0.0)
        assert frame.forearm_squeeze == {"left": 0.0, "right": 0.0}
        assert frame.finger_squeeze == {"left": 0.0, "right": 0.0}

    def test_full_scale_clamps_to_one(self):
        frame = map_feedback(
            {"left": None, "right": np.array([2.0, 0.0, 0.0])}, 0.0, 0.0, max_force=2.0
        )
        assert frame.forearm_squeeze["right"] == 1.0

    def test_monotone_in_magnitude(self):
        values = [
            map_feedback({"left": None, "right": np.array([f, 0, 0])}, 0, 0).forearm_squeeze["right"]
            for f in np.linspace(0, 3, 50)
        ]
        assert all(b >= a for a, b in zip(values, values[1:]))

    def test_finger_channels(self):
        frame = map_feedback({}, gripper_force=30.0, left_contact_force=15.0,
                             max_contact=60.0)
        assert frame.finger_squeeze["right"] == 0.5
        assert frame.finger_squeeze["left"] == 0.25


class TestVibration:
    def test_engage_single(self):
        frame = map_feedback({}, 0, 0, events=[("toggle_right", True)])
        assert frame.vibration == [{"target": "right_forearm", "pattern": SINGLE}]

    def test_disengage_double(self):
        frame = map_feedback({}, 0, 0, events=[("toggle_left", False)])
        assert frame.vibration == [{"target": "left_forearm", "pattern": DOUBLE}]

    def test_gripper_and_cp_targets(self):
        frame = map_feedback(
            {}, 0, 0, events=[("gripper", True), ("cp_change", True)]
        )
        targets = [v["target"] for v in frame.vibration]
        assert targets == ["right_finger", "left_finger"]

    def test_unknown_event_ignored(self):
        frame = map_feedback({}, 0, 0, events=[("mystery", True)])
        assert frame.vibration == []
