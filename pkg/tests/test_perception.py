import numpy as np
import pytest

from teleosim.geometry import RigidTransform, rot_y, rot_z
from teleosim.perception import (
    DwellState,
    KeyboardButton,
    KeyboardLayout,
    LaserSpot,
    Scene,
    SceneBox,
    SpotFilter,
    Surface,
    dwell_select,
    keyboard_hit,
    laser_raycast,
    smooth_spot,
)


def floor(half=10.0):
    return Surface("floor", [0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0], half, half)


def emitter_at(pos, pitch=0.0, yaw=0.0):
    # forward axis +x; pitch < 0 tilts the ray downward
    return RigidTransform(rot_z(yaw) @ rot_y(-pitch), np.asarray(pos, dtype=float))


class TestLaserRaycast:
    def test_straight_down_hits_floor(self):
        scene = Scene(surfaces=[floor()])
        emitter = emitter_at([0.0, 0.0, 1.0], pitch=-np.pi / 2)
        spot = laser_raycast(scene, emitter)
        assert spot is not None
        assert spot.surface == "floor"
        assert np.allclose(spot.position, [0.0, 0.0, 0.0], atol=1e-12)

    def test_parallel_ray_misses(self):
        scene = Scene(surfaces=[floor()])
        spot = laser_raycast(scene, emitter_at([0.0, 0.0, 1.0]))
        assert spot is None

    def test_nearest_surface_wins(self):
        table = Surface("table", [1.0, 0.0, 0.75], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0], 0.5, 0.5)
        scene = Scene(surfaces=[floor(), table])
        emitter = emitter_at([1.0, 0.0, 2.0], pitch=-np.pi / 2)
        spot = laser_raycast(scene, emitter)
        assert spot.surface == "table"
        assert np.isclose(spot.position[2], 0.75)

    def test_spot_on_surface_invariant(self, rng):
        surface = Surface("wall", [2.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], 3.0, 3.0)
        scene = Scene(surfaces=[floor(), surface])
        for _ in range(50):
            emitter = emitter_at(
                [0.0, rng.uniform(-1, 1), rng.uniform(0.5, 2.0)],
                pitch=rng.uniform(-0.8, 0.3),
                yaw=rng.uniform(-0.4, 0.4),
            )
            spot = laser_raycast(scene, emitter)
            if spot is None:
                continue
            if spot.surface == "wall":
                assert abs((spot.position - surface.point) @ surface.normal) <= 1e-9
            else:
                assert abs(spot.position[2]) <= 1e-9
            # strictly positive distance along the ray
            assert np.linalg.norm(spot.position - emitter.translation) > 0.0

    def test_bounded_surface_miss(self):
        small = Surface("pad", [0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0], 0.1, 0.1)
        scene = Scene(surfaces=[small])
        spot = laser_raycast(scene, emitter_at([5.0, 0.0, 1.0], pitch=-np.pi / 2))
        assert spot is None

    def test_box_hit(self):
        box = SceneBox("crate", RigidTransform.from_translation([2.0, 0.0, 0.25]),
                       [0.25, 0.25, 0.25])
        scene = Scene(surfaces=[floor()], boxes=[box])
        spot = laser_raycast(scene, emitter_at([0.0, 0.0, 0.25]))
        assert spot.surface == "crate"
        assert np.isclose(spot.position[0], 1.75)


class TestSmoothSpot:
    def test_constant_input_converges(self):
        f = SpotFilter()
        target = np.array([1.0, 2.0, 0.0])
        out = smooth_spot(f, target, 0.0)
        for i in range(1, 200):
            out = smooth_spot(f, target, i * 0.01)
        assert np.allclose(out, target)

    def test_step_response_one_time_constant(self):
        f = SpotFilter(cutoff_hz=5.0, max_gap=1.0)
        smooth_spot(f, np.zeros(3), 0.0)
        tau = 1.0 / (2.0 * np.pi * 5.0)
        n = 64
        out = None
        for i in range(1, n + 1):
            out = smooth_spot(f, np.array([1.0, 0.0, 0.0]), i * tau / n)
        assert np.isclose(out[0], 1.0 - np.exp(-1.0), atol=1e-12)

    def test_gap_resets_filter(self):
        f = SpotFilter()
        smooth_spot(f, np.zeros(3), 0.0)
        out = smooth_spot(f, np.array([1.0, 0.0, 0.0]), 0.05)  # 50 ms > 33 ms gap
        assert np.allclose(out, [1.0, 0.0, 0.0])

    def test_monotone_timestamps_enforced(self):
        f = SpotFilter()
        smooth_spot(f, np.zeros(3), 1.0)
        with pytest.raises(ValueError):
            smooth_spot(f, np.zeros(3), 0.5)


class TestDwellSelect:
    def feed(self, state, positions_times):
        events = []
        for pos, t in positions_times:
            goal = dwell_select(state, pos, t)
            if goal is not None:
                events.append((tuple(np.round(goal, 6)), t))
        return events

    def test_stationary_spot_emits_at_required_time(self):
        state = DwellState(radius=0.04, required=3.0)
        samples = [(np.array([1.0, 0.0, 0.0]), 0.01 * i) for i in range(0, 400)]
        events = self.feed(state, samples)
        assert len(events) == 1
        assert events[0][1] == pytest.approx(3.0)

    def test_exit_resets_timer(self):
        state = DwellState(radius=0.04, required=3.0)
        inside = [(np.array([1.0, 0.0, 0.0]), 0.01 * i) for i in range(0, 291)]
        jump = [(np.array([2.0, 0.0, 0.0]), 2.91)]
        events = self.feed(state, inside + jump)
        assert events == []
        # after the jump the window restarts from the new anchor
        more = [(np.array([2.0, 0.0, 0.0]), 2.91 + 0.01 * i) for i in range(1, 305)]
        events = self.feed(state, more)
        assert len(events) == 1
        assert events[0][1] >= 2.91 + 3.0

    def test_keyboard_uses_one_second(self):
        state = DwellState(radius=0.04, required=1.0)
        samples = [(np.array([0.0, 0.0, 0.0]), 0.01 * i) for i in range(0, 150)]
        events = self.feed(state, samples)
        assert len(events) == 1
        assert events[0][1] == pytest.approx(1.0)

    def test_never_two_goals_within_required(self, rng):
        state = DwellState(radius=0.04, required=1.0)
        times = []
        t = 0.0
        for _ in range(2000):
            t += 0.01
            pos = np.array([0.5, 0.5, 0.0]) + rng.normal(0.0, 0.005, size=3)
            if dwell_select(state, pos, t) is not None:
                times.append(t)
        assert len(times) >= 2  # keeps emitting while the spot stays put
        assert all(b - a >= 1.0 - 1e-9 for a, b in zip(times, times[1:]))

    def test_drift_within_radius_keeps_anchor(self):
        state = DwellState(radius=0.04, required=1.0)
        # drift slowly but stay within the anchor ball
        samples = [
            (np.array([0.03 * np.sin(i / 40.0), 0.0, 0.0]), 0.01 * i) for i in range(150)
        ]
        events = self.feed(state, samples)
        assert len(events) == 1


def keyboard_scene():
    surf = Surface("desk", [0.0, 0.0, 0.75], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0], 1.0, 1.0)
    layout = KeyboardLayout.grid(
        "desk",
        ["+x", "-x", "+y", "-y", "+z", "-z", "yaw+", "yaw-", "open", "close"],
        cols=5,
        origin_u=0.2,
        origin_v=0.2,
    )
    return Scene(surfaces=[surf]), layout, surf


class TestKeyboardHit:
    def test_center_press(self):
        scene, layout, surf = keyboard_scene()
        btn = layout.buttons[0]
        pos = surf.point + btn.center_u * surf.u_axis + btn.center_v * surf.v_axis
        spot = LaserSpot(pos, "desk")
        assert keyboard_hit(spot, layout, scene) == "+x"

    def test_edge_counts_as_none(self):
        scene, layout, surf = keyboard_scene()
        btn = layout.buttons[0]
        edge_u = btn.center_u + btn.width / 2.0
        pos = surf.point + edge_u * surf.u_axis + btn.center_v * surf.v_axis
        assert keyboard_hit(LaserSpot(pos, "desk"), layout, scene) is None

    def test_off_bounds_none(self):
        scene, layout, surf = keyboard_scene()
        pos = surf.point + 0.9 * surf.u_axis + 0.9 * surf.v_axis
        assert keyboard_hit(LaserSpot(pos, "desk"), layout, scene) is None

    def test_wrong_surface_none(self):
        scene, layout, _ = keyboard_scene()
        assert keyboard_hit(LaserSpot([0.2, 0.2, 0.0], "floor"), layout, scene) is None

    def test_overlapping_buttons_rejected(self):
        with pytest.raises(ValueError):
            KeyboardLayout(
                "desk",
                [
                    KeyboardButton("+x", 0.0, 0.0),
                    KeyboardButton("-x", 0.05, 0.0),
                ],
            )

    def test_contains_uv_matches_grid_bounds(self):
        _, layout, _ = keyboard_scene()
        assert layout.contains_uv(0.2, 0.2)
        assert not layout.contains_uv(-0.5, 0.2)
