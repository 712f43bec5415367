import numpy as np
import pytest

from teleosim.geometry import RigidTransform
from teleosim.kinematics import Joint, ChainModel, mobile_base_chain
from teleosim.world import (
    Commands,
    CartesianPid,
    PidGains,
    SimObject,
    World,
    WorldState,
    gaze_ref,
    grasp_check,
    sense_forces,
    start_bimanual_hold,
    step,
)


def simple_arm(name, y_offset):
    # shoulder yaw + two pitch joints; links 0.35 / 0.3 m
    joints = [
        Joint("sh_yaw", "revolute", [0.0, 0.0, 1.0],
              RigidTransform.from_translation([0.0, y_offset, 0.0]),
              (-2.6, 2.6), 3.0, link="shoulder"),
        Joint("sh_pitch", "revolute", [0.0, 1.0, 0.0],
              RigidTransform.identity(), (-2.2, 2.2), 3.0, link="upper"),
        Joint("elbow", "revolute", [0.0, 1.0, 0.0],
              RigidTransform.from_translation([0.35, 0.0, 0.0]),
              (-2.4, 2.4), 3.0, link="forearm"),
    ]
    return ChainModel(name=name, joints=joints)


@pytest.fixture
def world():
    return World(
        base=mobile_base_chain(pelvis_height=0.6),
        arms={"left": simple_arm("left", 0.2), "right": simple_arm("right", -0.2)},
        ee_points={"left": [0.3, 0.0, 0.0], "right": [0.3, 0.0, 0.0]},
    )


@pytest.fixture
def state(world):
    st = world.initial_state()
    st.objects["box"] = SimObject(
        name="box",
        pose=RigidTransform.from_translation([0.65, 0.0, 0.6]),
        mass=1.958,
        half_extents=[0.1, 0.2, 0.1],
        support_z=0.1,
    )
    return st


class TestStep:
    def test_static_world_only_clock_advances(self, world, state):
        nxt = step(world, state, 0.01, Commands())
        assert nxt.clock == pytest.approx(0.01)
        assert np.allclose(nxt.chains["base"].q, state.chains["base"].q)
        assert np.allclose(nxt.objects["box"].pose.translation,
                           state.objects["box"].pose.translation)

    def test_base_velocity_integrates(self, world, state):
        for _ in range(100):
            state = step(world, state, 0.01, Commands(base_linear=[0.1, 0.0, 0.0]))
        assert world.base_pose(state)[0] == pytest.approx(0.1)

    def test_grasped_object_follows_midpoint(self, world, state):
        # place the EEs at the box sides via symmetric shoulder yaw
        state.chains["left"].q = np.array([-0.4, 0.0, 0.0])
        state.chains["right"].q = np.array([0.4, 0.0, 0.0])
        state = start_bimanual_hold(world, state, "box", 45.0)
        before = state.objects["box"].pose.translation.copy()
        for _ in range(100):
            state = step(world, state, 0.01, Commands(base_linear=[0.2, 0.0, 0.0]))
        after = state.objects["box"].pose.translation
        assert np.allclose(after - before, [0.2, 0.0, 0.0], atol=1e-9)

    def test_negative_dt_rejected(self, world, state):
        with pytest.raises(ValueError):
            step(world, state, 0.0, Commands())

    def test_determinism_bit_identical(self, world, state):
        def run():
            st = state.copy()
            rng = np.random.default_rng(7)
            trace = []
            for i in range(50):
                st = step(world, st, 0.01, Commands(base_linear=[0.05, 0.01, 0.0],
                                                    base_yaw_rate=0.1))
                forces = sense_forces(world, st, 0.1, rng)
                trace.append((st.chains["base"].q.tobytes(), forces.left.tobytes()))
            return trace

        assert run() == run()

    def test_energy_free_objects_stay_put(self, world, state):
        for _ in range(200):
            state = step(world, state, 0.01,
                         Commands(q_dot={"left": [0.3, 0.1, -0.2]}))
        assert np.allclose(state.objects["box"].pose.translation, [0.65, 0.0, 0.6])


class TestGraspCheck:
    def test_paper_values_hold(self):
        assert grasp_check(1.958, 24.16, 24.16, 0.6) == "holds"
        assert 0.6 * (24.16 + 24.16) >= 1.958 * 9.81

    def test_slips_when_light_squeeze(self):
        assert grasp_check(2.0, 10.0, 10.0, 0.6) == "slips"
        assert 0.6 * 20.0 < 2.0 * 9.81

    def test_zero_force_slips(self):
        assert grasp_check(1.0, 0.0, 0.0, 0.6) == "slips"

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            grasp_check(1.0, -1.0, 0.0, 0.6)


class TestSlipMechanics:
    def grasped(self, world, state):
        state.chains["left"].q = np.array([-0.4, 0.0, 0.0])
        state.chains["right"].q = np.array([0.4, 0.0, 0.0])
        return start_bimanual_hold(world, state, "box", 45.0)

    def test_slip_drops_to_support_and_is_monotone(self, world, state):
        state = self.grasped(world, state)
        state.hold.setpoint = 0.0  # command the squeeze away
        slipped_at = None
        for i in range(200):
            state = step(world, state, 0.01, Commands())
            if state.slip_count and slipped_at is None:
                slipped_at = i
        assert state.slip_count == 1  # never re-grasps on its own
        assert not state.objects["box"].grasped
        assert state.objects["box"].pose.translation[2] == pytest.approx(0.1)

    def test_hold_keeps_contact_distance_constant(self, world, state):
        state = self.grasped(world, state)
        d0 = np.linalg.norm(
            world.ee_position(state, "left") - world.ee_position(state, "right")
        )
        for _ in range(300):
            state = step(world, state, 0.01,
                         Commands(base_linear=[0.1, 0.05, 0.0], base_yaw_rate=0.05))
        d1 = np.linalg.norm(
            world.ee_position(state, "left") - world.ee_position(state, "right")
        )
        assert abs(d1 - d0) < 1e-9  # arms not commanded: rigid ride


class TestSenseForces:
    def test_symmetric_split_noiseless(self, world, state):
        state.chains["left"].q = np.array([-0.4, 0.0, 0.0])
        state.chains["right"].q = np.array([0.4, 0.0, 0.0])
        state.objects["box"].mass = 2.0
        state = start_bimanual_hold(world, state, "box", 24.16)
        forces = sense_forces(world, state, 0.0, np.random.default_rng(0))
        assert forces.left[2] == pytest.approx(9.81)
        assert forces.right[2] == pytest.approx(9.81)
        assert forces.left[1] == pytest.approx(24.16)
        assert forces.right[1] == pytest.approx(-24.16)

    def test_noise_is_zero_mean(self, world, state):
        state.chains["left"].q = np.array([-0.4, 0.0, 0.0])
        state.chains["right"].q = np.array([0.4, 0.0, 0.0])
        state = start_bimanual_hold(world, state, "box", 24.16)
        rng = np.random.default_rng(123)
        n = 10_000
        samples = np.array([sense_forces(world, state, 0.1, rng).left for _ in range(n)])
        truth = np.array([0.0, 24.16, 1.958 * 9.81 / 2.0])
        assert np.all(np.abs(samples.mean(axis=0) - truth) <= 3 * 0.1 / np.sqrt(n) * 1.05)

    def test_ungrasped_reads_zero(self, world, state):
        forces = sense_forces(world, state, 0.0, np.random.default_rng(0))
        assert np.allclose(forces.left, 0.0)
        assert np.allclose(forces.right, 0.0)


class TestGazeRef:
    def test_goal_at_camera_height(self, world, state):
        cam_z = world.camera_transform(state).translation[2]
        pitch = gaze_ref(world, state, [2.0, 0.0, cam_z])
        assert pitch == pytest.approx(0.0, abs=1e-9)

    def test_floor_goal_45_degrees(self, world, state):
        cam = world.camera_transform(state).translation
        goal = [cam[0] + 1.0, cam[1], cam[2] - 1.0]
        assert gaze_ref(world, state, goal) == pytest.approx(-np.pi / 4)

    def test_clamped_to_limits(self, world, state):
        cam = world.camera_transform(state).translation
        goal = [cam[0], cam[1], cam[2] - 5.0]  # straight below
        assert gaze_ref(world, state, goal) == pytest.approx(world.camera_pitch_limits[0])


class TestCartesianPid:
    def test_zero_error_zero_output(self):
        pid = CartesianPid(PidGains(kp=1.0), v_max=0.15)
        assert np.allclose(pid.compute(np.zeros(3), 0.01), 0.0)

    def test_p_term_clamped(self):
        pid = CartesianPid(PidGains(kp=1.0), v_max=0.15)
        out = pid.compute(np.array([0.2, 0.0, 0.0]), 0.01)
        assert np.allclose(out, [0.15, 0.0, 0.0])

    def test_direction_preserved_by_clamp(self):
        pid = CartesianPid(PidGains(kp=10.0), v_max=0.1)
        out = pid.compute(np.array([0.3, 0.4, 0.0]), 0.01)
        assert np.linalg.norm(out) == pytest.approx(0.1)
        assert np.allclose(out / np.linalg.norm(out), [0.6, 0.8, 0.0])
