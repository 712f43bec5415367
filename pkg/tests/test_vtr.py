import numpy as np
import pytest

from teleosim.kinematics import JointState, planar_chain, point_jacobian
from teleosim.vtr import (
    BaseGain,
    VtrThresholds,
    VtrWeights,
    split_cartesian,
    split_postural,
    vtr,
    vtr_weight,
)

PLANAR_ELBOW_J = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 0.0]])


class TestVtr:
    def test_isotropic(self):
        j = np.eye(3)
        assert np.allclose(vtr(j), [1.0, 1.0, 1.0])

    def test_planar_elbow_closed_form(self):
        # JJ^T 2x2 block [[2,-1],[-1,1]] -> inverse [[1,1],[1,2]]; z is null
        beta = vtr(PLANAR_ELBOW_J)
        assert np.allclose(beta, [1.0, 2.0**-0.5, 0.0])
        assert np.isclose(beta[1], 0.7071, atol=5e-5)

    def test_homogeneous_degree_one(self):
        beta = vtr(PLANAR_ELBOW_J)
        assert np.allclose(vtr(2.0 * PLANAR_ELBOW_J), 2.0 * beta)

    def test_orthonormal_right_invariance(self, rng):
        for _ in range(20):
            j = rng.normal(size=(3, 5))
            q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
            assert np.allclose(vtr(j), vtr(j @ q))

    def test_null_axis_is_exactly_zero(self):
        model = planar_chain([1.0, 1.0])
        jac = point_jacobian(model, JointState([0.3, 0.7]), "link2", [1.0, 0.0, 0.0])
        assert vtr(jac)[2] == 0.0

    def test_matches_direct_inverse_when_full_rank(self, rng):
        for _ in range(20):
            j = rng.normal(size=(3, 6))
            direct = np.diag(np.linalg.inv(j @ j.T)) ** -0.5
            assert np.allclose(vtr(j), direct, rtol=1e-8)


class TestVtrWeight:
    def setup_method(self):
        self.th = VtrThresholds(d=np.full(3, 0.25), delta=np.full(3, 0.1))

    def test_upper_endpoint_exact(self):
        w = vtr_weight([0.35, 0.35, 0.35], self.th)
        assert np.all(w.w == 1.0)

    def test_lower_endpoint_exact(self):
        w = vtr_weight([0.15, 0.15, 0.15], self.th)
        assert np.all(w.w == 0.0)

    def test_midpoint_half(self):
        w = vtr_weight([0.25, 0.25, 0.25], self.th)
        assert np.allclose(w.w, 0.5)

    def test_monotone_and_continuous(self):
        betas = np.linspace(0.0, 0.6, 2001)
        ws = [vtr_weight([b, b, b], self.th).w[0] for b in betas]
        assert all(b2 >= b1 - 1e-12 for b1, b2 in zip(ws, ws[1:]))
        jumps = np.abs(np.diff(ws))
        assert jumps.max() < 0.01  # no discontinuity at the thresholds

    def test_per_axis_independence(self):
        th_mod = VtrThresholds(d=np.array([0.25, 0.4, 0.25]), delta=np.array([0.1, 0.05, 0.1]))
        beta = [0.3, 0.3, 0.3]
        base = vtr_weight(beta, self.th)
        mod = vtr_weight(beta, th_mod)
        assert mod.w[0] == base.w[0]
        assert mod.w[2] == base.w[2]
        assert mod.w[1] != base.w[1]

    def test_disabled_axis_always_one(self):
        th = VtrThresholds(disabled=np.array([False, True, False]))
        w = vtr_weight([0.0, 0.0, 0.0], th)
        assert w.w[1] == 1.0
        assert w.w[0] == 0.0

    def test_invalid_thresholds(self):
        with pytest.raises(ValueError):
            VtrThresholds(d=np.full(3, 0.05), delta=np.full(3, 0.1))


class TestSplits:
    def test_full_arm_authority(self):
        w = VtrWeights(beta=np.ones(3), w=np.ones(3))
        x_star, nu = split_cartesian([0.2, -0.1, 0.3], w)
        assert np.allclose(x_star, [0.2, -0.1, 0.3])
        assert np.allclose(nu, 0.0)

    def test_full_base_authority(self):
        w = VtrWeights(beta=np.zeros(3), w=np.zeros(3))
        x_star, nu = split_cartesian([0.2, -0.1, 0.3], w)
        assert np.allclose(x_star, 0.0)
        assert np.allclose(nu, [0.2, -0.1, 0.3])

    def test_mixed_weights(self):
        w = VtrWeights(beta=np.ones(3), w=np.array([0.5, 1.0, 0.0]))
        x_star, nu = split_cartesian([0.2, 0.2, 0.2], w)
        assert np.allclose(x_star, [0.1, 0.2, 0.0])
        assert np.allclose(nu, [0.1, 0.0, 0.2])

    def test_conservation(self, rng):
        for _ in range(2000):
            x = rng.uniform(-5.0, 5.0, size=3)
            w = VtrWeights(beta=np.ones(3), w=rng.uniform(0.0, 1.0, size=3))
            x_star, nu = split_cartesian(x, w)
            assert np.abs(x_star + nu - x).max() <= 1e-12

    def test_postural_reduces_to_plain_projection(self):
        model = planar_chain([1.0, 1.0])
        jac = point_jacobian(model, JointState([0.0, np.pi / 2]), "link2", [1.0, 0.0, 0.0])
        f = np.array([1.0, -2.0, 0.0])
        tau, nu = split_postural(f, jac, VtrWeights(np.ones(3), np.ones(3)), BaseGain(np.ones(3)))
        assert np.allclose(tau, jac.matrix.T @ f)
        assert np.allclose(nu, 0.0)

    def test_postural_full_base(self):
        model = planar_chain([1.0, 1.0])
        jac = point_jacobian(model, JointState([0.0, 0.0]), "link2", [1.0, 0.0, 0.0])
        f = np.array([1.0, -2.0, 0.5])
        tau, nu = split_postural(f, jac, VtrWeights(np.zeros(3), np.zeros(3)), BaseGain(np.ones(3)))
        assert np.allclose(tau, 0.0)
        assert np.allclose(nu, f)

    def test_postural_half_split_prismatic(self):
        # 3 orthogonal prismatic joints: J = I3
        from teleosim.geometry import RigidTransform
        from teleosim.kinematics import ChainModel, Joint

        axes = np.eye(3)
        model = ChainModel(
            "xyz",
            [Joint(f"p{i}", "prismatic", axes[i], RigidTransform.identity(),
                   (-5, 5), 10.0, link=f"l{i}") for i in range(3)],
        )
        jac = point_jacobian(model, JointState(np.zeros(3)), "l2", np.zeros(3))
        tau, nu = split_postural(
            [2.0, 0.0, 0.0], jac,
            VtrWeights(np.ones(3), np.full(3, 0.5)), BaseGain(np.ones(3)),
        )
        assert np.allclose(tau, [1.0, 0.0, 0.0])
        assert np.allclose(nu, [1.0, 0.0, 0.0])
