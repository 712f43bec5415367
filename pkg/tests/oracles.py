"""Independent numerical oracles shared by the test suite.

These stay deliberately dumb (finite differences, direct enumeration,
closed-form scalar solutions) so they can cross-check the production code
without sharing any of its internals.
"""

import numpy as np

from teleosim.kinematics import JointState, forward_kinematics


def fd_point_jacobian(model, state, link, local_point, h=1e-6):
    """Central finite differences of forward kinematics."""
    n = model.n
    jac = np.zeros((3, n))
    for i in range(n):
        qp = state.q.copy()
        qm = state.q.copy()
        qp[i] += h
        qm[i] -= h
        pp = forward_kinematics(model, JointState(qp))[link].apply(local_point)
        pm = forward_kinematics(model, JointState(qm))[link].apply(local_point)
        jac[:, i] = (pp - pm) / (2.0 * h)
    return jac


def first_order_step_response(gain_ratio, time_constant, t):
    """Analytic v(t) for M v' + D v = tau: v -> tau/D with tau_c = M/D."""
    return gain_ratio * (1.0 - np.exp(-t / time_constant))


def count_status_outcome(statuses, mode, m=None):
    """Order-free sequence/fallback/parallel outcome from status counts."""
    n = len(statuses)
    succ = sum(1 for s in statuses if s == "success")
    fail = sum(1 for s in statuses if s == "failure")
    if mode == "sequence":
        m = n
    elif mode == "fallback":
        m = 1
    if succ >= m:
        return "success"
    if fail > n - m:
        return "failure"
    return "running"
