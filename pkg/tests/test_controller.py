import numpy as np
import pytest

from aerialwbc import SystemState, dynamics_terms, task_stack
from aerialwbc.controller import (ControllerOptions, ControllerState,
                                  DegenerateThrust, EmptyInterval,
                                  TaskReference, build_qp, control_step,
                                  joint_position_bounds, outer_loop,
                                  thrust_direction)
from aerialwbc.kinematics import E3
from aerialwbc.qp import solve

from conftest import random_state


def _rest_state(model, q=None):
    n = model.n_joints
    q = np.zeros(n) if q is None else np.asarray(q, dtype=float)
    return SystemState(np.zeros(3), np.eye(3), q, np.zeros(6 + n))


def _hold_ref(model, s):
    ts = task_stack(model, s)
    return TaskReference.hold(s.p_B, 0.0, ts.X[6:9])


def test_outer_loop_zero_on_reference(model, gains):
    s = _rest_state(model, q=[0.0, 0.3, -0.4, 0.0, 0.2])
    ts = task_stack(model, s)
    ref = _hold_ref(model, s)
    xddot, x_t_d = outer_loop(s, ts, ref, gains, model.base.mass, model.gravity)
    np.testing.assert_allclose(xddot, 0.0, atol=1e-12)
    np.testing.assert_allclose(x_t_d, E3, atol=1e-12)


def test_thrust_direction_zero_command_is_vertical(model):
    np.testing.assert_allclose(thrust_direction(np.zeros(3), 1.5, 9.81), E3,
                               atol=1e-15)


def test_thrust_direction_lateral_command():
    g = 9.81
    x_t_d = thrust_direction(np.array([g, 0.0, 0.0]), 1.5, g)
    np.testing.assert_allclose(x_t_d, [1 / np.sqrt(2), 0.0, 1 / np.sqrt(2)],
                               atol=1e-12)


def test_thrust_direction_degenerate():
    with pytest.raises(DegenerateThrust):
        thrust_direction(np.array([0.0, 0.0, -9.81]), 1.5, 9.81)


def test_outer_loop_proportional_term(model, gains):
    # 0.1 m base x error with the default gains: commanded accel = 4 * 0.1
    s = _rest_state(model, q=[0.0, 0.3, -0.4, 0.0, 0.2])
    ts = task_stack(model, s)
    ref = _hold_ref(model, s)
    ref.p_B_d = ref.p_B_d + np.array([0.1, 0.0, 0.0])
    xddot, _ = outer_loop(s, ts, ref, gains, model.base.mass, model.gravity)
    assert xddot[0] == pytest.approx(0.4, abs=1e-12)
    np.testing.assert_allclose(xddot[1:3], 0.0, atol=1e-12)


def test_outer_loop_degenerate_fallback(model, gains):
    s = _rest_state(model, q=[0.0, 0.3, -0.4, 0.0, 0.2])
    ts = task_stack(model, s)
    ref = _hold_ref(model, s)
    ref.p_B_d_ddot = np.array([0.0, 0.0, -model.gravity])   # free-fall command
    with pytest.raises(DegenerateThrust):
        outer_loop(s, ts, ref, gains, model.base.mass, model.gravity)
    hold = np.array([0.1, 0.0, 0.99498743710662])
    _, x_t_d = outer_loop(s, ts, ref, gains, model.base.mass, model.gravity,
                          fallback_dir=hold)
    np.testing.assert_allclose(x_t_d, hold)


def test_joint_bounds_centered_joint():
    T = 0.1
    lb, ub = joint_position_bounds(np.array([0.0]), np.array([0.0]),
                                   np.array([-1.0]), np.array([1.0]), T)
    assert ub[0] == pytest.approx(2.0 * 1.0 / T**2)
    assert lb[0] == pytest.approx(-2.0 * 1.0 / T**2)


def test_joint_bounds_at_limit():
    lb, ub = joint_position_bounds(np.array([1.0]), np.array([0.0]),
                                   np.array([-1.0]), np.array([1.0]), 0.1)
    assert ub[0] <= 0.0


def test_joint_bounds_braking_value():
    # the documented two-bound intersection: min(-8, -12.5) = -12.5
    q_max = np.array([1.0])
    lb, ub = joint_position_bounds(np.array([0.99]), np.array([0.5]),
                                   np.array([-1.0]), q_max, 0.1)
    assert ub[0] == pytest.approx(-12.5)


def test_joint_bounds_far_from_limit_unrestricted():
    # moving toward a limit that is out of reach within the horizon must not
    # force deceleration
    lb, ub = joint_position_bounds(np.array([0.0]), np.array([0.5]),
                                   np.array([-3.0]), np.array([3.0]), 0.1)
    assert ub[0] > 0.0


def test_joint_bounds_empty_interval():
    with pytest.raises(EmptyInterval):
        joint_position_bounds(np.array([0.9999]), np.array([1.0]),
                              np.array([-1.0]), np.array([1.0]), 0.1)


def _build(model, gains, s, ref=None, L_s=None):
    terms = dynamics_terms(model, s)
    ts = task_stack(model, s)
    if ref is None:
        ref = _hold_ref(model, s)
    xddot, _ = outer_loop(s, ts, ref, gains, model.base.mass, model.gravity,
                          fallback_dir=ts.X[9:12])
    d = 6 + model.n_joints
    if L_s is None:
        L_s = np.zeros(d)
    return terms, ts, build_qp(terms, ts, xddot, gains, s, L_s, model, 0.005)


def test_build_qp_hover_equalities(model, gains):
    s = _rest_state(model, q=[0.0, 0.3, -0.4, 0.0, 0.2])
    terms, ts, inst = _build(model, gains, s)
    # at R = I with s = 0 the equality block is rows 1-2 of M and b_eq = 0
    np.testing.assert_allclose(inst.A_eq, terms.M[0:2, :], atol=1e-12)
    np.testing.assert_allclose(inst.b_eq, 0.0, atol=1e-12)
    assert inst.A_in.shape == (8 + 4 * model.n_joints, 6 + model.n_joints)


def test_build_qp_regularizer_only(model, gains, rng):
    # W1 = 0: the optimum is the regularizer's: nudot = -lambda nu
    from dataclasses import replace
    g0 = replace(gains, w_task=np.zeros(12))
    s = random_state(model, rng, vel_scale=0.2)
    s.R = np.eye(3)
    terms = dynamics_terms(model, s)
    ts = task_stack(model, s)
    ref = _hold_ref(model, s)
    xddot, _ = outer_loop(s, ts, ref, g0, model.base.mass, model.gravity,
                          fallback_dir=ts.X[9:12])
    inst = build_qp(terms, ts, xddot, g0, s, np.zeros(11), model, 0.005)
    expected = -g0.vel_damping * s.nu
    x = np.linalg.solve(inst.H, -inst.g)
    np.testing.assert_allclose(x, expected, atol=1e-9)


def test_solved_step_kills_body_xy_force(model, gains, rng):
    for _ in range(20):
        s = random_state(model, rng, vel_scale=0.3)
        terms, ts, inst = _build(model, gains, s)
        sol = solve(inst)
        assert sol.status == "optimal"
        u = terms.M @ sol.x + terms.C @ s.nu + terms.G
        body_xy = (s.R.T @ u[0:3])[0:2]
        assert np.max(np.abs(body_xy)) <= 1e-8


def test_control_step_hover_static_oracle(model, gains):
    # perfect hover: total thrust equals weight, joint torques equal the
    # static gravity torques of a standing solve of the dynamics
    n = model.n_joints
    s = _rest_state(model, q=[0.0, 0.35, -0.5, 0.0, 0.25])
    ref = _hold_ref(model, s)
    ctrl = ControllerState.initial(s.nu, n)
    out, ctrl2 = control_step(model, gains, s, ref, ctrl, 0.005)
    assert out.diagnostics.qp_status == "optimal"
    terms = dynamics_terms(model, s)
    np.testing.assert_allclose(out.u, terms.G, atol=1e-8)
    assert np.sum(out.F) == pytest.approx(model.total_mass * model.gravity,
                                          abs=1e-8)
    np.testing.assert_allclose(out.tau_M, terms.G[6:], atol=1e-8)


def test_control_step_first_step_zero_s(model, gains, rng):
    s = random_state(model, rng, vel_scale=0.2)
    n = model.n_joints
    ctrl = ControllerState.initial(s.nu, n)
    ref = _hold_ref(model, s)
    out, _ = control_step(model, gains, s, ref, ctrl, 0.005)
    assert out.diagnostics.norm_s == 0.0
    # s = 0: u must equal the plain feedforward M nudot_r + C nu + G
    terms = dynamics_terms(model, s)
    ts = task_stack(model, s)
    xddot, _ = outer_loop(s, ts, ref, gains, model.base.mass, model.gravity,
                          fallback_dir=ts.X[9:12])
    inst = build_qp(terms, ts, xddot, gains, s, np.zeros(6 + n), model, 0.005)
    sol = solve(inst)
    np.testing.assert_allclose(out.u, terms.M @ sol.x + terms.C @ s.nu + terms.G,
                               atol=1e-10)


def test_control_step_integral_disabled_matches_zero_s(model, gains, rng):
    s = random_state(model, rng, vel_scale=0.2)
    n = model.n_joints
    drifted = ControllerState.initial(s.nu + 0.5, n)
    opts = ControllerOptions(integral_enabled=False)
    out, new = control_step(model, gains, s, ref=_hold_ref(model, s),
                            ctrl=drifted, dt=0.005, options=opts)
    assert out.diagnostics.norm_s == 0.0
    np.testing.assert_array_equal(new.nu_r, s.nu)


def test_control_step_saturation_stays_in_box(model, gains):
    # command a violent climb: rotor rows must clamp the commanded thrusts
    n = model.n_joints
    s = _rest_state(model, q=[0.0, 0.35, -0.5, 0.0, 0.25])
    ts = task_stack(model, s)
    ref = TaskReference.hold(s.p_B + np.array([0.0, 0.0, 20.0]), 0.0, ts.X[6:9])
    ctrl = ControllerState.initial(s.nu, n)
    out, ctrl2 = control_step(model, gains, s, ref, ctrl, 0.005)
    assert out.diagnostics.qp_status == "optimal"
    assert np.all(out.F <= model.rotors.f_max + 1e-8)
    assert np.all(out.F >= model.rotors.f_min - 1e-8)
    assert np.any(ctrl2.saturation_flags[:4])
    # anti-windup freezes the reference velocity on saturated steps
    np.testing.assert_array_equal(ctrl2.nu_r, ctrl.nu_r)


def test_control_step_drops_joint_rows_on_crossed_bounds(model, gains):
    # joint 1 racing at its limit: the acceleration interval is empty even at
    # the doubled horizon, so the step retries without joint rows and flags it
    n = model.n_joints
    s = _rest_state(model)
    s.q_M[0] = model.q_max[0] - 1e-4
    s.nu[6] = 1.0
    ts = task_stack(model, s)
    ref = TaskReference.hold(s.p_B, 0.0, ts.X[6:9])
    ctrl = ControllerState.initial(s.nu, n)
    out, _ = control_step(model, gains, s, ref, ctrl, 0.005)
    assert out.diagnostics.fallback == 1
    assert out.diagnostics.qp_status == "optimal"


def test_control_step_gravity_hold_on_solver_failure(model, gains, monkeypatch):
    # force the solver to report infeasibility: the step must emit the clipped
    # gravity compensation, flag the fallback, and freeze the integral state
    import aerialwbc.controller as ctl

    def always_infeasible(inst, tol=1e-9, max_iter=200):
        d = inst.H.shape[0]
        from aerialwbc.qp import QPSolution
        return QPSolution(x=np.zeros(d), status="infeasible", iterations=1)

    monkeypatch.setattr(ctl.qp, "solve", always_infeasible)
    n = model.n_joints
    s = _rest_state(model, q=[0.0, 0.35, -0.5, 0.0, 0.25])
    ctrl = ControllerState.initial(s.nu + 0.1, n)
    out, new = control_step(model, gains, s, _hold_ref(model, s), ctrl, 0.005)
    assert out.diagnostics.fallback == 2
    assert out.diagnostics.qp_status == "infeasible"
    assert np.all(out.F >= model.rotors.f_min) and np.all(out.F <= model.rotors.f_max)
    assert np.all(out.tau_M >= model.tau_min) and np.all(out.tau_M <= model.tau_max)
    np.testing.assert_array_equal(new.nu_r, ctrl.nu_r)


def test_control_step_torque_bounds(model, gains, rng):
    for _ in range(10):
        s = random_state(model, rng, vel_scale=0.5)
        n = model.n_joints
        ctrl = ControllerState.initial(s.nu, n)
        ts = task_stack(model, s)
        ref = TaskReference.hold(s.p_B + rng.normal(size=3), 0.3,
                                 ts.X[6:9] + 0.05 * rng.normal(size=3))
        out, _ = control_step(model, gains, s, ref, ctrl, 0.005)
        if out.diagnostics.qp_status == "optimal":
            assert np.all(out.tau_M <= model.tau_max + 1e-8)
            assert np.all(out.tau_M >= model.tau_min - 1e-8)
            assert out.diagnostics.underactuation_residual <= 1e-8
