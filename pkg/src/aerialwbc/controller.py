"""Whole-body controller: outer task-space loop, QP assembly, torque law.

One control step composes dynamics_terms -> task_stack -> outer_loop ->
build_qp -> QP solve, then applies the torque-level integral action
u = M nudot_r + C nu_r + G + K s with s = nu_r - nu and K = k_scale*M +
k_offset*I.  nu_r integrates the optimal acceleration with explicit Euler at
the control period and is frozen on saturated or infeasible steps to prevent
windup (switchable).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import qp
from .dynamics import DynamicsTerms, dynamics_terms, wrench_to_rotors
from .kinematics import E3, SystemState, TaskStack, task_stack
from .model import GainSet, ModelDescription


class DegenerateThrust(Exception):
    """Commanded specific force vanished; no thrust direction is defined."""


class EmptyInterval(Exception):
    """A joint's acceleration bounds crossed (lower > upper)."""


@dataclass
class TaskReference:
    """Desired task values with first and second derivatives."""

    p_B_d: np.ndarray
    p_B_d_dot: np.ndarray
    p_B_d_ddot: np.ndarray
    X_psi_d: np.ndarray        # unit yaw-direction vector
    X_psi_d_dot: np.ndarray
    X_psi_d_ddot: np.ndarray
    p_E_d: np.ndarray          # base frame
    p_E_d_dot: np.ndarray
    p_E_d_ddot: np.ndarray

    def check(self) -> None:
        if abs(np.linalg.norm(self.X_psi_d) - 1.0) > 1e-9:
            raise ValueError("X_psi_d must be a unit vector")

    @staticmethod
    def hold(p_B: np.ndarray, yaw: float, p_E: np.ndarray) -> "TaskReference":
        z = np.zeros(3)
        xpsi = np.array([np.cos(yaw), -np.sin(yaw), 0.0])
        return TaskReference(p_B.copy(), z.copy(), z.copy(),
                             xpsi, z.copy(), z.copy(),
                             p_E.copy(), z.copy(), z.copy())


@dataclass
class ControllerState:
    """Mutable per-controller memory carried between steps."""

    nu_r: np.ndarray                       # reference generalized velocity
    last_feasible_nudot: np.ndarray
    saturation_flags: np.ndarray           # 4 rotors + n joints, booleans
    last_thrust_dir: np.ndarray | None = None

    @staticmethod
    def initial(nu: np.ndarray, n_joints: int) -> "ControllerState":
        return ControllerState(nu_r=nu.copy(),
                               last_feasible_nudot=np.zeros_like(nu),
                               saturation_flags=np.zeros(4 + n_joints, dtype=bool))


@dataclass
class ControllerOptions:
    """Switches that are not part of the gain set."""

    integral_enabled: bool = True
    antiwindup: bool = True
    joint_bound_horizon: float = 0.1   # s
    thrust_dir_mass: str = "base"      # base | total (cancels under normalization)
    qp_tol: float = 1e-9
    qp_max_iter: int = 200


@dataclass
class StepDiagnostics:
    qp_status: str
    qp_iterations: int
    active_set: list[int]
    constraint_margin: float          # min inequality margin at the solution
    underactuation_residual: float    # |body x/y force of u|
    norm_s: float
    fallback: int                     # 0 clean, 1 joint rows dropped, 2 gravity hold


@dataclass
class ControlOutput:
    F: np.ndarray                 # 4 rotor thrusts, N
    tau_M: np.ndarray             # n joint torques, N m
    u: np.ndarray                 # 6+n generalized input
    diagnostics: StepDiagnostics = None


def thrust_direction(pddot_star: np.ndarray, mass: float,
                     gravity: float) -> np.ndarray:
    """Unit vector of the commanded specific force m*(pddot* + g e3)."""
    v = pddot_star + gravity * E3
    nrm = np.linalg.norm(v)
    if nrm < 1e-6:
        raise DegenerateThrust(f"|pddot* + g e3| = {nrm:.2e}")
    return (mass * v) / (mass * nrm)


def outer_loop(s: SystemState, kin: TaskStack, ref: TaskReference, g: GainSet,
               m_B: float, grav: float,
               fallback_dir: np.ndarray | None = None
               ) -> tuple[np.ndarray, np.ndarray]:
    """Augmented desired task acceleration (12,) and the thrust direction used.

    Rows 1-9 are PD laws on base position, yaw vector and end effector; rows
    10-12 regulate the thrust axis toward the direction demanded by the base
    command.  If that direction is degenerate and fallback_dir is given, it is
    used instead; otherwise DegenerateThrust propagates.
    """
    X, Xd = kin.X, kin.X_dot
    xddot = np.zeros(12)
    xddot[0:3] = ref.p_B_d_ddot + g.kv_base * (ref.p_B_d_dot - Xd[0:3]) \
        + g.kp_base * (ref.p_B_d - X[0:3])
    xddot[3:6] = ref.X_psi_d_ddot + g.kv_yaw * (ref.X_psi_d_dot - Xd[3:6]) \
        + g.kp_yaw * (ref.X_psi_d - X[3:6])
    xddot[6:9] = ref.p_E_d_ddot + g.kv_ee * (ref.p_E_d_dot - Xd[6:9]) \
        + g.kp_ee * (ref.p_E_d - X[6:9])
    try:
        x_t_d = thrust_direction(xddot[0:3], m_B, grav)
    except DegenerateThrust:
        if fallback_dir is None:
            raise
        x_t_d = fallback_dir
    xddot[9:12] = -g.thrust_kv * Xd[9:12] + g.thrust_kp * (x_t_d - X[9:12])
    return xddot, x_t_d


def joint_position_bounds(q: np.ndarray, qdot: np.ndarray,
                          q_min: np.ndarray, q_max: np.ndarray,
                          horizon: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-joint acceleration interval keeping [q_min, q_max] forward-invariant.

    Intersects a look-ahead bound over the horizon with a stopping-distance
    (braking) bound.  The braking bound engages once the limit is reachable
    within the horizon at the current velocity; applied unconditionally it
    would forbid any sustained motion toward a distant limit.  Raises
    EmptyInterval if the interval crosses for any joint.
    """
    T = horizon
    ub = 2.0 * (q_max - q - qdot * T) / T**2
    lb = 2.0 * (q_min - q - qdot * T) / T**2
    for j in range(len(q)):
        if qdot[j] > 0.0 and q_max[j] - q[j] > 0.0 \
                and qdot[j] * T >= q_max[j] - q[j]:
            ub[j] = min(ub[j], -qdot[j]**2 / (2.0 * (q_max[j] - q[j])))
        elif qdot[j] < 0.0 and q[j] - q_min[j] > 0.0 \
                and -qdot[j] * T >= q[j] - q_min[j]:
            lb[j] = max(lb[j], qdot[j]**2 / (2.0 * (q[j] - q_min[j])))
    if np.any(lb > ub):
        j = int(np.argmax(lb - ub))
        raise EmptyInterval(f"joint {j}: bounds crossed ({lb[j]:.3g} > {ub[j]:.3g})")
    return lb, ub


def build_qp(terms: DynamicsTerms, stack: TaskStack, xddot_star: np.ndarray,
             g: GainSet, s: SystemState, L_s: np.ndarray,
             model: ModelDescription, dt: float,
             joint_rows: bool = True,
             horizon: float = 0.1) -> qp.QPInstance:
    """Assemble the acceleration QP for one control step.

    Cost: || J nudot + drift - xddot* ||^2_W1 + || nudot + lambda nu ||^2_W2.
    Equalities kill the body x/y force; inequalities box the rotor thrusts,
    joint torques, and joint accelerations.  L_s = (C + K) s enters every
    right-hand side together with C nu + G.
    """
    n = model.n_joints
    d = 6 + n
    J, drift = stack.J_task, stack.drift
    W1, W2, lam = g.w_task, g.w_reg, g.vel_damping

    H = J.T @ (W1[:, None] * J) + np.diag(W2)
    grad = J.T @ (W1 * (drift - xddot_star)) + W2 * (lam * s.nu)

    h = terms.C @ s.nu + terms.G + L_s        # input offset: u = M nudot + h

    # underactuation: body x/y force rows of u vanish
    T_xy = s.R.T[0:2, :]                      # rows 1-2 of R^T
    A_eq = T_xy @ terms.M[0:3, :]
    b_eq = -T_xy @ h[0:3]

    rows = []
    rhs = []
    # rotor thrust box: F = Xi^{-1} [f_z; tau_b], f_z = e3^T R^T u_f
    P = np.zeros((4, d))
    P[0, 0:3] = s.R[:, 2]                     # e3^T R^T
    P[1:4, 3:6] = np.eye(3)
    E = np.linalg.solve(model.rotors.allocation_matrix(), P)
    EM = E @ terms.M
    Eh = E @ h
    rows.append(EM)
    rhs.append(np.full(4, model.rotors.f_max) - Eh)
    rows.append(-EM)
    rhs.append(Eh - np.full(4, model.rotors.f_min))
    # joint torque box: tau_M = last n rows of u
    SM = terms.M[6:, :]
    Sh = h[6:]
    rows.append(SM)
    rhs.append(model.tau_max - Sh)
    rows.append(-SM)
    rhs.append(Sh - model.tau_min)
    # joint acceleration bounds
    if joint_rows:
        lb, ub = joint_position_bounds(s.q_M, s.qd_M, model.q_min, model.q_max,
                                       horizon)
        sel = np.zeros((n, d))
        sel[:, 6:] = np.eye(n)
        rows.append(sel)
        rhs.append(ub)
        rows.append(-sel)
        rhs.append(-lb)

    return qp.QPInstance(H=H, g=grad, A_eq=A_eq, b_eq=b_eq,
                         A_in=np.vstack(rows), b_in=np.concatenate(rhs))


def _gravity_hold(terms: DynamicsTerms, s: SystemState,
                  model: ModelDescription) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Last-resort command: gravity compensation projected into actuator boxes."""
    u = terms.G.copy()
    f_z = float(s.R[:, 2] @ u[0:3])
    F = wrench_to_rotors(f_z, u[3:6], model.rotors)
    F = np.clip(F, model.rotors.f_min, model.rotors.f_max)
    tau = np.clip(u[6:], model.tau_min, model.tau_max)
    return F, tau, u


def control_step(model: ModelDescription, gains: GainSet, s: SystemState,
                 ref: TaskReference, ctrl: ControllerState, dt: float,
                 options: ControllerOptions | None = None
                 ) -> tuple[ControlOutput, ControllerState]:
    """Run one 200 Hz control period; returns actuator commands and new state."""
    if options is None:
        options = ControllerOptions()
    n = model.n_joints
    d = 6 + n

    terms = dynamics_terms(model, s)
    stack = task_stack(model, s)

    if not options.integral_enabled:
        ctrl = replace(ctrl, nu_r=s.nu.copy())
    s_err = ctrl.nu_r - s.nu
    K = gains.k_scale * terms.M + gains.k_offset * np.eye(d)
    L_s = (terms.C + K) @ s_err

    m_thrust = model.base.mass if options.thrust_dir_mass == "base" \
        else model.total_mass
    xddot_star, x_t_d = outer_loop(
        s, stack, ref, gains, m_thrust, model.gravity,
        fallback_dir=ctrl.last_thrust_dir if ctrl.last_thrust_dir is not None
        else stack.X[9:12])

    fallback = 0
    horizon = options.joint_bound_horizon
    try:
        inst = build_qp(terms, stack, xddot_star, gains, s, L_s, model, dt,
                        joint_rows=True, horizon=horizon)
    except EmptyInterval:
        try:
            inst = build_qp(terms, stack, xddot_star, gains, s, L_s, model, dt,
                            joint_rows=True, horizon=2.0 * horizon)
        except EmptyInterval:
            inst = build_qp(terms, stack, xddot_star, gains, s, L_s, model, dt,
                            joint_rows=False)
            fallback = 1
    sol = qp.solve(inst, tol=options.qp_tol, max_iter=options.qp_max_iter)

    if sol.status != "optimal" and fallback == 0:
        inst = build_qp(terms, stack, xddot_star, gains, s, L_s, model, dt,
                        joint_rows=False)
        sol = qp.solve(inst, tol=options.qp_tol, max_iter=options.qp_max_iter)
        fallback = 1

    if sol.status == "optimal":
        nudot_r = sol.x
        u = terms.M @ nudot_r + terms.C @ ctrl.nu_r + terms.G + K @ s_err
        f_z = float(s.R[:, 2] @ u[0:3])
        F = wrench_to_rotors(f_z, u[3:6], model.rotors)
        tau_M = u[6:].copy()
        margins = inst.b_in - inst.A_in @ nudot_r
        margin = float(np.min(margins))
        sat = np.zeros(4 + n, dtype=bool)
        sat[:4] = (margins[0:4] < 1e-7) | (margins[4:8] < 1e-7)
        sat[4:] = (margins[8:8 + n] < 1e-7) | (margins[8 + n:8 + 2 * n] < 1e-7)
    else:
        fallback = 2
        F, tau_M, u = _gravity_hold(terms, s, model)
        nudot_r = ctrl.last_feasible_nudot
        margin = np.nan
        sat = np.ones(4 + n, dtype=bool)

    resid = float(np.max(np.abs(s.R.T[0:2, :] @ u[0:3])))
    diag = StepDiagnostics(
        qp_status=sol.status, qp_iterations=sol.iterations,
        active_set=sol.active_set, constraint_margin=margin,
        underactuation_residual=resid,
        norm_s=float(np.linalg.norm(s_err)), fallback=fallback)

    # integrate the reference velocity unless windup protection engages
    freeze = options.antiwindup and (fallback == 2 or bool(np.any(sat[:4])))
    if options.integral_enabled and not freeze:
        nu_r_next = ctrl.nu_r + nudot_r * dt
    else:
        nu_r_next = ctrl.nu_r.copy()
    new_ctrl = ControllerState(
        nu_r=nu_r_next,
        last_feasible_nudot=nudot_r.copy() if sol.status == "optimal"
        else ctrl.last_feasible_nudot,
        saturation_flags=sat,
        last_thrust_dir=x_t_d,
    )
    return ControlOutput(F=F, tau_M=tau_M, u=u, diagnostics=diag), new_ctrl
