"""Forward kinematics, per-body Jacobians and the task stack.

Conventions: the base pose is (p_B, R) with R mapping base to world and
Rdot = R*S(omega_B), omega_B in the body frame.  The generalized velocity is
nu = [pdot_B (world); omega_B (body); qdot_M].  Per-body translational
Jacobians are world-frame, rotational Jacobians are body-i-frame, so that
[pdot_ic; omega_ic] = [Jv; Jw] nu.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelDescription

E1 = np.array([1.0, 0.0, 0.0])
E3 = np.array([0.0, 0.0, 1.0])


def skew(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix with skew(v) @ w == cross(v, w)."""
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def _cross(a, b) -> np.ndarray:
    # np.cross has ~20x call overhead at this size; hot paths use this instead
    return np.array([a[1] * b[2] - a[2] * b[1],
                     a[2] * b[0] - a[0] * b[2],
                     a[0] * b[1] - a[1] * b[0]])


def rotation_exp(phi: np.ndarray) -> np.ndarray:
    """Rodrigues formula: exp of the skew of a rotation vector."""
    theta = np.linalg.norm(phi)
    S = skew(phi)
    if theta < 1e-8:
        # second-order series, exact enough below the threshold
        return np.eye(3) + S + 0.5 * (S @ S)
    return np.eye(3) + (np.sin(theta) / theta) * S \
        + ((1.0 - np.cos(theta)) / theta**2) * (S @ S)


def so3_right_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    """Inverse right Jacobian of SO(3); maps body rates to exp-chart rates."""
    theta = np.linalg.norm(phi)
    S = skew(phi)
    if theta < 1e-6:
        c = 1.0 / 12.0 + theta**2 / 720.0
    else:
        c = 1.0 / theta**2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) + 0.5 * S + c * (S @ S)


def project_to_rotation(R: np.ndarray) -> np.ndarray:
    """One symmetric orthogonalization step; enough for near-orthonormal input."""
    return R @ (1.5 * np.eye(3) - 0.5 * (R.T @ R))


def yaw_of(R: np.ndarray) -> float:
    return float(np.arctan2(R[1, 0], R[0, 0]))


def wrap_angle(a):
    return (a + np.pi) % (2.0 * np.pi) - np.pi


@dataclass
class SystemState:
    """Floating-base pose, joint angles and generalized velocity."""

    p_B: np.ndarray   # 3, world
    R: np.ndarray     # 3x3, base -> world
    q_M: np.ndarray   # n
    nu: np.ndarray    # 6+n: [pdot_B world; omega_B body; qdot_M]

    @property
    def v_B(self) -> np.ndarray:
        return self.nu[0:3]

    @property
    def omega_B(self) -> np.ndarray:
        return self.nu[3:6]

    @property
    def qd_M(self) -> np.ndarray:
        return self.nu[6:]

    def copy(self) -> "SystemState":
        return SystemState(self.p_B.copy(), self.R.copy(),
                           self.q_M.copy(), self.nu.copy())

    def check(self) -> None:
        err = np.max(np.abs(self.R.T @ self.R - np.eye(3)))
        if err > 1e-9 or np.linalg.det(self.R) <= 0.0:
            raise ValueError(f"R is not a rotation matrix (orthogonality error {err:.2e})")


@dataclass
class BodyKinematics:
    """World pose and Jacobians of one body's CoM.

    forward_kinematics fills only the pose; body_jacobians fills everything.
    """

    p_ic: np.ndarray               # 3, world CoM position
    R_i: np.ndarray                # 3x3, world orientation
    Jv: np.ndarray = None          # 3x(6+n), world-frame translational Jacobian
    Jw: np.ndarray = None          # 3x(6+n), body-i-frame rotational Jacobian
    Jv_dot_nu: np.ndarray = None   # 3, drift acceleration (Jvdot @ nu)
    Jw_dot_nu: np.ndarray = None   # 3


@dataclass
class TaskStack:
    """12-row task map: base position, yaw vector, end effector, thrust axis."""

    J_task: np.ndarray   # 12x(6+n)
    drift: np.ndarray    # 12, so that Xddot = J_task @ nudot + drift
    X: np.ndarray        # 12: [p_B; X_psi; p_E^B; X_t]
    X_dot: np.ndarray    # 12


class _NumericModel:
    """Per-model constant arrays cached for the hot dynamics paths."""

    def __init__(self, m: ModelDescription):
        self.n = m.n_joints
        self.masses = [m.base.mass] + [b.mass for b, _ in m.links]
        self.coms = [m.base.com_offset] + [b.com_offset for b, _ in m.links]
        self.inertias = [m.base.inertia] + [b.inertia for b, _ in m.links]
        self.axes = [j.axis for _, j in m.links]
        self.S_axis = [skew(j.axis) for _, j in m.links]
        self.S_axis2 = [skew(j.axis) @ skew(j.axis) for _, j in m.links]
        self.origins = [j.origin_translation for _, j in m.links]
        self.R0 = [j.origin_rotation for _, j in m.links]
        self.ee = m.ee_offset
        self.total_mass = m.total_mass
        self.allocation = m.rotors.allocation_matrix()
        self.allocation_inv = np.linalg.inv(self.allocation)
        # stacked contiguous copies for the compiled plant kernels
        self.masses_arr = np.ascontiguousarray(self.masses, dtype=float)
        self.coms_arr = np.ascontiguousarray(np.stack(self.coms))
        self.inertias_arr = np.ascontiguousarray(np.stack(self.inertias))
        self.axes_arr = np.ascontiguousarray(np.stack(self.axes))
        self.origins_arr = np.ascontiguousarray(np.stack(self.origins))
        self.R0_arr = np.ascontiguousarray(np.stack(self.R0))


def _numeric(m: ModelDescription) -> _NumericModel:
    nm = getattr(m, "_numeric_cache", None)
    if nm is None:
        nm = _NumericModel(m)
        object.__setattr__(m, "_numeric_cache", nm)
    return nm


class _ChainData:
    """Base-frame quantities of the arm chain at (q, qdot).

    All vectors are expressed in the base frame and measured relative to it;
    bodies are indexed 0 (base) .. n (last link).  Accelerations are the
    velocity-product terms (evaluated at qddot = 0).
    """

    def __init__(self, m: ModelDescription, q: np.ndarray, qd: np.ndarray):
        nm = _numeric(m)
        n = nm.n
        z3 = np.zeros(3)
        eye3 = np.eye(3)
        self.n = n
        self.a = []                    # joint axes
        self.a_dot = []
        self.p_joint = []              # joint origins
        self.v_joint = []
        self.R_body = [eye3]           # body frames, index 0 = base
        self.p_link = [z3]             # link-frame origins
        self.v_link = [z3]
        self.a_link = [z3]
        self.w_rel = [z3]              # angular velocity of body rel. base
        self.alpha_rel = [z3]
        self.p_c = [nm.coms[0]]        # CoM positions
        self.v_c = [z3]
        self.a_c = [z3]

        for j in range(n):
            Rp = self.R_body[j]
            pp, vp, ap = self.p_link[j], self.v_link[j], self.a_link[j]
            wp, alp = self.w_rel[j], self.alpha_rel[j]

            r = Rp @ nm.origins[j]
            p_j = pp + r
            v_j = vp + _cross(wp, r)
            a_j = ap + _cross(alp, r) + _cross(wp, _cross(wp, r))

            R_joint = Rp @ nm.R0[j]
            axis = R_joint @ nm.axes[j]
            axis_dot = _cross(wp, axis)
            rot = eye3 + np.sin(q[j]) * nm.S_axis[j] \
                + (1.0 - np.cos(q[j])) * nm.S_axis2[j]
            R_l = R_joint @ rot
            w = wp + axis * qd[j]
            alpha = alp + axis_dot * qd[j]

            self.a.append(axis)
            self.a_dot.append(axis_dot)
            self.p_joint.append(p_j)
            self.v_joint.append(v_j)
            self.R_body.append(R_l)
            self.p_link.append(p_j)
            self.v_link.append(v_j)
            self.a_link.append(a_j)
            self.w_rel.append(w)
            self.alpha_rel.append(alpha)

            c = R_l @ nm.coms[j + 1]
            self.p_c.append(p_j + c)
            self.v_c.append(v_j + _cross(w, c))
            self.a_c.append(a_j + _cross(alpha, c)
                            + _cross(w, _cross(w, c)))

        # end-effector point on the last link
        r_ee = self.R_body[n] @ nm.ee
        w_n, al_n = self.w_rel[n], self.alpha_rel[n]
        self.p_ee = self.p_link[n] + r_ee
        self.v_ee = self.v_link[n] + _cross(w_n, r_ee)
        self.a_ee = self.a_link[n] + _cross(al_n, r_ee) \
            + _cross(w_n, _cross(w_n, r_ee))


def _chain(m: ModelDescription, s: SystemState) -> _ChainData:
    return _ChainData(m, s.q_M, s.nu[6:])


def forward_kinematics(m: ModelDescription, s: SystemState) -> list[BodyKinematics]:
    """World poses of every body CoM (Jacobian fields left empty)."""
    ch = _chain(m, s)
    return [BodyKinematics(p_ic=s.p_B + s.R @ ch.p_c[i],
                           R_i=s.R @ ch.R_body[i])
            for i in range(m.n_joints + 1)]


def _body_jacobians_from_chain(m: ModelDescription, s: SystemState,
                               ch: _ChainData) -> list[BodyKinematics]:
    n = m.n_joints
    d = 6 + n
    R, w_B = s.R, s.omega_B
    Sw = skew(w_B)
    out = []
    for i in range(n + 1):
        pc, vc, ac = ch.p_c[i], ch.v_c[i], ch.a_c[i]
        Rb = ch.R_body[i]
        Jv = np.zeros((3, d))
        Jv[:, 0:3] = np.eye(3)
        Jv[:, 3:6] = -R @ skew(pc)
        Jw = np.zeros((3, d))
        Jw[:, 3:6] = Rb.T
        # joint columns: only joints at or before body i move it
        for j in range(min(i, n)):
            Jv[:, 6 + j] = R @ _cross(ch.a[j], pc - ch.p_joint[j])
            Jw[:, 6 + j] = Rb.T @ ch.a[j]
        # drift accelerations (nudot = 0)
        drift_v = R @ (Sw @ (Sw @ pc) + 2.0 * (Sw @ vc) + ac)
        drift_w = Rb.T @ (ch.alpha_rel[i] + _cross(w_B, ch.w_rel[i]))
        out.append(BodyKinematics(
            p_ic=s.p_B + R @ pc, R_i=R @ Rb,
            Jv=Jv, Jw=Jw, Jv_dot_nu=drift_v, Jw_dot_nu=drift_w,
        ))
    return out


def body_jacobians(m: ModelDescription, s: SystemState) -> list[BodyKinematics]:
    """Poses, Jacobians and drift accelerations of every body CoM."""
    return _body_jacobians_from_chain(m, s, _chain(m, s))


def _body_jacobian_rates(m: ModelDescription, s: SystemState,
                         ch: _ChainData) -> list[tuple[np.ndarray, np.ndarray]]:
    """Analytic (Jv_dot, Jw_dot) per body; needed for the full Coriolis matrix."""
    n = m.n_joints
    d = 6 + n
    R, w_B = s.R, s.omega_B
    Sw = skew(w_B)
    RSw = R @ Sw
    out = []
    for i in range(n + 1):
        pc, vc = ch.p_c[i], ch.v_c[i]
        Rb = ch.R_body[i]
        w_rel = ch.w_rel[i]
        Jvd = np.zeros((3, d))
        Jvd[:, 3:6] = -(RSw @ skew(pc) + R @ skew(vc))
        Jwd = np.zeros((3, d))
        Jwd[:, 3:6] = -Rb.T @ skew(w_rel)
        for j in range(min(i, n)):
            rel = pc - ch.p_joint[j]
            col = _cross(ch.a[j], rel)
            col_dot = _cross(ch.a_dot[j], rel) \
                + _cross(ch.a[j], vc - ch.v_joint[j])
            Jvd[:, 6 + j] = RSw @ col + R @ col_dot
            Jwd[:, 6 + j] = Rb.T @ (ch.a_dot[j] - _cross(w_rel, ch.a[j]))
        out.append((Jvd, Jwd))
    return out


def task_stack(m: ModelDescription, s: SystemState) -> TaskStack:
    """Assemble the 12-row task Jacobian, drift, and current task values."""
    ch = _chain(m, s)
    n = m.n_joints
    d = 6 + n
    R, w_B = s.R, s.omega_B
    Sw = skew(w_B)

    x_psi = R.T @ E1
    x_t = R @ E3

    # end-effector Jacobian in the base frame (joint columns only)
    J_ee = np.zeros((3, n))
    for j in range(n):
        J_ee[:, j] = _cross(ch.a[j], ch.p_ee - ch.p_joint[j])

    J = np.zeros((12, d))
    J[0:3, 0:3] = np.eye(3)
    J[3:6, 3:6] = skew(x_psi)
    J[6:9, 6:] = J_ee
    J[9:12, 3:6] = -R @ skew(E3)

    drift = np.zeros(12)
    drift[3:6] = Sw @ (Sw @ x_psi)
    drift[6:9] = ch.a_ee          # Jdot_E^B qdot
    drift[9:12] = R @ (Sw @ (Sw @ E3))

    X = np.concatenate([s.p_B, x_psi, ch.p_ee, x_t])
    X_dot = np.concatenate([s.v_B, skew(x_psi) @ w_B, ch.v_ee,
                            -R @ _cross(E3, w_B)])
    return TaskStack(J_task=J, drift=drift, X=X, X_dot=X_dot)
