"""Equations of motion: M, C, G assembly, inverse/forward dynamics, allocation.

The generalized-force convention matches the left-hand-side gravity term:
M nudot + C nu + G = u, with the world-frame force rows of G equal to
+total_mass * g * e3, so hover thrust equals weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .kinematics import (SystemState, _body_jacobians_from_chain,
                         _body_jacobian_rates, _chain, _cross, _numeric,
                         skew, E3)
from .model import ModelDescription, RotorGeometry


class SolveError(Exception):
    """Linear solve in forward dynamics failed its residual check."""


@dataclass
class DynamicsTerms:
    M: np.ndarray   # (6+n)x(6+n)
    C: np.ndarray   # (6+n)x(6+n)
    G: np.ndarray   # 6+n


@dataclass
class GeneralizedInput:
    """Base wrench [world force; body torque] plus joint torques."""

    w_B: np.ndarray    # 6
    tau_M: np.ndarray  # n

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.w_B, self.tau_M])

    @staticmethod
    def from_vector(u: np.ndarray) -> "GeneralizedInput":
        return GeneralizedInput(w_B=u[0:6], tau_M=u[6:])


def _bodies(m: ModelDescription):
    yield m.base
    for body, _ in m.links:
        yield body


def dynamics_terms(m: ModelDescription, s: SystemState) -> DynamicsTerms:
    """Assemble the full M, C, G by summing per-body contributions."""
    ch = _chain(m, s)
    kin = _body_jacobians_from_chain(m, s, ch)
    rates = _body_jacobian_rates(m, s, ch)
    d = 6 + m.n_joints
    M = np.zeros((d, d))
    C = np.zeros((d, d))
    G = np.zeros(d)
    g = m.gravity
    for body, bk, (Jvd, Jwd) in zip(_bodies(m), kin, rates):
        Jv, Jw = bk.Jv, bk.Jw
        I_Jw = body.inertia @ Jw
        M += body.mass * (Jv.T @ Jv) + Jw.T @ I_Jw
        w_i = Jw @ s.nu
        C += body.mass * (Jv.T @ Jvd) + Jw.T @ (body.inertia @ Jwd) \
            - Jw.T @ (skew(body.inertia @ w_i) @ Jw)
        G += (body.mass * g) * Jv[2, :]
    return DynamicsTerms(M=M, C=C, G=G)


def inverse_dynamics(terms: DynamicsTerms, nu_r_dot: np.ndarray,
                     nu_r: np.ndarray, s_err: np.ndarray,
                     K: np.ndarray) -> GeneralizedInput:
    """u = M nudot_r + C nu_r + G + K s.  With s = 0 and nu_r = nu this is the
    plain inverse-dynamics feedforward."""
    u = terms.M @ nu_r_dot + terms.C @ nu_r + terms.G + K @ s_err
    return GeneralizedInput.from_vector(u)


def _mass_and_bias(m: ModelDescription, s: SystemState
                   ) -> tuple[np.ndarray, np.ndarray]:
    """M and (C nu + G) without forming world-frame Jacobians.

    All per-body sums are accumulated in the base frame using the chain
    quantities; the base rotation enters only through a handful of final
    products.  Mathematically identical to summing J^T-weighted contributions.
    """
    nm = _numeric(m)
    ch = _chain(m, s)
    n = nm.n
    d = 6 + n
    R, w_B = s.R, s.omega_B
    Sw = skew(w_B)
    Sw2 = Sw @ Sw
    g_hat = R.T[:, 2] * m.gravity        # gravity direction in base frame * g

    mp_sum = np.zeros(3)                 # sum m_i p_i
    M22 = np.zeros((3, 3))
    M23 = np.zeros((3, n))
    M33 = np.zeros((n, n))
    B_sum = np.zeros((3, n))             # sum m_i JvB_i
    f_sum = np.zeros(3)                  # sum of base-frame body forces
    bias_ang = np.zeros(3)
    # suffix accumulators for the joint-space bias (backward pass)
    f_sfx = [np.zeros(3) for _ in range(n + 1)]
    psi_sfx = [np.zeros(3) for _ in range(n + 1)]

    for i in range(n + 1):
        mass = nm.masses[i]
        I_i = nm.inertias[i]
        p = ch.p_c[i]
        Rb = ch.R_body[i]
        Sp = skew(p)
        Ibar = I_i if i == 0 else Rb @ I_i @ Rb.T

        mp_sum += mass * p
        M22 += mass * (Sp.T @ Sp) + Ibar

        # base-frame body force and torque (velocity-product + gravity)
        f_i = mass * (Sw2 @ p + 2.0 * (Sw @ ch.v_c[i]) + ch.a_c[i] + g_hat)
        w_i = w_B + ch.w_rel[i]
        al_i = ch.alpha_rel[i] + _cross(w_B, ch.w_rel[i])
        tau_i = Ibar @ al_i + _cross(w_i, Ibar @ w_i)
        f_sum += f_i
        bias_ang += Sp @ f_i + tau_i
        if i >= 1:
            f_sfx[i] = f_i
            psi_sfx[i] = _cross(p, f_i) + tau_i

        if i >= 1:
            JvB = np.zeros((3, i))
            for j in range(i):
                JvB[:, j] = _cross(ch.a[j], p - ch.p_joint[j])
            A = np.column_stack(ch.a[:i])     # JwB columns
            B_sum[:, :i] += mass * JvB
            M23[:, :i] += mass * (Sp @ JvB) + Ibar @ A
            M33[:i, :i] += mass * (JvB.T @ JvB) + A.T @ (Ibar @ A)

    # joint-space bias via suffix sums: bias_q[j] = a_j . (Psi_j - p_joint_j x Phi_j)
    bias_q = np.zeros(n)
    phi = np.zeros(3)
    psi = np.zeros(3)
    for j in range(n, 0, -1):
        phi = phi + f_sfx[j]
        psi = psi + psi_sfx[j]
        bias_q[j - 1] = ch.a[j - 1] @ (psi - _cross(ch.p_joint[j - 1], phi))

    M = np.zeros((d, d))
    M[0:3, 0:3] = nm.total_mass * np.eye(3)
    M12 = -R @ skew(mp_sum)
    M13 = R @ B_sum
    M[0:3, 3:6] = M12
    M[3:6, 0:3] = M12.T
    M[0:3, 6:] = M13
    M[6:, 0:3] = M13.T
    M[3:6, 3:6] = M22
    M[3:6, 6:] = M23
    M[6:, 3:6] = M23.T
    M[6:, 6:] = M33

    bias = np.concatenate([R @ f_sum, bias_ang, bias_q])
    return M, bias


def forward_dynamics(m: ModelDescription, s: SystemState, u: GeneralizedInput,
                     friction: np.ndarray | float = 0.0) -> np.ndarray:
    """Generalized acceleration from the applied input and viscous joint friction.

    Solves M nudot = u - C nu - G - [0; 0; diag(friction) qd] with a fresh
    SPD factorization each call.
    """
    M, bias = _mass_and_bias(m, s)
    rhs = u.vector - bias
    rhs[6:] -= np.asarray(friction) * s.nu[6:]
    try:
        cf = cho_factor(M, lower=True, check_finite=False)
    except np.linalg.LinAlgError as e:
        raise SolveError(f"mass matrix factorization failed: {e}")
    nudot = cho_solve(cf, rhs, check_finite=False)
    resid = np.max(np.abs(M @ nudot - rhs))
    if resid > 1e-9:
        raise SolveError(f"forward dynamics solve residual {resid:.2e} exceeds 1e-9")
    return nudot


def rotors_to_wrench(F: np.ndarray, R: np.ndarray,
                     geom: RotorGeometry) -> GeneralizedInput:
    """Base wrench produced by the four rotor thrusts: w_B = T_w Xi F."""
    ft = geom.allocation_matrix() @ F
    return GeneralizedInput(w_B=np.concatenate([R @ E3 * ft[0], ft[1:4]]),
                            tau_M=np.zeros(0))


def wrench_to_rotors(f_z: float, tau_b: np.ndarray,
                     geom: RotorGeometry) -> np.ndarray:
    """Rotor thrusts realizing collective thrust f_z and body torque tau_b.

    No clipping here; saturating to the rotor box is the plant's job.
    """
    return np.linalg.solve(geom.allocation_matrix(),
                           np.concatenate([[f_z], tau_b]))


def potential_energy(m: ModelDescription, s: SystemState) -> float:
    ch = _chain(m, s)
    V = 0.0
    for body, pc in zip(_bodies(m), ch.p_c):
        z = s.p_B[2] + s.R[2, :] @ pc
        V += body.mass * m.gravity * z
    return float(V)


def total_energy(m: ModelDescription, s: SystemState) -> float:
    """Kinetic plus gravitational potential energy."""
    terms = dynamics_terms(m, s)
    return float(0.5 * s.nu @ (terms.M @ s.nu)) + potential_energy(m, s)
