"""Compiled twin of the plant-integration hot path.

The closed-loop protocol evaluates the full rigid-body dynamics 20 times per
control period (4 RK4 stages x 5 substeps), which dominates runtime in pure
numpy.  This module mirrors the numpy implementation operation for operation
(same chain recursions, same block assembly, same Cholesky solve) as numba
kernels; the simulator uses it when numba imports and falls back to the numpy
path otherwise.  A unit test pins the two paths together.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit
    HAVE_NUMBA = True
except ImportError:        # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f
        return wrap


@njit(cache=True)
def _skew(v):
    S = np.zeros((3, 3))
    S[0, 1] = -v[2]
    S[0, 2] = v[1]
    S[1, 0] = v[2]
    S[1, 2] = -v[0]
    S[2, 0] = -v[1]
    S[2, 1] = v[0]
    return S


@njit(cache=True)
def _rot_exp(phi):
    theta = np.sqrt(phi[0] * phi[0] + phi[1] * phi[1] + phi[2] * phi[2])
    S = _skew(phi)
    if theta < 1e-8:
        return np.eye(3) + S + 0.5 * (S @ S)
    return np.eye(3) + (np.sin(theta) / theta) * S \
        + ((1.0 - np.cos(theta)) / theta**2) * (S @ S)


@njit(cache=True)
def _jr_inv(phi):
    theta = np.sqrt(phi[0] * phi[0] + phi[1] * phi[1] + phi[2] * phi[2])
    S = _skew(phi)
    if theta < 1e-6:
        c = 1.0 / 12.0 + theta**2 / 720.0
    else:
        c = 1.0 / theta**2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) + 0.5 * S + c * (S @ S)


@njit(cache=True)
def _cho_solve(M, rhs):
    """SPD solve via Cholesky with explicit substitution loops."""
    d = M.shape[0]
    L = np.linalg.cholesky(M)
    y = np.zeros(d)
    for i in range(d):
        acc = rhs[i]
        for k in range(i):
            acc -= L[i, k] * y[k]
        y[i] = acc / L[i, i]
    x = np.zeros(d)
    for i in range(d - 1, -1, -1):
        acc = y[i]
        for k in range(i + 1, d):
            acc -= L[k, i] * x[k]
        x[i] = acc / L[i, i]
    return x


@njit(cache=True)
def _deriv(masses, coms, inertias, axes, origins, rot0s, total_mass, grav,
           R, q, nu, ft, tau_M, friction):
    """One dynamics evaluation: returns (nudot, solve residual)."""
    n = axes.shape[0]
    d = 6 + n
    w_B = nu[3:6].copy()

    # --- chain recursion in the base frame --------------------------------
    a_ax = np.zeros((n, 3))
    p_joint = np.zeros((n, 3))
    R_body = np.zeros((n + 1, 3, 3))
    R_body[0] = np.eye(3)
    p_link = np.zeros((n + 1, 3))
    v_link = np.zeros((n + 1, 3))
    a_link = np.zeros((n + 1, 3))
    w_rel = np.zeros((n + 1, 3))
    al_rel = np.zeros((n + 1, 3))
    p_c = np.zeros((n + 1, 3))
    v_c = np.zeros((n + 1, 3))
    a_c = np.zeros((n + 1, 3))
    p_c[0] = coms[0]

    for j in range(n):
        Rp = R_body[j]
        wp = w_rel[j].copy()
        alp = al_rel[j].copy()
        qd_j = nu[6 + j]

        r = Rp @ origins[j]
        p_j = p_link[j] + r
        wxr = np.cross(wp, r)
        v_j = v_link[j] + wxr
        a_j = a_link[j] + np.cross(alp, r) + np.cross(wp, wxr)

        R_joint = Rp @ rot0s[j]
        axis = R_joint @ axes[j]
        axis_dot = np.cross(wp, axis)
        S = _skew(axes[j])
        rot = np.eye(3) + np.sin(q[j]) * S + (1.0 - np.cos(q[j])) * (S @ S)
        R_l = R_joint @ rot

        a_ax[j] = axis
        p_joint[j] = p_j
        R_body[j + 1] = R_l
        p_link[j + 1] = p_j
        v_link[j + 1] = v_j
        a_link[j + 1] = a_j
        w = wp + axis * qd_j
        alpha = alp + axis_dot * qd_j
        w_rel[j + 1] = w
        al_rel[j + 1] = alpha

        c = R_l @ coms[j + 1]
        p_c[j + 1] = p_j + c
        wxc = np.cross(w, c)
        v_c[j + 1] = v_j + wxc
        a_c[j + 1] = a_j + np.cross(alpha, c) + np.cross(w, wxc)

    # --- base-frame block assembly of M and bias ---------------------------
    Sw = _skew(w_B)
    Sw2 = Sw @ Sw
    g_hat = R[2, :] * grav          # R^T e3 scaled by g

    mp_sum = np.zeros(3)
    M22 = np.zeros((3, 3))
    M23 = np.zeros((3, n))
    M33 = np.zeros((n, n))
    B_sum = np.zeros((3, n))
    f_sum = np.zeros(3)
    bias_ang = np.zeros(3)
    f_sfx = np.zeros((n + 1, 3))
    psi_sfx = np.zeros((n + 1, 3))

    for i in range(n + 1):
        mass = masses[i]
        pch = p_c[i].copy()
        Sp = _skew(pch)
        if i == 0:
            Ibar = inertias[0].copy()
        else:
            Rb = R_body[i]
            Ibar = Rb @ inertias[i] @ Rb.T

        mp_sum += mass * pch
        M22 += mass * (Sp.T @ Sp) + Ibar

        f_i = mass * (Sw2 @ pch + 2.0 * (Sw @ v_c[i]) + a_c[i] + g_hat)
        w_i = w_B + w_rel[i]
        al_i = al_rel[i] + np.cross(w_B, w_rel[i])
        tau_i = Ibar @ al_i + np.cross(w_i, Ibar @ w_i)
        f_sum += f_i
        bias_ang += Sp @ f_i + tau_i
        if i >= 1:
            f_sfx[i] = f_i
            psi_sfx[i] = np.cross(pch, f_i) + tau_i

            JvB = np.zeros((3, i))
            for j in range(i):
                JvB[:, j] = np.cross(a_ax[j], pch - p_joint[j])
            A = a_ax[:i].T.copy()
            B_sum[:, :i] += mass * JvB
            M23[:, :i] += mass * (Sp @ JvB) + Ibar @ A
            M33[:i, :i] += mass * (JvB.T @ JvB) + A.T @ (Ibar @ A)

    bias_q = np.zeros(n)
    phi = np.zeros(3)
    psi = np.zeros(3)
    for j in range(n, 0, -1):
        phi = phi + f_sfx[j]
        psi = psi + psi_sfx[j]
        bias_q[j - 1] = a_ax[j - 1] @ (psi - np.cross(p_joint[j - 1], phi))

    M = np.zeros((d, d))
    for k in range(3):
        M[k, k] = total_mass
    M12 = -(R @ _skew(mp_sum))
    M13 = R @ B_sum
    M[0:3, 3:6] = M12
    M[3:6, 0:3] = M12.T
    M[0:3, 6:] = M13
    M[6:, 0:3] = M13.T
    M[3:6, 3:6] = M22
    M[3:6, 6:] = M23
    M[6:, 3:6] = M23.T
    M[6:, 6:] = M33

    rhs = np.zeros(d)
    rhs[0:3] = R[:, 2] * ft[0] - (R @ f_sum)
    rhs[3:6] = ft[1:4] - bias_ang
    for j in range(n):
        rhs[6 + j] = tau_M[j] - bias_q[j] - friction * nu[6 + j]
    nudot = _cho_solve(M, rhs)
    resid = np.max(np.abs(M @ nudot - rhs))
    return nudot, resid


@njit(cache=True)
def _substeps(masses, coms, inertias, axes, origins, rot0s, total_mass, grav,
              ft, tau_M, friction, p0, R0, q0, nu0, dt, n_sub):
    """n_sub RK4 steps; orientation integrated in exp-map coordinates."""
    n = axes.shape[0]
    d = 6 + n
    dim = 6 + n + d
    p = p0.copy()
    R = R0.copy()
    q = q0.copy()
    nu = nu0.copy()
    resid_max = 0.0

    for _ in range(n_sub):
        y0 = np.zeros(dim)
        y0[0:3] = p
        y0[6:6 + n] = q
        y0[6 + n:] = nu

        k = np.zeros((4, dim))
        for stage in range(4):
            if stage == 0:
                y = y0.copy()
            elif stage == 1:
                y = y0 + 0.5 * dt * k[0]
            elif stage == 2:
                y = y0 + 0.5 * dt * k[1]
            else:
                y = y0 + dt * k[2]
            th = y[3:6].copy()
            Rs = R @ _rot_exp(th)
            nus = y[6 + n:].copy()
            nudot, resid = _deriv(masses, coms, inertias, axes, origins,
                                  rot0s, total_mass, grav, Rs, y[6:6 + n],
                                  nus, ft, tau_M, friction)
            resid_max = max(resid_max, resid)
            k[stage, 0:3] = nus[0:3]
            k[stage, 3:6] = _jr_inv(th) @ nus[3:6]
            k[stage, 6:6 + n] = nus[6:]
            k[stage, 6 + n:] = nudot

        y = y0 + (dt / 6.0) * (k[0] + 2.0 * k[1] + 2.0 * k[2] + k[3])
        p = y[0:3].copy()
        q = y[6:6 + n].copy()
        nu = y[6 + n:].copy()
        R = R @ _rot_exp(y[3:6].copy())
        R = R @ (1.5 * np.eye(3) - 0.5 * (R.T @ R))
    return p, R, q, nu, resid_max
