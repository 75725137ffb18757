"""Setpoint schedules and smooth polynomial reference generation.

Each transition blends between consecutive setpoints with a quintic that has
zero velocity and acceleration at both ends; outside transitions the reference
holds the last setpoint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .controller import TaskReference


def quintic_blend(tau: float) -> tuple[float, float, float]:
    """Value/first/second derivative of 10 t^3 - 15 t^4 + 6 t^5 on [0, 1]."""
    if tau <= 0.0:
        return 0.0, 0.0, 0.0
    if tau >= 1.0:
        return 1.0, 0.0, 0.0
    s = tau**3 * (10.0 - 15.0 * tau + 6.0 * tau**2)
    sd = 30.0 * tau**2 - 60.0 * tau**3 + 30.0 * tau**4
    sdd = 60.0 * tau - 180.0 * tau**2 + 120.0 * tau**3
    return s, sd, sdd


@dataclass(frozen=True)
class Setpoint:
    time: float              # transition start, s
    duration: float          # transition length, s (0 for the initial point)
    p_B: np.ndarray
    yaw: float               # rad
    p_E: np.ndarray          # base frame


@dataclass(frozen=True)
class SetpointSchedule:
    points: tuple[Setpoint, ...]

    def __post_init__(self):
        times = [p.time for p in self.points]
        if any(t1 <= t0 for t0, t1 in zip(times, times[1:])):
            raise ValueError("setpoint times must be strictly increasing")

    def _component(self, t: float, get) -> tuple[float, float, float]:
        pts = self.points
        if t <= pts[0].time:
            return get(pts[0]), 0.0, 0.0
        # find the last transition that has started
        k = 0
        for i, p in enumerate(pts):
            if p.time <= t:
                k = i
        if k == 0:
            return get(pts[0]), 0.0, 0.0
        p0, p1 = pts[k - 1], pts[k]
        dur = p1.duration
        if dur <= 0.0 or t >= p1.time + dur:
            return get(p1), 0.0, 0.0
        s, sd, sdd = quintic_blend((t - p1.time) / dur)
        v0, v1 = get(p0), get(p1)
        dv = v1 - v0
        return v0 + dv * s, dv * sd / dur, dv * sdd / dur**2


def quintic_reference(schedule: SetpointSchedule, t: float) -> TaskReference:
    """Task reference at time t; yaw is converted to the yaw-direction vector."""
    p = np.zeros(3)
    pd = np.zeros(3)
    pdd = np.zeros(3)
    for i in range(3):
        p[i], pd[i], pdd[i] = schedule._component(t, lambda sp, i=i: sp.p_B[i])
    pe = np.zeros(3)
    ped = np.zeros(3)
    pedd = np.zeros(3)
    for i in range(3):
        pe[i], ped[i], pedd[i] = schedule._component(t, lambda sp, i=i: sp.p_E[i])
    yaw, yawd, yawdd = schedule._component(t, lambda sp: sp.yaw)

    c, s = np.cos(yaw), np.sin(yaw)
    x_psi = np.array([c, -s, 0.0])
    d_dpsi = np.array([-s, -c, 0.0])
    d2_dpsi = np.array([-c, s, 0.0])
    return TaskReference(
        p_B_d=p, p_B_d_dot=pd, p_B_d_ddot=pdd,
        X_psi_d=x_psi,
        X_psi_d_dot=d_dpsi * yawd,
        X_psi_d_ddot=d2_dpsi * yawd**2 + d_dpsi * yawdd,
        p_E_d=pe, p_E_d_dot=ped, p_E_d_ddot=pedd,
    )
