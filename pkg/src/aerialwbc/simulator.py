"""Deterministic closed-loop simulation at 200 Hz with zero-order hold.

The plant integrates the true dynamics with fixed-step RK4 (default five 1 ms
substeps per control period) on the rotation manifold via the exponential map.
Model-perturbation machinery and the sensor model (GNSS hold, encoder
quantization, white gyro/accel noise) live here; the controller only ever
sees the measured state.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import _fastdyn
from .controller import ControllerOptions, ControllerState, control_step
from .dynamics import (GeneralizedInput, SolveError, forward_dynamics,
                       rotors_to_wrench)
from .kinematics import (SystemState, _numeric, project_to_rotation,
                         rotation_exp, so3_right_jacobian_inv, task_stack,
                         wrap_angle, yaw_of)
from .model import (BodyParams, GainSet, ModelDescription, ParseError,
                    _load_yaml, SCHEMA_VERSION)
from .reference import Setpoint, SetpointSchedule, quintic_reference

CONTROL_DT = 0.005           # 200 Hz loop
DEFAULT_SUBSTEPS = 5         # 1 ms RK4 substeps


@dataclass(frozen=True)
class PerturbationSpec:
    """Plant/controller model mismatch used in the robustness studies."""

    link_mass_scale: float = 0.9        # controller model only
    zero_inertia_products: bool = True  # controller model only
    joint_friction: float = 5.0e-4      # N m/(rad/s), plant only

    def validate(self) -> None:
        if not self.link_mass_scale > 0.0:
            raise ParseError("perturbations.link_mass_scale must be > 0")


@dataclass(frozen=True)
class NoiseSpec:
    """Additive sensing model; all-zero sigmas and encoder_bits=0 disable it."""

    gnss_sigma_pos: float = 0.0    # m
    gnss_sigma_vel: float = 0.0    # m/s
    gnss_rate: float = 10.0        # Hz
    encoder_bits: int = 0          # 12-bit encoders when enabled
    gyro_sigma: float = 0.0        # rad/s
    accel_sigma: float = 0.0       # m/s^2
    joint_vel_lpf_cutoff: float = 25.0  # Hz
    seed: int = 0

    @property
    def enabled(self) -> bool:
        return (self.gnss_sigma_pos > 0 or self.gnss_sigma_vel > 0
                or self.encoder_bits > 0 or self.gyro_sigma > 0
                or self.accel_sigma > 0)

    @staticmethod
    def defaults(seed: int = 0) -> "NoiseSpec":
        # gyro/accel sigmas follow from the datasheet random-walk densities
        # sampled at the 200 Hz IMU rate
        return NoiseSpec(gnss_sigma_pos=0.02, gnss_sigma_vel=0.05,
                         gnss_rate=10.0, encoder_bits=12,
                         gyro_sigma=6.9e-4, accel_sigma=9.7e-3,
                         joint_vel_lpf_cutoff=25.0, seed=seed)

    def validate(self) -> None:
        for name in ("gnss_sigma_pos", "gnss_sigma_vel", "gnss_rate",
                     "gyro_sigma", "accel_sigma", "joint_vel_lpf_cutoff"):
            if getattr(self, name) < 0:
                raise ParseError(f"noise.{name} must be >= 0")
        if self.encoder_bits < 0:
            raise ParseError("noise.encoder_bits must be >= 0")


class MeasurementModel:
    """Stateful sensor simulation over the ground-truth state.

    Uses a PCG64 generator seeded from the spec; the draw order per call is
    fixed, so a given (spec, call sequence) yields a bit-reproducible stream.
    """

    def __init__(self, spec: NoiseSpec, dt: float):
        self.spec = spec
        self.dt = dt
        self.rng = np.random.default_rng(np.random.PCG64(spec.seed))
        self._gnss_pos = None
        self._gnss_vel = None
        self._next_gnss = 0.0
        self._prev_q = None
        self._qd_filt = None

    def measure(self, s: SystemState, t: float) -> SystemState:
        sp = self.spec
        if not sp.enabled:
            return s.copy()
        est = s.copy()

        if t >= self._next_gnss - 1e-12:
            self._gnss_pos = s.p_B + sp.gnss_sigma_pos * self.rng.standard_normal(3)
            self._gnss_vel = s.nu[0:3] + sp.gnss_sigma_vel * self.rng.standard_normal(3)
            self._next_gnss += 1.0 / sp.gnss_rate
        est.p_B = self._gnss_pos.copy()
        est.nu = s.nu.copy()
        est.nu[0:3] = self._gnss_vel + sp.accel_sigma * self.dt \
            * self.rng.standard_normal(3)
        est.nu[3:6] = s.nu[3:6] + sp.gyro_sigma * self.rng.standard_normal(3)

        if sp.encoder_bits > 0:
            step = 2.0 * np.pi / (1 << sp.encoder_bits)
            q_meas = np.round(s.q_M / step) * step
            if self._prev_q is None:
                self._prev_q = q_meas
                self._qd_filt = np.zeros_like(q_meas)
            qd_raw = (q_meas - self._prev_q) / self.dt
            self._prev_q = q_meas
            alpha = 1.0 - np.exp(-2.0 * np.pi * sp.joint_vel_lpf_cutoff * self.dt)
            self._qd_filt = self._qd_filt + alpha * (qd_raw - self._qd_filt)
            est.q_M = q_meas
            est.nu[6:] = self._qd_filt.copy()
        return est


def apply_perturbations(truth: ModelDescription, p: PerturbationSpec
                        ) -> tuple[ModelDescription, ModelDescription]:
    """Return (plant_model, controller_model); only the latter is perturbed."""
    p.validate()
    links = []
    for body, joint in truth.links:
        inertia = body.inertia.copy()
        if p.zero_inertia_products:
            inertia = np.diag(np.diag(inertia))
        links.append((BodyParams(mass=body.mass * p.link_mass_scale,
                                 com_offset=body.com_offset,
                                 inertia=inertia), joint))
    ctrl_model = ModelDescription(base=truth.base, links=tuple(links),
                                  rotors=truth.rotors, gravity=truth.gravity,
                                  ee_offset=truth.ee_offset)
    return truth, ctrl_model


def plant_step(plant: ModelDescription, s: SystemState, F: np.ndarray,
               tau_M: np.ndarray, dt: float,
               friction: float = 0.0) -> SystemState:
    """One RK4 step of the true dynamics under clipped, held actuation.

    Orientation is integrated in exponential-map coordinates around the
    incoming rotation and re-orthonormalized afterwards.
    """
    F = np.clip(F, plant.rotors.f_min, plant.rotors.f_max)
    tau_M = np.clip(tau_M, plant.tau_min, plant.tau_max)

    R0 = s.R
    n = plant.n_joints

    def deriv(y):
        p = y[0:3]
        th = y[3:6]
        q = y[6:6 + n]
        nu = y[6 + n:]
        R = R0 @ rotation_exp(th)
        st = SystemState(p, R, q, nu)
        w = rotors_to_wrench(F, R, plant.rotors)
        u = GeneralizedInput(w_B=w.w_B, tau_M=tau_M)
        nudot = forward_dynamics(plant, st, u, friction)
        thdot = so3_right_jacobian_inv(th) @ nu[3:6]
        return np.concatenate([nu[0:3], thdot, nu[6:], nudot])

    y0 = np.concatenate([s.p_B, np.zeros(3), s.q_M, s.nu])
    k1 = deriv(y0)
    k2 = deriv(y0 + 0.5 * dt * k1)
    k3 = deriv(y0 + 0.5 * dt * k2)
    k4 = deriv(y0 + dt * k3)
    y = y0 + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    R_new = project_to_rotation(R0 @ rotation_exp(y[3:6]))
    return SystemState(p_B=y[0:3], R=R_new, q_M=y[6:6 + n], nu=y[6 + n:])


def _plant_substeps(plant: ModelDescription, s: SystemState, F: np.ndarray,
                    tau_M: np.ndarray, dt: float, n_sub: int,
                    friction: float) -> SystemState:
    """Advance one control period (n_sub RK4 substeps) under held actuation."""
    if _fastdyn.HAVE_NUMBA:
        nm = _numeric(plant)
        F = np.clip(F, plant.rotors.f_min, plant.rotors.f_max)
        tau_M = np.clip(tau_M, plant.tau_min, plant.tau_max)
        ft = nm.allocation @ F
        p, R, q, nu, resid = _fastdyn._substeps(
            nm.masses_arr, nm.coms_arr, nm.inertias_arr, nm.axes_arr,
            nm.origins_arr, nm.R0_arr, nm.total_mass, plant.gravity,
            ft, tau_M, friction, s.p_B, s.R, s.q_M, s.nu, dt, n_sub)
        if resid > 1e-9:
            raise SolveError(f"plant dynamics solve residual {resid:.2e}")
        return SystemState(p_B=p, R=R, q_M=q, nu=nu)
    st = s
    for _ in range(n_sub):
        st = plant_step(plant, st, F, tau_M, dt, friction)
    return st


# ---------------------------------------------------------------------------
# scenario configuration
# ---------------------------------------------------------------------------

@dataclass
class ScenarioConfig:
    duration: float
    schedule: SetpointSchedule
    initial_joints: np.ndarray
    perturbations: PerturbationSpec
    noise: NoiseSpec
    integral_enabled: bool = True
    seed: int = 0
    substeps: int = DEFAULT_SUBSTEPS
    name: str = "scenario"


def _ee_position(model: ModelDescription, q: np.ndarray) -> np.ndarray:
    s = SystemState(np.zeros(3), np.eye(3), q, np.zeros(6 + model.n_joints))
    return task_stack(model, s).X[6:9]


def load_scenario(path, model: ModelDescription) -> ScenarioConfig:
    """Parse a scenario file; unspecified end-effector refs hold the previous."""
    doc = _load_yaml(path)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ParseError(f"{path}: schema_version must be {SCHEMA_VERSION}")
    try:
        duration = float(doc["duration"])
        q0 = np.asarray(doc["initial_joints"], dtype=float)
        raw_pts = doc["setpoints"]
    except KeyError as e:
        raise ParseError(f"{path}: missing key {e}")
    if duration <= 0:
        raise ParseError(f"{path}: duration must be > 0")
    if q0.shape != (model.n_joints,):
        raise ParseError(f"{path}: initial_joints must have {model.n_joints} entries")

    ee_prev = _ee_position(model, q0)
    points = []
    for i, sp in enumerate(raw_pts):
        ee = sp.get("ee_position")
        ee = ee_prev if ee is None else np.asarray(ee, dtype=float)
        try:
            points.append(Setpoint(
                time=float(sp["time"]),
                duration=float(sp.get("duration", 0.0)),
                p_B=np.asarray(sp["base_position"], dtype=float),
                yaw=float(sp.get("yaw", 0.0)),
                p_E=ee,
            ))
        except KeyError as e:
            raise ParseError(f"{path}: setpoints[{i}] missing key {e}")
        ee_prev = ee
    pd = doc.get("perturbations") or {}
    nd = doc.get("noise") or {}
    pert = PerturbationSpec(
        link_mass_scale=float(pd.get("link_mass_scale", 1.0)),
        zero_inertia_products=bool(pd.get("zero_inertia_products", False)),
        joint_friction=float(pd.get("joint_friction", 0.0)))
    noise = NoiseSpec(
        gnss_sigma_pos=float(nd.get("gnss_sigma_pos", 0.0)),
        gnss_sigma_vel=float(nd.get("gnss_sigma_vel", 0.0)),
        gnss_rate=float(nd.get("gnss_rate", 10.0)),
        encoder_bits=int(nd.get("encoder_bits", 0)),
        gyro_sigma=float(nd.get("gyro_sigma", 0.0)),
        accel_sigma=float(nd.get("accel_sigma", 0.0)),
        joint_vel_lpf_cutoff=float(nd.get("joint_vel_lpf_cutoff", 25.0)),
        seed=int(doc.get("seed", 0)))
    noise.validate()
    pert.validate()
    return ScenarioConfig(
        duration=duration,
        schedule=SetpointSchedule(points=tuple(points)),
        initial_joints=q0,
        perturbations=pert,
        noise=noise,
        integral_enabled=bool(doc.get("integral_enabled", True)),
        seed=int(doc.get("seed", 0)),
        name=Path(path).stem,
    )


# ---------------------------------------------------------------------------
# run log and metrics
# ---------------------------------------------------------------------------

_STATUS_CODE = {"optimal": 0, "infeasible": 1, "max_iter": 2}


@dataclass
class RunLog:
    """Per-step record of one scenario run plus summary metrics."""

    t: np.ndarray
    p_B: np.ndarray
    p_B_ref: np.ndarray
    yaw: np.ndarray
    yaw_ref: np.ndarray
    p_E: np.ndarray
    p_E_ref: np.ndarray
    q_M: np.ndarray
    F: np.ndarray
    tau: np.ndarray
    norm_s: np.ndarray
    qp_status: np.ndarray
    qp_iters: np.ndarray
    active_count: np.ndarray
    fallback_flag: np.ndarray
    underactuation: np.ndarray
    final_state: SystemState = None
    metrics: dict = field(default_factory=dict)

    def header(self) -> list[str]:
        n = self.q_M.shape[1]
        cols = ["t", "p_B_x", "p_B_y", "p_B_z",
                "p_B_ref_x", "p_B_ref_y", "p_B_ref_z", "yaw", "yaw_ref",
                "p_E_x", "p_E_y", "p_E_z", "p_E_ref_x", "p_E_ref_y", "p_E_ref_z"]
        cols += [f"q_{j+1}" for j in range(n)]
        cols += [f"F_{k+1}" for k in range(4)]
        cols += [f"tau_{j+1}" for j in range(n)]
        cols += ["norm_s", "qp_status", "qp_iters", "active_count", "fallback_flag"]
        return cols

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        for k in range(len(self.t)):
            row = [f"{self.t[k]:.6f}"]
            row += [f"{v:.12g}" for v in self.p_B[k]]
            row += [f"{v:.12g}" for v in self.p_B_ref[k]]
            row += [f"{self.yaw[k]:.12g}", f"{self.yaw_ref[k]:.12g}"]
            row += [f"{v:.12g}" for v in self.p_E[k]]
            row += [f"{v:.12g}" for v in self.p_E_ref[k]]
            row += [f"{v:.12g}" for v in self.q_M[k]]
            row += [f"{v:.12g}" for v in self.F[k]]
            row += [f"{v:.12g}" for v in self.tau[k]]
            row += [f"{self.norm_s[k]:.12g}", str(int(self.qp_status[k])),
                    str(int(self.qp_iters[k])), str(int(self.active_count[k])),
                    str(int(self.fallback_flag[k]))]
            w.writerow(row)
        return buf.getvalue()

    def write_csv(self, path) -> None:
        _atomic_write(path, self.to_csv())

    def write_summary(self, path) -> None:
        _atomic_write(path, json.dumps(self.metrics, indent=2, sort_keys=True) + "\n")


def _atomic_write(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as f:
        f.write(text)
    os.replace(tmp, path)


def compute_metrics(log: RunLog, model: ModelDescription) -> dict:
    e_base = log.p_B - log.p_B_ref
    e_yaw = wrap_angle(log.yaw - log.yaw_ref)
    e_ee = log.p_E - log.p_E_ref
    n_steps = len(log.t)
    optimal = log.qp_status == 0
    viol_F = int(np.sum((log.F < model.rotors.f_min - 1e-9)
                        | (log.F > model.rotors.f_max + 1e-9)))
    viol_q = float(np.max([np.max(log.q_M - model.q_max[None, :]),
                           np.max(model.q_min[None, :] - log.q_M)]))
    return {
        "rmse_base": list(np.sqrt(np.mean(e_base**2, axis=0))),
        "rmse_base_norm": float(np.sqrt(np.mean(np.sum(e_base**2, axis=1)))),
        "mean_abs_yaw_error": float(np.mean(np.abs(e_yaw))),
        "rmse_ee": list(np.sqrt(np.mean(e_ee**2, axis=0))),
        "rmse_ee_norm": float(np.sqrt(np.mean(np.sum(e_ee**2, axis=1)))),
        "qp_feasible_rate": float(np.mean(optimal)),
        "qp_mean_iterations": float(np.mean(log.qp_iters)),
        "qp_max_iterations": int(np.max(log.qp_iters)),
        "fallback_steps": int(np.sum(log.fallback_flag > 0)),
        "gravity_hold_steps": int(np.sum(log.fallback_flag == 2)),
        "actuation_bound_violations": viol_F,
        "max_joint_limit_violation": viol_q,
        "max_underactuation_residual": float(np.max(log.underactuation[optimal]))
        if np.any(optimal) else float("nan"),
        "final_base_error": list(np.abs(e_base[-1])),
        "final_yaw_error": float(abs(e_yaw[-1])),
        "final_ee_error": list(np.abs(e_ee[-1])),
        "steps": n_steps,
    }


def run_scenario(model: ModelDescription, gains: GainSet, cfg: ScenarioConfig,
                 integral: bool | None = None,
                 duration: float | None = None,
                 seed: int | None = None,
                 substeps: int | None = None) -> RunLog:
    """Execute one closed-loop run; optional arguments override the config."""
    integral = cfg.integral_enabled if integral is None else integral
    duration = cfg.duration if duration is None else duration
    seed = cfg.seed if seed is None else seed
    substeps = cfg.substeps if substeps is None else substeps

    plant_model, ctrl_model = apply_perturbations(model, cfg.perturbations)
    friction = cfg.perturbations.joint_friction
    noise = NoiseSpec(**{**asdict(cfg.noise), "seed": seed})
    sensors = MeasurementModel(noise, CONTROL_DT)

    sp0 = cfg.schedule.points[0]
    yaw0 = sp0.yaw
    R0 = np.array([[np.cos(yaw0), -np.sin(yaw0), 0.0],
                   [np.sin(yaw0), np.cos(yaw0), 0.0],
                   [0.0, 0.0, 1.0]])
    state = SystemState(p_B=sp0.p_B.copy(), R=R0,
                        q_M=cfg.initial_joints.copy(),
                        nu=np.zeros(6 + model.n_joints))

    options = ControllerOptions(integral_enabled=integral)
    n_steps = int(round(duration / CONTROL_DT))
    dt_sub = CONTROL_DT / substeps
    n = model.n_joints

    ctrl = None   # initialized from the first measurement
    log = RunLog(
        t=np.zeros(n_steps),
        p_B=np.zeros((n_steps, 3)), p_B_ref=np.zeros((n_steps, 3)),
        yaw=np.zeros(n_steps), yaw_ref=np.zeros(n_steps),
        p_E=np.zeros((n_steps, 3)), p_E_ref=np.zeros((n_steps, 3)),
        q_M=np.zeros((n_steps, n)), F=np.zeros((n_steps, 4)),
        tau=np.zeros((n_steps, n)), norm_s=np.zeros(n_steps),
        qp_status=np.zeros(n_steps, dtype=int),
        qp_iters=np.zeros(n_steps, dtype=int),
        active_count=np.zeros(n_steps, dtype=int),
        fallback_flag=np.zeros(n_steps, dtype=int),
        underactuation=np.zeros(n_steps),
    )

    for k in range(n_steps):
        t = k * CONTROL_DT
        ref = quintic_reference(cfg.schedule, t)
        est = sensors.measure(state, t)
        if ctrl is None:
            ctrl = ControllerState.initial(est.nu, n)
        out, ctrl = control_step(ctrl_model, gains, est, ref, ctrl,
                                 CONTROL_DT, options)
        F_app = np.clip(out.F, model.rotors.f_min, model.rotors.f_max)
        tau_app = np.clip(out.tau_M, model.tau_min, model.tau_max)

        stack_truth = task_stack(plant_model, state)
        log.t[k] = t
        log.p_B[k] = state.p_B
        log.p_B_ref[k] = ref.p_B_d
        log.yaw[k] = yaw_of(state.R)
        log.yaw_ref[k] = np.arctan2(-ref.X_psi_d[1], ref.X_psi_d[0])
        log.p_E[k] = stack_truth.X[6:9]
        log.p_E_ref[k] = ref.p_E_d
        log.q_M[k] = state.q_M
        log.F[k] = F_app
        log.tau[k] = tau_app
        d = out.diagnostics
        log.norm_s[k] = d.norm_s
        log.qp_status[k] = _STATUS_CODE[d.qp_status]
        log.qp_iters[k] = d.qp_iterations
        log.active_count[k] = len(d.active_set)
        log.fallback_flag[k] = d.fallback
        log.underactuation[k] = d.underactuation_residual

        state = _plant_substeps(plant_model, state, F_app, tau_app, dt_sub,
                                substeps, friction)

    log.final_state = state
    log.metrics = compute_metrics(log, model)
    log.metrics.update({
        "scenario": cfg.name, "seed": seed, "duration": duration,
        "integral_enabled": bool(integral), "substeps": substeps,
    })
    return log
