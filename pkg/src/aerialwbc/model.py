"""System description: rigid-body parameters, actuation geometry, limits, gains.

Everything here is loaded from YAML files (schema in docs/config_schema.md),
validated once, and treated as immutable afterwards.  Units are SI and radians
throughout; there is no conversion layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

SCHEMA_VERSION = 1


class ParseError(Exception):
    """Raised when a config file cannot be read or is structurally malformed."""


class ValidationError(Exception):
    """Raised when a parsed config violates an invariant. Message names the field."""


def _as_vec(x, n, field_name) -> np.ndarray:
    try:
        v = np.asarray(x, dtype=float)
    except (TypeError, ValueError):
        raise ParseError(f"{field_name}: expected a list of {n} numbers")
    if v.shape != (n,):
        raise ParseError(f"{field_name}: expected {n} entries, got shape {v.shape}")
    return v


def _rpy_to_matrix(rpy: np.ndarray) -> np.ndarray:
    """Roll-pitch-yaw (x-y-z intrinsic) to rotation matrix."""
    r, p, y = rpy
    cr, sr = np.cos(r), np.sin(r)
    cp, sp = np.cos(p), np.sin(p)
    cy, sy = np.cos(y), np.sin(y)
    Rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    Ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    Rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return Rz @ Ry @ Rx


def _matrix_to_rpy(R: np.ndarray) -> np.ndarray:
    p = np.arcsin(np.clip(-R[2, 0], -1.0, 1.0))
    if abs(R[2, 0]) < 1.0 - 1e-12:
        r = np.arctan2(R[2, 1], R[2, 2])
        y = np.arctan2(R[1, 0], R[0, 0])
    else:  # gimbal lock; yaw absorbed into roll
        r = np.arctan2(-R[1, 2], R[1, 1])
        y = 0.0
    return np.array([r, p, y])


def _inertia_matrix(six, field_name) -> np.ndarray:
    v = _as_vec(six, 6, field_name)
    ixx, iyy, izz, ixy, ixz, iyz = v
    return np.array([[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]])


def _inertia_six(I: np.ndarray) -> list[float]:
    return [float(I[0, 0]), float(I[1, 1]), float(I[2, 2]),
            float(I[0, 1]), float(I[0, 2]), float(I[1, 2])]


@dataclass(frozen=True)
class BodyParams:
    """Inertial parameters of one rigid body, expressed in its own frame."""

    mass: float                 # kg
    com_offset: np.ndarray      # m, CoM position in the body frame
    inertia: np.ndarray         # kg m^2, 3x3 about the CoM, body frame

    def validate(self, name: str) -> None:
        if not self.mass > 0.0:
            raise ValidationError(f"{name}.mass must be > 0 (got {self.mass})")
        if np.any(np.abs(self.inertia - self.inertia.T) > 1e-12):
            raise ValidationError(f"{name}.inertia must be symmetric")
        eig = np.linalg.eigvalsh(self.inertia)
        if eig[0] <= 0.0:
            raise ValidationError(f"{name}.inertia must be positive definite")
        # triangle inequality on principal moments
        for k in range(3):
            if eig[(k + 1) % 3] + eig[(k + 2) % 3] < eig[k] - 1e-12:
                raise ValidationError(
                    f"{name}.inertia violates the principal-moment triangle inequality")


@dataclass(frozen=True)
class JointParams:
    """Revolute joint: placement in the parent frame, axis and limits."""

    axis: np.ndarray              # unit 3-vector, joint frame
    origin_translation: np.ndarray  # m, in parent frame
    origin_rotation: np.ndarray   # 3x3, parent -> joint frame
    q_min: float                  # rad
    q_max: float                  # rad
    qd_max: float                 # rad/s
    tau_min: float                # N m
    tau_max: float                # N m

    def validate(self, name: str) -> None:
        if abs(np.linalg.norm(self.axis) - 1.0) > 1e-12:
            raise ValidationError(f"{name}.axis must be a unit vector")
        if not self.q_min < self.q_max:
            raise ValidationError(f"{name}.q_min must be < q_max")
        if not self.qd_max > 0.0:
            raise ValidationError(f"{name}.qd_max must be > 0")
        if not (self.tau_min < 0.0 < self.tau_max):
            raise ValidationError(f"{name}.tau_min < 0 < tau_max required")
        E = self.origin_rotation.T @ self.origin_rotation - np.eye(3)
        if np.max(np.abs(E)) > 1e-9 or np.linalg.det(self.origin_rotation) < 0.0:
            raise ValidationError(f"{name}.origin_rotation is not a rotation matrix")


@dataclass(frozen=True)
class RotorGeometry:
    """Cross-configuration rotor layout and per-rotor thrust limits."""

    arm_length: float             # m
    yaw_torque_coefficient: float  # m (drag torque / thrust)
    spin_signs: np.ndarray        # 4 entries in {+1, -1}, alternating
    f_min: float                  # N per rotor
    f_max: float                  # N per rotor

    def validate(self, name: str = "rotors") -> None:
        if not self.arm_length > 0.0:
            raise ValidationError(f"{name}.arm_length must be > 0")
        if not self.yaw_torque_coefficient > 0.0:
            raise ValidationError(f"{name}.yaw_torque_coefficient must be > 0")
        s = self.spin_signs
        if s.shape != (4,) or not np.all(np.abs(s) == 1.0):
            raise ValidationError(f"{name}.spin_signs must be four entries in {{+1,-1}}")
        if not all(s[k] == -s[k - 1] for k in range(1, 4)):
            raise ValidationError(f"{name}.spin_signs must alternate around the frame")
        if not self.f_min < self.f_max:
            raise ValidationError(f"{name}.f_min must be < f_max")
        xi = self.allocation_matrix()
        if not np.isfinite(np.linalg.cond(xi)):
            raise ValidationError(f"{name}: allocation matrix is singular")

    def allocation_matrix(self) -> np.ndarray:
        """4x4 map from rotor thrusts to [collective thrust; body torques].

        Rotors sit at 45/135/225/315 degrees in the body x-y plane at radius
        arm_length, all thrusting along +z; yaw reaction torque is
        yaw_torque_coefficient * thrust with the rotor's spin sign.
        """
        a = self.arm_length / np.sqrt(2.0)
        c = self.yaw_torque_coefficient
        s = self.spin_signs
        return np.array([
            [1.0, 1.0, 1.0, 1.0],
            [a, -a, -a, a],      # tau_x = sum(y_k F_k)
            [-a, -a, a, a],      # tau_y = sum(-x_k F_k)
            [c * s[0], c * s[1], c * s[2], c * s[3]],
        ])


@dataclass(frozen=True)
class ModelDescription:
    """Kinematic tree: quadrotor base plus an n-link serial revolute arm."""

    base: BodyParams
    links: tuple[tuple[BodyParams, JointParams], ...]
    rotors: RotorGeometry
    gravity: float = 9.81          # m/s^2
    ee_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))  # m, last-link frame

    @property
    def n_joints(self) -> int:
        return len(self.links)

    @property
    def total_mass(self) -> float:
        return self.base.mass + sum(b.mass for b, _ in self.links)

    @property
    def q_min(self) -> np.ndarray:
        return np.array([j.q_min for _, j in self.links])

    @property
    def q_max(self) -> np.ndarray:
        return np.array([j.q_max for _, j in self.links])

    @property
    def tau_min(self) -> np.ndarray:
        return np.array([j.tau_min for _, j in self.links])

    @property
    def tau_max(self) -> np.ndarray:
        return np.array([j.tau_max for _, j in self.links])

    def validate(self) -> None:
        if self.n_joints < 1:
            raise ValidationError("links: at least one link required")
        self.base.validate("base")
        for i, (body, joint) in enumerate(self.links):
            body.validate(f"links[{i}]")
            joint.validate(f"links[{i}].joint")
        self.rotors.validate()
        if not self.gravity > 0.0:
            raise ValidationError("gravity must be > 0")
        if not self.total_mass > 0.0:
            raise ValidationError("total mass must be > 0")


@dataclass(frozen=True)
class GainSet:
    """Controller gains and optimization weights.

    Diagonal matrices are stored as their diagonals; w_task covers the 12
    task rows, w_reg and vel_damping the (6+n) acceleration variables.
    """

    kp_base: np.ndarray     # 3, base position P gain
    kv_base: np.ndarray     # 3
    kp_yaw: np.ndarray      # 3, yaw-vector task
    kv_yaw: np.ndarray      # 3
    kp_ee: np.ndarray       # 3, end-effector task
    kv_ee: np.ndarray       # 3
    thrust_kp: np.ndarray   # 3, thrust-direction P gain (lambda_p)
    thrust_kv: np.ndarray   # 3, thrust-direction damping (lambda_v)
    w_task: np.ndarray      # 12, task weight diagonal (W1)
    w_reg: np.ndarray       # 6+n, regularizer weight diagonal (W2)
    vel_damping: np.ndarray  # 6+n, velocity damping diagonal (lambda)
    k_scale: float          # integral gain K = k_scale*M + k_offset*I
    k_offset: float


def validate_gains(g: GainSet, n: int) -> None:
    """Check gain dimensions and definiteness for an n-joint arm."""
    d = 6 + n
    for name in ("kp_base", "kv_base", "kp_yaw", "kv_yaw", "kp_ee", "kv_ee",
                 "thrust_kp", "thrust_kv"):
        v = getattr(g, name)
        if v.shape != (3,):
            raise ValidationError(f"{name} dimension: expected 3 entries")
        if np.any(v <= 0.0):
            raise ValidationError(f"{name} not positive definite")
    if g.w_task.shape != (12,):
        raise ValidationError("W1 dimension: expected 12 diagonal entries "
                              f"(got {g.w_task.shape[0]})")
    if np.any(g.w_task < 0.0):
        raise ValidationError("W1 not positive semidefinite")
    if g.w_reg.shape != (d,):
        raise ValidationError(f"W2 dimension: expected {d} diagonal entries "
                              f"(got {g.w_reg.shape[0]})")
    if np.any(g.w_reg <= 0.0):
        raise ValidationError("W2 not positive definite")
    if g.vel_damping.shape != (d,):
        raise ValidationError(f"lambda dimension: expected {d} diagonal entries")
    if np.any(g.vel_damping < 0.0):
        raise ValidationError("lambda must be nonnegative")
    if g.k_scale < 0.0 or g.k_offset < 0.0:
        raise ValidationError("k_scale and k_offset must be nonnegative")


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------

def _load_yaml(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ParseError(f"{path}: file not found")
    try:
        with open(path) as f:
            doc = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ParseError(f"{path}: {e}")
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: top level must be a mapping")
    return doc


def _body_from_dict(d: dict, name: str) -> BodyParams:
    if "mass" not in d:
        raise ParseError(f"{name}.mass missing")
    return BodyParams(
        mass=float(d["mass"]),
        com_offset=_as_vec(d.get("com", [0.0, 0.0, 0.0]), 3, f"{name}.com"),
        inertia=_inertia_matrix(d.get("inertia"), f"{name}.inertia"),
    )


def load_model(path) -> ModelDescription:
    """Load and validate a model file. Raises ParseError / ValidationError."""
    doc = _load_yaml(path)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ParseError(f"{path}: schema_version must be {SCHEMA_VERSION}")
    if "base" not in doc or "links" not in doc or "rotors" not in doc:
        raise ParseError(f"{path}: base, links and rotors sections are required")

    base = _body_from_dict(doc["base"], "base")

    links = []
    for i, entry in enumerate(doc["links"]):
        body = _body_from_dict(entry, f"links[{i}]")
        jd = entry.get("joint")
        if jd is None:
            raise ParseError(f"links[{i}].joint missing")
        joint = JointParams(
            axis=_as_vec(jd["axis"], 3, f"links[{i}].joint.axis"),
            origin_translation=_as_vec(jd.get("origin_xyz", [0, 0, 0]), 3,
                                       f"links[{i}].joint.origin_xyz"),
            origin_rotation=_rpy_to_matrix(
                _as_vec(jd.get("origin_rpy", [0, 0, 0]), 3,
                        f"links[{i}].joint.origin_rpy")),
            q_min=float(jd["q_min"]),
            q_max=float(jd["q_max"]),
            qd_max=float(jd.get("qd_max", 5.0)),
            tau_min=float(jd["tau_min"]),
            tau_max=float(jd["tau_max"]),
        )
        links.append((body, joint))

    rd = doc["rotors"]
    rotors = RotorGeometry(
        arm_length=float(rd["arm_length"]),
        yaw_torque_coefficient=float(rd["yaw_torque_coefficient"]),
        spin_signs=_as_vec(rd["spin_signs"], 4, "rotors.spin_signs"),
        f_min=float(rd["f_min"]),
        f_max=float(rd["f_max"]),
    )

    model = ModelDescription(
        base=base,
        links=tuple(links),
        rotors=rotors,
        gravity=float(doc.get("gravity", 9.81)),
        ee_offset=_as_vec(doc.get("ee_offset", [0, 0, 0]), 3, "ee_offset"),
    )
    model.validate()
    return model


def model_to_dict(m: ModelDescription) -> dict:
    def body(b: BodyParams) -> dict:
        return {"mass": float(b.mass),
                "com": [float(x) for x in b.com_offset],
                "inertia": _inertia_six(b.inertia)}

    links = []
    for b, j in m.links:
        d = body(b)
        d["joint"] = {
            "axis": [float(x) for x in j.axis],
            "origin_xyz": [float(x) for x in j.origin_translation],
            "origin_rpy": [float(x) for x in _matrix_to_rpy(j.origin_rotation)],
            "q_min": float(j.q_min), "q_max": float(j.q_max),
            "qd_max": float(j.qd_max),
            "tau_min": float(j.tau_min), "tau_max": float(j.tau_max),
        }
        links.append(d)
    return {
        "schema_version": SCHEMA_VERSION,
        "base": body(m.base),
        "links": links,
        "rotors": {
            "arm_length": float(m.rotors.arm_length),
            "yaw_torque_coefficient": float(m.rotors.yaw_torque_coefficient),
            "spin_signs": [float(x) for x in m.rotors.spin_signs],
            "f_min": float(m.rotors.f_min), "f_max": float(m.rotors.f_max),
        },
        "gravity": float(m.gravity),
        "ee_offset": [float(x) for x in m.ee_offset],
    }


def save_model(m: ModelDescription, path) -> None:
    with open(path, "w") as f:
        yaml.safe_dump(model_to_dict(m), f, sort_keys=False)


def load_gains(path, n: int | None = None) -> GainSet:
    """Load a gains file; if n is given, validate against that joint count."""
    doc = _load_yaml(path)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ParseError(f"{path}: schema_version must be {SCHEMA_VERSION}")

    def vec(key, size=None):
        if key not in doc:
            raise ParseError(f"{path}: {key} missing")
        v = np.asarray(doc[key], dtype=float)
        if v.ndim != 1 or (size is not None and v.shape != (size,)):
            raise ParseError(f"{path}: {key} must be a flat list"
                             + (f" of {size} numbers" if size else ""))
        return v

    g = GainSet(
        kp_base=vec("kp_base", 3), kv_base=vec("kv_base", 3),
        kp_yaw=vec("kp_yaw", 3), kv_yaw=vec("kv_yaw", 3),
        kp_ee=vec("kp_ee", 3), kv_ee=vec("kv_ee", 3),
        thrust_kp=vec("thrust_kp", 3), thrust_kv=vec("thrust_kv", 3),
        w_task=vec("w_task"), w_reg=vec("w_reg"), vel_damping=vec("vel_damping"),
        k_scale=float(doc.get("k_scale", 0.0)),
        k_offset=float(doc.get("k_offset", 0.0)),
    )
    if n is not None:
        validate_gains(g, n)
    return g
