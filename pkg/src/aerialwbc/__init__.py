"""Whole-body QP control and simulation for a quadrotor with an onboard arm."""

from .model import (BodyParams, GainSet, JointParams, ModelDescription,
                    ParseError, RotorGeometry, ValidationError, load_gains,
                    load_model, save_model, validate_gains)
from .kinematics import (BodyKinematics, SystemState, TaskStack,
                         body_jacobians, forward_kinematics, skew, task_stack)
from .dynamics import (DynamicsTerms, GeneralizedInput, SolveError,
                       dynamics_terms, forward_dynamics, inverse_dynamics,
                       rotors_to_wrench, total_energy, wrench_to_rotors)
from .qp import QPInstance, QPSolution, dump_instance, load_instance, solve

__version__ = "0.1.0"

__all__ = [
    "BodyParams", "JointParams", "RotorGeometry", "ModelDescription", "GainSet",
    "ParseError", "ValidationError", "load_model", "save_model", "load_gains",
    "validate_gains",
    "SystemState", "BodyKinematics", "TaskStack", "skew", "forward_kinematics",
    "body_jacobians", "task_stack",
    "DynamicsTerms", "GeneralizedInput", "SolveError", "dynamics_terms",
    "inverse_dynamics", "forward_dynamics", "rotors_to_wrench",
    "wrench_to_rotors", "total_energy",
    "QPInstance", "QPSolution", "solve", "dump_instance", "load_instance",
]
