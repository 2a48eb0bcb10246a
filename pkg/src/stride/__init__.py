"""Registry-driven solvers for planning, mechanism design, bargaining and games."""
from .bargain_complete import CompleteBargainInstance, SPEBargainer, compute_spe
from .bargain_incomplete import IncompleteBargainInstance, SEBargainer, compute_se
from .boardgames import GameNode, MinimaxPlayer, calculate_scores, parse_board
from .controllers import (ControllerState, Demonstration, generate_demonstration, next_thought,
                          replay_demonstration, run_controller)
from .core import (Registry, Session, StrideError, ThoughtUnit, Trace, WorkingMemory, default_registry,
                   validate_thought)
from .env_mdp import EnvSession, MdpInstance, generate_instance
from .harness import ExperimentConfig, MetricsReport, run_experiment
from .mechanism_vcg import DynamicVCG, MechanismInstance, compute_vcg, generate_mechanism_instance
from .planner_mdp import UCBVI, ValueIteration, solve_known

__version__ = "0.1.0"

__all__ = [
    "CompleteBargainInstance", "ControllerState", "Demonstration", "DynamicVCG", "EnvSession",
    "ExperimentConfig", "GameNode", "IncompleteBargainInstance", "MdpInstance", "MechanismInstance",
    "MetricsReport", "MinimaxPlayer", "Registry", "SEBargainer", "SPEBargainer", "Session",
    "StrideError", "ThoughtUnit", "Trace", "UCBVI", "ValueIteration", "WorkingMemory",
    "calculate_scores", "compute_se", "compute_spe", "compute_vcg", "default_registry",
    "generate_demonstration", "generate_instance", "generate_mechanism_instance", "next_thought",
    "parse_board", "replay_demonstration", "run_controller", "run_experiment", "solve_known",
    "validate_thought",
]
