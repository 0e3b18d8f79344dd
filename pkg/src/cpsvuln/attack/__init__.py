"""Attack synthesis: analytic LTI attack, neural generators, online training."""

from .analytic import check_unstable, residue_forcing_attack
from .attackers import AnalyticLtiAttacker, FrozenAttacker, OnlineAttackTrainer, run_attack
from .engine import backend_name, compiled_available, instantaneous_cost
from .generators import (
    DfnnGenerator,
    FnnGenerator,
    SensorSupport,
    dfnn_generate,
    fnn_generate,
    load_generator,
    save_generator,
)
from .training import HistoryBuffer, StepDiagnostics, TrainingConfig, TrainingError, train_step_dfnn, train_step_fnn

__all__ = [
    "check_unstable",
    "residue_forcing_attack",
    "AnalyticLtiAttacker",
    "FrozenAttacker",
    "OnlineAttackTrainer",
    "run_attack",
    "backend_name",
    "compiled_available",
    "instantaneous_cost",
    "DfnnGenerator",
    "FnnGenerator",
    "SensorSupport",
    "dfnn_generate",
    "fnn_generate",
    "load_generator",
    "save_generator",
    "HistoryBuffer",
    "StepDiagnostics",
    "TrainingConfig",
    "TrainingError",
    "train_step_dfnn",
    "train_step_fnn",
]
