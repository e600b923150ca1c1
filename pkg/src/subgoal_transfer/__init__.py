"""Transfer RL across heterogeneous action spaces via subgoal-sequence mapping.

A bishop (expert) demonstrates pawn-capture tasks on an 8x8 board; a seq2seq
LSTM maps its subgoal sequences into knight (learner) subgoal sequences, which
warm-initialize the knight's hierarchical policy before RL fine-tuning.
"""

__version__ = "0.1.0"

from .dataset import Dataset, SubgoalSequence, Trajectory, build_dataset
from .env import PieceKind, Square, Task, enumerate_tasks, subgoal_window
from .hrl import HighPolicy, LowPolicy, TrainConfig, run_baseline
from .mapper import MapperHyperparams, MappingModel, evaluate_kfold, train_mapper
from .meteor import align, corpus_meteor, meteor

__all__ = [
    "Dataset",
    "HighPolicy",
    "LowPolicy",
    "MapperHyperparams",
    "MappingModel",
    "PieceKind",
    "Square",
    "SubgoalSequence",
    "Task",
    "TrainConfig",
    "Trajectory",
    "align",
    "build_dataset",
    "corpus_meteor",
    "enumerate_tasks",
    "evaluate_kfold",
    "meteor",
    "run_baseline",
    "subgoal_window",
    "train_mapper",
    "__version__",
]
