"""Piecewise-linear Kolmogorov-Arnold networks.

Training happens record by record: each record's residual is split
across the network's addends and absorbed by nudging the two active
grid nodes of every function, with residuals for inner layers obtained
through the transposed segment-slope Jacobians.  Training parallelizes
by cloning the model, training the clones on disjoint record batches,
and merging them back by per-parameter averaging.
"""

__version__ = "0.1.0"

from .data import (Dataset, TaskSpec, gen_determinant, gen_tetrahedra,
                   load_dataset, model_pearson, pearson_pct, save_dataset)
from .estimator import KanRegressor
from .model import (ForwardTrace, Grid, KanModel, Located, PlfTable,
                    average_models, eval_plf, locate)
from .parallel import (ParallelPlan, RoundReport, ScalingRow, partition,
                       run_round, measure_strong_scaling, measure_weak_scaling,
                       train_clones, train_parallel)
from .presets import PRESETS, ArchPreset, parse_architecture
from .pretrain import AddendGroup, pretrain, split_addends
from .training import (Architecture, EpochStats, TrainConfig, backprop_targets,
                       init_model, propagate_residuals, train, train_epoch,
                       train_record, update_layer)

__all__ = [
    "AddendGroup", "ArchPreset", "Architecture", "Dataset", "EpochStats",
    "ForwardTrace", "Grid", "KanModel", "KanRegressor", "Located",
    "ParallelPlan", "PlfTable", "PRESETS", "RoundReport", "ScalingRow",
    "TaskSpec", "TrainConfig", "average_models", "backprop_targets",
    "eval_plf", "gen_determinant", "gen_tetrahedra", "init_model",
    "load_dataset", "locate", "measure_strong_scaling",
    "measure_weak_scaling", "model_pearson", "parse_architecture",
    "partition", "pearson_pct", "pretrain", "propagate_residuals",
    "run_round", "save_dataset",
    "split_addends", "train", "train_clones", "train_epoch",
    "train_parallel", "train_record", "update_layer", "__version__",
]
