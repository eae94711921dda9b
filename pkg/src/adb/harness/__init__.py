"""Desk-scale shift experiment built on the scoring and grouping pipeline."""

from .data import SyntheticData, SyntheticSpec, check_shift_gate, make_synthetic_shifted_dataset, w1_labels
from .evaluation import (
    EvalReport, ModelRecord, adb_select, correlation_report, kfold_cv_baseline, kfold_indices,
    paired_ttest, percentile_rank, proportional_allocation,
)
from .experiment import ExperimentConfig, Replication, replicate, run_experiment
from .models import Adam, ModelSpec, Regressor, TrainConfig, regression_metrics, train_with_schedule

__all__ = [
    "Adam", "EvalReport", "ExperimentConfig", "ModelRecord", "ModelSpec", "Regressor", "Replication",
    "SyntheticData", "SyntheticSpec", "TrainConfig", "adb_select", "check_shift_gate", "correlation_report",
    "kfold_cv_baseline", "kfold_indices", "make_synthetic_shifted_dataset", "paired_ttest", "percentile_rank",
    "proportional_allocation", "regression_metrics", "replicate", "run_experiment", "train_with_schedule",
    "w1_labels",
]
