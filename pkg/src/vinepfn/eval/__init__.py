"""Evaluation protocol: metrics, splits, benchmark runs and the synthetic vineyard data."""
from .metrics import metrics, roc_auc
from .protocol import (
    TabularDataset,
    SplitSpec,
    binarize_target,
    stratified_split,
    balance_training,
    run_benchmark,
)
from .synthetic import DISEASES, generate_vineyard_like

__all__ = [
    "metrics", "roc_auc", "TabularDataset", "SplitSpec", "binarize_target",
    "stratified_split", "balance_training", "run_benchmark", "DISEASES",
    "generate_vineyard_like",
]
