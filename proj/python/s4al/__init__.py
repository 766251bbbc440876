"""Python access to the s4al core library."""

from ._core import (
    Error,
    ExperimentReport,
    ReplayBuffer,
    canonical_config,
    config_hash,
    ema_update,
    eta,
    initial_split,
    iou,
    pixel_scores,
    run_experiment,
    select_mix_classes,
    select_regions,
    supervised_loss,
    synthetic_dataset,
    weighted_unsup_loss,
    write_report,
)

__all__ = [
    "Error",
    "ExperimentReport",
    "ReplayBuffer",
    "canonical_config",
    "config_hash",
    "ema_update",
    "eta",
    "initial_split",
    "iou",
    "pixel_scores",
    "run_experiment",
    "select_mix_classes",
    "select_regions",
    "supervised_loss",
    "synthetic_dataset",
    "weighted_unsup_loss",
    "write_report",
]
