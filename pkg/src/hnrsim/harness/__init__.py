"""Experiment harness: configs, sweeps, payload round trips, checkpoints, CLI."""
from .checkpoint import (Checkpoint, CheckpointError, CheckpointFormatError,
                         CheckpointTruncatedError, CheckpointVersionError, load_checkpoint,
                         save_checkpoint)
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .payload import PayloadReport, run_payload
from .sweep import run_sweep

__all__ = ["Checkpoint", "CheckpointError", "CheckpointFormatError", "CheckpointTruncatedError",
           "CheckpointVersionError", "load_checkpoint", "save_checkpoint", "ConfigError",
           "ExperimentConfig", "load_config", "parse_config", "PayloadReport", "run_payload",
           "run_sweep"]
