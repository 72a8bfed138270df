"""Experiment harness: datasets, kink detection, configs and the run loop."""

from .config import ConfigError, ExperimentConfig, default_config, derive_seed, load_config
from .data import DataSpec, gen_blobs, gen_regress1d
from .kink import detect_kink
from .runner import compare_reinit, run_experiment
