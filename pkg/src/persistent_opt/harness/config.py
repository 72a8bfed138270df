"""Experiment configuration files and seed derivation.

Config files are JSON with a ``schema_version`` field. Seeds for model
initialization, data generation and partial-mode layer draws are derived from
``master_seed`` unless the config sets them explicitly:

    sub_seed = SeedSequence(master_seed, spawn_key=(PURPOSES[purpose],)).generate_state(1, uint64)[0]
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..nn import InitSpec, ModelSpec
from ..optim import OptimizerConfig
from ..persistent import PersistentConfig
from .data import DataSpec

SCHEMA_VERSION = 1
EXPERIMENTS = ("toy2d", "regress1d", "classify", "saturation", "spectrum")
OUTPUT_ROOT_ENV = "PERSISTENT_OPT_OUTPUT_ROOT"

PURPOSES = {"init": 0, "data": 1, "layer": 2, "reinit": 3}


class ConfigError(ValueError):
    pass


def derive_seed(master_seed: int, purpose: str, index: int | None = None) -> int:
    key = (PURPOSES[purpose],) if index is None else (PURPOSES[purpose], int(index))
    ss = np.random.SeedSequence(int(master_seed), spawn_key=key)
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    model: ModelSpec | None
    optimizer: OptimizerConfig
    persistent: PersistentConfig
    data: DataSpec | None
    output_dir: str = "runs/default"
    master_seed: int = 0
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ConfigError("master_seed must be a 64-bit unsigned integer")
        if self.experiment != "toy2d" and (self.model is None or self.data is None):
            raise ConfigError(f"experiment {self.experiment!r} needs model and data sections")
        if self.model is not None and self.data is not None:
            want_ce = self.data.kind == "blobs_classify"
            if want_ce != (self.model.loss_kind == "cross_entropy"):
                raise ConfigError("blobs data needs a cross_entropy model, regression data an MSE model")

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "experiment": self.experiment,
            "master_seed": int(self.master_seed),
            "output_dir": str(self.output_dir),
            "model": self.model.to_dict() if self.model else None,
            "optimizer": self.optimizer.to_dict(),
            "persistent": self.persistent.to_dict(),
            "data": self.data.to_dict() if self.data else None,
            "options": dict(self.options),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def with_seed(self, master_seed: int) -> "ExperimentConfig":
        """Same config under a new master seed, sub-seeds re-derived."""
        return resolve_seeds(self, master_seed, force=True)

    def resolved_output_dir(self) -> Path:
        root = os.environ.get(OUTPUT_ROOT_ENV)
        out = Path(self.output_dir)
        if root and not out.is_absolute():
            out = Path(root) / out
        return out


def resolve_seeds(cfg: ExperimentConfig, master_seed: int | None = None, force: bool = False,
                  explicit: frozenset = frozenset()) -> ExperimentConfig:
    """Fill sub-seeds from the master seed; ``explicit`` names fields to keep."""
    master = cfg.master_seed if master_seed is None else int(master_seed)
    model, data, pers = cfg.model, cfg.data, cfg.persistent
    if model is not None and (force or "init" not in explicit):
        model = replace(model, initializer=replace(model.initializer, seed=derive_seed(master, "init")))
    if data is not None and (force or "data" not in explicit):
        data = replace(data, seed=derive_seed(master, "data"))
    if force or "layer" not in explicit:
        pers = replace(pers, layer_seed=derive_seed(master, "layer"))
    return replace(cfg, model=model, data=data, persistent=pers, master_seed=master)


def config_from_dict(doc: dict) -> ExperimentConfig:
    try:
        version = doc.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version}")
        explicit = set()
        model = None
        if doc.get("model") is not None:
            m = dict(doc["model"])
            init = dict(m.get("initializer", {}))
            if init.get("seed") is not None:
                explicit.add("init")
            else:
                init.pop("seed", None)
            m["initializer"] = init
            model = ModelSpec.from_dict(m)
        data = None
        if doc.get("data") is not None:
            d = dict(doc["data"])
            if d.get("seed") is not None:
                explicit.add("data")
            else:
                d.pop("seed", None)
            data = DataSpec(**d)
        p = dict(doc.get("persistent", {}))
        if p.get("layer_seed") is not None:
            explicit.add("layer")
        else:
            p.pop("layer_seed", None)
        cfg = ExperimentConfig(
            experiment=doc["experiment"],
            model=model,
            optimizer=OptimizerConfig(**doc.get("optimizer", {})),
            persistent=PersistentConfig.from_dict(p),
            data=data,
            output_dir=doc.get("output_dir", f"runs/{doc['experiment']}"),
            master_seed=int(doc.get("master_seed", 0)),
            options=dict(doc.get("options") or {}),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    return resolve_seeds(cfg, explicit=frozenset(explicit))


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(doc)


def default_config(experiment: str, master_seed: int = 0) -> ExperimentConfig:
    """Defaults taken from the experiments each name refers to, at desk scale."""
    if experiment == "toy2d":
        cfg = ExperimentConfig(
            experiment="toy2d",
            model=None,
            optimizer=OptimizerConfig("gd", 0.001),
            persistent=PersistentConfig(lam=0.1, iterations=2, inner_steps=50_000),
            data=None,
            output_dir="runs/toy2d",
            options={"start": [-0.335, -1.4], "csv_stride": 50},
        )
    elif experiment == "regress1d":
        cfg = ExperimentConfig(
            experiment="regress1d",
            model=ModelSpec((1, 32, 32, 1), "relu", initializer=InitSpec("he_normal")),
            optimizer=OptimizerConfig("momentum", 0.001, momentum_coeff=0.9),
            persistent=PersistentConfig(lam=0.01, iterations=16, inner_steps=5000),
            data=DataSpec("regress1d_synthetic", 100, 100, 100, noise_sigma=0.1),
            output_dir="runs/regress1d",
            options={"grid_points": 301},
        )
    elif experiment in ("classify", "spectrum"):
        widths = (8, 16, 16, 4) if experiment == "classify" else (8, 12, 4)
        cfg = ExperimentConfig(
            experiment=experiment,
            model=ModelSpec(widths, "relu", "softmax", "cross_entropy", InitSpec("normal", sigma=0.2)),
            optimizer=OptimizerConfig("adam", 0.001),
            persistent=PersistentConfig(lam=0.01, iterations=6, inner_steps=1500),
            data=DataSpec("blobs_classify", 400, 200, 200, noise_sigma=0.0),
            output_dir=f"runs/{experiment}",
            options={"bulk_percentile": 90.0} if experiment == "spectrum" else {},
        )
    elif experiment == "saturation":
        cfg = ExperimentConfig(
            experiment="saturation",
            model=ModelSpec(
                (8, 16, 16, 16, 16, 16, 4), "tanh", "softmax", "cross_entropy",
                InitSpec("xavier_normal"),
            ),
            optimizer=OptimizerConfig("adam", 0.001),
            persistent=PersistentConfig(lam=0.01, mode="partial", iterations=6, inner_steps=1000),
            data=DataSpec("blobs_classify", 400, 200, 200, noise_sigma=0.0),
            output_dir="runs/saturation",
            options={"threshold": 0.98, "every": 100},
        )
    else:
        raise ConfigError(f"unknown experiment {experiment!r}")
    return resolve_seeds(cfg, master_seed, force=True)
