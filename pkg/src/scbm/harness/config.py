"""Experiment configuration: defaults per experiment and mode, JSON loading,
sweep expansion."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..estimate import PAPER_ID_ESTIMATOR, EstimatorConfig
from ..mlp import PAPER_TRANSFER_TRAIN, TrainConfig
from ..synth import LINEAR, NONLINEAR

IDENTIFIABILITY = "identifiability"
MISSPECIFICATION = "misspecification"
TRANSFER = "transfer"
RANK_COLLAPSE = "rank_collapse"
EXPERIMENTS = (IDENTIFIABILITY, MISSPECIFICATION, TRANSFER, RANK_COLLAPSE)

# parameters that may be given as a list to sweep over
SWEEPABLE = ("num_nodes", "d_x", "d_z", "d_hat", "n", "edge_prob")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    mode: str = LINEAR
    num_nodes: Any = 10
    d_x: Any = 5
    d_z: Any = 2
    # None means d_hat = d_z
    d_hat: Any = None
    n: Any = 30000
    edge_prob: Any = 0.7
    seeds: tuple[int, ...] = tuple(range(10))
    n_eval: int = 10000
    noise_structure: str = "chain"
    noise_strength: float = 0.5
    # transfer
    n_joint: Any = (50, 100, 300, 1000, 5000)
    n_bottleneck: int = 20000
    n_test: int = 10000
    intrinsic_confounder: bool = True
    # rank collapse
    depths: tuple[int, ...] = (1, 2, 3, 4, 5, 6)
    sizes: tuple[int, ...] = (10, 50, 100)
    rank_tol: float = 1e-8
    # nonlinear estimation
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    clouds: bool = True
    output_dir: str | None = None

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        if self.mode not in (LINEAR, NONLINEAR):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        for s in self.seeds:
            if not isinstance(s, int) or isinstance(s, bool) or s < 0 or s >= 2**64:
                raise ConfigError(f"seed {s!r} is not an unsigned 64-bit integer")
        swept = self.swept()
        if self.experiment in (IDENTIFIABILITY, TRANSFER) and len(swept) > 1:
            raise ConfigError(f"at most one parameter may be swept per run, got {swept}")
        for name in SWEEPABLE + ("n_joint",):
            v = getattr(self, name)
            if isinstance(v, (list, tuple)) and not v:
                raise ConfigError(f"sweep list for {name} is empty")
        if self.experiment == MISSPECIFICATION:
            others = [s for s in swept if s != "d_hat"]
            if others:
                raise ConfigError(f"misspecification sweeps d_hat only, also got {others}")
        if not self.depths or not self.sizes or min(self.depths) < 1 or min(self.sizes) < 1:
            raise ConfigError("depths and sizes must be non-empty positive lists")

    def swept(self) -> list[str]:
        # n_joint is the transfer experiment's own axis, not a sweep
        return [k for k in SWEEPABLE if isinstance(getattr(self, k), (list, tuple))]

    def sweep(self) -> tuple[str, list]:
        """The swept parameter and its values (``("none", [None])`` if nothing is swept)."""
        s = self.swept()
        if not s:
            return "none", [None]
        return s[0], list(getattr(self, s[0]))

    def at(self, name: str, value) -> "ExperimentConfig":
        if name == "none":
            return self
        return dataclasses.replace(self, **{name: value})

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, EstimatorConfig):
                v = v.to_dict()
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def defaults(experiment: str, mode: str = LINEAR) -> dict:
    """Baseline values for an experiment; JSON configs override these."""
    if experiment == IDENTIFIABILITY:
        if mode == NONLINEAR:
            return dict(num_nodes=3, d_x=10, d_z=2, n=10000, n_eval=5000, seeds=[0, 1, 2])
        return {}
    if experiment == MISSPECIFICATION:
        if mode == NONLINEAR:
            return dict(num_nodes=2, d_x=100, d_z=10, n=10000, n_eval=5000, d_hat=[1, 2, 5, 10, 20, 50], seeds=[0, 1, 2])
        return dict(num_nodes=2, d_x=50, d_z=10, d_hat=list(range(1, 51)))
    if experiment == TRANSFER:
        if mode == NONLINEAR:
            return dict(num_nodes=3, d_x=100, d_z=2, n_joint=[50, 100, 1000, 5000], seeds=[0, 1, 2])
        return dict(num_nodes=3, d_x=50, d_z=2)
    if experiment == RANK_COLLAPSE:
        return dict(seeds=list(range(100)))
    raise ConfigError(f"unknown experiment {experiment!r}")


def paper_scale(cfg: ExperimentConfig) -> ExperimentConfig:
    """Full-size nonlinear settings (slow; not part of the test suite)."""
    if cfg.mode != NONLINEAR:
        return cfg
    if cfg.experiment == IDENTIFIABILITY:
        return dataclasses.replace(cfg, num_nodes=10, d_x=5, d_z=2, n=50000, estimator=PAPER_ID_ESTIMATOR, seeds=tuple(range(10)))
    if cfg.experiment == MISSPECIFICATION:
        return dataclasses.replace(cfg, d_x=100, n=50000, d_hat=tuple(range(1, 101)), estimator=PAPER_ID_ESTIMATOR)
    if cfg.experiment == TRANSFER:
        est = dataclasses.replace(PAPER_ID_ESTIMATOR, train=PAPER_TRANSFER_TRAIN)
        return dataclasses.replace(cfg, d_x=500, estimator=est, seeds=tuple(range(10)))
    return cfg


_FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig)}


def _tuplify(v):
    return tuple(v) if isinstance(v, list) else v


def config_from_dict(obj: dict, mode: str | None = None) -> ExperimentConfig:
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    obj = dict(obj)
    unknown = set(obj) - _FIELDS - {"train"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "experiment" not in obj:
        raise ConfigError("config needs an 'experiment' key")
    if mode is not None:
        obj["mode"] = mode
    merged = defaults(obj["experiment"], obj.get("mode", LINEAR))
    merged.update(obj)
    try:
        est = EstimatorConfig.from_dict(merged.pop("estimator", {}))
        if "train" in merged:
            est = dataclasses.replace(est, train=TrainConfig.from_dict(merged.pop("train")))
        kwargs = {k: _tuplify(v) for k, v in merged.items()}
        return ExperimentConfig(estimator=est, **kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, mode: str | None = None) -> ExperimentConfig:
    try:
        obj = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(obj, mode)
