"""Flat JSON experiment configuration.

Every key is optional; unknown keys are rejected by name. The environment
variable ``APUT_SEED`` overrides ``seed`` from the file, and an explicit
``--seed`` on the command line overrides both.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from ..a2c import A2CConfig
from ..env import CostParams, make_privacy
from ..errors import ConfigurationError
from ..model import ObservationModel, Prior, build_synthetic, desk_instance, \
    fit_from_csv, read_records

MODEL_SOURCES = ("synthetic", "desk", "file", "csv")
SEED_ENV = "APUT_SEED"

DEFAULT_BELIEF_GRID = [0.6, 0.7, 0.8, 0.9, 0.99]
DEFAULT_MI_GRID = [0.5, 1.0, 1.5, 2.0]


@dataclass
class ExperimentConfig:
    # model source
    model_source: str = "synthetic"
    model_path: Optional[str] = None
    n_actions: int = 3
    n_secret: int = 3
    n_useful: int = 3
    n_obs: int = 50
    sigma_lo: float = 0.5
    sigma_hi: float = 1.5
    model_seed: int = 7
    smoothing: float = 1.0
    prior: Union[str, List[List[float]]] = "uniform"
    # costs
    lam: float = 50.0
    time_cost: float = 0.5
    forbidden_cost: float = 500.0
    gamma: float = 0.99
    t_max: int = 50
    scale_stop_cost_by_time_cost: bool = False
    forbidden_mode: str = "terminate"
    # privacy
    privacy: str = "belief"
    thresholds: Optional[List[float]] = None
    budget_feature: bool = True
    # learner
    lr_actor: float = 0.03
    lr_critic: float = 0.05
    episodes: int = 50000
    entropy_coef: float = 0.02
    hidden_sizes: List[int] = field(default_factory=lambda: [32, 32])
    eval_every: int = 1000
    cost_scale: float = 0.02
    clip: Optional[float] = 5.0
    slope: float = 0.01
    # evaluation and output
    eval_episodes: int = 10000
    dp_resolution: int = 12
    seed: int = 0
    out_dir: str = "out"

    def __post_init__(self):
        if self.model_source not in MODEL_SOURCES:
            raise ConfigurationError(f"model_source: expected one of {MODEL_SOURCES}, "
                                     f"got {self.model_source!r}")
        if self.model_source in ("file", "csv") and not self.model_path:
            raise ConfigurationError(f"model_path is required for model_source={self.model_source!r}")
        if self.privacy not in ("belief", "mi"):
            raise ConfigurationError(f"privacy: expected 'belief' or 'mi', got {self.privacy!r}")
        if self.thresholds is None:
            self.thresholds = list(DEFAULT_BELIEF_GRID if self.privacy == "belief"
                                   else DEFAULT_MI_GRID)
        grid = [float(t) for t in self.thresholds]
        if not grid:
            raise ConfigurationError("thresholds: grid must be nonempty")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigurationError("thresholds: grid must be strictly increasing")
        self.thresholds = grid
        if self.eval_episodes < 1:
            raise ConfigurationError("eval_episodes must be positive")
        self.hidden_sizes = [int(h) for h in self.hidden_sizes]

    # -- construction -------------------------------------------------------

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigurationError("config document must be a JSON object")
        known = {f.name for f in fields(cls)}
        for key in d:
            if key not in known:
                raise ConfigurationError(f"unknown config key {key!r}")
        kwargs = {key: _coerce(key, value) for key, value in d.items()}
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigurationError):
                raise
            raise ConfigurationError(str(exc)) from exc

    @classmethod
    def load(cls, path=None, seed: Optional[int] = None) -> "ExperimentConfig":
        """Read a config file (or defaults) and apply seed overrides."""
        d = {}
        if path is not None:
            try:
                d = json.loads(Path(path).read_text())
            except json.JSONDecodeError as exc:
                raise ConfigurationError(f"{path}: not valid JSON ({exc})") from exc
            except OSError as exc:
                raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        cfg = cls.from_dict(d)
        env_seed = os.environ.get(SEED_ENV)
        if env_seed is not None:
            try:
                cfg.seed = int(env_seed)
            except ValueError:
                raise ConfigurationError(f"{SEED_ENV} must be an integer, got {env_seed!r}")
        if seed is not None:
            cfg.seed = int(seed)
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def metadata(self) -> str:
        return f"config_hash={self.config_hash()} seed={self.seed}"

    # -- derived objects ----------------------------------------------------

    def build_model(self) -> ObservationModel:
        if self.model_source == "desk":
            return desk_instance()
        if self.model_source == "synthetic":
            return build_synthetic(self.model_seed, self.n_actions, self.n_secret,
                                   self.n_useful, self.n_obs, self.sigma_lo, self.sigma_hi)
        if self.model_source == "file":
            try:
                return ObservationModel.load(self.model_path)
            except OSError as exc:
                raise ConfigurationError(f"cannot read model {self.model_path}: {exc}") from exc
        with open(self.model_path, newline="", encoding="utf-8") as fh:
            return fit_from_csv(read_records(fh), self.n_obs, self.smoothing)

    def build_prior(self, model: ObservationModel) -> Prior:
        if self.prior == "uniform":
            return Prior.uniform(model.n_secret, model.n_useful)
        joint = np.asarray(self.prior, dtype=float)
        if joint.shape != (model.n_secret, model.n_useful):
            raise ConfigurationError(f"prior: expected shape {(model.n_secret, model.n_useful)}, "
                                     f"got {joint.shape}")
        return Prior(joint)

    def build_costs(self) -> CostParams:
        return CostParams(lam=self.lam, time_cost=self.time_cost,
                          forbidden_cost=self.forbidden_cost, gamma=self.gamma, t_max=self.t_max,
                          scale_stop_cost_by_time_cost=self.scale_stop_cost_by_time_cost,
                          forbidden_mode=self.forbidden_mode)

    def build_privacy(self, threshold: float):
        extra = {"budget_feature": self.budget_feature} if self.privacy == "mi" else {}
        return make_privacy(self.privacy, threshold, **extra)

    def a2c_config(self, seed: int) -> A2CConfig:
        return A2CConfig(lr_actor=self.lr_actor, lr_critic=self.lr_critic, gamma=self.gamma,
                         episodes=self.episodes, entropy_coef=self.entropy_coef,
                         hidden_sizes=tuple(self.hidden_sizes), eval_every=self.eval_every,
                         seed=seed, clip=self.clip, cost_scale=self.cost_scale, slope=self.slope)


_OPTIONAL = ("model_path", "thresholds", "clip")
_KINDS = {
    "model_source": str, "model_path": str, "n_actions": int, "n_secret": int, "n_useful": int,
    "n_obs": int, "sigma_lo": float, "sigma_hi": float, "model_seed": int, "smoothing": float,
    "prior": None, "lam": float, "time_cost": float, "forbidden_cost": float, "gamma": float,
    "t_max": int, "scale_stop_cost_by_time_cost": bool, "forbidden_mode": str, "privacy": str,
    "thresholds": list, "budget_feature": bool, "lr_actor": float, "lr_critic": float,
    "episodes": int, "entropy_coef": float, "hidden_sizes": list, "eval_every": int,
    "cost_scale": float, "clip": float, "slope": float, "eval_episodes": int,
    "dp_resolution": int, "seed": int, "out_dir": str,
}
_KIND_NAMES = {str: "a string", int: "an integer", float: "a number", bool: "true/false",
               list: "a list"}


def _coerce(name, value):
    kind = _KINDS[name]
    if kind is None or (value is None and name in _OPTIONAL):
        return value
    ok = isinstance(value, kind) and not (kind is not bool and isinstance(value, bool))
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        ok, value = True, float(value)
    if not ok:
        raise ConfigurationError(f"{name}: expected {_KIND_NAMES[kind]}, got {value!r}")
    if kind is list and not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                                for v in value):
        raise ConfigurationError(f"{name}: expected a list of numbers, got {value!r}")
    return value
