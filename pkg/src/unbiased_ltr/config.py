"""Experiment configuration: the settings JSON plus run options.

The settings file is a single JSON object with feed, model, algorithm
and metric blocks::

    {
      "train_input_feed": "click_simulation",
      "valid_input_feed": "direct_label",
      "test_input_feed": "direct_label",
      "train_input_hparams": {"click_model_json": "...", "oracle_mode": false,
                              "dynamic_bias_eta_change": 0.0,
                              "dynamic_bias_step_interval": 0},
      "valid_input_hparams": {},
      "test_input_hparams": {},
      "ranking_model": "dnn",
      "ranking_model_hparams": {"hidden_layer_sizes": [512, 256, 128],
                                "activation_func": "elu", "norm": "LayerNorm"},
      "learning_algorithm": "ipw",
      "learning_algorithm_hparams": {"learning_rate": 0.05, ...},
      "metrics": ["ndcg", "err"],
      "metrics_topn": [1, 3, 5, 10],
      "objective_metric": "ndcg_10"
    }

Run options (data locations, batch size, cutoffs, iteration counts)
mirror the command line flags.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .counterfactual import LOSS_FUNCTIONS
from .feeds import FEED_NAMES, ONLINE_FEEDS
from .metrics import METRIC_NAMES, FULL_LIST_METRICS

ALGORITHM_NAMES = ("ipw", "dla", "rem", "pd", "dbgd", "mgd", "nsgd", "pdgd")

#: duel-style algorithms; they need an online feed to explore
DUEL_ALGORITHMS = ("dbgd", "mgd", "nsgd")

PROPENSITY_ESTIMATOR_TYPES = ("oracle", "basic", "randomized")

_NORM_ALIASES = {
    "layernorm": "layer",
    "layer": "layer",
    "batchnorm": "batch",
    "batch": "batch",
    "none": "none",
}

_GRAD_ALIASES = {
    "ada": "ada",
    "adagrad": "ada",
    "ada_grad": "ada",
    "sgd": "sgd",
}


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


def normalize_loss_name(name: str) -> str:
    key = name.strip().lower().replace(" ", "_").removesuffix("_loss")
    if key not in LOSS_FUNCTIONS:
        raise ConfigError(f"unknown loss_function {name!r}")
    return key


def normalize_grad_strategy(name: str) -> str:
    key = name.strip().lower().replace(" ", "_")
    if key not in _GRAD_ALIASES:
        raise ConfigError(f"unknown grad_strategy {name!r}")
    return _GRAD_ALIASES[key]


def normalize_norm(name: str) -> str:
    key = name.strip().lower()
    if key not in _NORM_ALIASES:
        raise ConfigError(f"unknown norm {name!r}")
    return _NORM_ALIASES[key]


@dataclass
class ExperimentConfig:
    """Everything needed to run one training/testing experiment."""

    # settings file
    train_input_feed: str = "click_simulation"
    valid_input_feed: str = "direct_label"
    test_input_feed: str = "direct_label"
    train_input_hparams: dict = field(default_factory=dict)
    valid_input_hparams: dict = field(default_factory=dict)
    test_input_hparams: dict = field(default_factory=dict)
    ranking_model: str = "dnn"
    ranking_model_hparams: dict = field(default_factory=dict)
    learning_algorithm: str = "ipw"
    learning_algorithm_hparams: dict = field(default_factory=dict)
    metrics: list[str] = field(default_factory=lambda: ["ndcg", "err"])
    metrics_topn: list[int] = field(default_factory=lambda: [1, 3, 5, 10])
    objective_metric: str = "ndcg_10"

    # run options
    data_dir: str = "."
    train_data_prefix: str = "train"
    valid_data_prefix: str = "valid"
    test_data_prefix: str = "test"
    model_dir: str = "./model"
    output_dir: str = "./output"
    batch_size: int = 256
    max_list_cutoff: int = 0
    selection_bias_cutoff: int = 10
    max_train_iteration: int = 10000
    start_saving_iteration: int = 0
    steps_per_checkpoint: int = 50
    test_while_train: bool = False
    test_only: bool = False
    seed: int = 0

    def validate(self) -> None:
        for name, feed in (
            ("train_input_feed", self.train_input_feed),
            ("valid_input_feed", self.valid_input_feed),
            ("test_input_feed", self.test_input_feed),
        ):
            if feed not in FEED_NAMES:
                raise ConfigError(f"{name}: unknown feed {feed!r}")
        if self.learning_algorithm not in ALGORITHM_NAMES:
            raise ConfigError(
                f"unknown learning_algorithm {self.learning_algorithm!r}, "
                f"expected one of {ALGORITHM_NAMES}"
            )
        if (
            self.learning_algorithm in DUEL_ALGORITHMS
            and self.train_input_feed not in ONLINE_FEEDS
        ):
            raise ConfigError(
                f"{self.learning_algorithm} explores by serving its own lists and "
                f"cannot train from the {self.train_input_feed!r} feed; use "
                "deterministic_online or stochastic_online"
            )
        if self.max_list_cutoff < 0 or self.selection_bias_cutoff < 0:
            raise ConfigError("cutoffs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_train_iteration < 0:
            raise ConfigError("max_train_iteration must be >= 0")
        if self.steps_per_checkpoint < 1:
            raise ConfigError("steps_per_checkpoint must be >= 1")
        for metric in self.metrics:
            if metric not in METRIC_NAMES:
                raise ConfigError(f"unknown metric {metric!r}")
        if not self.metrics_topn or any(k < 1 for k in self.metrics_topn):
            raise ConfigError("metrics_topn must be positive cutoffs")
        self._check_objective()
        for feed_name, hparams in (
            (self.train_input_feed, self.train_input_hparams),
            (self.valid_input_feed, self.valid_input_hparams),
            (self.test_input_feed, self.test_input_hparams),
        ):
            if feed_name != "direct_label" and not hparams.get("oracle_mode", False):
                path = hparams.get("click_model_json")
                if not path:
                    raise ConfigError(f"feed {feed_name!r} needs click_model_json")
                if not os.path.exists(path):
                    raise ConfigError(f"click_model_json not found: {path}")
        if self.learning_algorithm == "ipw":
            est = self.learning_algorithm_hparams.get(
                "propensity_estimator_type", "basic"
            )
            if est not in PROPENSITY_ESTIMATOR_TYPES:
                raise ConfigError(f"unknown propensity_estimator_type {est!r}")
            if est == "randomized":
                path = self.learning_algorithm_hparams.get("propensity_estimator_json")
                if not path:
                    raise ConfigError(
                        "randomized estimator needs propensity_estimator_json"
                    )
                if not os.path.exists(path):
                    raise ConfigError(f"propensity_estimator_json not found: {path}")

    def _check_objective(self) -> None:
        metric, k = parse_objective_metric(self.objective_metric)
        if metric not in self.metrics:
            raise ConfigError(
                f"objective_metric {self.objective_metric!r} uses metric {metric!r} "
                "which is not in the metrics list"
            )
        if metric not in FULL_LIST_METRICS and k not in self.metrics_topn:
            raise ConfigError(
                f"objective_metric cutoff {k} is not in metrics_topn {self.metrics_topn}"
            )


def parse_objective_metric(objective: str) -> tuple[str, int | None]:
    """Split e.g. ``"ndcg_10"`` into ("ndcg", 10); full-list metrics have no cutoff."""
    if objective in FULL_LIST_METRICS:
        return objective, None
    name, sep, suffix = objective.rpartition("_")
    if not sep or not suffix.isdigit() or name not in METRIC_NAMES:
        raise ConfigError(
            f"objective_metric must look like '<metric>_<cutoff>' or a full-list "
            f"metric name, got {objective!r}"
        )
    return name, int(suffix)


_SETTINGS_KEYS = (
    "train_input_feed",
    "valid_input_feed",
    "test_input_feed",
    "train_input_hparams",
    "valid_input_hparams",
    "test_input_hparams",
    "ranking_model",
    "ranking_model_hparams",
    "learning_algorithm",
    "learning_algorithm_hparams",
    "metrics",
    "metrics_topn",
    "objective_metric",
)


def load_settings_file(path: str) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"setting file not found: {path}")
    with open(path, "r", encoding="utf-8") as handle:
        obj = json.load(handle)
    if not isinstance(obj, dict):
        raise ConfigError("setting file must contain a JSON object")
    unknown = set(obj) - set(_SETTINGS_KEYS)
    if unknown:
        raise ConfigError(f"unknown settings keys: {sorted(unknown)}")
    return obj


def config_from_files(setting_file: str, **run_options) -> ExperimentConfig:
    """Build a validated config from a settings JSON plus run options."""
    settings = load_settings_file(setting_file)
    config = ExperimentConfig(**settings, **run_options)
    config.validate()
    return config
