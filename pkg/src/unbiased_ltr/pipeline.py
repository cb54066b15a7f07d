"""Experiment driver: training loop, validation, checkpointing, testing.

Training follows the standard cycle: draw a batch from the configured
input feed, run one algorithm step, and every ``steps_per_checkpoint``
steps evaluate the whole validation split, append a TSV log row and
save a checkpoint whenever the objective metric improves.  Validation
and testing always score against true relevance grades over full lists
(the direct label feed, visited sequentially so every query counts
exactly once).

The global seed is split into independent generator streams for
initialization, batch sampling, click simulation and the algorithm, so
adding draws to one consumer does not perturb the others.  Checkpoints
carry the scorer, optimizer and algorithm state plus all stream states,
which makes a resumed run bit-identical to an uninterrupted one.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import bandit, counterfactual, feeds, scorers
from .click_models import ClickModelSpec, load_spec_file
from .config import (
    DUEL_ALGORITHMS,
    ExperimentConfig,
    normalize_grad_strategy,
    normalize_loss_name,
    normalize_norm,
    parse_objective_metric,
)
from .letor import Corpus, read_split
from .metrics import MetricReport, RankedResult, evaluate_all
from .propensity import basic_table, load_table, oracle_from_click_model

#: objective metrics where smaller values are better
LOWER_IS_BETTER = ("arp",)

DEFAULT_HIDDEN_LAYERS = (512, 256, 128)


@dataclass
class CheckpointRecord:
    """A saved training state: model, algorithm and stream snapshots."""

    step: int
    algorithm: str
    scorer_spec: dict
    feature_size: int
    algorithm_state: dict
    best_value: float | None
    best_step: int | None
    rng_state: dict

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "algorithm": self.algorithm,
            "scorer_spec": self.scorer_spec,
            "feature_size": self.feature_size,
            "algorithm_state": self.algorithm_state,
            "best_value": self.best_value,
            "best_step": self.best_step,
            "rng_state": self.rng_state,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "CheckpointRecord":
        return cls(**obj)


def save_checkpoint(record: CheckpointRecord, path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(record.to_dict(), handle)


def load_checkpoint(path: str) -> CheckpointRecord:
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with open(path, "r", encoding="utf-8") as handle:
        return CheckpointRecord.from_dict(json.load(handle))


def build_scorer_spec(config: ExperimentConfig) -> scorers.ScorerSpec:
    hp = config.ranking_model_hparams
    if config.ranking_model == "linear":
        return scorers.ScorerSpec(
            kind="linear", norm=normalize_norm(hp.get("norm", "LayerNorm"))
        )
    if config.ranking_model != "dnn":
        raise ValueError(f"unknown ranking_model {config.ranking_model!r}")
    return scorers.ScorerSpec(
        kind="dnn",
        hidden_layer_sizes=tuple(hp.get("hidden_layer_sizes", DEFAULT_HIDDEN_LAYERS)),
        activation=hp.get("activation_func", "elu"),
        norm=normalize_norm(hp.get("norm", "LayerNorm")),
    )


def _load_click_spec(hparams: dict) -> ClickModelSpec | None:
    path = hparams.get("click_model_json")
    return load_spec_file(path) if path else None


def build_train_feed(config: ExperimentConfig, corpus: Corpus):
    hp = config.train_input_hparams
    return feeds.make_feed(
        config.train_input_feed,
        corpus,
        click_spec=_load_click_spec(hp),
        cutoff=config.selection_bias_cutoff,
        oracle_mode=bool(hp.get("oracle_mode", False)),
        dynamic_bias_eta_change=float(hp.get("dynamic_bias_eta_change", 0.0)),
        dynamic_bias_step_interval=int(hp.get("dynamic_bias_step_interval", 0)),
    )


def build_algorithm(
    config: ExperimentConfig,
    scorer_spec: scorers.ScorerSpec,
    params: scorers.ScorerParams,
    cutoff: int,
    train_click_spec: ClickModelSpec | None,
):
    hp = config.learning_algorithm_hparams
    name = config.learning_algorithm
    gradient_hparams = dict(
        learning_rate=float(hp.get("learning_rate", 0.05)),
        max_gradient_norm=float(hp.get("max_gradient_norm", 5.0)),
        grad_strategy=normalize_grad_strategy(hp.get("grad_strategy", "ada")),
        l2_loss=float(hp.get("l2_loss", 0.0)),
    )
    loss_function = normalize_loss_name(hp.get("loss_function", "softmax"))

    if name == "ipw":
        est = hp.get("propensity_estimator_type", "basic")
        if est == "oracle":
            if train_click_spec is None:
                raise ValueError("oracle propensities need the training click model")
            table = oracle_from_click_model(train_click_spec, cutoff)
        elif est == "randomized":
            table = load_table(hp["propensity_estimator_json"])
        else:
            table = basic_table(cutoff)
        return counterfactual.IpwRank(
            scorer_spec, params, table, loss_function=loss_function, **gradient_hparams
        )
    if name == "dla":
        return counterfactual.DlaRank(
            scorer_spec, params, cutoff, loss_function=loss_function, **gradient_hparams
        )
    if name == "rem":
        return counterfactual.RemRank(scorer_spec, params, cutoff, **gradient_hparams)
    if name == "pd":
        return counterfactual.PdRank(scorer_spec, params, cutoff, **gradient_hparams)
    if name == "pdgd":
        return bandit.PdgdRank(scorer_spec, params, **gradient_hparams)

    serve_mode = (
        "stochastic" if config.train_input_feed == "stochastic_online" else "deterministic"
    )
    duel_hparams = dict(
        serve_mode=serve_mode,
        learning_rate=float(hp.get("learning_rate", 0.01)),
        delta=float(hp.get("delta", 1.0)),
        need_interleave=bool(hp.get("need_interleave", True)),
    )
    if name == "dbgd":
        return bandit.DbgdRank(scorer_spec, params, cutoff, **duel_hparams)
    if name == "mgd":
        return bandit.MgdRank(
            scorer_spec, params, cutoff, n_candidates=int(hp.get("n_candidates", 4)),
            **duel_hparams,
        )
    if name == "nsgd":
        return bandit.NsgdRank(
            scorer_spec,
            params,
            cutoff,
            n_candidates=int(hp.get("n_candidates", 4)),
            null_space_capacity=int(hp.get("null_space_capacity", 10)),
            **duel_hparams,
        )
    raise ValueError(f"unknown learning_algorithm {name!r}")


def evaluate_scores_on_corpus(
    corpus: Corpus,
    score_batch_fn,
    metric_names: list[str],
    cutoffs: list[int],
    batch_size: int = 64,
) -> tuple[MetricReport, list[tuple[str, dict[str, float]]]]:
    """Sequential full-split evaluation against true grades.

    ``score_batch_fn(features, mask) -> scores`` supplies the ranking
    scores; returns the aggregate report plus per-query values.
    """
    feed = feeds.DirectLabelFeed(corpus)
    results: list[RankedResult] = []
    query_ids: list[str] = []
    for batch in feed.sequential_batches(batch_size):
        scores = score_batch_fn(batch.features, batch.mask)
        for row in range(batch.n_lists):
            results.append(
                RankedResult(scores[row], batch.grades[row], batch.mask[row])
            )
        query_ids.extend(batch.query_ids)
    aggregate = evaluate_all(results, metric_names, cutoffs, g_max=corpus.g_max)
    per_query = []
    for qid, result in zip(query_ids, results):
        report = evaluate_all([result], metric_names, cutoffs, g_max=corpus.g_max)
        per_query.append((qid, report.values))
    return aggregate, per_query


def _improved(value: float, best: float | None, objective_name: str) -> bool:
    if best is None:
        return True
    if objective_name in LOWER_IS_BETTER:
        return value < best
    return value > best


class Experiment:
    """One configured training run over loaded corpora."""

    def __init__(self, config: ExperimentConfig, corpora: dict[str, Corpus] | None = None):
        config.validate()
        self.config = config
        corpora = corpora or {}
        self.train_corpus = corpora.get("train") or read_split(
            config.data_dir, config.train_data_prefix, "train", config.max_list_cutoff
        )
        self.valid_corpus = corpora.get("valid") or read_split(
            config.data_dir, config.valid_data_prefix, "valid", config.max_list_cutoff
        )
        self.test_corpus = corpora.get("test")
        if self.test_corpus is None and config.test_while_train:
            self.test_corpus = read_split(
                config.data_dir, config.test_data_prefix, "test", config.max_list_cutoff
            )

        seeds = np.random.SeedSequence(config.seed).spawn(4)
        self.init_rng = np.random.default_rng(seeds[0])
        self.feed_rng = np.random.default_rng(seeds[1])
        self.click_rng = np.random.default_rng(seeds[2])
        self.algo_rng = np.random.default_rng(seeds[3])

        max_len = max(len(s) for s in self.train_corpus.sessions)
        cutoff = config.selection_bias_cutoff
        self.cutoff = min(cutoff, max_len) if cutoff > 0 else max_len

        self.scorer_spec = build_scorer_spec(config)
        params = scorers.init(
            self.scorer_spec, self.train_corpus.feature_size, self.init_rng
        )
        self.train_feed = build_train_feed(config, self.train_corpus)
        train_click_spec = getattr(self.train_feed, "click_spec", None)
        self.is_duel = config.learning_algorithm in DUEL_ALGORITHMS
        # offline algorithms must cover every rank the feed can emit; the
        # direct label feed serves full lists regardless of the cutoff
        algo_ranks = self.cutoff if self.is_duel else self.train_feed.list_size
        self.algorithm = build_algorithm(
            config, self.scorer_spec, params, algo_ranks, train_click_spec
        )

        self.global_step = 0
        self.best_value: float | None = None
        self.best_step: int | None = None
        self.objective_name, _ = parse_objective_metric(config.objective_metric)
        self.objective_key = config.objective_metric

    @property
    def checkpoint_path(self) -> str:
        return os.path.join(
            self.config.model_dir, f"{self.config.learning_algorithm}.best.json"
        )

    def training_step(self) -> counterfactual.TrainStepReport:
        """Run exactly one training iteration."""
        step = self.global_step + 1
        if self.is_duel:
            sessions = feeds.sample_sessions(
                self.train_corpus, self.config.batch_size, self.feed_rng
            )
            click_spec = self.train_feed.spec_at(step)
            report = self.algorithm.train_step_sessions(
                sessions, click_spec, self.algo_rng, self.click_rng
            )
        else:
            snapshot = (
                (self.scorer_spec, self.algorithm.params)
                if self.train_feed.is_online
                else None
            )
            batch = self.train_feed.get_batch(
                self.config.batch_size,
                self.feed_rng,
                scorer_snapshot=snapshot,
                step=step,
                click_rng=self.click_rng,
            )
            report = self.algorithm.train_step(batch, self.algo_rng)
        self.global_step = step
        return report

    def evaluate(self, corpus: Corpus) -> MetricReport:
        aggregate, _ = evaluate_scores_on_corpus(
            corpus,
            self.algorithm.scores_batch,
            self.config.metrics,
            self.config.metrics_topn,
        )
        return aggregate

    def make_checkpoint(self) -> CheckpointRecord:
        return CheckpointRecord(
            step=self.global_step,
            algorithm=self.config.learning_algorithm,
            scorer_spec=scorers.spec_to_dict(self.scorer_spec),
            feature_size=self.train_corpus.feature_size,
            algorithm_state=self.algorithm.state_dict(),
            best_value=self.best_value,
            best_step=self.best_step,
            rng_state={
                "feed": self.feed_rng.bit_generator.state,
                "click": self.click_rng.bit_generator.state,
                "algo": self.algo_rng.bit_generator.state,
            },
        )

    def restore_checkpoint(self, record: CheckpointRecord) -> None:
        if record.algorithm != self.config.learning_algorithm:
            raise ValueError(
                f"checkpoint is for {record.algorithm!r}, config says "
                f"{self.config.learning_algorithm!r}"
            )
        self.algorithm.load_state_dict(record.algorithm_state)
        self.global_step = record.step
        self.best_value = record.best_value
        self.best_step = record.best_step
        self.feed_rng.bit_generator.state = record.rng_state["feed"]
        self.click_rng.bit_generator.state = record.rng_state["click"]
        self.algo_rng.bit_generator.state = record.rng_state["algo"]

    def train(self, progress=None) -> tuple[CheckpointRecord, str]:
        """Full training loop; returns the final state and the log path.

        ``progress`` is an optional callable receiving (step, loss) at
        every checkpoint for console reporting.
        """
        config = self.config
        os.makedirs(config.model_dir, exist_ok=True)
        os.makedirs(config.output_dir, exist_ok=True)
        log_path = os.path.join(config.output_dir, "train_log.tsv")
        test_log_path = os.path.join(config.output_dir, "test_log.tsv")

        log_rows: list[str] = []
        test_rows: list[str] = []
        header: str | None = None
        window_loss = 0.0
        window_steps = 0

        for step in range(1, config.max_train_iteration + 1):
            report = self.training_step()
            window_loss += report.loss
            window_steps += 1
            at_boundary = step % config.steps_per_checkpoint == 0
            if at_boundary or step == config.max_train_iteration:
                mean_loss = window_loss / max(window_steps, 1)
                valid_report = self.evaluate(self.valid_corpus)
                if header is None:
                    header = "step\tloss\t" + "\t".join(valid_report.values)
                row = f"{step}\t{mean_loss:.6f}\t" + "\t".join(
                    f"{v:.6f}" for v in valid_report.values.values()
                )
                log_rows.append(row)
                if progress is not None:
                    progress(step, mean_loss, valid_report)
                self._maybe_save_checkpoint(step, valid_report)
                if config.test_while_train and self.test_corpus is not None:
                    test_report = self.evaluate(self.test_corpus)
                    test_rows.append(
                        f"{step}\t" + "\t".join(
                            f"{v:.6f}" for v in test_report.values.values()
                        )
                    )
                window_loss = 0.0
                window_steps = 0

        _write_log(log_path, header, log_rows, leading="step\tloss")
        if config.test_while_train and test_rows and header is not None:
            test_header = "step\t" + header.split("\t", 2)[2]
            _write_log(test_log_path, test_header, test_rows, leading="step")
        return self.make_checkpoint(), log_path

    def _maybe_save_checkpoint(self, step: int, report: MetricReport) -> None:
        if self.objective_key not in report.values:
            raise ValueError(
                f"objective metric {self.objective_key!r} missing from report "
                f"(have {sorted(report.values)})"
            )
        value = report.values[self.objective_key]
        if step < self.config.start_saving_iteration:
            return
        if _improved(value, self.best_value, self.objective_name):
            self.best_value = value
            self.best_step = step
            save_checkpoint(self.make_checkpoint(), self.checkpoint_path)


def _write_log(path: str, header: str | None, rows: list[str], leading: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        if header is not None:
            handle.write(header + "\n")
        else:
            handle.write(leading + "\n")
        for row in rows:
            handle.write(row + "\n")


def run_training(
    config: ExperimentConfig,
    corpora: dict[str, Corpus] | None = None,
    progress=None,
) -> tuple[CheckpointRecord, str]:
    return Experiment(config, corpora).train(progress=progress)


def run_test(
    config: ExperimentConfig,
    corpora: dict[str, Corpus] | None = None,
    checkpoint_path: str | None = None,
    score_batch_fn=None,
) -> MetricReport:
    """Evaluate a trained model on the test split and write result files.

    Scores come from the checkpointed scorer unless ``score_batch_fn``
    is supplied (testing hook).  Writes ``test_perquery.tsv`` and
    ``test_aggregate.tsv`` under ``output_dir``.
    """
    corpora = corpora or {}
    test_corpus = corpora.get("test") or read_split(
        config.data_dir, config.test_data_prefix, "test", config.max_list_cutoff
    )
    if score_batch_fn is None:
        path = checkpoint_path or os.path.join(
            config.model_dir, f"{config.learning_algorithm}.best.json"
        )
        record = load_checkpoint(path)
        spec = scorers.spec_from_dict(record.scorer_spec)
        params = scorers.params_from_dict(record.algorithm_state["params"])

        def score_batch_fn(features, mask):
            return scorers.forward_batch(params, spec, features, mask)

    aggregate, per_query = evaluate_scores_on_corpus(
        test_corpus, score_batch_fn, config.metrics, config.metrics_topn
    )
    os.makedirs(config.output_dir, exist_ok=True)
    keys = list(aggregate.values)
    perquery_path = os.path.join(config.output_dir, "test_perquery.tsv")
    with open(perquery_path, "w", encoding="utf-8") as handle:
        handle.write("query_id\t" + "\t".join(keys) + "\n")
        for qid, values in per_query:
            handle.write(qid + "\t" + "\t".join(f"{values[k]:.6f}" for k in keys) + "\n")
    aggregate_path = os.path.join(config.output_dir, "test_aggregate.tsv")
    with open(aggregate_path, "w", encoding="utf-8") as handle:
        handle.write("metric\tvalue\n")
        for key in keys:
            handle.write(f"{key}\t{aggregate.values[key]:.6f}\n")
    return aggregate
