"""Command line interface.

Subcommands:

* ``make-click-model``     - write a click model JSON from positional args.
* ``estimate-propensity``  - estimate an examination curve from
  randomized click sessions over a dataset.
* ``train``                - run a training experiment from a settings file.
* ``test``                 - evaluate a saved checkpoint on the test split.
* ``make-synthetic-data``  - generate a linear-ground-truth LETOR dataset.

Exit codes: 0 on success, 1 on runtime errors, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import click_models, propensity, synthetic
from .config import ConfigError, config_from_files
from .letor import corpus_to_letor, read_split
from .pipeline import run_test, run_training


def str2bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {value!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unbiased-ltr",
        description="Unbiased learning-to-rank: click simulation, debiasing "
        "algorithms and ranking evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "make-click-model", help="create a click model definition file"
    )
    p.add_argument("model_name", choices=click_models.CLICK_MODEL_NAMES)
    p.add_argument("neg_click_prob", type=float)
    p.add_argument("pos_click_prob", type=float)
    p.add_argument("max_relevance_grade", type=int)
    p.add_argument("eta", type=float)
    p.add_argument(
        "--output_dir", default=".", help="directory for the generated JSON file"
    )

    p = sub.add_parser(
        "estimate-propensity",
        help="estimate examination propensities from randomized click sessions",
    )
    p.add_argument("--data_dir", required=True)
    p.add_argument("--train_data_prefix", default="train")
    p.add_argument("--click_model_json", required=True)
    p.add_argument("--sessions", type=int, default=1000000)
    p.add_argument("--cutoff", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True, help="path of the propensity JSON")

    for name, help_text in (
        ("train", "train a ranking model"),
        ("test", "evaluate a saved model on the test split"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--data_dir", required=True, help="directory of the dataset")
        p.add_argument("--train_data_prefix", default="train")
        p.add_argument("--valid_data_prefix", default="valid")
        p.add_argument("--test_data_prefix", default="test")
        p.add_argument("--model_dir", default="./model")
        p.add_argument("--output_dir", default="./output")
        p.add_argument("--setting_file", required=True)
        p.add_argument("--batch_size", type=int, default=256)
        p.add_argument("--max_list_cutoff", type=int, default=0)
        p.add_argument("--selection_bias_cutoff", type=int, default=10)
        p.add_argument("--max_train_iteration", type=int, default=10000)
        p.add_argument("--start_saving_iteration", type=int, default=0)
        p.add_argument("--steps_per_checkpoint", type=int, default=50)
        p.add_argument("--test_while_train", type=str2bool, default=False)
        p.add_argument("--test_only", type=str2bool, default=False)
        p.add_argument("--seed", type=int, default=0)
        if name == "test":
            p.add_argument("--checkpoint", default=None, help="explicit checkpoint path")

    p = sub.add_parser(
        "make-synthetic-data",
        help="generate train/valid/test splits with a linear ground truth",
    )
    p.add_argument("--output_dir", required=True)
    p.add_argument("--train_queries", type=int, default=500)
    p.add_argument("--valid_queries", type=int, default=100)
    p.add_argument("--test_queries", type=int, default=100)
    p.add_argument("--docs_per_query", type=int, default=20)
    p.add_argument("--features", type=int, default=10)
    p.add_argument("--grade_levels", type=int, default=5)
    p.add_argument("--logger_noise", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _run_options(args: argparse.Namespace) -> dict:
    return dict(
        data_dir=args.data_dir,
        train_data_prefix=args.train_data_prefix,
        valid_data_prefix=args.valid_data_prefix,
        test_data_prefix=args.test_data_prefix,
        model_dir=args.model_dir,
        output_dir=args.output_dir,
        batch_size=args.batch_size,
        max_list_cutoff=args.max_list_cutoff,
        selection_bias_cutoff=args.selection_bias_cutoff,
        max_train_iteration=args.max_train_iteration,
        start_saving_iteration=args.start_saving_iteration,
        steps_per_checkpoint=args.steps_per_checkpoint,
        test_while_train=args.test_while_train,
        test_only=args.test_only,
        seed=args.seed,
    )


def cmd_make_click_model(args) -> int:
    spec = click_models.ClickModelSpec(
        model_name=args.model_name,
        neg_click_prob=args.neg_click_prob,
        pos_click_prob=args.pos_click_prob,
        max_relevance_grade=args.max_relevance_grade,
        eta=args.eta,
    )
    os.makedirs(args.output_dir, exist_ok=True)
    path = os.path.join(args.output_dir, click_models.spec_filename(spec))
    click_models.save_spec_file(spec, path)
    print(path)
    return 0


def cmd_estimate_propensity(args) -> int:
    spec = click_models.load_spec_file(args.click_model_json)
    corpus = read_split(args.data_dir, args.train_data_prefix, "train")
    rng = np.random.default_rng(args.seed)
    table = propensity.estimate_randomized(
        corpus, spec, args.sessions, args.cutoff, rng
    )
    out_dir = os.path.dirname(os.path.abspath(args.output))
    os.makedirs(out_dir, exist_ok=True)
    propensity.save_table(table, args.output)
    print(args.output)
    return 0


def cmd_train(args) -> int:
    config = config_from_files(args.setting_file, **_run_options(args))
    if config.test_only:
        report = run_test(config)
        _print_report(report)
        return 0

    def progress(step, loss, report):
        objective = report.values.get(config.objective_metric, float("nan"))
        print(
            f"step {step} loss {loss:.6f} {config.objective_metric} {objective:.6f}",
            flush=True,
        )

    record, log_path = run_training(config, progress=progress)
    print(f"finished at step {record.step}; metric log: {log_path}")
    if record.best_step is not None:
        print(
            f"best {config.objective_metric} {record.best_value:.6f} "
            f"at step {record.best_step}"
        )
    return 0


def cmd_test(args) -> int:
    config = config_from_files(args.setting_file, **_run_options(args))
    report = run_test(config, checkpoint_path=args.checkpoint)
    _print_report(report)
    return 0


def cmd_make_synthetic_data(args) -> int:
    train, valid, test = synthetic.linear_truth_splits(
        args.train_queries,
        args.valid_queries,
        args.test_queries,
        args.docs_per_query,
        args.features,
        args.seed,
        grade_levels=args.grade_levels,
        logger_noise=args.logger_noise,
    )
    os.makedirs(args.output_dir, exist_ok=True)
    for corpus, prefix in ((train, "train"), (valid, "valid"), (test, "test")):
        path = os.path.join(args.output_dir, f"{prefix}.txt")
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(corpus_to_letor(corpus))
        print(path)
    return 0


def _print_report(report) -> None:
    for key, value in report.values.items():
        print(f"{key}\t{value:.6f}")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "make-click-model": cmd_make_click_model,
        "estimate-propensity": cmd_estimate_propensity,
        "train": cmd_train,
        "test": cmd_test,
        "make-synthetic-data": cmd_make_synthetic_data,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
