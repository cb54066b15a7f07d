#!/usr/bin/env python3
"""Compare the four offline debiasing algorithms on a LETOR dataset.

Trains ipw, dla, rem and pd on simulated position-biased clicks over
the supplied data and reports test nDCG/ERR at the usual cutoffs, so
their relative ordering can be checked against published results on
licensed benchmark collections.

Example:

    python scripts/offline_benchmark.py \
        --data_dir /path/to/letor --output_dir ./benchmark_out \
        --iterations 10000 --batch_size 256
"""

import argparse
import json
import os
import sys
import tempfile
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from unbiased_ltr.click_models import ClickModelSpec, save_spec_file, spec_filename
from unbiased_ltr.config import config_from_files
from unbiased_ltr.pipeline import run_test, run_training


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--data_dir", required=True)
    parser.add_argument("--output_dir", required=True)
    parser.add_argument("--train_data_prefix", default="train")
    parser.add_argument("--valid_data_prefix", default="valid")
    parser.add_argument("--test_data_prefix", default="test")
    parser.add_argument("--iterations", type=int, default=10000)
    parser.add_argument("--batch_size", type=int, default=256)
    parser.add_argument("--selection_bias_cutoff", type=int, default=10)
    parser.add_argument("--hidden_layer_sizes", type=int, nargs="+", default=[512, 256, 128])
    parser.add_argument("--neg_click_prob", type=float, default=0.1)
    parser.add_argument("--pos_click_prob", type=float, default=1.0)
    parser.add_argument("--max_relevance_grade", type=int, default=4)
    parser.add_argument("--eta", type=float, default=1.0)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    os.makedirs(args.output_dir, exist_ok=True)
    click_spec = ClickModelSpec(
        "pbm",
        args.neg_click_prob,
        args.pos_click_prob,
        args.max_relevance_grade,
        args.eta,
    )
    click_path = os.path.join(args.output_dir, spec_filename(click_spec))
    save_spec_file(click_spec, click_path)

    aggregate = {}
    for algorithm in ("ipw", "dla", "rem", "pd"):
        settings = {
            "train_input_feed": "click_simulation",
            "valid_input_feed": "direct_label",
            "test_input_feed": "direct_label",
            "train_input_hparams": {"click_model_json": click_path},
            "valid_input_hparams": {},
            "test_input_hparams": {},
            "ranking_model": "dnn",
            "ranking_model_hparams": {
                "hidden_layer_sizes": list(args.hidden_layer_sizes),
                "activation_func": "elu",
                "norm": "LayerNorm",
            },
            "learning_algorithm": algorithm,
            "learning_algorithm_hparams": (
                {"propensity_estimator_type": "oracle"} if algorithm == "ipw" else {}
            ),
            "metrics": ["ndcg", "err"],
            "metrics_topn": [1, 3, 5, 10],
            "objective_metric": "ndcg_10",
        }
        workdir = os.path.join(args.output_dir, algorithm)
        os.makedirs(workdir, exist_ok=True)
        settings_path = os.path.join(workdir, "settings.json")
        with open(settings_path, "w", encoding="utf-8") as handle:
            json.dump(settings, handle, indent=2)
        config = config_from_files(
            settings_path,
            data_dir=args.data_dir,
            train_data_prefix=args.train_data_prefix,
            valid_data_prefix=args.valid_data_prefix,
            test_data_prefix=args.test_data_prefix,
            model_dir=os.path.join(workdir, "model"),
            output_dir=workdir,
            batch_size=args.batch_size,
            selection_bias_cutoff=args.selection_bias_cutoff,
            max_train_iteration=args.iterations,
            steps_per_checkpoint=max(args.iterations // 20, 1),
            seed=args.seed,
        )
        started = time.time()
        print(f"training {algorithm} ...", flush=True)
        run_training(config)
        report = run_test(config)
        aggregate[algorithm] = report.values
        print(
            f"  {algorithm}: "
            + " ".join(f"{k}={v:.4f}" for k, v in report.values.items())
            + f" ({time.time() - started:.0f}s)",
            flush=True,
        )

    print("\nranking by test ndcg_10:")
    ordering = sorted(aggregate, key=lambda a: -aggregate[a]["ndcg_10"])
    for algorithm in ordering:
        print(f"  {algorithm}\t{aggregate[algorithm]['ndcg_10']:.4f}")
    summary_path = os.path.join(args.output_dir, "benchmark_summary.json")
    with open(summary_path, "w", encoding="utf-8") as handle:
        json.dump(aggregate, handle, indent=2)
    print(f"summary written to {summary_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
