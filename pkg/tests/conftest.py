import json
import os

import numpy as np
import pytest

from unbiased_ltr.click_models import ClickModelSpec, save_spec_file, spec_filename
from unbiased_ltr.letor import corpus_to_letor
from unbiased_ltr.synthetic import linear_truth_splits


@pytest.fixture(scope="session")
def synthetic_dataset(tmp_path_factory):
    """A small on-disk dataset plus click model, shared across tests."""
    root = tmp_path_factory.mktemp("data")
    train, valid, test = linear_truth_splits(60, 20, 20, 12, 6, seed=99)
    for corpus, prefix in ((train, "train"), (valid, "valid"), (test, "test")):
        (root / f"{prefix}.txt").write_text(corpus_to_letor(corpus))
    spec = ClickModelSpec("pbm", 0.1, 1.0, 4, 1.0)
    click_path = root / spec_filename(spec)
    save_spec_file(spec, str(click_path))
    return {"data_dir": str(root), "click_model_json": str(click_path)}


def write_settings(
    path,
    click_model_json,
    algorithm="ipw",
    algorithm_hparams=None,
    train_feed="click_simulation",
    ranking_model="linear",
    ranking_model_hparams=None,
):
    settings = {
        "train_input_feed": train_feed,
        "valid_input_feed": "direct_label",
        "test_input_feed": "direct_label",
        "train_input_hparams": {"click_model_json": click_model_json},
        "valid_input_hparams": {},
        "test_input_hparams": {},
        "ranking_model": ranking_model,
        "ranking_model_hparams": ranking_model_hparams or {},
        "learning_algorithm": algorithm,
        "learning_algorithm_hparams": algorithm_hparams
        or {"propensity_estimator_type": "oracle"},
        "metrics": ["ndcg", "err"],
        "metrics_topn": [1, 3, 5, 10],
        "objective_metric": "ndcg_10",
    }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(settings, handle)
    return str(path)
