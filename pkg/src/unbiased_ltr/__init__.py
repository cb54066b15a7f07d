"""Unbiased learning to rank: simulation, debiasing algorithms, evaluation.

The package covers the full experimental loop for learning to rank from
biased implicit feedback: LETOR data handling, click simulation under
position-based, cascade and user-browsing models, counterfactual
(ipw/dla/rem/pd) and online (dbgd/mgd/nsgd/pdgd) debiasing algorithms,
propensity estimation, ranking metrics and a reproducible experiment
pipeline with a command line front end.
"""

from .click_models import ClickModelSpec, ClickRecord, simulate
from .config import ExperimentConfig, config_from_files
from .letor import Corpus, Document, PaddingPolicy, QuerySession, parse_letor, read_split
from .metrics import RankedResult, evaluate, evaluate_all
from .pipeline import Experiment, run_test, run_training
from .propensity import PropensityTable
from .scorers import ScorerParams, ScorerSpec

__version__ = "0.1.0"

__all__ = [
    "ClickModelSpec",
    "ClickRecord",
    "Corpus",
    "Document",
    "Experiment",
    "ExperimentConfig",
    "PaddingPolicy",
    "PropensityTable",
    "QuerySession",
    "RankedResult",
    "ScorerParams",
    "ScorerSpec",
    "config_from_files",
    "evaluate",
    "evaluate_all",
    "parse_letor",
    "read_split",
    "run_test",
    "run_training",
    "simulate",
    "__version__",
]
