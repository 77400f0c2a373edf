"""Latent factor recommendation trained on a smoothed graded average precision objective."""

from .core import (
    DimensionError,
    EmptyProfileError,
    GapfmError,
    GradedDataset,
    HyperParams,
    InvalidScoreError,
    ModelFactors,
    ThresholdVector,
    beta,
    make_thresholds,
    rank_items,
    score,
    z_norm,
)
from .harness import (
    EvalReport,
    ProtocolConfig,
    SplitBundle,
    carve_given_n,
    evaluate_rated_ranking,
    evaluate_topn,
    poprec_baseline,
)
from .metrics import RankedJudgedList, aggregate, gap_exact, gp_at_n, gr_at_n, ndcg_at_k, precision_at_k
from .objective import grad_item, grad_user, objective_value, smoothed_gap_user
from .trainer import DivergenceError, adaptive_select, init_factors, train, train_epoch

__version__ = "0.1.0"

__all__ = [
    "DimensionError",
    "DivergenceError",
    "EmptyProfileError",
    "EvalReport",
    "GapfmError",
    "GradedDataset",
    "HyperParams",
    "InvalidScoreError",
    "ModelFactors",
    "ProtocolConfig",
    "RankedJudgedList",
    "SplitBundle",
    "ThresholdVector",
    "adaptive_select",
    "aggregate",
    "beta",
    "carve_given_n",
    "evaluate_rated_ranking",
    "evaluate_topn",
    "gap_exact",
    "gp_at_n",
    "gr_at_n",
    "grad_item",
    "grad_user",
    "init_factors",
    "make_thresholds",
    "ndcg_at_k",
    "objective_value",
    "poprec_baseline",
    "precision_at_k",
    "rank_items",
    "score",
    "smoothed_gap_user",
    "train",
    "train_epoch",
    "z_norm",
]
