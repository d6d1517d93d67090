"""End-to-end training and evaluation flows."""

from dgz.pipelines.config import CLS_LOSSES, DIST_KINDS, GEN_REGULARIZERS, TrainConfig
from dgz.pipelines.experiments import (
    ABLATIONS,
    TOY_PROTOCOLS,
    TOY_SIGMAS,
    ablation_config,
    ablation_suite,
    build_pseudo,
    genbound_study,
    lambda1_sweep,
    probe_dist,
    pseudo_fitness,
    run_ablation,
    run_dgz,
    toy2d,
    toy2d_config,
)
from dgz.pipelines.training import (
    TrainedModel,
    class_scores,
    evaluate,
    fit_wgan,
    generate_samples,
    predict,
    seen_to_unseen_errors,
    train_center_mapper,
    train_classifier,
    train_generator,
)

__all__ = [
    "ABLATIONS",
    "CLS_LOSSES",
    "DIST_KINDS",
    "GEN_REGULARIZERS",
    "TOY_PROTOCOLS",
    "TOY_SIGMAS",
    "TrainConfig",
    "TrainedModel",
    "ablation_config",
    "ablation_suite",
    "build_pseudo",
    "class_scores",
    "evaluate",
    "fit_wgan",
    "generate_samples",
    "genbound_study",
    "lambda1_sweep",
    "predict",
    "probe_dist",
    "pseudo_fitness",
    "run_ablation",
    "run_dgz",
    "seen_to_unseen_errors",
    "toy2d",
    "toy2d_config",
    "train_center_mapper",
    "train_classifier",
    "train_generator",
]
