"""Weak-to-strong regression on synthetic multitask data.

A weak model finetuned on true labels supervises a strong model; when the
strong function class is rich enough, the strong student provably outperforms
its weak teacher by the amount it fails to imitate it (the misfit). This
package implements the experiment protocol end to end and ships executable
checks of the underlying inequalities.
"""

from .checks import (BoundReport, RankEntry, check_nonrealizable_skeleton,
                     check_pythagorean, check_realizable_bound, check_triangle,
                     heuristic_rank, mc_tolerance, pythagorean_identity)
from .heads import (HEAD_KINDS, Head, apply_head, head_from_doc, head_to_doc,
                    predictor, sample_linear_task, train_head)
from .io import (CSV_COLUMNS, RunManifest, apply_overrides, list_bundled_configs,
                 bundled_config_path, load_config, load_result, records_from_csv,
                 records_to_csv, result_to_doc, write_run_outputs)
from .linalg import RankDeficientError, gaussian_matrix, solve_least_squares
from .metrics import (DataDistribution, EvalRecord, estimate_dp, estimate_epsilon,
                      evaluate_triplet)
from .nn import (Mlp, init_mlp, mlp_forward, mlp_from_doc, mlp_gradients,
                 mlp_to_doc, perturb_mlp)
from .optim import AdamState, OptimizerConfig, adam_step, minibatches
from .pipeline import (ConfigError, ExperimentConfig, ExperimentResult, TaskError,
                       acquire_representations, build_ground_truth,
                       run_low_sample_variant, run_w2s_experiment)
from .rng import Rng

__version__ = "0.1.0"

__all__ = [
    "AdamState", "BoundReport", "ConfigError", "CSV_COLUMNS", "DataDistribution",
    "EvalRecord", "ExperimentConfig", "ExperimentResult", "HEAD_KINDS", "Head",
    "Mlp", "OptimizerConfig", "RankDeficientError", "RankEntry", "Rng",
    "RunManifest", "TaskError", "acquire_representations", "adam_step",
    "apply_head", "apply_overrides", "build_ground_truth", "bundled_config_path",
    "check_nonrealizable_skeleton", "check_pythagorean", "check_realizable_bound",
    "check_triangle", "estimate_dp", "estimate_epsilon", "evaluate_triplet",
    "gaussian_matrix", "head_from_doc", "head_to_doc", "heuristic_rank",
    "init_mlp", "list_bundled_configs", "load_config", "load_result",
    "mc_tolerance", "minibatches", "mlp_forward", "mlp_from_doc", "mlp_gradients",
    "mlp_to_doc", "perturb_mlp", "predictor", "pythagorean_identity",
    "records_from_csv", "records_to_csv", "result_to_doc", "run_low_sample_variant",
    "run_w2s_experiment", "sample_linear_task", "solve_least_squares", "train_head",
    "write_run_outputs",
]
