"""The weak-to-strong experiment protocol, end to end.

A run builds a random ground-truth representation, acquires weak and strong
representations (by multitask pretraining, by perturbing the ground truth, or
by handing the strong side the ground truth itself), then for every downstream
task finetunes a weak head on true labels, finetunes a strong head on the weak
model's labels over fresh inputs, and evaluates the resulting triplet of
distances. Every stage draws from its own child stream of the master seed, so
results are bit-reproducible and independent of worker count.
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .heads import Head, predictor, sample_linear_task, train_head, value_and_slope
from .metrics import DataDistribution, EvalRecord, estimate_epsilon, evaluate_triplet
from .nn import Mlp, init_mlp, perturb_mlp
from .optim import AdamState, OptimizerConfig, adam_step
from .rng import Rng

REP_MODES = ("pretrain", "perturb", "realizable_strong")
FINETUNE_METHODS = ("gd", "closed_form")
HEAD_KINDS = ("linear", "sigmoid", "tanh", "relu")

# Top-level stream ids under the master seed.
_ST_GROUND_TRUTH = 0
_ST_PRETRAIN_DATA = 1   # shared pretraining tasks and inputs, per task index
_ST_PRETRAIN_WEAK = 2   # weak-role training stream (init, shuffles)
_ST_PRETRAIN_STRONG = 3
_ST_TASKS = 4           # per downstream task, then a stage id below

# Per-task stage ids under (_ST_TASKS, task_id).
_TS_TASK_HEAD = 0
_TS_FINETUNE_X = 1
_TS_WEAK_TRAIN = 2
_TS_RELABEL_X = 3
_TS_W2S_TRAIN = 4
_TS_EPSILON = 5
_TS_EVAL = 6
_TS_CHECK_SAMPLE = 7    # reserved for post-hoc structural checks


class ConfigError(ValueError):
    """An experiment configuration field is invalid; the message names it."""


class TaskError(RuntimeError):
    """A downstream task failed; carries the task index."""

    def __init__(self, task_id: int, message: str) -> None:
        super().__init__(f"task {task_id}: {message}")
        self.task_id = task_id


@dataclass
class ExperimentConfig:
    """Everything a run needs; defaults reproduce the baseline protocol."""

    experiment_id: str = "experiment"
    master_seed: int = 42
    input_dim: int = 8
    sigma: float = 500.0
    rep_dim: int = 16
    ground_truth_depth: int = 5
    ground_truth_hidden: int = 16
    weak_depth: int = 2
    weak_hidden: int = 16
    strong_depth: int = 8
    strong_hidden: int = 16
    reverse_roles: bool = False
    rep_mode: str = "pretrain"
    pretrain_tasks: int = 10
    pretrain_samples: int = 2000
    joint_pretrain_heads: bool = False
    perturb_std_weak: float = 0.05
    perturb_std_strong: float = 0.01
    finetune_tasks: int = 100
    finetune_samples: int = 2000
    finetune_method: str = "gd"
    head_kind: str = "linear"
    head_bias: bool = True
    fresh_weak_inputs: bool = True
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    eval_samples: int = 2000
    eval_shared_sample: bool = False
    epsilon_enabled: bool = False
    epsilon_fit_samples: int = 2000
    weak_model_id: str | None = None
    bound_tol_sigma: float = 6.0
    skeleton_k1: float = 1.0
    skeleton_kn: float = 0.0

    def validate(self) -> None:
        """Raise ConfigError naming the offending config key (TOML spelling)."""
        def positive(value, key):
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"{key} must be an integer >= 1")

        if not self.experiment_id:
            raise ConfigError("experiment_id must be non-empty")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ConfigError("master_seed must be an unsigned 64-bit integer")
        positive(self.input_dim, "data.dim")
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ConfigError("data.sigma must be positive")
        positive(self.rep_dim, "archs.rep_dim")
        for key, value in (("archs.ground_truth_depth", self.ground_truth_depth),
                           ("archs.ground_truth_hidden", self.ground_truth_hidden),
                           ("archs.weak_depth", self.weak_depth),
                           ("archs.weak_hidden", self.weak_hidden),
                           ("archs.strong_depth", self.strong_depth),
                           ("archs.strong_hidden", self.strong_hidden)):
            positive(value, key)
        if self.rep_mode not in REP_MODES:
            raise ConfigError(f"pretrain.mode must be one of {REP_MODES}")
        positive(self.pretrain_tasks, "pretrain.tasks")
        positive(self.pretrain_samples, "pretrain.samples_per_task")
        for key, value in (("pretrain.perturb_std_weak", self.perturb_std_weak),
                           ("pretrain.perturb_std_strong", self.perturb_std_strong)):
            if not np.isfinite(value) or value < 0:
                raise ConfigError(f"{key} must be finite and nonnegative")
        positive(self.finetune_tasks, "finetune.tasks")
        positive(self.finetune_samples, "finetune.samples")
        if self.finetune_method not in FINETUNE_METHODS:
            raise ConfigError(f"finetune.method must be one of {FINETUNE_METHODS}")
        if self.head_kind not in HEAD_KINDS:
            raise ConfigError(f"finetune.head_kind must be one of {HEAD_KINDS}")
        if self.finetune_method == "closed_form" and self.head_kind != "linear":
            raise ConfigError("finetune.method closed_form requires finetune.head_kind linear")
        positive(self.eval_samples, "eval.samples")
        positive(self.epsilon_fit_samples, "eval.fit_samples")
        if self.rep_mode == "perturb":
            gt = (self.ground_truth_depth, self.ground_truth_hidden)
            if (self.weak_depth, self.weak_hidden) != gt or (self.strong_depth, self.strong_hidden) != gt:
                raise ConfigError("pretrain.mode perturb requires weak/strong archs equal to the ground truth arch")
        for key, value in (("checks.bound_tol_sigma", self.bound_tol_sigma),
                           ("checks.skeleton_k1", self.skeleton_k1),
                           ("checks.skeleton_kn", self.skeleton_kn)):
            if not np.isfinite(value) or value < 0:
                raise ConfigError(f"{key} must be finite and nonnegative")
        try:
            self.optimizer.validate()
        except ValueError as e:
            raise ConfigError(str(e)) from None

    # Effective architectures after an optional role reversal. Reversal swaps
    # which architecture plays the weak/strong role; nothing else moves.
    def weak_arch_dims(self) -> list[int]:
        depth, hidden = ((self.strong_depth, self.strong_hidden) if self.reverse_roles
                         else (self.weak_depth, self.weak_hidden))
        return [self.input_dim] + [hidden] * (depth - 1) + [self.rep_dim]

    def strong_arch_dims(self) -> list[int]:
        depth, hidden = ((self.weak_depth, self.weak_hidden) if self.reverse_roles
                         else (self.strong_depth, self.strong_hidden))
        return [self.input_dim] + [hidden] * (depth - 1) + [self.rep_dim]

    def ground_truth_dims(self) -> list[int]:
        return ([self.input_dim] + [self.ground_truth_hidden] * (self.ground_truth_depth - 1)
                + [self.rep_dim])

    def resolved_weak_model_id(self) -> str:
        if self.weak_model_id:
            return self.weak_model_id
        if self.rep_mode == "perturb":
            return f"perturb-std{self.perturb_std_weak:g}"
        dims = self.weak_arch_dims()
        return f"pretrain-d{len(dims) - 1}h{max(dims[1:-1], default=self.rep_dim)}"

    def distribution(self) -> DataDistribution:
        return DataDistribution(self.input_dim, self.sigma)

    def gt_fingerprint(self) -> str:
        """Hash of everything that determines the ground truth and task set."""
        ident = {
            "master_seed": int(self.master_seed),
            "input_dim": self.input_dim,
            "rep_dim": self.rep_dim,
            "ground_truth_depth": self.ground_truth_depth,
            "ground_truth_hidden": self.ground_truth_hidden,
            "sigma": float(self.sigma),
            "head_kind": self.head_kind,
        }
        return hashlib.sha256(json.dumps(ident, sort_keys=True).encode()).hexdigest()


@dataclass
class ExperimentResult:
    """A finished run: records plus everything needed to audit it."""

    config: ExperimentConfig
    records: list[EvalRecord]
    provenance: dict
    wall_seconds: float
    created_unix: float
    gt_fingerprint: str
    weak_heads: list[Head]
    w2s_heads: list[Head]
    h_star: Mlp
    h_w: Mlp
    h_s: Mlp


def build_ground_truth(config: ExperimentConfig, rng: Rng | None = None):
    """Ground-truth representation and the task sampler over it.

    The sampler maps a task index to that task's head deterministically, so
    tasks can be regenerated later from the config alone.
    """
    master = rng or Rng(config.master_seed)
    h_star = init_mlp(config.ground_truth_dims(), master.child(_ST_GROUND_TRUTH))

    def task_sampler(i: int) -> Head:
        return sample_linear_task(config.rep_dim, master.child(_ST_TASKS, i, _TS_TASK_HEAD),
                                  kind=config.head_kind)

    return h_star, task_sampler


def _pretrain_representation(dims, task_heads, x_pool, task_idx, y_pool, kind,
                             opt: OptimizerConfig, stream: Rng, joint: bool):
    """Multitask pretraining: minimize pooled squared error of head_t(net(x))
    with the task heads held fixed (or co-trained when joint is set)."""
    net = init_mlp(dims, stream.child(0))
    shuffle = stream.child(1)
    w_tasks = np.stack([h.weights for h in task_heads])
    n = y_pool.size
    state = AdamState.zeros(net.n_params, opt)
    if joint:
        w_flat = w_tasks.reshape(-1)
        w_state = AdamState.zeros(w_flat.size, opt)
        w_grad = np.zeros_like(w_tasks)

    def pooled_mse():
        out = net.forward(x_pool)
        value, _ = value_and_slope(kind, (out * w_tasks[task_idx]).sum(axis=1))
        gap = value - y_pool
        return float((gap * gap).mean())

    initial_mse = pooled_mse()
    for _ in range(opt.epochs):
        perm = shuffle.permutation(n)
        for start in range(0, n, opt.batch_size):
            idx = perm[start:start + opt.batch_size]
            xb, tb, yb = x_pool[idx], task_idx[idx], y_pool[idx]
            wb = w_tasks[tb]
            out, inputs, masks = net.forward_with_cache(xb)
            value, slope = value_and_slope(kind, (out * wb).sum(axis=1))
            r = (2.0 / idx.size) * (value - yb)
            if slope is not None:
                r *= slope
            grad = net.backprop(inputs, masks, r[:, None] * wb)
            adam_step(net.theta, grad, state)
            if joint:
                w_grad[:] = 0.0
                np.add.at(w_grad, tb, r[:, None] * out)
                adam_step(w_flat, w_grad.reshape(-1), w_state)
    return net, {"initial_mse": initial_mse, "final_mse": pooled_mse()}


def acquire_representations(config: ExperimentConfig, h_star: Mlp, rng: Rng | None = None):
    """Produce the weak and strong representations for a run.

    Returns (h_w, h_s, provenance). Mode "pretrain" trains both on a shared
    pool of multitask data labeled through h_star; "perturb" adds parameter
    noise to h_star; "realizable_strong" hands the strong side h_star itself
    (bit-identical) while the weak side is pretrained as usual.
    """
    master = rng or Rng(config.master_seed)
    provenance: dict = {"mode": config.rep_mode}

    if config.rep_mode == "perturb":
        h_w = perturb_mlp(h_star, config.perturb_std_weak, master.child(_ST_PRETRAIN_WEAK, 0))
        h_s = perturb_mlp(h_star, config.perturb_std_strong, master.child(_ST_PRETRAIN_STRONG, 0))
        provenance["weak"] = {"noise_std": config.perturb_std_weak}
        provenance["strong"] = {"noise_std": config.perturb_std_strong}
        return h_w, h_s, provenance

    dist = config.distribution()
    # Pretraining probes are always plain linear functionals: representations
    # are acquired once and shared across head classes, and the activated
    # (non-convex) classes only enter at the finetuning stage.
    heads, xs, ys, idx = [], [], [], []
    for t in range(config.pretrain_tasks):
        head = sample_linear_task(config.rep_dim, master.child(_ST_PRETRAIN_DATA, t, 0))
        x_t = dist.sample(config.pretrain_samples, master.child(_ST_PRETRAIN_DATA, t, 1))
        heads.append(head)
        xs.append(x_t)
        ys.append(head(h_star.forward(x_t)))
        idx.append(np.full(config.pretrain_samples, t))
    x_pool = np.concatenate(xs)
    y_pool = np.concatenate(ys)
    task_idx = np.concatenate(idx)
    # Tasks and sample pool are shared: weak and strong training differ only
    # in architecture and in their own init/shuffle streams.
    pretrain = lambda dims, stream: _pretrain_representation(
        dims, heads, x_pool, task_idx, y_pool, "linear",
        config.optimizer, stream, config.joint_pretrain_heads)

    h_w, weak_info = pretrain(config.weak_arch_dims(), master.child(_ST_PRETRAIN_WEAK))
    if config.rep_mode == "realizable_strong":
        h_s, strong_info = h_star, {"source": "ground_truth"}
    else:
        h_s, strong_info = pretrain(config.strong_arch_dims(), master.child(_ST_PRETRAIN_STRONG))
    provenance["weak"] = weak_info
    provenance["strong"] = strong_info
    provenance["high_variance_pretrain"] = config.pretrain_samples < 30
    return h_w, h_s, provenance


def _run_task(config: ExperimentConfig, dist: DataDistribution, h_star: Mlp,
              task_sampler, h_w: Mlp, h_s: Mlp, i: int):
    master = Rng(config.master_seed)
    stage = lambda s: master.child(_ST_TASKS, i, s)

    task_head = task_sampler(i)
    true_fn = predictor(task_head, h_star)

    # Weak finetuning on truly-labeled data: the only stage that sees y.
    x_fit = dist.sample(config.finetune_samples, stage(_TS_FINETUNE_X))
    y_fit = true_fn(x_fit)
    f_w = train_head(h_w, x_fit, y_fit, kind=config.head_kind,
                     method=config.finetune_method, opt=config.optimizer,
                     rng=stage(_TS_WEAK_TRAIN), bias=config.head_bias,
                     on_singular="damp")
    weak_fn = predictor(f_w, h_w)

    # Weak-to-strong finetuning: fresh inputs (by default), weak labels only.
    x_transfer = (dist.sample(config.finetune_samples, stage(_TS_RELABEL_X))
                  if config.fresh_weak_inputs else x_fit)
    f_sw = train_head(h_s, x_transfer, weak_fn(x_transfer), kind=config.head_kind,
                      method=config.finetune_method, opt=config.optimizer,
                      rng=stage(_TS_W2S_TRAIN), bias=config.head_bias,
                      on_singular="damp")
    w2s_fn = predictor(f_sw, h_s)

    eps = None
    if config.epsilon_enabled and config.head_kind == "linear":
        eps = estimate_epsilon(h_s, true_fn, dist, config.epsilon_fit_samples,
                               config.eval_samples, stage(_TS_EPSILON),
                               bias=config.head_bias)
    record = evaluate_triplet(true_fn, weak_fn, w2s_fn, dist, config.eval_samples,
                              stage(_TS_EVAL), shared_sample=config.eval_shared_sample,
                              task_id=i, weak_model_id=config.resolved_weak_model_id(),
                              seed=config.master_seed, epsilon_hat=eps)
    return record, f_w, f_sw


def run_w2s_experiment(config: ExperimentConfig, *, jobs: int = 1) -> ExperimentResult:
    """Run the full protocol and return records in task order.

    Identical configs give bit-identical records regardless of ``jobs``: every
    task derives its streams from (master_seed, task_id, stage) alone.
    """
    config.validate()
    if jobs < 1:
        raise ConfigError("jobs must be >= 1")
    started = time.time()
    h_star, task_sampler = build_ground_truth(config)
    h_w, h_s, provenance = acquire_representations(config, h_star)
    dist = config.distribution()

    def worker(i: int):
        try:
            return _run_task(config, dist, h_star, task_sampler, h_w, h_s, i)
        except Exception as e:  # attach the task index for the caller
            raise TaskError(i, str(e)) from e

    if jobs == 1:
        outcomes = [worker(i) for i in range(config.finetune_tasks)]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            outcomes = list(ex.map(worker, range(config.finetune_tasks)))

    records = [rec for rec, _, _ in outcomes]
    return ExperimentResult(
        config=config,
        records=records,
        provenance=provenance,
        wall_seconds=time.time() - started,
        created_unix=started,
        gt_fingerprint=config.gt_fingerprint(),
        weak_heads=[fw for _, fw, _ in outcomes],
        w2s_heads=[fsw for _, _, fsw in outcomes],
        h_star=h_star,
        h_w=h_w,
        h_s=h_s,
    )


def run_low_sample_variant(config: ExperimentConfig, *, jobs: int = 1) -> ExperimentResult:
    """Same protocol with the scarce pretraining budget (5 tasks, 250 samples each)."""
    scarce = replace(config, pretrain_tasks=5, pretrain_samples=250)
    return run_w2s_experiment(scarce, jobs=jobs)


def task_check_stream(config: ExperimentConfig, task_id: int) -> Rng:
    """Dedicated fresh stream for post-hoc structural checks of one task."""
    return Rng(config.master_seed).child(_ST_TASKS, task_id, _TS_CHECK_SAMPLE)


def config_to_doc(config: ExperimentConfig) -> dict:
    """Nested plain-data snapshot mirroring the TOML layout."""
    opt = config.optimizer
    return {
        "experiment_id": config.experiment_id,
        "master_seed": int(config.master_seed),
        "data": {"dim": config.input_dim, "sigma": config.sigma},
        "archs": {
            "rep_dim": config.rep_dim,
            "ground_truth_depth": config.ground_truth_depth,
            "ground_truth_hidden": config.ground_truth_hidden,
            "weak_depth": config.weak_depth,
            "weak_hidden": config.weak_hidden,
            "strong_depth": config.strong_depth,
            "strong_hidden": config.strong_hidden,
            "reverse_roles": config.reverse_roles,
        },
        "pretrain": {
            "mode": config.rep_mode,
            "tasks": config.pretrain_tasks,
            "samples_per_task": config.pretrain_samples,
            "joint_heads": config.joint_pretrain_heads,
            "perturb_std_weak": config.perturb_std_weak,
            "perturb_std_strong": config.perturb_std_strong,
        },
        "finetune": {
            "tasks": config.finetune_tasks,
            "samples": config.finetune_samples,
            "method": config.finetune_method,
            "head_kind": config.head_kind,
            "head_bias": config.head_bias,
            "fresh_weak_inputs": config.fresh_weak_inputs,
            "weak_model_id": config.weak_model_id or "",
        },
        "optimizer": {
            "lr": opt.lr, "batch_size": opt.batch_size, "epochs": opt.epochs,
            "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps,
        },
        "eval": {
            "samples": config.eval_samples,
            "shared_sample": config.eval_shared_sample,
            "estimate_epsilon": config.epsilon_enabled,
            "fit_samples": config.epsilon_fit_samples,
        },
        "checks": {
            "bound_tol_sigma": config.bound_tol_sigma,
            "skeleton_k1": config.skeleton_k1,
            "skeleton_kn": config.skeleton_kn,
        },
    }
