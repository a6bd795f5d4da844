"""Optimizer, samplers, the train step, and the experiment harness.

Everything here is deterministic given (config, data): batch order,
perturbation draws and partner choices come from keyed streams, and the
optimizer touches parameters in the stable order Network.parameters()
defines.  Two runs with the same inputs produce bitwise identical
checkpoints and metrics files.
"""

import copy
import csv
import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .compensation import CompensationConfig, forward_with_compensation
from .config import TrainConfig, write_config_echo
from .data import LabeledDataset
from .errors import ContractError, DegenerateBatch, NumericalDivergence
from .heads import (
    Network,
    build_vector_network,
    class_logits,
    head_forward,
    save_checkpoint,
    uncertainty_score,
)
from .losses import LossBreakdown, ce_loss, mixup, total_loss, triplet_loss
from .mining import TripletPlan, mine_triplets
from .rng import STREAM_BATCH, keyed_rng

METRICS_COLUMNS = ["epoch", "step", "loss_total", "loss_ce", "loss_triplet",
                   "train_acc", "test_acc", "rej10", "rej20", "rej30",
                   "mean_sigma_correct", "mean_sigma_wrong"]

REJECTION_RATES = (0.0, 0.1, 0.2, 0.3)


class Adam:
    """Adam with decoupled weight decay.

    The step is the standard bias-corrected update; decay then shrinks
    the parameters directly (params *= 1 - lr * weight_decay) instead of
    entering the gradient.  coupled=True restores the classic L2-in-the-
    gradient behavior.  Biases and other 1-d parameters are never
    decayed.
    """

    beta1 = 0.9
    beta2 = 0.999
    eps = 1e-8

    def __init__(self, named_params, coupled: bool = False,
                 lr_multipliers: dict | None = None):
        self.named_params = list(named_params)
        self.m = [np.zeros_like(p.values) for _, p in self.named_params]
        self.v = [np.zeros_like(p.values) for _, p in self.named_params]
        self.t = 0
        self.coupled = bool(coupled)
        self.lr_multipliers = dict(lr_multipliers or {})

    def step(self, lr: float, weight_decay: float = 0.0) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for (name, p), m, v in zip(self.named_params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.values)
            decay = weight_decay if p.values.ndim > 1 else 0.0
            if self.coupled and decay:
                g = g + decay * p.values
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            mhat = m / bias1
            vhat = v / bias2
            step_lr = lr * self.lr_multipliers.get(name, 1.0)
            p.values -= step_lr * mhat / (np.sqrt(vhat) + self.eps)
            if not self.coupled and decay:
                p.values *= 1.0 - step_lr * decay


def adam_update(opt: Adam, lr: float, weight_decay: float = 0.0) -> None:
    """Functional alias for one optimizer step."""
    opt.step(lr, weight_decay)


# ---------------------------------------------------------------------------
# batch sampling


def balanced_batches(labels: np.ndarray, batch_size: int, seed: int,
                     epoch: int) -> list[np.ndarray]:
    """Class-interleaved batches: shuffle within each class, then deal the
    classes round-robin before chunking, so every batch sees every class
    at close to its global proportion."""
    rng = keyed_rng(seed, STREAM_BATCH, epoch)
    classes = np.unique(labels)
    per_class = [rng.permutation(np.flatnonzero(labels == c))
                 for c in classes]
    longest = max(len(p) for p in per_class)
    order = []
    for t in range(longest):
        for p in per_class:
            if t < len(p):
                order.append(p[t])
    order = np.array(order, dtype=np.int64)
    return [order[i:i + batch_size]
            for i in range(0, len(order), batch_size)]


def random_batches(labels: np.ndarray, batch_size: int, seed: int,
                   epoch: int, max_resample: int = 10) -> list[np.ndarray]:
    """Plain shuffled chunks; a chunk that collapses to a single class is
    redrawn from the full dataset up to max_resample times, after which
    the degraded chunk is accepted (the triplet machinery downgrades
    gracefully on single-class batches)."""
    rng = keyed_rng(seed, STREAM_BATCH, epoch)
    order = rng.permutation(len(labels)).astype(np.int64)
    batches = []
    for i in range(0, len(order), batch_size):
        chunk = order[i:i + batch_size]
        tries = 0
        while len(np.unique(labels[chunk])) < 2 and tries < max_resample:
            chunk = rng.choice(len(labels), size=len(chunk),
                               replace=False).astype(np.int64)
            tries += 1
        batches.append(chunk)
    return batches


def make_batches(labels, cfg: TrainConfig, epoch: int) -> list[np.ndarray]:
    if cfg.sampler == "balanced":
        return balanced_batches(labels, cfg.batch_size, cfg.seed, epoch)
    return random_batches(labels, cfg.batch_size, cfg.seed, epoch)


# ---------------------------------------------------------------------------
# single training step


def _compensation_config(cfg: TrainConfig) -> CompensationConfig:
    layers = cfg.resolve_compensation_layers() if cfg.compensation else ()
    return CompensationConfig(enabled_layers=layers,
                              mode=cfg.compensation_mode,
                              apply_in_eval=cfg.compensation_in_eval,
                              use_batch_stats=cfg.compensation_batch_stats)


def partners_active(cfg: TrainConfig) -> bool:
    return cfg.use_positive_branch or cfg.use_negative_branch


def effective_mined_fraction(cfg: TrainConfig, epoch: int) -> float:
    """Optionally ramp the mined fraction from 0 to its target over the
    first half of training (easy pairs first, hard later)."""
    if not cfg.mined_fraction_ramp:
        return cfg.mined_fraction
    half = max(1, cfg.epochs // 2)
    return cfg.mined_fraction * min(1.0, epoch / half)


def train_step(net: Network, x: np.ndarray, labels: np.ndarray,
               cfg: TrainConfig, opt: Adam, epoch: int,
               batch_index: int) -> LossBreakdown:
    """One forward/backward/update on a batch.  Raises
    NumericalDivergence if the loss leaves the realm of finite numbers."""
    if x.shape[0] < 2:
        raise DegenerateBatch("training batches need at least 2 samples")
    comp_cfg = _compensation_config(cfg)
    use_partners = partners_active(cfg)

    with T.Tape() as tape:
        feats = forward_with_compensation(
            T.constant(x), net, comp_cfg, "train", cfg.seed, epoch,
            batch_index)
        u = head_forward(net, feats, labels)

        plan = None
        if use_partners:
            plan = mine_triplets(
                u, effective_mined_fraction(cfg, epoch), cfg.seed, epoch,
                batch_index, mine_positives=cfg.use_positive_branch,
                mine_negatives=cfg.use_negative_branch)
            if cfg.force_invalid_triplets:
                plan = TripletPlan(
                    pos_index=np.arange(len(labels), dtype=np.int64),
                    neg_index=np.arange(len(labels), dtype=np.int64),
                    mined_mask=np.zeros(len(labels), dtype=bool),
                    valid_mask=np.zeros(len(labels), dtype=bool))

        mixed = mixup(u, plan, weighting=cfg.mixup_weighting,
                      include_pos=cfg.use_positive_branch,
                      include_neg=cfg.use_negative_branch)
        ce = ce_loss(mixed.features, net.classifier, labels, plan,
                     include_pos=cfg.use_positive_branch,
                     include_neg=cfg.use_negative_branch)

        if (cfg.use_triplet_term and plan is not None
                and cfg.use_positive_branch and cfg.use_negative_branch):
            tl = triplet_loss(u, plan, cfg.margin)
        else:
            tl = T.constant(0.0)
        breakdown = total_loss(ce, tl, cfg.triplet_weight, cfg.margin)

    if not np.isfinite(breakdown.total.values):
        raise NumericalDivergence(
            f"loss became {float(breakdown.total.values)} at epoch {epoch} "
            f"step {batch_index}")
    T.backward(breakdown.total, tape)
    opt.step(cfg.lr, cfg.weight_decay)
    return breakdown


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    """Accuracy and uncertainty summary of one model on one dataset."""

    accuracy_by_rejection: dict      # rate -> accuracy on retained samples
    per_class_accuracy: dict         # class -> accuracy at rejection 0
    mean_sigma_correct: float
    mean_sigma_wrong: float
    n_samples: int

    @property
    def accuracy(self) -> float:
        return self.accuracy_by_rejection[0.0]


def predict(net: Network, x: np.ndarray, cfg: TrainConfig):
    """Eval-mode forward: returns (predictions, uncertainty scores)."""
    comp_cfg = _compensation_config(cfg)
    feats = forward_with_compensation(T.constant(x), net, comp_cfg, "eval",
                                      cfg.seed, 0, 0)
    u = head_forward(net, feats, np.zeros(x.shape[0], dtype=np.int64))
    logits = class_logits(net, u.mean).values
    preds = np.argmax(logits, axis=1)
    scores = uncertainty_score(u, cfg.uncertainty_score)
    return preds, scores


def rejection_accuracies(correct: np.ndarray, scores: np.ndarray,
                         rates=REJECTION_RATES) -> dict:
    """Accuracy over samples retained after rejecting the top-scoring
    fraction r.  Exactly floor(r * N) samples go; ties on the score
    boundary are broken toward the lowest index."""
    n = len(correct)
    if n == 0:
        raise ContractError("cannot evaluate an empty dataset")
    order = np.argsort(-scores, kind="stable")
    out = {}
    for r in rates:
        n_reject = int(np.floor(r * n))
        kept = order[n_reject:]
        if kept.size == 0:
            raise ContractError(f"rejection rate {r} leaves no samples")
        out[float(r)] = float(np.mean(correct[kept]))
    return out


def evaluate(net: Network, ds: LabeledDataset, cfg: TrainConfig,
             rates=REJECTION_RATES) -> EvalReport:
    preds, scores = predict(net, ds.features, cfg)
    correct = preds == ds.labels

    acc_by_rej = rejection_accuracies(correct, scores, rates)

    per_class = {}
    for c in np.unique(ds.labels):
        rows = ds.labels == c
        per_class[int(c)] = float(np.mean(correct[rows]))

    sig_correct = scores[correct]
    sig_wrong = scores[~correct]
    return EvalReport(
        accuracy_by_rejection=acc_by_rej,
        per_class_accuracy=per_class,
        mean_sigma_correct=float(sig_correct.mean()) if sig_correct.size
        else float("nan"),
        mean_sigma_wrong=float(sig_wrong.mean()) if sig_wrong.size
        else float("nan"),
        n_samples=len(ds))


# ---------------------------------------------------------------------------
# full runs


@dataclass
class TrainResult:
    net: Network
    report: EvalReport
    history: list = field(default_factory=list)   # metrics rows as dicts


def _metrics_row(epoch, step, breakdown, train_acc, report) -> dict:
    loss_total, loss_ce, loss_tl = breakdown
    return {"epoch": epoch, "step": step,
            "loss_total": loss_total, "loss_ce": loss_ce,
            "loss_triplet": loss_tl, "train_acc": train_acc,
            "test_acc": report.accuracy_by_rejection[0.0],
            "rej10": report.accuracy_by_rejection[0.1],
            "rej20": report.accuracy_by_rejection[0.2],
            "rej30": report.accuracy_by_rejection[0.3],
            "mean_sigma_correct": report.mean_sigma_correct,
            "mean_sigma_wrong": report.mean_sigma_wrong}


def write_metrics_csv(rows: list, path: str) -> None:
    """Fixed column order, repr floats: bitwise reproducible output."""
    with open(path, "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for row in rows:
            writer.writerow([
                row[c] if isinstance(row[c], int) else repr(float(row[c]))
                for c in METRICS_COLUMNS])


def fit(net: Network, train_ds: LabeledDataset, test_ds: LabeledDataset,
        cfg: TrainConfig) -> TrainResult:
    """Full training loop; history holds one metrics row per epoch."""
    opt = Adam(net.parameters(), coupled=cfg.coupled_weight_decay,
               lr_multipliers={name: cfg.head_lr_multiplier
                               for name in net.head_param_names()})
    history = []
    step = 0
    test_report = None
    for epoch in range(cfg.epochs):
        last = None
        for bidx, batch in enumerate(make_batches(train_ds.labels, cfg,
                                                  epoch)):
            last = train_step(net, train_ds.features[batch],
                              train_ds.labels[batch], cfg, opt, epoch, bidx)
            step += 1
        train_report = evaluate(net, train_ds, cfg, rates=(0.0,))
        test_report = evaluate(net, test_ds, cfg)
        history.append(_metrics_row(epoch, step, last.scalars(),
                                    train_report.accuracy, test_report))
    return TrainResult(net=net, report=test_report, history=history)


@dataclass
class AblationFlags:
    """Which ingredients of the method are active.

    compensation: statistic-perturbation layers in the backbone;
    hard_positive / hard_negative: distance-mined partners (off means the
    corresponding branch is removed from the blend and the loss);
    triplet_term: the margin loss (needs both partner branches).
    """

    compensation: bool = True
    hard_positive: bool = True
    hard_negative: bool = True
    triplet_term: bool = True

    def apply(self, cfg: TrainConfig) -> TrainConfig:
        cfg.compensation = self.compensation
        cfg.use_positive_branch = self.hard_positive
        cfg.use_negative_branch = self.hard_negative
        cfg.use_triplet_term = self.triplet_term
        return cfg


ABLATION_LADDER = [
    ("baseline", AblationFlags(False, False, False, False)),
    ("compensation", AblationFlags(True, False, False, False)),
    ("compensation+pos", AblationFlags(True, True, False, False)),
    ("compensation+neg", AblationFlags(True, False, True, False)),
    ("compensation+pos+neg", AblationFlags(True, True, True, False)),
    ("full", AblationFlags(True, True, True, True)),
]


def run_experiment(cfg: TrainConfig, flags: AblationFlags | None,
                   train_ds: LabeledDataset, test_ds: LabeledDataset,
                   out_dir: str | None = None,
                   tag: str = "run") -> TrainResult:
    """Train one variant end to end; optionally write its artifacts
    (metrics CSV, config echo, checkpoint) under out_dir."""
    cfg = copy.deepcopy(cfg)
    if flags is not None:
        flags.apply(cfg)
    cfg.validate()

    grid = cfg.parse_grid()
    net = build_vector_network(train_ds.features.shape[1],
                               max(train_ds.num_classes, test_ds.num_classes),
                               cfg.embed_dim,
                               [grid] * cfg.num_blocks, cfg.seed)
    result = fit(net, train_ds, test_ds, cfg)

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_metrics_csv(result.history,
                          os.path.join(out_dir, f"{tag}_metrics.csv"))
        write_config_echo(cfg, os.path.join(out_dir, f"{tag}_config.txt"))
        save_checkpoint(net, os.path.join(out_dir, f"{tag}_checkpoint.json"),
                        rng_state={"seed": cfg.seed, "epochs": cfg.epochs})
    return result
