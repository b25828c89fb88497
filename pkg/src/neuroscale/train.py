"""Optimization loops: masked-reconstruction pretraining and supervised
fine-tuning with AdamW, cosine-annealed learning rates, global gradient
clipping, and the evaluation-metric suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import model as mdl
from .autodiff import Parameter, Tensor
from .dsp import PatchedSignal
from .metrics import EvalReport, evaluate_metrics  # re-exported evaluation entry point

__all__ = [
    "OptimState", "Schedule", "PretrainConfig", "FinetuneConfig",
    "adamw_step", "clip_gradients", "cosine_lr", "pretrain", "finetune",
    "evaluate_metrics", "evaluate_model", "cross_entropy",
    "NonFiniteGradient", "DivergenceDetected", "LabelMismatch",
]


class NonFiniteGradient(FloatingPointError):
    pass


class DivergenceDetected(FloatingPointError):
    pass


class LabelMismatch(ValueError):
    pass


@dataclass
class OptimState:
    """Per-parameter AdamW moment estimates plus the shared step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 5e-2
    clip_norm: float = 1.0

    @classmethod
    def for_params(cls, params: list[Parameter], weight_decay: float = 5e-2,
                   clip_norm: float = 1.0) -> "OptimState":
        return cls(
            m={p.name: np.zeros_like(p.data) for p in params},
            v={p.name: np.zeros_like(p.data) for p in params},
            weight_decay=weight_decay,
            clip_norm=clip_norm,
        )


@dataclass(frozen=True)
class Schedule:
    max_lr: float = 5e-4
    min_lr: float = 1e-5
    cycle_steps: int = 40

    def __post_init__(self):
        if self.min_lr > self.max_lr:
            raise ValueError("min_lr must not exceed max_lr")
        if self.cycle_steps < 1:
            raise ValueError("cycle_steps must be >= 1")


def cosine_lr(step: int, sch: Schedule) -> float:
    """Cosine anneal from max_lr (step 0) down to min_lr (step = cycle_steps)."""
    if not (0 <= step <= sch.cycle_steps):
        raise ValueError(f"step {step} outside cycle [0, {sch.cycle_steps}]")
    return sch.min_lr + 0.5 * (sch.max_lr - sch.min_lr) * (
        1.0 + math.cos(math.pi * step / sch.cycle_steps)
    )


def clip_gradients(params: list[Parameter], max_norm: float) -> float:
    """Scale every gradient so the global norm is at most max_norm; returns the pre-clip norm."""
    norm = ad.global_grad_norm(params)
    if not np.isfinite(norm):
        raise NonFiniteGradient(f"global gradient norm is {norm}")
    if norm > max_norm and norm > 0:
        factor = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * factor
    return norm


def adamw_step(params: list[Parameter], st: OptimState, lr: float) -> None:
    """Decoupled-weight-decay Adam update with bias-corrected moments."""
    b1, b2 = st.betas
    st.step += 1
    c1 = 1.0 - b1 ** st.step
    c2 = 1.0 - b2 ** st.step
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {p.name}")
        m = st.m[p.name] = b1 * st.m[p.name] + (1.0 - b1) * g
        v = st.v[p.name] = b2 * st.v[p.name] + (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + st.eps)
        p.data = p.data - lr * (update + st.weight_decay * p.data)


# -- losses -----------------------------------------------------------------

def cross_entropy(logits: Tensor, label: int, num_classes: int, smoothing: float = 0.0) -> Tensor:
    """Smoothed cross-entropy on a logit vector.

    For two classes (smoothing 0) this equals binary cross-entropy on the
    logit difference, since softmax([z0, z1])[1] == sigmoid(z1 - z0).
    """
    if not (0 <= label < num_classes):
        raise LabelMismatch(f"label {label} outside [0, {num_classes})")
    shift = Tensor(logits.data.max())  # constant shift; exact for logsumexp
    z = logits - shift
    lse = ad.log(ad.tsum(ad.exp(z)))
    target = np.full(num_classes, smoothing / num_classes)
    target[label] += 1.0 - smoothing
    return lse - ad.tsum(ad.mul(z, Tensor(target)))


def squared_error(pred: Tensor, value: float) -> Tensor:
    diff = pred - Tensor(np.full(pred.shape, value))
    return ad.mean(ad.mul(diff, diff))


# -- pretraining --------------------------------------------------------------

@dataclass
class PretrainConfig:
    steps: int = 200
    batch_size: int = 16
    max_lr: float = 5e-4
    min_lr: float = 1e-5
    weight_decay: float = 5e-2
    clip_norm: float = 1.0
    cycle_epochs: int = 40
    seed: int = 0
    dropout: bool = True


@dataclass
class PretrainResult:
    model: mdl.Model
    loss_trace: list[float] = field(default_factory=list)
    lr_trace: list[float] = field(default_factory=list)


def pretrain(model: mdl.Model, dataset: list[PatchedSignal], cfg: PretrainConfig) -> PretrainResult:
    """Step loop: sample masks, reconstruct, clip, AdamW update, epoch-level cosine LR."""
    if not dataset:
        raise ValueError("pretraining dataset is empty")
    params = model.parameters()
    st = OptimState.for_params(params, weight_decay=cfg.weight_decay, clip_norm=cfg.clip_norm)
    order_rng = np.random.default_rng(cfg.seed)
    drop_rng = np.random.default_rng(cfg.seed + 1)
    steps_per_epoch = max(1, math.ceil(len(dataset) / cfg.batch_size))
    total_epochs = max(1, math.ceil(cfg.steps / steps_per_epoch))
    sch = Schedule(max_lr=cfg.max_lr, min_lr=cfg.min_lr,
                   cycle_steps=max(cfg.cycle_epochs, total_epochs))
    trace: list[float] = []
    lrs: list[float] = []
    ratio = model.config.mask_ratio
    order = order_rng.permutation(len(dataset))
    cursor = 0
    for step in range(cfg.steps):
        epoch = step // steps_per_epoch
        lr = cosine_lr(min(epoch, sch.cycle_steps), sch)
        batch_idx = []
        for _ in range(cfg.batch_size):
            if cursor >= len(order):
                order = order_rng.permutation(len(dataset))
                cursor = 0
            batch_idx.append(int(order[cursor]))
            cursor += 1
        ad.zero_grads(params)
        total: Tensor | None = None
        for idx in batch_idx:
            sample = dataset[idx]
            # Mask depends on (run seed, sample) only, so a frozen model sees a
            # frozen objective: with lr=0 the loss trace is exactly constant.
            mask_seed = cfg.seed * 1_000_003 + idx * 8_191
            mask = mdl.sample_mask(sample.num_segments, ratio, mask_seed)
            pred = mdl.forward_pretrain(model, sample, mask,
                                        rng=drop_rng, train=cfg.dropout)
            loss = mdl.reconstruction_loss(pred, sample, mask).value
            total = loss if total is None else total + loss
        total = total * (1.0 / len(batch_idx))
        value = total.item()
        if not np.isfinite(value):
            raise DivergenceDetected(f"loss became non-finite at step {step}")
        trace.append(value)
        lrs.append(lr)
        total.backward()
        clip_gradients(params, st.clip_norm)
        adamw_step(params, st, lr)
    return PretrainResult(model=model, loss_trace=trace, lr_trace=lrs)


# -- fine-tuning ---------------------------------------------------------------

@dataclass
class FinetuneConfig:
    epochs: int = 50
    batch_size: int = 64
    max_lr: float = 1e-4
    min_lr: float = 1e-6
    weight_decay: float = 1e-2
    clip_norm: float = 1.0
    label_smoothing: float = 0.1   # applied to multi-class only
    head_hidden: int | None = None  # defaults to the embedding dim
    seed: int = 0
    dropout: bool = True


@dataclass
class FinetuneResult:
    model: mdl.Model
    report: EvalReport
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1


def _predict(model: mdl.Model, head: mdl.TaskHead, dataset, want_scores: bool):
    preds, labels, scores = [], [], []
    with ad.no_grad():
        for sample, label in dataset:
            out = mdl.forward_task(model, sample, head)
            if head.kind == "classification":
                probs = np.exp(out.data - out.data.max())
                probs = probs / probs.sum()
                preds.append(int(np.argmax(out.data)))
                if want_scores:
                    scores.append(float(probs[1]))
            else:
                preds.append(float(out.data[0]))
            labels.append(label)
    return np.asarray(preds), np.asarray(labels), (np.asarray(scores) if scores else None)


def evaluate_model(model: mdl.Model, head: mdl.TaskHead, dataset) -> EvalReport:
    """Metric suite over a labeled dataset of (PatchedSignal, label) pairs."""
    if head.kind == "classification":
        task = "binary" if head.num_classes == 2 else "multiclass"
        preds, labels, scores = _predict(model, head, dataset, want_scores=task == "binary")
        return evaluate_metrics(preds, labels, task, scores=scores)
    preds, labels, _ = _predict(model, head, dataset, want_scores=False)
    return evaluate_metrics(preds, labels, "regression")


def _selection_value(report: EvalReport, kind: str) -> float:
    # Maximize balanced accuracy for classification, minimize RMSE for regression.
    if kind == "classification":
        return report["balanced_accuracy"]
    return -report["rmse"]


def finetune(
    model: mdl.Model,
    train_set: list,
    val_set: list,
    test_set: list,
    head_kind: str,
    cfg: FinetuneConfig,
    num_classes: int = 0,
    epoch_callback=None,
) -> FinetuneResult:
    """Full-model fine-tuning with per-epoch validation selection.

    The returned model carries the best-validation parameters; the report is
    computed on the test split with those parameters.
    """
    if not train_set or not val_set or not test_set:
        raise ValueError("train, validation, and test splits must be non-empty")
    first = train_set[0][0]
    C, n = first.num_channels, first.num_segments
    flat_dim = C * n * model.config.embed_dim
    hidden = cfg.head_hidden or model.config.embed_dim
    head_rng = np.random.default_rng(cfg.seed + 17)
    head = mdl.make_task_head(head_rng, head_kind, flat_dim, hidden, num_classes)
    model.task_head = head

    for sample, label in train_set:
        if head_kind == "classification" and not (0 <= int(label) < num_classes):
            raise LabelMismatch(f"label {label!r} invalid for {num_classes}-class head")
        if head_kind == "regression" and not np.isscalar(label):
            raise LabelMismatch(f"regression expects scalar targets, got {label!r}")

    params = model.parameters()
    st = OptimState.for_params(params, weight_decay=cfg.weight_decay, clip_norm=cfg.clip_norm)
    sch = Schedule(max_lr=cfg.max_lr, min_lr=cfg.min_lr, cycle_steps=cfg.epochs)
    order_rng = np.random.default_rng(cfg.seed)
    drop_rng = np.random.default_rng(cfg.seed + 1)
    smoothing = cfg.label_smoothing if (head_kind == "classification" and num_classes > 2) else 0.0

    best_value = -np.inf
    best_state: dict[str, np.ndarray] | None = None
    best_epoch = -1
    history: list[dict] = []
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, sch)
        order = order_rng.permutation(len(train_set))
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            ad.zero_grads(params)
            total: Tensor | None = None
            for idx in batch:
                sample, label = train_set[int(idx)]
                out = mdl.forward_task(model, sample, head, rng=drop_rng, train=cfg.dropout)
                if head_kind == "classification":
                    loss = cross_entropy(out, int(label), num_classes, smoothing)
                else:
                    loss = squared_error(out, float(label))
                total = loss if total is None else total + loss
            total = total * (1.0 / len(batch))
            value = total.item()
            if not np.isfinite(value):
                raise DivergenceDetected(f"loss became non-finite at epoch {epoch}")
            epoch_loss += value * len(batch)
            total.backward()
            clip_gradients(params, st.clip_norm)
            adamw_step(params, st, lr)
        val_report = evaluate_model(model, head, val_set)
        sel = _selection_value(val_report, head_kind)
        record = {"epoch": epoch, "train_loss": epoch_loss / len(train_set),
                  "lr": lr, **{f"val_{k}": v for k, v in val_report.metrics.items()}}
        stop = False
        if epoch_callback is not None:
            extra = epoch_callback(model, head, epoch)
            if extra:
                stop = bool(extra.pop("stop", False))
                record.update(extra)
        history.append(record)
        if sel > best_value:
            best_value = sel
            best_epoch = epoch
            best_state = {p.name: p.data.copy() for p in params}
        if stop:
            break
    if best_state is not None:
        for p in params:
            p.data = best_state[p.name].copy()
    test_report = evaluate_model(model, head, test_set)
    return FinetuneResult(model=model, report=test_report, history=history, best_epoch=best_epoch)
