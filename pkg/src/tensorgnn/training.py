"""Adam, plateau learning-rate schedule, losses, metrics and the training loop."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .graph import build_adjacency
from .model import GraphBatch, ModelParams, forward_batch, make_batch
from .rng import stream

log = logging.getLogger(__name__)

REPORT_COLUMNS = (
    "dataset",
    "encoder",
    "layer",
    "regime",
    "K",
    "L",
    "d_hidden",
    "params",
    "seed",
    "train_metric",
    "test_metric",
    "epochs",
    "wall_time_s",
)


class TrainingError(RuntimeError):
    pass


# -- optimiser ----------------------------------------------------------------------


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(
    state: AdamState,
    params: dict,
    grads: dict,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter block {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name in params:
        g = np.asarray(grads[name], dtype=np.float64)
        p = params[name]
        if g.shape != p.shape:
            raise ad.ShapeError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        params[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)


# -- scheduler ----------------------------------------------------------------------


@dataclass
class PlateauScheduler:
    """Halve the learning rate after ``patience`` epochs without strict
    improvement; signal a stop once it falls below ``floor``."""

    lr: float = 1e-3
    patience: int = 25
    factor: float = 0.5
    floor: float = 1e-5
    mode: str = "min"
    best: float = math.nan
    epochs_since_improve: int = 0
    halvings: int = 0

    def improved(self, metric: float) -> bool:
        if math.isnan(self.best):
            return True
        return metric < self.best if self.mode == "min" else metric > self.best

    def step(self, metric: float) -> tuple[float, bool]:
        if not math.isfinite(metric):
            raise TrainingError(f"monitored metric is not finite: {metric}")
        if self.improved(metric):
            self.best = metric
            self.epochs_since_improve = 0
        else:
            self.epochs_since_improve += 1
            if self.epochs_since_improve >= self.patience:
                self.lr *= self.factor
                self.halvings += 1
                self.epochs_since_improve = 0
        return self.lr, self.lr < self.floor


def plateau_scheduler(state: PlateauScheduler, eval_metric: float) -> tuple[float, bool]:
    return state.step(eval_metric)


# -- losses and metrics ---------------------------------------------------------------


def loss(task: str, prediction: Tensor, target) -> Tensor:
    """Mean absolute error (regression) or mean per-label BCE on logits (multilabel)."""
    y = np.asarray(target, dtype=np.float64)
    if prediction.shape != y.shape:
        raise ad.ShapeError(f"loss: prediction shape {prediction.shape} != target shape {y.shape}")
    if task == "regression":
        return ad.mean_all(ad.abs_(prediction - Tensor(y)))
    if task == "multilabel":
        return ad.mean_all(ad.bce_logits(prediction, y))
    raise ValueError(f"unknown task {task!r}")


def metric_mae(pred: np.ndarray, target: np.ndarray) -> float:
    return float(np.mean(np.abs(np.asarray(pred) - np.asarray(target))))


def average_precision(scores: Sequence[float], labels: Sequence[int]) -> float:
    """AP of one label: mean precision at the rank of each positive.

    Items are ranked by descending score; equal scores keep index order.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    npos = int(labels.sum())
    if npos == 0:
        raise ValueError("average precision is undefined without positives")
    order = np.argsort(-scores, kind="stable")
    hits = labels[order]
    tp = np.cumsum(hits)
    ranks = np.arange(1, len(hits) + 1)
    return math.fsum((tp[hits] / ranks[hits]).tolist()) / npos


@dataclass
class APResult:
    value: float
    skipped_labels: list[int]


def metric_ap(scores, labels) -> APResult:
    """Mean AP over labels (columns); labels with no positive are skipped."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim == 1:
        scores, labels = scores[:, None], labels[:, None]
    if scores.shape != labels.shape:
        raise ad.ShapeError(f"scores shape {scores.shape} != labels shape {labels.shape}")
    per, skipped = [], []
    for j in range(scores.shape[1]):
        if not labels[:, j].any():
            skipped.append(j)
            continue
        per.append(average_precision(scores[:, j], labels[:, j]))
    if not per:
        raise ValueError("no label has a positive example")
    return APResult(math.fsum(per) / len(per), skipped)


def task_metric(task: str, pred: np.ndarray, target: np.ndarray) -> float:
    if task == "regression":
        return metric_mae(pred, target)
    return metric_ap(pred, target).value


def metric_mode(task: str) -> str:
    return "min" if task == "regression" else "max"


def gain(task: str, concat_metric: float, tensor_metric: float) -> float:
    """> 1 means the tensor encoder did better."""
    if task == "regression":
        return concat_metric / tensor_metric
    return tensor_metric / concat_metric


# -- training loop --------------------------------------------------------------------


@dataclass
class TrainConfig:
    lr: float = 1e-3
    patience: int = 25
    factor: float = 0.5
    lr_floor: float = 1e-5
    max_epochs: int = 1000
    batch_size: int = 0  # 0 = full batch
    monitor: str = "val"  # or "train"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0


@dataclass
class TrainState:
    lr: float
    epoch: int = 0
    adam: AdamState = field(default_factory=AdamState)
    scheduler: PlateauScheduler | None = None
    history: list = field(default_factory=list)  # (epoch, train_loss, train_metric, monitor_metric, lr)
    stopped_by: str = ""

    @property
    def best_metric(self) -> float:
        return self.scheduler.best if self.scheduler else math.nan

    @property
    def epochs_since_improve(self) -> int:
        return self.scheduler.epochs_since_improve if self.scheduler else 0


@dataclass
class Split:
    graphs: list
    encodings: list
    adjs: list = field(default_factory=list)

    def __post_init__(self) -> None:
        if len(self.graphs) != len(self.encodings):
            raise ValueError(f"{len(self.graphs)} graphs but {len(self.encodings)} encodings")
        if not self.adjs:
            self.adjs = [build_adjacency(g) for g in self.graphs]

    def batch(self, idx: Sequence[int] | None = None) -> GraphBatch:
        if idx is None:
            return make_batch(self.graphs, self.encodings, self.adjs)
        return make_batch(
            [self.graphs[i] for i in idx], [self.encodings[i] for i in idx], [self.adjs[i] for i in idx]
        )

    def __len__(self) -> int:
        return len(self.graphs)


def evaluate(params: ModelParams, batch: GraphBatch) -> float:
    pred = forward_batch(params, batch).numpy()
    return task_metric(params.cfg.task, pred, batch.targets)


def _minibatches(n: int, size: int, rng: np.random.Generator) -> list[np.ndarray]:
    if size <= 0 or size >= n:
        return [np.arange(n)]
    order = rng.permutation(n)
    return [np.sort(order[i : i + size]) for i in range(0, n, size)]


def train(
    params: ModelParams,
    train_split: Split,
    val_split: Split | None = None,
    tcfg: TrainConfig | None = None,
) -> TrainState:
    """Train ``params`` in place until the learning rate drops below the floor
    or ``max_epochs`` is reached.

    The monitored metric is the validation metric (or the train metric when
    ``tcfg.monitor == 'train'`` or no validation split is given). Each
    history entry records the train metric measured after the epoch's
    updates.
    """
    tcfg = tcfg or TrainConfig()
    task = params.cfg.task
    sched = PlateauScheduler(tcfg.lr, tcfg.patience, tcfg.factor, tcfg.lr_floor, metric_mode(task))
    state = TrainState(lr=tcfg.lr, scheduler=sched)
    full_train = train_split.batch()
    n = len(train_split)
    if n == 0:
        raise TrainingError("training split is empty")
    single = tcfg.batch_size <= 0 or tcfg.batch_size >= n
    val_batch = val_split.batch() if (val_split is not None and len(val_split)) else None
    use_val = tcfg.monitor == "val" and val_batch is not None
    if tcfg.monitor not in ("val", "train"):
        raise ValueError(f"monitor must be 'val' or 'train', got {tcfg.monitor!r}")
    shuffle = stream(tcfg.seed, "training", "shuffle")

    while state.epoch < tcfg.max_epochs:
        state.epoch += 1
        losses = []
        for idx in _minibatches(n, tcfg.batch_size, shuffle):
            if single:
                batch = full_train
            else:
                batch = train_split.batch(idx)
            tape = Tape()
            values = params.bind(tape)
            out = loss(task, forward_batch(params, batch, values), batch.targets)
            lval = out.item()
            if not math.isfinite(lval):
                raise TrainingError(f"non-finite training loss at epoch {state.epoch}")
            grads = tape.backward(out)
            adam_step(
                state.adam,
                params.arrays,
                {k: grads[t] for k, t in values.items()},
                state.lr,
                tcfg.beta1,
                tcfg.beta2,
                tcfg.adam_eps,
            )
            losses.append(lval)
        train_metric = evaluate(params, full_train)
        monitored = evaluate(params, val_batch) if use_val else train_metric
        state.history.append((state.epoch, float(np.mean(losses)), train_metric, monitored, state.lr))
        state.lr, stop = sched.step(monitored)
        if stop:
            state.stopped_by = "lr_floor"
            break
    else:
        state.stopped_by = "max_epochs"
    log.info("stopped after %d epochs (%s), lr=%.3g", state.epoch, state.stopped_by, state.lr)
    return state


# -- reporting ----------------------------------------------------------------------


def report_row(
    dataset: str,
    params: ModelParams,
    state: TrainState,
    train_metric: float,
    test_metric: float,
    wall_time_s: float | None = None,
) -> dict:
    cfg = params.cfg
    return {
        "dataset": dataset,
        "encoder": cfg.encoder_kind,
        "layer": cfg.mp_kind,
        "regime": cfg.regime,
        "K": cfg.K if cfg.regime == "sparse" else 0,
        "L": cfg.L,
        "d_hidden": cfg.d_hidden,
        "params": params.num_params(),
        "seed": cfg.seed,
        "train_metric": repr(float(train_metric)),
        "test_metric": repr(float(test_metric)),
        "epochs": state.epoch,
        "wall_time_s": "" if wall_time_s is None else f"{wall_time_s:.3f}",
    }


def rows_to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def read_csv_rows(text: str) -> list[dict]:
    return list(csv.DictReader(io.StringIO(text)))


def aggregate_seeds(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample standard deviation (0 for a single seed)."""
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
