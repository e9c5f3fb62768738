"""Dataset splitting, class-balanced sampling, the fit loop, and evaluation
with the three inference-time ablations.

Splitting is flow-grouped: every window cut from the same parent flow lands
in the same partition, so overlapping windows can never leak between train
and test.  Training draws batches from a weighted sampler whose per-sample
probability is inversely proportional to its class size, optimizes with
Adam under a reduce-on-plateau schedule, and keeps the parameters of the
best validation-loss epoch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import snn
from .dataset import Sample
from .features import FlowHistogram, shuffle_columns_shared, shuffle_rows_independent
from .metrics import MetricsReport, confusion_from_predictions
from .optim import Adam, PlateauScheduler
from .rng import derive_rng

SPLIT_FRACTIONS = (0.65, 0.15, 0.20)
PARTITION_NAMES = ("train", "val", "test")


class EmptyClass(ValueError):
    def __init__(self, label: int):
        super().__init__(f"class {label} has no training samples")
        self.label = label


@dataclass
class DatasetSplit:
    train: list[Sample]
    val: list[Sample]
    test: list[Sample]


def split_dataset(samples: Sequence[Sample], seed: int) -> DatasetSplit:
    """65/15/20 split of flow groups by sample mass.

    Groups (one per source flow) are visited in a seed-shuffled order and
    each goes to the partition with the largest remaining deficit against
    its target count, so unit groups land exactly on the proportions.
    """
    groups: dict[str, list[Sample]] = {}
    for s in samples:
        groups.setdefault(s.source_flow, []).append(s)
    keys = list(groups)
    order = derive_rng(seed, "split").permutation(len(keys))
    total = len(samples)
    targets = [f * total for f in SPLIT_FRACTIONS]
    counts = [0, 0, 0]
    parts: tuple[list[Sample], ...] = ([], [], [])
    for gi in order:
        group = groups[keys[gi]]
        deficits = [targets[i] - counts[i] for i in range(3)]
        best = max(range(3), key=lambda i: (deficits[i], -i))
        parts[best].extend(group)
        counts[best] += len(group)
    split = DatasetSplit(*parts)
    present = {s.label for s in samples}
    trained = {s.label for s in split.train}
    for label in sorted(present - trained):
        raise EmptyClass(label)
    return split


def weighted_sampler(
    train_set: Sequence[Sample], seed: int, chunk: int = 4096
) -> Iterator[int]:
    """Infinite stream of train-set indices, each class equally likely in
    expectation (sample weight = 1 / class count)."""
    labels = np.array([s.label for s in train_set])
    counts = np.bincount(labels)
    weights = 1.0 / counts[labels]
    probs = weights / weights.sum()
    rng = derive_rng(seed, "sampler")
    while True:
        yield from rng.choice(len(train_set), size=chunk, p=probs)


def build_batch(
    samples: Sequence[Sample],
    indices: Sequence[int],
    *,
    log1p: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Densify sparse samples into the (B, T, n_inputs) drive tensor; time
    column n of each histogram feeds step n."""
    first = samples[indices[0]]
    n_rows, n_cols = first.shape
    x = np.zeros((len(indices), n_cols, n_rows))
    y = np.empty(len(indices), dtype=np.int64)
    for b, idx in enumerate(indices):
        s = samples[idx]
        x[b, s.cols, s.rows] = s.vals
        y[b] = s.label
    if log1p:
        np.log1p(x, out=x)
    return x, y


@dataclass
class TrainConfig:
    seed: int
    batch_size: int = 128
    epochs: int = 30
    lr0: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    plateau_factor: float = 0.5
    plateau_patience: int = 2
    plateau_threshold: float = 1e-4
    min_lr: float = 1e-6
    lambda_reg: float = 1e-4
    log1p_input: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        for name in ("epochs", "lr0", "plateau_factor", "plateau_patience"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float
    lr: float
    beta_hidden: float
    beta_readout: float


@dataclass
class FitResult:
    model: snn.SnnModel  # parameters of the best validation-loss epoch
    history: list[EpochLog]


EPOCH_LOG_HEADER = [
    "epoch", "train_loss", "val_loss", "val_acc", "lr", "beta_hidden", "beta_readout",
]


def _forward_chunked(
    model: snn.SnnModel,
    samples: Sequence[Sample],
    *,
    log1p: bool,
    chunk: int = 256,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Logits, per-sample spike totals, and labels across a sample list."""
    all_logits = []
    all_spikes = []
    labels = np.array([s.label for s in samples], dtype=np.int64)
    for start in range(0, len(samples), chunk):
        idx = range(start, min(start + chunk, len(samples)))
        x, _ = build_batch(samples, list(idx), log1p=log1p)
        beta_h, beta_r = model.hidden.beta, model.readout.beta
        _, spk, _, pot_r, _, logits = snn._batch_forward(model, x, beta_h, beta_r)
        all_logits.append(logits)
        all_spikes.append(spk.reshape(len(x), -1).sum(axis=1))
    return np.concatenate(all_logits), np.concatenate(all_spikes), labels


def dataset_loss(
    model: snn.SnnModel,
    samples: Sequence[Sample],
    lambda_reg: float,
    *,
    log1p: bool = False,
) -> tuple[float, float]:
    """(mean loss, accuracy) over a sample list, same objective as training."""
    logits, spikes, labels = _forward_chunked(model, samples, log1p=log1p)
    log_probs = snn._log_softmax(logits)
    ce = -log_probs[np.arange(len(samples)), labels]
    loss = float(ce.mean() + lambda_reg * spikes.mean())
    acc = float((logits.argmax(axis=1) == labels).mean())
    return loss, acc


def fit(model: snn.SnnModel, split: DatasetSplit, config: TrainConfig) -> FitResult:
    """Train in place; returns the best-validation checkpoint plus the
    per-epoch log.  Fixed seed implies an identical run, batch for batch."""
    if not split.train:
        raise ValueError("empty training set")
    params = snn.model_params(model)
    opt = Adam(params, config.adam_beta1, config.adam_beta2, config.adam_eps)
    sched = PlateauScheduler(
        lr=config.lr0,
        factor=config.plateau_factor,
        patience=config.plateau_patience,
        threshold=config.plateau_threshold,
        min_lr=config.min_lr,
    )
    sampler = weighted_sampler(split.train, config.seed)
    batches_per_epoch = math.ceil(len(split.train) / config.batch_size)
    lr = config.lr0
    best_loss = math.inf
    best_model = model.clone()
    history: list[EpochLog] = []
    for epoch in range(1, config.epochs + 1):
        epoch_losses = []
        for _ in range(batches_per_epoch):
            indices = [next(sampler) for _ in range(config.batch_size)]
            x, y = build_batch(split.train, indices, log1p=config.log1p_input)
            batch_loss, grads, _ = snn.batch_loss_and_grads(
                model, x, y, config.lambda_reg
            )
            opt.step(params, snn.grad_dict(grads), lr)
            epoch_losses.append(batch_loss)
        val_loss, val_acc = dataset_loss(
            model, split.val, config.lambda_reg, log1p=config.log1p_input
        )
        history.append(
            EpochLog(
                epoch=epoch,
                train_loss=float(np.mean(epoch_losses)),
                val_loss=val_loss,
                val_acc=val_acc,
                lr=lr,
                beta_hidden=model.hidden.beta,
                beta_readout=model.readout.beta,
            )
        )
        if val_loss < best_loss:
            best_loss = val_loss
            best_model = model.clone()
        lr = sched.step(val_loss)
    return FitResult(best_model, history)


@dataclass(frozen=True)
class RowShuffle:
    seed: int


@dataclass(frozen=True)
class ColumnShuffle:
    seed: int


@dataclass(frozen=True)
class BetaZero:
    pass


Ablation = RowShuffle | ColumnShuffle | BetaZero | None


def evaluate(
    model: snn.SnnModel,
    test_set: Sequence[Sample],
    ablation: Ablation = None,
    *,
    class_names: Sequence[str] | None = None,
    log1p: bool = False,
    chunk: int = 256,
) -> MetricsReport:
    """Populate the predicted x true confusion matrix over a sample list.

    Shuffle ablations re-render each histogram with a per-sample generator
    derived from (ablation seed, sample position); BetaZero runs the
    stateless forward pass with both leaks forced to zero.
    """
    n_classes = model.n_outputs
    if class_names is None:
        class_names = [f"class_{i}" for i in range(n_classes)]
    predictions = np.empty(len(test_set), dtype=np.int64)
    labels = np.array([s.label for s in test_set], dtype=np.int64)
    force_beta_zero = isinstance(ablation, BetaZero)
    beta_h = 0.0 if force_beta_zero else model.hidden.beta
    beta_r = 0.0 if force_beta_zero else model.readout.beta
    for start in range(0, len(test_set), chunk):
        stop = min(start + chunk, len(test_set))
        block = test_set[start:stop]
        x = np.zeros((len(block), block[0].shape[1], block[0].shape[0]))
        for b, sample in enumerate(block):
            if isinstance(ablation, (RowShuffle, ColumnShuffle)):
                hist = FlowHistogram(sample.to_dense(), sample.label)
                sample_seed = np.random.SeedSequence([ablation.seed, start + b])
                shuffle = (
                    shuffle_rows_independent
                    if isinstance(ablation, RowShuffle)
                    else shuffle_columns_shared
                )
                counts = shuffle(hist, sample_seed).counts
                x[b] = counts.T
            else:
                x[b, sample.cols, sample.rows] = sample.vals
        if log1p:
            np.log1p(x, out=x)
        _, _, _, _, _, logits = snn._batch_forward(model, x, beta_h, beta_r)
        predictions[start:stop] = logits.argmax(axis=1)
    confusion = confusion_from_predictions(predictions, labels, n_classes)
    return MetricsReport(confusion, list(class_names))
