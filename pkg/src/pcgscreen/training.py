"""Split generation, the training loop, and the three study protocols.

Splits: K independent stratified shuffle splits at 75/15/10.  Per-class
subset sizes come from largest-remainder apportionment of the ratios, so
every subset stays strictly within one item of its exact quota.

Training runs a fixed number of epochs of shuffled mini-batches with Adam
on the fused sigmoid + binary cross-entropy gradient, and tracks both the
final-epoch checkpoint and the best-validation-accuracy checkpoint.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigMismatch, DivergedLoss, TooFewSamples
from .metrics import (
    AggregateReport,
    ConfusionMatrix,
    MetricsReport,
    aggregate_folds,
    compute_metrics,
    confusion,
)
from .nn import Adam, Checkpoint, Model, ModelConfig, bce_loss, best_config, preset
from .signal_io import Label

log = logging.getLogger(__name__)

SPLIT_RATIOS = (0.75, 0.15, 0.10)
K_FOLDS = 10
OVERFIT_GAP = 0.15  # train - test accuracy beyond this flags overfitting

# Reference results this pipeline is compared against when the public
# datasets and a full compute budget are available.  Reports mark each
# metric "reproduced" when within three percentage points.
STUDY1_REFERENCE_TEST_ACC = {
    "EXP1": 0.607, "EXP2": 0.607, "EXP3": 0.7521, "EXP4": 0.953,
    "EXP5": 0.9245, "EXP6": 0.901, "EXP7": 0.75,
}
STUDY1_REFERENCE = MetricsReport(accuracy=0.954, sensitivity=0.963,
                                 specificity=0.924, precision=0.976, f1=0.9698)
STUDY2_REFERENCE = MetricsReport(accuracy=0.942, sensitivity=0.955,
                                 specificity=0.903, precision=0.968, f1=0.961)
STUDY3_REFERENCE = MetricsReport(accuracy=0.968, sensitivity=0.958,
                                 specificity=0.98, precision=0.9829, f1=0.9705)
REFERENCE_TOLERANCE = 0.03


# --------------------------------------------------------------------------
# Splits
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FoldIndices:
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray


@dataclass(frozen=True)
class SplitPlan:
    k: int
    ratios: tuple[float, float, float]
    seed: int
    folds: tuple[FoldIndices, ...]


def split_counts(n: int, ratios=SPLIT_RATIOS) -> tuple[int, int, int]:
    """Per-class (train, valid, test) sizes via largest-remainder rounding.

    Each subset gets floor(ratio * n) plus at most one leftover item, so
    every count is strictly within one of its exact quota.
    """
    quotas = [r * n for r in ratios]
    counts = [int(np.floor(q)) for q in quotas]
    leftover = n - sum(counts)
    by_remainder = sorted(range(len(ratios)),
                          key=lambda i: (counts[i] - quotas[i], i))
    for i in by_remainder[:leftover]:
        counts[i] += 1
    return tuple(counts)


def make_splits(labels, k: int = K_FOLDS, ratios=SPLIT_RATIOS,
                seed: int = 0, min_per_class: int = 10) -> SplitPlan:
    """K independent stratified shuffle splits over the label array."""
    labels = np.asarray([int(v) for v in labels])
    classes = np.unique(labels)
    for cls in classes:
        n_cls = int(np.sum(labels == cls))
        if n_cls < min_per_class:
            raise TooFewSamples(f"class {cls} has only {n_cls} items")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must sum to 1")

    children = np.random.SeedSequence(seed).spawn(k)
    folds = []
    for fold_seq in children:
        rng = np.random.default_rng(fold_seq)
        tr_parts, va_parts, te_parts = [], [], []
        for cls in classes:
            idx = np.flatnonzero(labels == cls)
            idx = rng.permutation(idx)
            n_tr, n_va, n_te = split_counts(len(idx), ratios)
            te_parts.append(idx[:n_te])
            va_parts.append(idx[n_te:n_te + n_va])
            tr_parts.append(idx[n_te + n_va:])
        folds.append(FoldIndices(train=np.sort(np.concatenate(tr_parts)),
                                 valid=np.sort(np.concatenate(va_parts)),
                                 test=np.sort(np.concatenate(te_parts))))
    return SplitPlan(k=k, ratios=tuple(ratios), seed=seed, folds=tuple(folds))


# --------------------------------------------------------------------------
# Training loop
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 110
    learning_rate: float = 0.001
    batch_size: int = 32
    threshold: float = 0.5
    seed: int = 42
    class_weight: bool = False

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must be in (0, 1)")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    valid_loss: float
    valid_acc: float


@dataclass
class TrainResult:
    final: Checkpoint
    best: Checkpoint
    best_epoch: int
    records: list[EpochRecord] = field(default_factory=list)


def _class_weights(y: np.ndarray) -> dict[int, float]:
    n = len(y)
    n_pos = int(y.sum())
    n_neg = n - n_pos
    return {0: n / (2.0 * n_neg) if n_neg else 1.0,
            1: n / (2.0 * n_pos) if n_pos else 1.0}


def _evaluate(model: Model, x, y, threshold: float) -> tuple[float, float]:
    p = model.predict_proba(x)
    loss = float(np.mean(bce_loss(p, y)))
    acc = float(np.mean((p >= threshold) == (y == 1)))
    return loss, acc


def train_model(config: ModelConfig, tc: TrainConfig,
                train_x, train_y, valid_x, valid_y, *,
                init: Checkpoint | None = None,
                frozen: tuple[str, ...] = (),
                dtype=np.float32) -> TrainResult:
    """Fixed-epoch training with per-epoch reshuffles from a seeded stream.

    ``init`` starts from checkpoint weights (its config must match) and
    ``frozen`` marks layers whose parameters must not move.  Two calls
    with identical arguments produce bitwise-identical checkpoints.
    """
    train_y = np.asarray([int(v) for v in train_y])
    valid_y = np.asarray([int(v) for v in valid_y])
    if len(train_x) == 0:
        raise TooFewSamples("empty training fold")

    init_seed, loop_seed = np.random.SeedSequence(tc.seed).generate_state(2)
    model = Model.build(config, seed=int(init_seed), dtype=dtype)
    if init is not None:
        if init.config != config:
            raise ConfigMismatch(
                f"checkpoint built for {init.config.name}, requested {config.name}")
        model.set_parameters(init.params)
    if frozen:
        model.freeze(frozen)

    opt = Adam(lr=tc.learning_rate)
    rng = np.random.default_rng(int(loop_seed))
    weights = _class_weights(train_y) if tc.class_weight else None

    records: list[EpochRecord] = []
    best_acc, best_epoch = -1.0, -1
    best = Checkpoint.from_model(model, opt.state)
    n = len(train_x)
    for epoch in range(1, tc.epochs + 1):
        perm = rng.permutation(n)
        seen, hits, loss_sum = 0, 0, 0.0
        for start in range(0, n, tc.batch_size):
            idx = perm[start:start + tc.batch_size]
            xb = train_x[idx]
            yb = train_y[idx]
            p = model.forward(xb, train=True, rng=rng)
            losses = bce_loss(p, yb)
            dz = (p.astype(np.float64) - yb)[:, None] / len(idx)
            if weights is not None:
                w = np.where(yb == 1, weights[1], weights[0])
                losses = losses * w
                dz = dz * w[:, None]
            batch_loss = float(np.mean(losses))
            if not np.isfinite(batch_loss):
                raise DivergedLoss(
                    f"{config.name}: NaN/Inf loss at epoch {epoch}, step {start}")
            model.backward_from_logit_grad(dz.astype(dtype))
            opt.step(model)
            loss_sum += batch_loss * len(idx)
            hits += int(np.sum((p >= tc.threshold) == (yb == 1)))
            seen += len(idx)
        valid_loss, valid_acc = (_evaluate(model, valid_x, valid_y, tc.threshold)
                                 if len(valid_x) else (float("nan"), float("nan")))
        records.append(EpochRecord(epoch=epoch, train_loss=loss_sum / seen,
                                   train_acc=hits / seen,
                                   valid_loss=valid_loss, valid_acc=valid_acc))
        if len(valid_x) and valid_acc > best_acc:
            best_acc, best_epoch = valid_acc, epoch
            best = Checkpoint.from_model(model, opt.state)

    final = Checkpoint.from_model(model, opt.state)
    if best_epoch < 0:  # zero epochs or no validation data
        best, best_epoch = final, tc.epochs
    return TrainResult(final=final, best=best, best_epoch=best_epoch,
                       records=records)


def evaluate_checkpoint(ck: Checkpoint, x, y,
                        threshold: float = 0.5) -> tuple[ConfusionMatrix, MetricsReport]:
    model = ck.to_model()
    p = model.predict_proba(x)
    cm = confusion(p, y, threshold)
    return cm, compute_metrics(cm)


# --------------------------------------------------------------------------
# Studies
# --------------------------------------------------------------------------

@dataclass
class FoldOutcome:
    fold: int
    cm: ConfusionMatrix
    report: MetricsReport
    final_train_acc: float
    records: list[EpochRecord]
    result: TrainResult


@dataclass
class VariantResult:
    preset: str
    folds: list[FoldOutcome]
    aggregate: AggregateReport
    overfit: bool


def _run_folds(config: ModelConfig, tc: TrainConfig, x, y, plan: SplitPlan,
               *, init: Checkpoint | None = None,
               frozen: tuple[str, ...] = ()) -> VariantResult:
    fold_seeds = np.random.SeedSequence([tc.seed, 101]).generate_state(plan.k)
    outcomes = []
    for i, fold in enumerate(plan.folds):
        fold_tc = replace(tc, seed=int(fold_seeds[i]))
        result = train_model(config, fold_tc,
                             x[fold.train], y[fold.train],
                             x[fold.valid], y[fold.valid],
                             init=init, frozen=frozen)
        cm, rep = evaluate_checkpoint(result.best, x[fold.test], y[fold.test],
                                      tc.threshold)
        final_train_acc = result.records[-1].train_acc if result.records else 0.0
        outcomes.append(FoldOutcome(fold=i, cm=cm, report=rep,
                                    final_train_acc=final_train_acc,
                                    records=result.records, result=result))
        log.info("%s fold %d: acc=%s", config.name, i, rep.accuracy)
    agg = aggregate_folds([o.report for o in outcomes])
    train_mean = float(np.mean([o.final_train_acc for o in outcomes]))
    test_mean = agg.mean.accuracy if agg.mean.accuracy is not None else 0.0
    overfit = (train_mean - test_mean) > OVERFIT_GAP
    return VariantResult(preset=config.name, folds=outcomes, aggregate=agg,
                         overfit=overfit)


def run_study1(x, y, tc: TrainConfig, *, k: int = K_FOLDS,
               presets: tuple[str, ...] = tuple(f"EXP{i}" for i in range(1, 8)),
               input_shape=None) -> dict[str, VariantResult]:
    """Variant sweep: train each architecture across the folds."""
    y = np.asarray([int(v) for v in y])
    plan = make_splits(y, k=k, seed=tc.seed)
    shape = input_shape or (1,) + tuple(x.shape[1:])[-2:]
    results = {}
    for name in presets:
        config = preset(name, input_shape=shape)
        results[name] = _run_folds(config, tc, x, y, plan)
    return results


def run_study2(x, y, tc: TrainConfig, *, k: int = K_FOLDS,
               input_shape=None) -> VariantResult:
    """Best architecture on the combined dataset."""
    y = np.asarray([int(v) for v in y])
    plan = make_splits(y, k=k, seed=tc.seed)
    shape = input_shape or (1,) + tuple(x.shape[1:])[-2:]
    return _run_folds(best_config(shape), tc, x, y, plan)


@dataclass(frozen=True)
class TransferConfig:
    frozen: tuple[str, ...] = ("conv1", "conv2", "conv3")
    learning_rate: float = 1e-4
    epochs: int = 110
    batch_size: int = 32
    threshold: float = 0.5
    seed: int = 42
    reinit_head: bool = False

    def __post_init__(self):
        if not 0 <= self.epochs <= 110:
            raise ValueError("transfer fine-tuning uses at most 110 epochs")


def run_study3_transfer(x, y, source: Checkpoint, tcfg: TransferConfig,
                        *, k: int = K_FOLDS) -> VariantResult:
    """Fine-tune a pre-trained checkpoint with early conv blocks frozen.

    Frozen tensors are verified byte-identical to the source after every
    fold.  ``reinit_head`` re-draws the classification head instead of
    starting it from the source weights.
    """
    y = np.asarray([int(v) for v in y])
    model_names = set()
    counters: dict[str, int] = {}
    for spec in source.config.layers:
        counters[spec.kind] = counters.get(spec.kind, 0) + 1
        model_names.add(f"{spec.kind}{counters[spec.kind]}")
    unknown = set(tcfg.frozen) - model_names
    if unknown:
        raise ConfigMismatch(f"frozen layers {sorted(unknown)} not in "
                             f"{source.config.name}")

    init = source
    if tcfg.reinit_head:
        fresh = Model.build(source.config,
                            seed=int(np.random.SeedSequence([tcfg.seed, 7]
                                                            ).generate_state(1)[0]))
        params = dict(source.params)
        for name, arr in fresh.parameters().items():
            if name.startswith("dense"):
                params[name] = np.asarray(arr, dtype=np.float32).copy()
        init = Checkpoint(config=source.config, params=params,
                          trainable=dict(source.trainable), adam=None)

    tc = TrainConfig(epochs=tcfg.epochs, learning_rate=tcfg.learning_rate,
                     batch_size=tcfg.batch_size, threshold=tcfg.threshold,
                     seed=tcfg.seed)
    plan = make_splits(y, k=k, seed=tcfg.seed)
    result = _run_folds(source.config, tc, x, y, plan, init=init,
                        frozen=tcfg.frozen)

    for outcome in result.folds:
        for name, arr in outcome.result.final.params.items():
            layer = name.split(".")[0]
            if layer in tcfg.frozen and arr.tobytes() != init.params[name].tobytes():
                raise AssertionError(f"frozen parameter {name} changed in "
                                     f"fold {outcome.fold}")
    return result


# --------------------------------------------------------------------------
# Curve emission
# --------------------------------------------------------------------------

def write_epoch_csv(path, per_fold_records: dict[int, list[EpochRecord]]) -> None:
    """`fold,epoch,train_loss,train_acc,valid_loss,valid_acc`."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fold", "epoch", "train_loss", "train_acc",
                    "valid_loss", "valid_acc"])
        for fold in sorted(per_fold_records):
            for r in per_fold_records[fold]:
                w.writerow([fold, r.epoch, f"{r.train_loss:.6f}",
                            f"{r.train_acc:.6f}", f"{r.valid_loss:.6f}",
                            f"{r.valid_acc:.6f}"])
