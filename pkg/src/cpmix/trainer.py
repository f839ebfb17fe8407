"""Training loops: ERM, vanilla mixup, two-stage CP-Mix, balanced fine-tuning."""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .confusion import ConfusionPairBag, build_cp_batch, confusion_matrix
from .data import ClassIndex, LabeledDataset, class_balanced_batch
from .mixing import MixConfig, cp_mix_batch, vanilla_mix_batch
from .nn import (LOSSES, MlpClassifier, NumericInputError, OptimizerState, ShapeError, backward,
                 optimizer_step)


class NumericAbort(RuntimeError):
    """A loss went non-finite during training."""


@dataclass
class FinetuneConfig:
    enabled: bool = False
    epochs: int = 0
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0


@dataclass
class TrainSchedule:
    epochs: int = 10
    cp_start: int | None = None
    batch_size: int = 100
    mix_batch_size: int | None = None
    optimizer: str = "adam"
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0
    lr_schedule: str = "constant"
    milestones: tuple = ()
    lr_decay: float = 0.1
    warmup_epochs: int = 0
    seed: int = 0
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)

    def __post_init__(self):
        if self.cp_start is None:
            self.cp_start = 2 * self.epochs // 3
        if self.mix_batch_size is None:
            self.mix_batch_size = self.batch_size
        if not 0 <= self.cp_start <= self.epochs:
            raise ValueError(f"cp_start must lie in [0, {self.epochs}]")
        if self.batch_size < 1 or self.mix_batch_size < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.lr_schedule not in ("constant", "multistep", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.optimizer not in ("adam", "sgd_momentum"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 1-based ``epoch``."""
        if self.warmup_epochs and epoch <= self.warmup_epochs:
            return self.lr * epoch / self.warmup_epochs
        if self.lr_schedule == "multistep":
            return self.lr * self.lr_decay ** sum(epoch > m for m in self.milestones)
        if self.lr_schedule == "cosine":
            span = max(1, self.epochs - self.warmup_epochs)
            done = epoch - 1 - self.warmup_epochs
            return 0.5 * self.lr * (1 + math.cos(math.pi * done / span))
        return self.lr

    def make_optimizer(self) -> OptimizerState:
        return OptimizerState(kind=self.optimizer, learning_rate=self.lr,
                              momentum=self.momentum, weight_decay=self.weight_decay)


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    loss_erm: float
    loss_cp: float | None
    loss_mix: float | None
    train_acc: float
    misclassified: int
    bag_total: float
    test_top1: float | None = None
    test_many: float | None = None
    test_medium: float | None = None
    test_few: float | None = None


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    wall_time: float = 0.0

    def to_jsonl(self, path=None) -> str:
        text = "".join(json.dumps(asdict(r)) + "\n" for r in self.records)
        if path is not None:
            Path(path).write_text(text)
        return text

    @staticmethod
    def read_jsonl(path) -> list[dict]:
        return [json.loads(line) for line in Path(path).read_text().splitlines() if line]


def _check(value: float, what: str, epoch: int, step: int) -> float:
    if not math.isfinite(value):
        raise NumericAbort(f"non-finite {what} at epoch {epoch}, batch {step}")
    return value


def _backward(model, x, y, loss, counts, what: str, epoch: int, step: int):
    """:func:`backward` with divergence reported as :class:`NumericAbort`."""
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            res = backward(model, x, y, loss, counts)
    except NumericInputError:
        raise NumericAbort(f"non-finite logits in {what} at epoch {epoch}, batch {step}") from None
    _check(res.loss, what, epoch, step)
    return res


def _check_dims(model: MlpClassifier, data: LabeledDataset):
    if model.layer_dims[0] != data.dim or model.num_classes != data.num_classes:
        raise ShapeError(
            f"model {model.layer_dims[0]}->{model.num_classes} does not fit "
            f"data {data.dim}->{data.num_classes}")


def _annotate_eval(rec: EpochRecord, model, test, train_counts):
    if test is None:
        return
    from .report import evaluate
    m = evaluate(model, test, train_counts)
    rec.test_top1 = m.top1
    rec.test_many = m.subgroup_acc["many"]
    rec.test_medium = m.subgroup_acc["medium"]
    rec.test_few = m.subgroup_acc["few"]


def _fit(model, train, test, schedule: TrainSchedule, *, erm_loss: str,
         mix: MixConfig | None, use_cp: bool, mixup_only: bool = False,
         bag: ConfusionPairBag | None = None):
    """Shared mini-batch loop.

    ``mixup_only`` replaces every batch by permutation-mixed pairs (vanilla
    mixup). Otherwise each batch contributes the ERM term, and from epoch
    ``cp_start + 1`` on, the CP-pair and in-batch mixup regularizers when
    ``use_cp`` is set.
    """
    _check_dims(model, train)
    if erm_loss not in LOSSES:
        raise ValueError(f"unknown loss {erm_loss!r}")
    rng = np.random.default_rng(schedule.seed)
    counts = train.class_counts
    C = train.num_classes
    if erm_loss == "balanced_softmax" and np.any(counts == 0):
        raise ValueError("balanced_softmax needs every class present in train")
    erm_counts = counts if erm_loss == "balanced_softmax" else None
    index = ClassIndex.build(train) if use_cp else None
    bag = bag if bag is not None else ConfusionPairBag(C)
    opt = schedule.make_optimizer()
    params = model.params()
    log = TrainLog()
    t0 = time.perf_counter()
    N = len(train)
    for epoch in range(1, schedule.epochs + 1):
        lr = schedule.lr_at(epoch)
        order = rng.permutation(N)
        stage2 = use_cp and epoch > schedule.cp_start
        sums = {"erm": 0.0, "cp": 0.0, "mix": 0.0}
        correct = wrong = steps = 0
        for step, start in enumerate(range(0, N, schedule.batch_size)):
            rows = order[start:start + schedule.batch_size]
            xb, yb = train.features[rows], train.labels[rows]
            if mixup_only:
                xm, ym, _ = vanilla_mix_batch(xb, yb, C, mix.alpha, rng)
                res = _backward(model, xm, ym, "cross_entropy", None, "mixup loss", epoch, step)
                sums["erm"] += res.loss
                grads = res.grads
                preds = res.predictions
                # a mixed row counts as correct when the argmax hits its heavier label
                hits = preds == np.argmax(ym, axis=1)
            else:
                res = _backward(model, xb, yb, erm_loss, erm_counts, "ERM loss", epoch, step)
                sums["erm"] += res.loss
                grads = res.grads
                preds = res.predictions
                hits = preds == yb
                if use_cp:
                    bag.record_batch(yb, preds)
                if stage2:
                    grads = [g.copy() for g in grads]
                    if mix.gamma_cp > 0:
                        cpb = build_cp_batch(bag, index, schedule.mix_batch_size, rng)
                        xc, yc, _ = cp_mix_batch(train.features[cpb.rows_t], cpb.classes_t,
                                                 train.features[cpb.rows_m], cpb.classes_m,
                                                 counts, mix, rng)
                        r_cp = _backward(model, xc, yc, "cross_entropy", None, "CP loss", epoch, step)
                        sums["cp"] += r_cp.loss
                        for g, h in zip(grads, r_cp.grads):
                            g += mix.gamma_cp * h
                    if mix.gamma_mix > 0:
                        perm = rng.permutation(len(rows))
                        xv, yv, _ = cp_mix_batch(xb, yb, xb[perm], yb[perm], counts, mix, rng)
                        r_mix = _backward(model, xv, yv, "cross_entropy", None, "mixup loss",
                                          epoch, step)
                        sums["mix"] += r_mix.loss
                        for g, h in zip(grads, r_mix.grads):
                            g += mix.gamma_mix * h
            correct += int(hits.sum())
            wrong += int((preds != yb).sum()) if not mixup_only else int((~hits).sum())
            steps += 1
            optimizer_step(opt, params, grads, lr=lr)
        if use_cp:
            bag.end_epoch()
        rec = EpochRecord(
            epoch=epoch, lr=lr,
            loss_erm=sums["erm"] / steps,
            loss_cp=sums["cp"] / steps if stage2 and mix.gamma_cp > 0 else None,
            loss_mix=sums["mix"] / steps if stage2 and mix.gamma_mix > 0 else None,
            train_acc=correct / N, misclassified=wrong, bag_total=bag.total,
        )
        _annotate_eval(rec, model, test, counts)
        log.records.append(rec)
    log.wall_time = time.perf_counter() - t0
    return model, bag, log


def train_erm(model, train, test, schedule: TrainSchedule, loss_kind="cross_entropy"):
    """Plain mini-batch ERM. Returns ``(model, test confusion matrix, log)``."""
    model, _, log = _fit(model, train, test, schedule, erm_loss=loss_kind,
                         mix=None, use_cp=False)
    cm = confusion_matrix(model, test) if test is not None else None
    return model, cm, log


def train_vanilla_mixup(model, train, test, schedule: TrainSchedule, alpha: float = 1.0):
    model, _, log = _fit(model, train, test, schedule, erm_loss="cross_entropy",
                         mix=MixConfig(alpha=alpha), use_cp=False, mixup_only=True)
    return model, log


def train_cpmix(model, train, test, schedule: TrainSchedule, mix_config: MixConfig,
                erm_loss: str = "balanced_softmax", bag: ConfusionPairBag | None = None):
    """Two-stage CP-Mix.

    Every epoch records training misclassifications into the bag. After
    ``schedule.cp_start`` epochs the loss becomes
    ``L_erm + gamma_cp * L_cp + gamma_mix * L_mix``. Returns
    ``(model, bag, log)``.
    """
    return _fit(model, train, test, schedule, erm_loss=erm_loss, mix=mix_config,
                use_cp=True, bag=bag)


def finetune_classifier(model: MlpClassifier, train: LabeledDataset,
                        schedule: TrainSchedule, seed: int | None = None) -> MlpClassifier:
    """Retrain only the output layer on class-balanced batches (SGD, cross-entropy)."""
    ft = schedule.finetune
    if not ft.enabled or ft.epochs <= 0:
        return model
    _check_dims(model, train)
    rng = np.random.default_rng(schedule.seed + 7919 if seed is None else seed)
    index = ClassIndex.build(train)
    opt = OptimizerState(kind="sgd_momentum", learning_rate=ft.lr,
                         momentum=ft.momentum, weight_decay=ft.weight_decay)
    last = model.params()[-2:]
    steps = max(1, math.ceil(len(train) / schedule.batch_size))
    for _ in range(ft.epochs):
        for step in range(steps):
            rows = class_balanced_batch(index, schedule.batch_size, rng)
            res = _backward(model, train.features[rows], train.labels[rows], "cross_entropy",
                            None, "finetune loss", -1, step)
            optimizer_step(opt, last, res.grads[-2:])
    return model
