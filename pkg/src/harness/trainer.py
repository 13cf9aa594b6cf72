"""Training loop, evaluation, rank sweeps and marginal accuracy."""

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from src.errors import DivergenceError, LbpError
from src.harness.dataset import make_synthetic_dataset
from src.harness.network import build_model, softmax_cross_entropy
from src.harness.optim import make_optimizer
from src.models.config import ModeSpec
from src.models.train_log import EpochRecord, TrainLog
from src.tensor_core import Rng

log = logging.getLogger(__name__)

_EVAL_BATCH = 256


def evaluate(model, dataset):
    """Top-1 accuracy in [0, 1]; does not touch weights or layer caches."""
    if len(dataset) == 0:
        raise LbpError("cannot evaluate on an empty dataset")
    correct = 0
    for x, labels in dataset.batches(_EVAL_BATCH):
        correct += int(np.sum(model.predict(x) == labels))
    return correct / len(dataset)


def _apply_updates(model, optimizer):
    for layer in model.linears:
        if not layer.trainable:
            continue
        for key, value in layer.params().items():
            grad = layer.grad_for(key)
            layer.set_param(key, optimizer.update(f"{layer.name}.{key}", value, grad))


def train(model, config, train_set, eval_set, label=""):
    """Run ``config.epochs`` epochs and return the populated TrainLog.

    Single-threaded; given the same config the log is identical apart from wall-clock.
    """
    if len(train_set) == 0:
        raise LbpError("training set is empty")
    optimizer = make_optimizer(config.optimizer, config.learning_rate)
    shuffle = Rng(config.seed).split(2)
    tlog = TrainLog(label=label)
    started = time.perf_counter()
    cum_flops = 0

    for epoch in range(1, config.epochs + 1):
        order = shuffle.split(epoch).permutation(len(train_set))
        loss_sum = 0.0
        correct = 0
        for step, (x, labels) in enumerate(train_set.batches(config.batch_size, order), start=1):
            logits = model.forward(x)
            loss, hits, g = softmax_cross_entropy(logits, labels)
            if not math.isfinite(loss):
                raise DivergenceError(epoch, step, loss)
            cum_flops += model.backward(g)
            _apply_updates(model, optimizer)
            loss_sum += loss * len(labels)
            correct += hits
            log.debug("epoch %d step %d loss %.6f", epoch, step, loss)

        record = EpochRecord(
            epoch=epoch,
            train_loss=loss_sum / len(train_set),
            train_acc=correct / len(train_set),
            eval_acc=evaluate(model, eval_set),
            cum_flops=cum_flops,
        )
        tlog.epochs.append(record)
        log.info(
            "%s epoch %d: loss %.4f train_acc %.4f eval_acc %.4f cum %.1f MFLOPs",
            label or "run", epoch, record.train_loss, record.train_acc,
            record.eval_acc, record.cum_mflops,
        )

    tlog.cum_flops = cum_flops
    tlog.wall_clock = time.perf_counter() - started
    tlog.layer_modes = [f"{layer.name}: {layer.mode_label}" for layer in model.linears]
    return tlog


def run_experiment(config, label="", dataset=None):
    """Build data and model from ``config``, train, and return (model, log)."""
    train_set, eval_set = dataset or make_synthetic_dataset(config.dataset)
    model = build_model(
        config,
        channels=train_set.channels,
        tokens=train_set.tokens,
        classes=train_set.classes,
        rng=Rng(config.seed).split(1),
    )
    return model, train(model, config, train_set, eval_set, label=label or config.default_mode.label())


def marginal_accuracy(points):
    """Slopes d(acc)/d(MFLOPs) between consecutive (mflops, acc) points sorted by compute."""
    if len(points) < 2:
        raise ValueError("marginal accuracy needs at least two points")
    pts = sorted(points, key=lambda p: p[0])
    slopes = []
    for (f0, a0), (f1, a1) in zip(pts, pts[1:]):
        if f1 == f0:
            raise ValueError(f"duplicate compute value {f0} in accuracy curve")
        slopes.append((a1 - a0) / (f1 - f0))
    return slopes


@dataclass
class SweepRow:
    label: str
    rank: int
    final_eval_acc: float
    cum_mflops: float
    log: TrainLog = field(repr=False, default=None)
    kind: str = "lbp_wht"


@dataclass
class SweepResult:
    rows: list
    slopes: list
    lora_slopes: list = field(default_factory=list)

    def lbp_rows(self):
        return [r for r in self.rows if r.kind == "lbp_wht"]

    def lora_rows(self):
        return [r for r in self.rows if r.kind == "lora"]


def _slopes(rows):
    return marginal_accuracy([(r.cum_mflops, r.final_eval_acc) for r in rows]) if len(rows) > 1 else []


def run_sweep(sweep):
    """Train the exact baseline (optional), one LBP-WHT run per swept parameter and one
    LoRA run per entry of ``sweep.lora_ranks``, all on the same data.

    LoRA rows are costed by ``flops_lora`` and get their own marginal-accuracy curve.
    """
    base = sweep.base
    dataset = make_synthetic_dataset(base.dataset)
    rows = []
    if sweep.include_exact:
        _, tlog = run_experiment(base.with_mode(ModeSpec(mode="exact")), "exact", dataset)
        rows.append(SweepRow("exact", base.dataset.tokens, tlog.final_eval_acc,
                             tlog.cum_flops / 1e6, tlog, kind="exact"))
    for param in sweep.params:
        mode = ModeSpec(
            mode="lbp_wht",
            strategy=sweep.strategy,
            param=param,
            profile_steps=base.default_mode.profile_steps,
        )
        model, tlog = run_experiment(base.with_mode(mode), mode.label(), dataset)
        ranks = [layer.state.mode.rank for layer in model.linears if hasattr(layer.state.mode, "rank")]
        rank = ranks[0] if ranks else 0
        rows.append(SweepRow(mode.label(), rank, tlog.final_eval_acc, tlog.cum_flops / 1e6, tlog))
    for lora_rank in sweep.lora_ranks:
        mode = ModeSpec(mode="lora", lora_rank=lora_rank)
        _, tlog = run_experiment(base.with_mode(mode), mode.label(), dataset)
        rows.append(SweepRow(mode.label(), lora_rank, tlog.final_eval_acc,
                             tlog.cum_flops / 1e6, tlog, kind="lora"))
    return SweepResult(
        rows=rows,
        slopes=_slopes([r for r in rows if r.kind == "lbp_wht"]),
        lora_slopes=_slopes([r for r in rows if r.kind == "lora"]),
    )
