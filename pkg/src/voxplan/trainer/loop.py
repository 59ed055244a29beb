from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import asdict, dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from ..dataio.volume import Sample
from ..executor.step import DivergenceError, Executor, Params, confusion_counts, init_params
from ..graph import Graph, Precision
from ..losses import LOSS_KINDS
from ..optim import OPTIMIZERS, OptimizerConfig
from .metrics import Confusion

log = logging.getLogger(__name__)

METRICS_HEADER = ("epoch", "train_loss", "train_dice", "test_dice", "train_acc", "test_acc", "step_seconds_mean")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch: int = 2
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    loss: str = "bce_plus_dice"
    threshold: float = 0.5
    seed: int = 0
    precision: Precision = Precision.SINGLE
    threads: int = 1
    checked: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "precision", Precision.parse(self.precision))
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie strictly between 0 and 1")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_dice: float
    test_dice: float
    train_acc: float
    test_acc: float
    step_seconds_mean: float


def stack_batch(samples: Sequence[Sample], dtype) -> Tuple[np.ndarray, np.ndarray]:
    images = np.stack([s.image.data for s in samples])[:, None].astype(dtype, copy=False)
    masks = np.stack([s.mask.data for s in samples])[:, None].astype(dtype, copy=False)
    return images, masks


def _mean_metrics(rows: np.ndarray) -> Tuple[float, float]:
    """Mean per-volume dice and accuracy from ``(tp, fp, fn, tn)`` rows."""
    if len(rows) == 0:
        return float("nan"), float("nan")
    conf = [Confusion(*map(int, r)) for r in rows]
    return float(np.mean([c.dice for c in conf])), float(np.mean([c.accuracy for c in conf]))


def evaluate(executor: Executor, samples: Sequence[Sample], batch: int, threshold: float) -> np.ndarray:
    rows = []
    for start in range(0, len(samples), batch):
        chunk = samples[start : start + batch]
        images, masks = stack_batch(chunk, executor.precision.dtype)
        pred = _predict(executor, images)
        rows.append(confusion_counts(pred, masks, threshold))
    return np.concatenate(rows) if rows else np.zeros((0, 4), dtype=np.int64)


def _predict(executor: Executor, images: np.ndarray) -> np.ndarray:
    # The graph is built for a fixed batch; pad a short final batch.
    n = executor.graph.input_node.out_shape.n
    k = images.shape[0]
    if k < n:
        pad = np.zeros((n - k,) + images.shape[1:], dtype=images.dtype)
        images = np.concatenate([images, pad])
    return executor.predict(images)[:k]


def train(
    graph: Graph,
    train_set: Sequence[Sample],
    test_set: Sequence[Sample],
    config: TrainConfig,
    params: Optional[Params] = None,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
) -> Tuple[List[EpochRecord], Params]:
    """Train ``graph`` and return one record per epoch plus the final parameters.

    The graph's batch size must equal ``config.batch``.  Each epoch drops the
    final partial batch of the shuffled training set; test metrics use every
    test sample.
    """
    if not train_set:
        raise ValueError("training set is empty")
    if graph.input_node.out_shape.n != config.batch:
        raise ValueError(f"graph batch {graph.input_node.out_shape.n} differs from config batch {config.batch}")
    if len(train_set) < config.batch:
        raise ValueError(f"training set ({len(train_set)}) is smaller than one batch ({config.batch})")
    spatial = graph.output_shape().spatial
    for s in list(train_set) + list(test_set):
        if s.mask.dims != spatial:
            raise ValueError(f"sample dims {s.mask.dims} do not match graph output {spatial}")
    if params is None:
        params = init_params(graph, config.precision, config.seed)
    rng = np.random.Generator(np.random.PCG64(config.seed))
    records: List[EpochRecord] = []
    opt = OptimizerConfig(config.optimizer)
    with Executor(
        graph, params, config.precision, opt, config.loss, config.threads, checked=config.checked, threshold=config.threshold
    ) as ex:
        for epoch in range(config.epochs):
            order = rng.permutation(len(train_set))
            losses, seconds, train_rows = [], [], []
            n_steps = len(train_set) // config.batch
            for step in range(n_steps):
                chunk = [train_set[i] for i in order[step * config.batch : (step + 1) * config.batch]]
                images, masks = stack_batch(chunk, ex.precision.dtype)
                t0 = time.perf_counter()
                try:
                    result = ex.train_step(images, masks, config.learning_rate)
                except DivergenceError as exc:
                    raise DivergenceError(f"epoch {epoch} step {step}: {exc}") from None
                seconds.append(time.perf_counter() - t0)
                losses.append(result.loss)
                train_rows.append(result.confusion)
            train_dice, train_acc = _mean_metrics(np.concatenate(train_rows))
            test_dice, test_acc = _mean_metrics(evaluate(ex, test_set, config.batch, config.threshold))
            record = EpochRecord(
                epoch=epoch,
                train_loss=float(np.mean(losses)),
                train_dice=train_dice,
                test_dice=test_dice,
                train_acc=train_acc,
                test_acc=test_acc,
                step_seconds_mean=float(np.mean(seconds)),
            )
            log.info("epoch %d: %s", epoch, record)
            records.append(record)
            if on_epoch is not None:
                on_epoch(record)
        final = {k: (w.copy(), b.copy()) for k, (w, b) in ex.params.items()}
    return records, final


def predict_masks(
    graph: Graph, params: Params, samples: Sequence[Sample], config: TrainConfig
) -> List[np.ndarray]:
    """Binary ``(d, h, w)`` prediction masks at ``config.threshold``."""
    out: List[np.ndarray] = []
    opt = OptimizerConfig(config.optimizer)
    with Executor(graph, params, config.precision, opt, config.loss, config.threads) as ex:
        for start in range(0, len(samples), config.batch):
            images, _ = stack_batch(samples[start : start + config.batch], ex.precision.dtype)
            pred = _predict(ex, images)
            out.extend((pred[i, 0] >= config.threshold).astype(ex.precision.dtype) for i in range(pred.shape[0]))
    return out


def _fmt(value: float) -> str:
    return f"{value:.6g}"


def metrics_csv(records: Sequence[EpochRecord], include_timing: bool = True) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_HEADER)
    for r in records:
        row = asdict(r)
        cells = [str(r.epoch)] + [_fmt(row[k]) for k in METRICS_HEADER[1:-1]]
        cells.append(_fmt(r.step_seconds_mean) if include_timing else "")
        writer.writerow(cells)
    return buf.getvalue()
