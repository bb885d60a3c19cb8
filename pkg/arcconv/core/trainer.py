"""SGD training loop, evaluation and the stage-replacement sweep for the toy network."""

import logging
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from arcconv.core import functional as F
from arcconv.core.errors import ConfigurationError, InputError, TrainingDivergenceError
from arcconv.core.module import Module
from arcconv.core.network import build_smallnet
from arcconv.core.tensor import Parameter, Tensor, no_grad
from arcconv.models.configs import Stage, TrainConfig, TrainMode
from arcconv.models.reports import AblationRow, EpochMetrics
from arcconv.services.datagen import OrientedBarSample, generate, split, stack

logger = logging.getLogger(__name__)

Dataset = Sequence[OrientedBarSample]
EVAL_BATCH = 256


class SGD:
    """SGD with heavy-ball momentum: v = m*v + g; p -= lr_group * v."""

    def __init__(self, groups: Sequence[Tuple[List[Parameter], float]], momentum: float = 0.9):
        if not 0.0 <= momentum < 1.0:
            raise ConfigurationError(f"momentum must lie in [0, 1), got {momentum}")
        self.groups = [(list(params), float(lr)) for params, lr in groups]
        self.momentum = momentum
        self.velocity: Dict[int, np.ndarray] = {}

    @classmethod
    def for_model(cls, model: Module, config: TrainConfig) -> "SGD":
        """Head at the base rate; everything else (the backbone) scaled down."""
        groups = model.param_groups()
        return cls([(groups["backbone"], config.lr * config.backbone_lr_scale),
                    (groups["head"], config.lr)], momentum=config.momentum)

    def zero_grad(self) -> None:
        for params, _ in self.groups:
            for p in params:
                p.zero_grad()

    def step(self) -> None:
        for params, lr in self.groups:
            for p in params:
                v = self.velocity.get(id(p))
                if v is None:
                    v = self.velocity[id(p)] = np.zeros_like(p.data)
                v *= self.momentum
                v += p.grad
                p.data -= lr * v


def _batches(count: int, batch_size: int, order: np.ndarray):
    for start in range(0, count, batch_size):
        yield order[start:start + batch_size]


def evaluate_loss(model: Module, dataset: Dataset, dtype=np.float32,
                  batch_size: int = EVAL_BATCH) -> Tuple[float, float]:
    """Mean cross-entropy and top-1 accuracy over the dataset."""
    if not dataset:
        raise InputError("cannot evaluate on an empty dataset")
    images, labels = stack(dataset, dtype)
    total_loss, correct = 0.0, 0
    with no_grad():
        for idx in _batches(len(labels), batch_size, np.arange(len(labels))):
            logits = model(Tensor(images[idx]))
            total_loss += F.softmax_cross_entropy(logits, labels[idx]).item() * len(idx)
            correct += int((F.predict_classes(logits) == labels[idx]).sum())
    return total_loss / len(labels), correct / len(labels)


def evaluate(model: Module, dataset: Dataset, dtype=np.float32) -> float:
    """Top-1 accuracy over the orientation bins."""
    return evaluate_loss(model, dataset, dtype)[1]


def train(model: Module, train_set: Dataset, test_set: Dataset, config: TrainConfig,
          on_epoch: Optional[Callable[[EpochMetrics], None]] = None) -> List[EpochMetrics]:
    """Train with SGD; one EpochMetrics per epoch.

    Batches are drawn from a per-epoch permutation seeded by (seed, epoch).
    A non-finite loss raises TrainingDivergenceError carrying the history so far.
    """
    if not train_set:
        raise InputError("training set is empty")
    dtype = config.dtype.numpy_dtype
    images, labels = stack(train_set, dtype)
    optimizer = SGD.for_model(model, config)
    history: List[EpochMetrics] = []

    for epoch in range(1, config.epochs + 1):
        order = np.random.default_rng([config.seed, epoch]).permutation(len(labels))
        loss_sum, correct = 0.0, 0
        for step, idx in enumerate(_batches(len(labels), config.batch_size, order)):
            logits = model(Tensor(images[idx]))
            loss = F.softmax_cross_entropy(logits, labels[idx])
            value = loss.item()
            if not np.isfinite(value):
                last = history[-1].model_dump() if history else None
                logger.error("non-finite loss at epoch %d step %d", epoch, step)
                raise TrainingDivergenceError(f"loss became {value} at epoch {epoch}, step {step}",
                                              last_metrics=last, history=list(history))
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            loss_sum += value * len(idx)
            correct += int((F.predict_classes(logits) == labels[idx]).sum())

        test_loss, test_acc = evaluate_loss(model, test_set, dtype) if test_set else (float("nan"), float("nan"))
        metrics = EpochMetrics(epoch=epoch, train_loss=loss_sum / len(labels),
                               train_acc=correct / len(labels), test_loss=test_loss, test_acc=test_acc)
        history.append(metrics)
        logger.info("epoch %d: train loss %.4f acc %.3f | test loss %.4f acc %.3f", epoch,
                    metrics.train_loss, metrics.train_acc, metrics.test_loss, metrics.test_acc)
        if on_epoch is not None:
            on_epoch(metrics)
    return history


def prepare_data(config: TrainConfig) -> Tuple[List[OrientedBarSample], List[OrientedBarSample]]:
    """Generate train_count + test_count samples and split them by label."""
    total = config.train_count + config.test_count
    samples = generate(config.dataset_config(), total)
    return split(samples, config.train_count / total, config.seed)


def ablation(base: TrainConfig, stage_subsets: Sequence[Sequence[Stage]] = ((Stage.C,), (Stage.B, Stage.C),
                                                                            (Stage.A, Stage.B, Stage.C)),
             seeds: Sequence[int] = (0, 1, 2), include_static: bool = True) -> List[AblationRow]:
    """Final test accuracy per replaced-stage subset, averaged over seeds.

    Every run of one seed shares the dataset and the initial non-ARC weights.
    """
    runs: List[Tuple[str, TrainConfig]] = []
    if include_static:
        runs.append(("static", base.model_copy(update={"mode": TrainMode.STATIC})))
    for subset in stage_subsets:
        stages = sorted({Stage(s) for s in subset}, key=lambda s: s.value)
        runs.append((",".join(s.value for s in stages),
                     base.model_copy(update={"mode": TrainMode.ARC, "stages": stages})))

    results: Dict[str, List[float]] = {label: [] for label, _ in runs}
    for seed in seeds:
        train_set, test_set = prepare_data(base.model_copy(update={"seed": seed}))
        for label, run in runs:
            config = run.model_copy(update={"seed": seed})
            model = build_smallnet(config=config)
            history = train(model, train_set, test_set, config)
            results[label].append(history[-1].test_acc)
            logger.info("ablation %s seed %d: test acc %.3f", label, seed, history[-1].test_acc)
    return [AblationRow(stages=label, seeds=list(seeds), accuracies=results[label]) for label, _ in runs]
