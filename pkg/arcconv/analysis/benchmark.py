"""Wall-clock comparison of static, combined and naive convolution paths."""

import hashlib
import logging
import statistics
import time
from typing import Callable, Optional, Sequence

import numpy as np

from arcconv.analysis.base_check import BaseCheck, CheckOutcome
from arcconv.config import get_bench_defaults
from arcconv.core import functional as F
from arcconv.core.arc_layer import ArcLayer, arc_forward, arc_forward_naive
from arcconv.core.errors import ConfigurationError, ContractError
from arcconv.core.module import Module
from arcconv.core.tensor import Tensor, no_grad
from arcconv.models.configs import ArcLayerConfig, DType
from arcconv.models.reports import BenchReport, Comparison

logger = logging.getLogger(__name__)

MIN_TRIALS = 5
MIN_WARMUP = 2
NAIVE_SPEEDUP_FLOOR = 1.5
STATIC_OVERHEAD_CEILING = 1.5


def parameter_checksum(module: Module) -> str:
    digest = hashlib.sha256()
    for name, param in module.named_parameters():
        digest.update(name.encode("utf-8"))
        digest.update(np.ascontiguousarray(param.data).tobytes())
    return digest.hexdigest()


def median_ms(fn: Callable[[], object], trials: int, warmup: int) -> float:
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(trials):
        start = time.perf_counter()
        fn()
        times.append((time.perf_counter() - start) * 1e3)
    return statistics.median(times)


def bench(config: ArcLayerConfig, input_shape: Sequence[int], trials: Optional[int] = None,
          warmup: Optional[int] = None, seed: int = 0, dtype: DType = DType.BINARY64) -> BenchReport:
    """Median times of one static conv (expert 0), the combined path and the naive path.

    All three run without recording a tape. Parameters are checksummed before
    and after; a mismatch is a contract violation.
    """
    defaults = get_bench_defaults()
    trials = defaults["trials"] if trials is None else trials
    warmup = defaults["warmup"] if warmup is None else warmup
    if trials < MIN_TRIALS or warmup < MIN_WARMUP:
        raise ConfigurationError(f"need trials >= {MIN_TRIALS} and warmup >= {MIN_WARMUP}")
    batch, channels, h, w = input_shape
    if channels != config.c_in:
        raise ConfigurationError(f"input has {channels} channels, layer expects {config.c_in}")

    layer = ArcLayer(config, seed=seed, dtype=dtype, name="bench")
    x = Tensor(np.random.default_rng(seed).normal(size=(batch, channels, h, w)), dtype=dtype)
    static_weight = Tensor(layer.weight.data[0])
    before = parameter_checksum(layer)
    with no_grad():
        static_ms = median_ms(lambda: F.conv2d(x, static_weight, config.stride, config.padding),
                              trials, warmup)
        combined_ms = median_ms(lambda: arc_forward(layer, x), trials, warmup)
        naive_ms = median_ms(lambda: arc_forward_naive(layer, x), trials, warmup)
    if parameter_checksum(layer) != before:
        raise ContractError("benchmark modified layer parameters")

    report = BenchReport(fingerprint=config.fingerprint(), input_shape=list(input_shape), trials=trials,
                         warmup=warmup, static_ms=static_ms, combined_ms=combined_ms, naive_ms=naive_ms)
    logger.info("bench %s: static %.2fms combined %.2fms naive %.2fms", report.fingerprint,
                static_ms, combined_ms, naive_ms)
    return report


class BenchmarkCheck(BaseCheck):
    """Timing-ratio check.

    n > 1: naive / combined must reach 1.5. n == 1: combined / static must stay
    under 1.5.
    """

    def __init__(self, config: ArcLayerConfig, input_shape: Sequence[int], trials: Optional[int] = None,
                 warmup: Optional[int] = None, seed: int = 0):
        if config.n > 1:
            super().__init__("bench:naive-over-combined", NAIVE_SPEEDUP_FLOOR, "time_ratio",
                             Comparison.AT_LEAST)
        else:
            super().__init__("bench:combined-over-static", STATIC_OVERHEAD_CEILING, "time_ratio")
        self.config = config
        self.input_shape = tuple(input_shape)
        self.trials = trials
        self.warmup = warmup
        self.seed = seed
        self.report: Optional[BenchReport] = None

    def run(self) -> CheckOutcome:
        self.report = bench(self.config, self.input_shape, self.trials, self.warmup, self.seed)
        ratio = self.report.naive_over_combined if self.config.n > 1 else self.report.combined_over_static
        return CheckOutcome(metric=ratio, details=self.report.model_dump(), fingerprint=self.report.fingerprint)
