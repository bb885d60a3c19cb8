"""Combine-then-convolve versus convolve-then-sum equivalence."""

from typing import List, Optional, Sequence

import numpy as np

from arcconv.analysis.base_check import BaseCheck, CheckOutcome
from arcconv.core.arc_layer import ArcLayer, arc_forward, arc_forward_naive
from arcconv.core.routing import RoutingOutput
from arcconv.core.tensor import Tensor, no_grad
from arcconv.models.configs import ArcLayerConfig, DType
from arcconv.models.reports import CheckReport

DEFAULT_TOLERANCE = {DType.BINARY64: 1e-12, DType.BINARY32: 1e-5}
DEFAULT_BATCH_SIZES = (1, 3)


def default_sweep(c_in: int = 3, c_out: int = 4) -> List[ArcLayerConfig]:
    return [ArcLayerConfig(n=n, k=k, c_in=c_in, c_out=c_out) for n in (1, 2, 4) for k in (1, 3, 5)]


class EquivalenceCheck(BaseCheck):
    """Max difference between the fast and the naive ARC paths over a config sweep.

    binary64 reports the max absolute difference; binary32 reports it relative
    to the largest naive output. `lambda_perturbation` shifts the fast path's
    combination weights and exists as a negative control.
    """

    def __init__(self, sweep: Optional[Sequence[ArcLayerConfig]] = None,
                 batch_sizes: Sequence[int] = DEFAULT_BATCH_SIZES, dtype: DType = DType.BINARY64,
                 seed: int = 0, tolerance: Optional[float] = None, image_size: int = 7,
                 lambda_perturbation: float = 0.0):
        dtype = DType(dtype)
        metric = "max_abs_error" if dtype is DType.BINARY64 else "max_rel_error"
        super().__init__(f"equiv:{dtype.value}",
                         DEFAULT_TOLERANCE[dtype] if tolerance is None else tolerance, metric)
        self.sweep = list(sweep) if sweep is not None else default_sweep()
        self.batch_sizes = tuple(batch_sizes)
        self.dtype = dtype
        self.seed = seed
        self.image_size = image_size
        self.lambda_perturbation = lambda_perturbation

    def run(self) -> CheckOutcome:
        rng = np.random.default_rng(self.seed)
        worst, worst_at, cases = 0.0, "", 0
        for index, config in enumerate(self.sweep):
            layer = ArcLayer(config, seed=self.seed + index, dtype=self.dtype, name=f"equiv{index}")
            for batch in self.batch_sizes:
                x = Tensor(rng.normal(size=(batch, config.c_in, self.image_size, self.image_size)),
                           dtype=self.dtype)
                with no_grad():
                    routing = layer.route(x)
                    fast_routing = RoutingOutput(theta=routing.theta,
                                                 lam=routing.lam + self.lambda_perturbation)
                    fast = arc_forward(layer, x, fast_routing).data.astype(np.float64)
                    naive = arc_forward_naive(layer, x, routing).data.astype(np.float64)
                err = float(np.max(np.abs(fast - naive)))
                if self.dtype is DType.BINARY32:
                    err /= max(float(np.max(np.abs(naive))), np.finfo(np.float32).tiny)
                cases += 1
                if err >= worst:
                    worst, worst_at = err, f"{config.fingerprint()},N={batch}"
        return CheckOutcome(metric=worst, details={"cases": cases, "dtype": self.dtype.value},
                            fingerprint=worst_at)


def check_equivalence(sweep: Optional[Sequence[ArcLayerConfig]] = None, seed: int = 0,
                      tol: Optional[float] = None, dtype: DType = DType.BINARY64,
                      batch_sizes: Sequence[int] = DEFAULT_BATCH_SIZES,
                      lambda_perturbation: float = 0.0) -> CheckReport:
    return EquivalenceCheck(sweep, batch_sizes, dtype, seed, tol,
                            lambda_perturbation=lambda_perturbation).execute()
