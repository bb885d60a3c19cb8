"""Analytic gradients versus central finite differences (binary64)."""

import logging
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from arcconv.analysis.base_check import BaseCheck, CheckOutcome
from arcconv.core.arc_layer import ArcLayer, arc_forward
from arcconv.core.errors import ConfigurationError
from arcconv.core.functional import branch_probe
from arcconv.core.network import build_smallnet
from arcconv.core.rotation import rotate_experts
from arcconv.core.routing import routing_forward, routing_init
from arcconv.core.tensor import Parameter, Tensor, no_grad
from arcconv.models.configs import ArcLayerConfig, DType, TrainConfig, TrainMode
from arcconv.models.reports import CheckReport

TARGETS = ("rotation", "routing", "arc-layer", "smallnet")
DEFAULT_ANGLES = ((0.3, -1.1), (2.0, 0.7))
SMALLNET_WIDTHS = (4, 6, 8)
SMALLNET_MAX_COORDS = 16
NORM_FLOOR = 1e-6

logger = logging.getLogger(__name__)

Leaves = List[Tuple[str, Parameter]]


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a||, ||n||, floor)."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), NORM_FLOOR)
    return float(np.linalg.norm(analytic - numeric) / scale)


def _probe(u: np.ndarray) -> Tensor:
    return Tensor(u, dtype=DType.BINARY64)


class GradientCheck(BaseCheck):
    """Worst per-tensor relative error between tape gradients and finite differences.

    The loss is sum(output * U) for a fixed random U. Coordinates whose +eps
    and -eps evaluations take different piecewise branches (a ReLU flips or a
    bilinear sample changes cell) are skipped and counted.
    """

    def __init__(self, target: str = "arc-layer", seed: int = 0, eps: float = 1e-5,
                 tolerance: float = 1e-5, max_coords: Optional[int] = None,
                 angles: Sequence[Sequence[float]] = DEFAULT_ANGLES):
        if target not in TARGETS:
            raise ConfigurationError(f"unknown gradcheck target '{target}', expected one of {TARGETS}")
        super().__init__(f"gradcheck:{target}", tolerance, "max_rel_error")
        self.target = target
        self.seed = seed
        self.eps = eps
        self.max_coords = max_coords
        if self.max_coords is None and target == "smallnet":
            self.max_coords = SMALLNET_MAX_COORDS
        self.angles = np.asarray(angles, dtype=np.float64)

    # -- targets -------------------------------------------------------

    def _rotation(self, rng: np.random.Generator) -> Tuple[Leaves, Callable[[], Tensor]]:
        n = self.angles.shape[1]
        weight = Parameter(rng.normal(size=(n, 3, 2, 3, 3)), dtype=DType.BINARY64)
        theta = Parameter(self.angles, dtype=DType.BINARY64)
        u = _probe(rng.normal(size=(self.angles.size, 3, 2, 3, 3)))
        return [("weight", weight), ("theta", theta)], lambda: (rotate_experts(weight, theta) * u).sum()

    def _routing(self, rng: np.random.Generator) -> Tuple[Leaves, Callable[[], Tensor]]:
        params = routing_init(4, 2, np.pi, self.seed, DType.BINARY64)
        params.ln_gamma.data[...] = rng.uniform(0.5, 1.5, size=4)
        params.ln_beta.data[...] = rng.normal(scale=0.1, size=4)
        params.lambda_bias.data[...] = rng.normal(scale=0.1, size=2)
        x = Parameter(rng.normal(size=(2, 4, 6, 6)), dtype=DType.BINARY64)
        u_theta, u_lam = _probe(rng.normal(size=(2, 2))), _probe(rng.normal(size=(2, 2)))

        def loss() -> Tensor:
            out = routing_forward(params, x)
            return (out.theta * u_theta).sum() + (out.lam * u_lam).sum()

        return list(params.named_parameters("router.")) + [("input", x)], loss

    def _arc_layer(self, rng: np.random.Generator) -> Tuple[Leaves, Callable[[], Tensor]]:
        layer = ArcLayer(ArcLayerConfig(n=2, k=3, c_in=4, c_out=4), seed=self.seed,
                         dtype=DType.BINARY64, name="gradcheck")
        x = Parameter(rng.normal(size=(2, 4, 6, 6)), dtype=DType.BINARY64)
        u = _probe(rng.normal(size=(2, 4, 6, 6)))
        return list(layer.named_parameters()) + [("input", x)], lambda: (arc_forward(layer, x) * u).sum()

    def _smallnet(self, rng: np.random.Generator) -> Tuple[Leaves, Callable[[], Tensor]]:
        config = TrainConfig(mode=TrainMode.ARC, n=2, seed=self.seed, image_size=8, dtype=DType.BINARY64)
        model = build_smallnet(config=config, widths=SMALLNET_WIDTHS)
        x = Parameter(rng.normal(size=(2, 1, 8, 8)), dtype=DType.BINARY64)
        u = _probe(rng.normal(size=(2, config.bins)))
        return list(model.named_parameters()) + [("input", x)], lambda: (model(x) * u).sum()

    # -- harness -------------------------------------------------------

    def _numeric(self, leaf: Parameter, index: int, loss: Callable[[], Tensor]) -> Optional[float]:
        flat = leaf.data.reshape(-1)
        original = flat[index]
        with no_grad():
            flat[index] = original + self.eps
            with branch_probe() as plus_branch:
                plus = loss().item()
            flat[index] = original - self.eps
            with branch_probe() as minus_branch:
                minus = loss().item()
        flat[index] = original
        if plus_branch != minus_branch:
            return None
        return (plus - minus) / (2.0 * self.eps)

    def run(self) -> CheckOutcome:
        rng = np.random.default_rng(self.seed)
        build = {"rotation": self._rotation, "routing": self._routing,
                 "arc-layer": self._arc_layer, "smallnet": self._smallnet}[self.target]
        leaves, loss = build(rng)
        for _, leaf in leaves:
            leaf.zero_grad()
        loss().backward()

        errors: Dict[str, float] = {}
        skipped, checked = 0, 0
        unchecked: List[str] = []
        for name, leaf in leaves:
            analytic = leaf.grad.reshape(-1).astype(np.float64).copy()
            coords = np.arange(leaf.size)
            if self.max_coords is not None and leaf.size > self.max_coords:
                coords = np.sort(rng.choice(leaf.size, self.max_coords, replace=False))
            kept, numeric = [], []
            for index in coords:
                value = self._numeric(leaf, int(index), loss)
                if value is None:
                    skipped += 1
                    continue
                kept.append(int(index))
                numeric.append(value)
            if kept:
                errors[name] = relative_error(analytic[kept], np.asarray(numeric))
                checked += len(kept)
            else:
                unchecked.append(name)
        if unchecked:
            logger.warning("%s: no usable coordinate for %s", self.name, ", ".join(unchecked))
        worst_name = max(errors, key=errors.get) if errors else ""
        # NaN when no coordinate was compared; BaseCheck reports that as FAIL
        metric = max(errors.values()) if errors else float("nan")
        return CheckOutcome(metric=metric,
                            details={"errors": errors, "skipped": skipped, "checked": checked,
                                     "unchecked": unchecked, "eps": self.eps, "worst": worst_name},
                            fingerprint=f"target={self.target},seed={self.seed}")


def gradcheck(target: str = "arc-layer", seed: int = 0, eps: float = 1e-5, tol: float = 1e-5,
              **kwargs) -> CheckReport:
    return GradientCheck(target, seed, eps, tol, **kwargs).execute()
