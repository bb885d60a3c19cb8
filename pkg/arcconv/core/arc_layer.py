"""The adaptive rotated convolution layer.

route -> rotate every expert by its per-sample angle -> weight and sum the
rotated experts into one kernel per sample -> convolve once. Per-sample kernels
run as one batched GEMM over the input patches. The naive reference path folds
the batch into the channel axis instead and runs a grouped convolution with
one group per sample.
"""

import zlib
from typing import Optional, Tuple

import numpy as np

from arcconv.core import functional as F
from arcconv.core.errors import DimensionError
from arcconv.core.module import Module, he_normal, layer_rng
from arcconv.core.rotation import KernelStack, rotate_experts
from arcconv.core.routing import RoutingOutput, routing_forward, routing_init
from arcconv.core.tensor import Parameter, Tensor, make_result
from arcconv.models.configs import ArcLayerConfig, DType

ROUTER_STREAM = 1_000_003
ENCODER_WINDOW = (3, 1, 1)


def init_expert_kernels(config: ArcLayerConfig, seed: int, name: str,
                        dtype: DType = DType.BINARY64) -> np.ndarray:
    """He-normal experts; expert i draws from stream i of the layer's generator."""
    shape = (config.c_out, config.c_in, config.k, config.k)
    fan_in = config.c_in * config.k * config.k
    experts = [he_normal(layer_rng(seed, name, i), shape, fan_in) for i in range(config.n)]
    return np.stack(experts).astype(dtype.numpy_dtype)


class ArcLayer(Module):
    """n expert kernels [C_out, C_in, k, k] plus their router."""

    def __init__(self, config: ArcLayerConfig, seed: int = 0, dtype: DType = DType.BINARY64,
                 name: str = "arc"):
        super().__init__()
        self.config = config
        self.name = name
        self.weight = Parameter(init_expert_kernels(config, seed, name, dtype))
        self.router = routing_init(config.c_in, config.n, config.angle_coefficient,
                                   [seed, zlib.crc32(name.encode("utf-8")), ROUTER_STREAM], dtype)
        self.routing_override: Optional[Tuple[np.ndarray, np.ndarray]] = None

    @property
    def kernels(self) -> KernelStack:
        return KernelStack(self.weight)

    def set_routing_override(self, theta=None, lam=None) -> None:
        """Replace the router's output with fixed values (broadcast to [N, n]).

        Omitted parts default to theta = 0 and lam = 1. Pass nothing and call
        `clear_routing_override` to restore the learned router.
        """
        n = self.config.n
        theta = np.zeros(n) if theta is None else np.asarray(theta, dtype=np.float64)
        lam = np.ones(n) if lam is None else np.asarray(lam, dtype=np.float64)
        self.routing_override = (theta, lam)

    def clear_routing_override(self) -> None:
        self.routing_override = None

    def route(self, x: Tensor, cols: Optional[Tensor] = None) -> RoutingOutput:
        if self.routing_override is None:
            return routing_forward(self.router, x, self.config.toggles, cols=cols)
        theta, lam = self.routing_override
        shape = (x.shape[0], self.config.n)
        try:
            theta = np.broadcast_to(theta, shape)
            lam = np.broadcast_to(lam, shape)
        except ValueError as exc:
            raise DimensionError(f"routing override does not broadcast to {shape}") from exc
        return RoutingOutput(theta=Tensor(theta, dtype=self.weight.dtype),
                             lam=Tensor(lam, dtype=self.weight.dtype))

    def forward(self, x: Tensor) -> Tensor:
        return arc_forward(self, x)


def combine_kernels(rotated: Tensor, lam: Tensor) -> Tensor:
    """Per-sample weighted sum of rotated experts.

    rotated: [N * n, C_out, C_in, k, k] (sample-major); lam: [N, n].
    Returns [N, C_out, C_in, k, k].
    """
    if lam.ndim != 2 or rotated.ndim != 5 or rotated.shape[0] != lam.shape[0] * lam.shape[1]:
        raise DimensionError(f"rotated {rotated.shape} and lambda {lam.shape} do not conform")
    batch, n = lam.shape
    expert_shape = rotated.shape[1:]
    rot = rotated.data.astype(np.float64).reshape(batch, n, -1)
    weights = lam.data.astype(np.float64)
    out = np.matmul(weights[:, None, :], rot)[:, 0]
    dtype = np.result_type(rotated.dtype, lam.dtype)

    def backward(g):
        g = g.astype(np.float64).reshape(batch, 1, -1)
        grad_rot = (weights[:, :, None] * g).reshape(rotated.shape) if rotated.requires_grad else None
        grad_lam = (rot * g).sum(axis=2) if lam.requires_grad else None
        return grad_rot, grad_lam

    return make_result(out.reshape((batch,) + expert_shape).astype(dtype), (rotated, lam),
                       backward, "combine_kernels")


def _check_input(layer: ArcLayer, x: Tensor) -> None:
    if x.ndim != 4 or x.shape[1] != layer.config.c_in:
        raise DimensionError(f"ARC layer expects [N, {layer.config.c_in}, H, W], got {x.shape}")


def _fold_conv(x: Tensor, kernels: Tensor, layer: ArcLayer) -> Tensor:
    """Convolve sample b with kernels[b] for every b in one grouped convolution."""
    batch, c_in, h, w = x.shape
    cfg = layer.config
    folded = F.grouped_conv2d(x.reshape(1, batch * c_in, h, w),
                              kernels.reshape(batch * cfg.c_out, c_in, cfg.k, cfg.k),
                              groups=batch, stride=cfg.stride, padding=cfg.padding)
    return folded.reshape(batch, cfg.c_out, folded.shape[2], folded.shape[3])


def arc_forward(layer: ArcLayer, x: Tensor, routing: Optional[RoutingOutput] = None) -> Tensor:
    """Combine-then-convolve: exactly one convolution regardless of n.

    The input is windowed once. When the layer's window matches the router's
    depthwise encoder (3x3, stride 1, padding 1) the router reads the same
    patches.
    """
    _check_input(layer, x)
    cfg = layer.config
    cols = F.patches(x, cfg.k, cfg.stride, cfg.padding)
    out_hw = (F.conv_output_size(x.shape[2], cfg.k, cfg.stride, cfg.padding),
              F.conv_output_size(x.shape[3], cfg.k, cfg.stride, cfg.padding))
    if routing is None:
        shared = (cfg.k, cfg.stride, cfg.padding) == ENCODER_WINDOW
        routing = layer.route(x, cols if shared else None)
    rotated = rotate_experts(layer.weight, routing.theta)
    combined = combine_kernels(rotated, routing.lam)
    return F.conv_from_patches(cols, combined, out_hw)


def arc_forward_naive(layer: ArcLayer, x: Tensor, routing: Optional[RoutingOutput] = None) -> Tensor:
    """Convolve with every rotated expert separately and sum the lambda-weighted outputs."""
    _check_input(layer, x)
    routing = routing or layer.route(x)
    batch, n = x.shape[0], layer.config.n
    rotated = rotate_experts(layer.weight, routing.theta)
    per_expert = rotated.reshape(batch, n, -1)
    y = None
    for i in range(n):
        out = _fold_conv(x, per_expert[:, i], layer)
        term = out * routing.lam[:, i].reshape(batch, 1, 1, 1)
        y = term if y is None else y + term
    return y
