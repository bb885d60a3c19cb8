"""Routing function: predict per-sample rotation angles and combination weights."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from arcconv.core import functional as F
from arcconv.core.errors import ConfigurationError, DimensionError
from arcconv.core.module import Module, Seed, truncated_normal
from arcconv.core.tensor import Parameter, Tensor
from arcconv.models.configs import DType, RoutingToggles

ROUTING_INIT_STD = 0.2


class RoutingParams(Module):
    """Weights of the router.

    depthwise 3x3 encoder -> channel layer norm -> relu -> global pool, then a
    bias-free angle head and a biased combination head.
    """

    def __init__(self, dw_kernel: Parameter, ln_gamma: Parameter, ln_beta: Parameter,
                 theta_weight: Parameter, lambda_weight: Parameter, lambda_bias: Parameter,
                 angle_coefficient: float):
        super().__init__()
        c_in = dw_kernel.shape[0]
        n = theta_weight.shape[0]
        if dw_kernel.shape != (c_in, 1, 3, 3):
            raise DimensionError(f"depthwise kernel must be [C_in, 1, 3, 3], got {dw_kernel.shape}")
        if ln_gamma.shape != (c_in,) or ln_beta.shape != (c_in,):
            raise DimensionError("layer norm affine must have one entry per channel")
        if theta_weight.shape != (n, c_in) or lambda_weight.shape != (n, c_in) or lambda_bias.shape != (n,):
            raise DimensionError("routing heads must be [n, C_in] (+ [n] bias for the combination head)")
        if not np.isfinite(angle_coefficient) or angle_coefficient < 0:
            raise ConfigurationError(f"angle coefficient must be finite and >= 0, got {angle_coefficient}")
        self.dw_kernel = dw_kernel
        self.ln_gamma = ln_gamma
        self.ln_beta = ln_beta
        self.theta_weight = theta_weight
        self.lambda_weight = lambda_weight
        self.lambda_bias = lambda_bias
        self.angle_coefficient = float(angle_coefficient)

    @property
    def c_in(self) -> int:
        return self.dw_kernel.shape[0]

    @property
    def n(self) -> int:
        return self.theta_weight.shape[0]


@dataclass
class RoutingOutput:
    """theta: [N, n] radians; lam: [N, n] combination weights."""
    theta: Tensor
    lam: Tensor


def routing_init(c_in: int, n: int, angle_coefficient: float, seed: Seed,
                 dtype: DType = DType.BINARY64) -> RoutingParams:
    """Weights ~ N(0, 0.2^2) truncated at +-2 sigma; biases 0, gamma 1, beta 0."""
    if c_in < 1 or n < 1:
        raise ConfigurationError(f"routing needs C_in >= 1 and n >= 1, got {c_in}, {n}")
    rng = np.random.default_rng(seed)
    dw = truncated_normal(rng, (c_in, 1, 3, 3), ROUTING_INIT_STD)
    theta_w = truncated_normal(rng, (n, c_in), ROUTING_INIT_STD)
    lambda_w = truncated_normal(rng, (n, c_in), ROUTING_INIT_STD)
    return RoutingParams(
        dw_kernel=Parameter(dw, dtype=dtype),
        ln_gamma=Parameter(np.ones(c_in), dtype=dtype),
        ln_beta=Parameter(np.zeros(c_in), dtype=dtype),
        theta_weight=Parameter(theta_w, dtype=dtype),
        lambda_weight=Parameter(lambda_w, dtype=dtype),
        lambda_bias=Parameter(np.zeros(n), dtype=dtype),
        angle_coefficient=angle_coefficient,
    )


def routing_forward(params: RoutingParams, x: Tensor, toggles: Optional[RoutingToggles] = None,
                    eps: float = F.LAYER_NORM_EPS, cols: Optional[Tensor] = None) -> RoutingOutput:
    """theta = coeff * softsign(W_theta . pooled); lam = sigmoid(W_lam . pooled + b).

    `cols` may carry precomputed 3x3 / stride 1 / padding 1 patches of x, in
    which case the depthwise encoder reads them instead of re-windowing x.
    """
    toggles = toggles or RoutingToggles()
    if x.ndim != 4 or x.shape[1] != params.c_in:
        raise DimensionError(f"router expects [N, {params.c_in}, H, W], got {x.shape}")

    h = x
    if toggles.spatial_encoding:
        if cols is None:
            h = F.grouped_conv2d(h, params.dw_kernel, groups=params.c_in, stride=1, padding=1)
        else:
            h = F.depthwise_from_patches(cols, params.dw_kernel, x.shape[2:])
        h = F.channel_layer_norm(h, params.ln_gamma, params.ln_beta, eps)
        h = F.relu(h)
    pooled = F.global_avg_pool(h)

    if toggles.adaptive_rotation:
        theta = F.softsign(F.linear(pooled, params.theta_weight)) * params.angle_coefficient
    else:
        # experts stay upright; the angle head receives no gradient
        theta = Tensor(np.zeros((x.shape[0], params.n)), dtype=pooled.dtype)
    if toggles.adaptive_combination:
        lam = F.sigmoid(F.linear(pooled, params.lambda_weight, params.lambda_bias))
    else:
        lam = Tensor(np.full((x.shape[0], params.n), 1.0 / params.n), dtype=theta.dtype)
    return RoutingOutput(theta=theta, lam=lam)
