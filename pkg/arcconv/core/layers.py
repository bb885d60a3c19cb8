"""Static building blocks of the toy network."""

from typing import Union

import numpy as np

from arcconv.core import functional as F
from arcconv.core.arc_layer import ArcLayer
from arcconv.core.module import Module, he_normal, layer_rng
from arcconv.core.tensor import Parameter, Tensor
from arcconv.models.configs import DType


class Conv2d(Module):
    """Bias-free k x k convolution, He-normal initialised from stream 0 of its name."""

    def __init__(self, c_in: int, c_out: int, k: int = 3, stride: int = 1, padding: int = 1,
                 seed: int = 0, dtype: DType = DType.BINARY64, name: str = "conv"):
        super().__init__()
        self.stride = stride
        self.padding = padding
        self.name = name
        weight = he_normal(layer_rng(seed, name, 0), (c_out, c_in, k, k), c_in * k * k)
        self.weight = Parameter(weight, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, stride=self.stride, padding=self.padding)


class ChannelLayerNorm(Module):
    def __init__(self, channels: int, eps: float = F.LAYER_NORM_EPS, dtype: DType = DType.BINARY64):
        super().__init__()
        self.eps = eps
        self.gamma = Parameter(np.ones(channels), dtype=dtype)
        self.beta = Parameter(np.zeros(channels), dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return F.channel_layer_norm(x, self.gamma, self.beta, self.eps)


class Linear(Module):
    """y = x W^T + b with W ~ U(-1/sqrt(in), 1/sqrt(in)) and b = 0."""

    def __init__(self, in_features: int, out_features: int, seed: int = 0,
                 dtype: DType = DType.BINARY64, name: str = "linear"):
        super().__init__()
        bound = 1.0 / np.sqrt(in_features)
        weight = layer_rng(seed, name, 0).uniform(-bound, bound, size=(out_features, in_features))
        self.weight = Parameter(weight, dtype=dtype)
        self.bias = Parameter(np.zeros(out_features), dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class ConvBlock(Module):
    """conv (static or ARC) -> channel layer norm -> relu."""

    def __init__(self, conv: Union[Conv2d, ArcLayer], channels: int, eps: float = F.LAYER_NORM_EPS,
                 dtype: DType = DType.BINARY64):
        super().__init__()
        self.conv = conv
        self.norm = ChannelLayerNorm(channels, eps, dtype)

    @property
    def is_arc(self) -> bool:
        return isinstance(self.conv, ArcLayer)

    def forward(self, x: Tensor) -> Tensor:
        return F.relu(self.norm(self.conv(x)))
