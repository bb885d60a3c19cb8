"""The toy orientation classifier in static or ARC mode."""

import logging
from typing import Iterable, List, Optional, Sequence, Union

from pydantic import ValidationError

from arcconv.config import settings
from arcconv.core import functional as F
from arcconv.core.arc_layer import ArcLayer
from arcconv.core.errors import ConfigurationError
from arcconv.core.layers import ChannelLayerNorm, Conv2d, ConvBlock, Linear
from arcconv.core.module import Module, Sequential
from arcconv.core.tensor import Tensor
from arcconv.models.configs import ArcLayerConfig, DType, RoutingToggles, Stage, TrainConfig, TrainMode

logger = logging.getLogger(__name__)

DEFAULT_WIDTHS = (16, 32, 64)
BLOCKS_PER_STAGE = 2
# stage -> (index into widths, stride of the stage's first block)
STAGE_LAYOUT = {Stage.A: (0, 1), Stage.B: (1, 2), Stage.C: (2, 2)}


def stage_attribute(stage: Stage) -> str:
    return f"stage_{stage.value.lower()}"


class SmallNet(Module):
    """stem -> stages A, B, C (two conv blocks each) -> global pool -> linear head.

    The stem is always a static convolution. In ARC mode the 3x3 convolutions
    of the chosen stages become ARC layers; everything else is shared with the
    static network built from the same seed.
    """

    def __init__(self, mode: TrainMode = TrainMode.STATIC, n: int = 4,
                 stages: Iterable[Stage] = (Stage.A, Stage.B, Stage.C),
                 widths: Sequence[int] = DEFAULT_WIDTHS, bins: int = 8, in_channels: int = 1,
                 angle_coefficient: float = 3.141592653589793,
                 toggles: Optional[RoutingToggles] = None, seed: int = 0,
                 dtype: DType = DType.BINARY32, eps: float = F.LAYER_NORM_EPS):
        super().__init__()
        if len(widths) != 3 or min(widths) < 1:
            raise ConfigurationError(f"widths must be three positive channel counts, got {widths}")
        self.mode = TrainMode(mode)
        self.n = n
        self.arc_stages: List[Stage] = []
        if self.mode is TrainMode.ARC:
            self.arc_stages = sorted({Stage(s) for s in stages}, key=lambda s: s.value)
        self.widths = tuple(widths)
        self.bins = bins
        self.in_channels = in_channels
        self.dtype = dtype

        stem_conv = Conv2d(in_channels, widths[0], k=3, stride=1, padding=1, seed=seed, dtype=dtype,
                           name="stem.conv")
        self.stem = ConvBlock(stem_conv, widths[0], eps, dtype)

        c_prev = widths[0]
        for stage in (Stage.A, Stage.B, Stage.C):
            width_index, first_stride = STAGE_LAYOUT[stage]
            width = widths[width_index]
            blocks = []
            for b in range(BLOCKS_PER_STAGE):
                name = f"{stage_attribute(stage)}.{b}.conv"
                stride = first_stride if b == 0 else 1
                if stage in self.arc_stages:
                    config = ArcLayerConfig(n=n, k=3, c_in=c_prev, c_out=width, stride=stride, padding=1,
                                            angle_coefficient=angle_coefficient,
                                            toggles=toggles or RoutingToggles())
                    conv = ArcLayer(config, seed=seed, dtype=dtype, name=name)
                else:
                    conv = Conv2d(c_prev, width, k=3, stride=stride, padding=1, seed=seed, dtype=dtype,
                                  name=name)
                blocks.append(ConvBlock(conv, width, eps, dtype))
                c_prev = width
            setattr(self, stage_attribute(stage), Sequential(*blocks))

        self.head = Linear(widths[2], bins, seed=seed, dtype=dtype, name="head")

    def forward(self, x: Tensor) -> Tensor:
        h = self.stem(x)
        for stage in (Stage.A, Stage.B, Stage.C):
            h = getattr(self, stage_attribute(stage))(h)
        return self.head(F.global_avg_pool(h))

    def arc_layers(self) -> List[ArcLayer]:
        return [m for m in self.modules() if isinstance(m, ArcLayer)]

    def norm_layers(self) -> List[ChannelLayerNorm]:
        return [m for m in self.modules() if isinstance(m, ChannelLayerNorm)]

    def set_routing_override(self, theta=None, lam=None) -> None:
        for layer in self.arc_layers():
            layer.set_routing_override(theta, lam)

    def clear_routing_override(self) -> None:
        for layer in self.arc_layers():
            layer.clear_routing_override()


def build_smallnet(mode: Union[TrainMode, str, None] = None, config: Optional[TrainConfig] = None,
                   widths: Optional[Sequence[int]] = None, in_channels: int = 1) -> SmallNet:
    """Build the toy network for `config` (mode overrides config.mode when given)."""
    try:
        config = config or TrainConfig()
        mode = TrainMode(mode) if mode is not None else config.mode
    except (ValidationError, ValueError) as exc:
        raise ConfigurationError(str(exc)) from exc
    if mode is TrainMode.ARC and not config.stages:
        raise ConfigurationError("arc mode needs at least one stage to replace")

    model = SmallNet(mode=mode, n=config.n, stages=config.stages, widths=widths or DEFAULT_WIDTHS,
                     bins=config.bins, in_channels=in_channels,
                     angle_coefficient=config.angle_coefficient, toggles=config.toggles,
                     seed=config.seed, dtype=config.dtype, eps=settings.layer_norm_eps)
    logger.info("built smallnet: mode=%s n=%d stages=%s params=%d", mode.value, config.n,
                ",".join(s.value for s in model.arc_stages) or "-", model.num_parameters())
    return model
