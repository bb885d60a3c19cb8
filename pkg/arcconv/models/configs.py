"""Configuration models for layers, datasets and training runs."""

import math
from enum import Enum
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator


class DType(str, Enum):
    """Floating-point formats a Tensor may carry."""
    BINARY32 = "binary32"
    BINARY64 = "binary64"

    @property
    def numpy_dtype(self) -> np.dtype:
        return np.dtype(np.float32) if self is DType.BINARY32 else np.dtype(np.float64)

    @property
    def code(self) -> int:
        """Dtype code used by the weight archive."""
        return 0 if self is DType.BINARY32 else 1

    @classmethod
    def from_numpy(cls, dtype) -> "DType":
        dtype = np.dtype(dtype)
        if dtype == np.float32:
            return cls.BINARY32
        if dtype == np.float64:
            return cls.BINARY64
        raise ValueError(f"unsupported dtype {dtype}")


class TrainMode(str, Enum):
    """Toy network flavours."""
    STATIC = "static"
    ARC = "arc"


class Stage(str, Enum):
    """Stages of the toy network that may host ARC layers."""
    A = "A"
    B = "B"
    C = "C"


class RoutingToggles(BaseModel):
    """Routing-structure ablation switches."""
    spatial_encoding: bool = True
    adaptive_combination: bool = True
    adaptive_rotation: bool = True


class ArcLayerConfig(BaseModel):
    """Shape and behaviour of one ARC layer."""
    n: int = Field(default=4, ge=1)
    k: int = Field(default=3, ge=1)
    c_in: int = Field(default=4, ge=1)
    c_out: int = Field(default=4, ge=1)
    stride: int = Field(default=1, ge=1)
    padding: Optional[int] = Field(default=None, ge=0)
    angle_coefficient: float = Field(default=math.pi, ge=0.0)  # radians
    toggles: RoutingToggles = Field(default_factory=RoutingToggles)

    @model_validator(mode="after")
    def _default_padding(self) -> "ArcLayerConfig":
        if self.padding is None:
            self.padding = self.k // 2
        return self

    def fingerprint(self) -> str:
        t = self.toggles
        return (f"n={self.n},k={self.k},cin={self.c_in},cout={self.c_out},s={self.stride},"
                f"p={self.padding},coeff={self.angle_coefficient:.6g},"
                f"se={int(t.spatial_encoding)},ac={int(t.adaptive_combination)},ar={int(t.adaptive_rotation)}")


class DatasetConfig(BaseModel):
    """Oriented-bar dataset parameters."""
    image_size: int = Field(default=32, ge=4)
    bar_length: float = Field(default=20.0, gt=0.0)
    bar_width: float = Field(default=4.0, gt=0.0)
    bins: int = Field(default=8, ge=2)
    jitter: float = Field(default=2.0, ge=0.0)
    noise_sigma: float = Field(default=0.05, ge=0.0)
    supersample: int = Field(default=4, ge=1)
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _bar_fits(self) -> "DatasetConfig":
        reach = math.hypot(self.bar_length / 2.0, self.bar_width / 2.0) + self.jitter
        if reach > self.image_size / 2.0:
            raise ValueError(
                f"bar of {self.bar_length}x{self.bar_width} px with jitter {self.jitter} "
                f"does not fit a {self.image_size}px image"
            )
        return self


class TrainConfig(BaseModel):
    """Everything the `train` command accepts; also the RunConfigFile schema."""
    model_config = {"extra": "forbid"}

    mode: TrainMode = TrainMode.ARC
    n: int = Field(default=4, ge=1)
    stages: List[Stage] = Field(default_factory=lambda: [Stage.A, Stage.B, Stage.C])
    epochs: int = Field(default=8, ge=1)
    batch_size: int = Field(default=32, ge=1)
    lr: float = Field(default=0.05, ge=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    backbone_lr_scale: float = Field(default=0.1, ge=0.0)
    seed: int = Field(default=0, ge=0)
    coeff_deg: float = Field(default=180.0, ge=0.0)
    spatial_encoding: bool = True
    adaptive_combination: bool = True
    adaptive_rotation: bool = True
    train_count: int = Field(default=1600, ge=1)
    test_count: int = Field(default=400, ge=1)
    image_size: int = Field(default=32, ge=8)
    bins: int = Field(default=8, ge=2)
    dtype: DType = DType.BINARY32

    @field_validator("stages", mode="before")
    @classmethod
    def _split_stages(cls, value):
        if isinstance(value, str):
            return [part.strip() for part in value.split(",") if part.strip()]
        return value

    @field_validator("stages")
    @classmethod
    def _unique_stages(cls, value: List[Stage]) -> List[Stage]:
        if len(set(value)) != len(value):
            raise ValueError("stages must not repeat")
        return sorted(value, key=lambda s: s.value)

    @model_validator(mode="after")
    def _arc_needs_stages(self) -> "TrainConfig":
        if self.mode is TrainMode.ARC and not self.stages:
            raise ValueError("arc mode needs at least one stage to replace")
        return self

    @property
    def angle_coefficient(self) -> float:
        return math.radians(self.coeff_deg)

    @property
    def toggles(self) -> RoutingToggles:
        return RoutingToggles(spatial_encoding=self.spatial_encoding,
                              adaptive_combination=self.adaptive_combination,
                              adaptive_rotation=self.adaptive_rotation)

    def dataset_config(self) -> DatasetConfig:
        """Dataset matching this run; bar geometry scales with the image."""
        scale = self.image_size / 32.0
        return DatasetConfig(image_size=self.image_size, bar_length=20.0 * scale,
                             bar_width=4.0 * scale, jitter=2.0 * scale,
                             bins=self.bins, seed=self.seed)
