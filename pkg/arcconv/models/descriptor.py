"""Network descriptors: layer lists used for building and for cost counting."""

from enum import Enum
from typing import Iterator, List

from pydantic import BaseModel, Field, model_validator


class LayerKind(str, Enum):
    """Kinds of layer a descriptor may list."""
    CONV = "conv"
    ARC_CONV = "arc-conv"
    NORM = "norm"
    RELU = "relu"
    POOL = "pool"
    LINEAR = "linear"


class LayerRecord(BaseModel):
    """One (possibly repeated) layer.

    `block_start` marks the first layer of a residual block; records with
    `shortcut` set form the projection branch of that block: the first one
    reads the block input and the last one must land on the main path's
    channel count. `pool` with k == 0 is a global average pool.
    """
    kind: LayerKind
    c_in: int = Field(ge=1)
    c_out: int = Field(ge=1)
    k: int = Field(default=1, ge=0)
    stride: int = Field(default=1, ge=1)
    padding: int = Field(default=0, ge=0)
    groups: int = Field(default=1, ge=1)
    n: int = Field(default=1, ge=1)
    count: int = Field(default=1, ge=1)
    bias: bool = False
    block_start: bool = False
    shortcut: bool = False
    name: str = ""

    @model_validator(mode="after")
    def _check_record(self) -> "LayerRecord":
        if self.kind is LayerKind.ARC_CONV and self.k < 3:
            raise ValueError("1x1 convolutions are rotation invariant and are never wrapped in ARC")
        if self.kind in (LayerKind.NORM, LayerKind.RELU, LayerKind.POOL) and self.c_in != self.c_out:
            raise ValueError(f"{self.kind.value} layers keep the channel count")
        if self.kind in (LayerKind.CONV, LayerKind.ARC_CONV):
            if self.k < 1:
                raise ValueError("convolution kernel size must be >= 1")
            if self.c_in % self.groups or self.c_out % self.groups:
                raise ValueError("groups must divide both channel counts")
        if self.count > 1 and self.c_in != self.c_out:
            raise ValueError("repeated layers must keep the channel count")
        return self

    def output_hw(self, hw: int) -> int:
        """Spatial extent after this record (one repetition)."""
        if self.kind is LayerKind.POOL and self.k == 0:
            return 1
        if self.kind in (LayerKind.CONV, LayerKind.ARC_CONV, LayerKind.POOL):
            return (hw + 2 * self.padding - self.k) // self.stride + 1
        return hw


class NetworkDescriptor(BaseModel):
    """Ordered layer list; adjacent channel counts must chain."""
    name: str = "network"
    in_channels: int = Field(default=1, ge=1)
    layers: List[LayerRecord] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_chain(self) -> "NetworkDescriptor":
        main = self.in_channels
        block_in = main
        branch = None
        for index, layer in enumerate(self.expanded()):
            if layer.shortcut:
                source = block_in if branch is None else branch
                if layer.c_in != source:
                    raise ValueError(f"layer {index} ({layer.name or layer.kind.value}): "
                                     f"shortcut expects {source} channels, got {layer.c_in}")
                branch = layer.c_out
                continue
            if branch is not None and branch != main:
                raise ValueError(f"shortcut branch ends with {branch} channels, main path has {main}")
            branch = None
            if layer.block_start:
                block_in = main
            if layer.c_in != main:
                raise ValueError(f"layer {index} ({layer.name or layer.kind.value}): "
                                 f"expects {layer.c_in} channels, previous layer gives {main}")
            main = layer.c_out
        if branch is not None and branch != main:
            raise ValueError(f"shortcut branch ends with {branch} channels, main path has {main}")
        return self

    def expanded(self) -> Iterator[LayerRecord]:
        """Iterate records with `count` repetitions unrolled."""
        for layer in self.layers:
            for _ in range(layer.count):
                yield layer

    @property
    def out_channels(self) -> int:
        main = self.in_channels
        for layer in self.expanded():
            if not layer.shortcut:
                main = layer.c_out
        return main
