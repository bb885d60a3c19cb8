"""Descriptor presets: the toy network and a counting-only ResNet-50 backbone."""

from typing import Iterable, List, Sequence

from pydantic import ValidationError

from arcconv.core.errors import ConfigurationError
from arcconv.core.network import BLOCKS_PER_STAGE, DEFAULT_WIDTHS, STAGE_LAYOUT, stage_attribute
from arcconv.models.configs import Stage, TrainMode
from arcconv.models.descriptor import LayerKind, LayerRecord, NetworkDescriptor

# ResNet-50 (v1.5: stride on the 3x3 of each stage's first bottleneck)
RESNET50_STAGES = {1: (64, 3, 1), 2: (128, 4, 2), 3: (256, 6, 2), 4: (512, 3, 2)}
RESNET50_EXPANSION = 4
ARC_ELIGIBLE_STAGES = frozenset({2, 3, 4})


def _conv_block(records: List[LayerRecord], c_in: int, c_out: int, stride: int, name: str,
                arc: bool, n: int) -> None:
    kind = LayerKind.ARC_CONV if arc else LayerKind.CONV
    records.append(LayerRecord(kind=kind, c_in=c_in, c_out=c_out, k=3, stride=stride, padding=1,
                               n=n if arc else 1, name=name))
    records.append(LayerRecord(kind=LayerKind.NORM, c_in=c_out, c_out=c_out, name=name + ".norm"))
    records.append(LayerRecord(kind=LayerKind.RELU, c_in=c_out, c_out=c_out))


def smallnet_descriptor(mode: TrainMode = TrainMode.STATIC, n: int = 4,
                        stages: Iterable[Stage] = (Stage.A, Stage.B, Stage.C),
                        widths: Sequence[int] = DEFAULT_WIDTHS, bins: int = 8,
                        in_channels: int = 1) -> NetworkDescriptor:
    """Descriptor of `SmallNet`; its parameter count equals the built model's."""
    mode = TrainMode(mode)
    arc_stages = {Stage(s) for s in stages} if mode is TrainMode.ARC else set()
    records: List[LayerRecord] = []
    _conv_block(records, in_channels, widths[0], 1, "stem.conv", False, 1)
    c_prev = widths[0]
    for stage in (Stage.A, Stage.B, Stage.C):
        width_index, first_stride = STAGE_LAYOUT[stage]
        for b in range(BLOCKS_PER_STAGE):
            _conv_block(records, c_prev, widths[width_index], first_stride if b == 0 else 1,
                        f"{stage_attribute(stage)}.{b}.conv", stage in arc_stages, n)
            c_prev = widths[width_index]
    records.append(LayerRecord(kind=LayerKind.POOL, c_in=c_prev, c_out=c_prev, k=0))
    records.append(LayerRecord(kind=LayerKind.LINEAR, c_in=c_prev, c_out=bins, bias=True, name="head"))
    return NetworkDescriptor(name=f"smallnet-{mode.value}", in_channels=in_channels, layers=records)


def resnet50_descriptor(replace_stages: Iterable[int] = (2, 3, 4), n: int = 1,
                        include_strided: bool = True) -> NetworkDescriptor:
    """Convolutional backbone of ResNet-50 (no classifier) with ARC on chosen stages.

    Only 3x3 convolutions of the listed stages are replaced; 1x1 convolutions
    stay static. With `include_strided` off, each stage's stride-2 3x3 also
    stays static. Counting only: this descriptor is never executed.
    """
    replace = set(replace_stages)
    if not replace <= ARC_ELIGIBLE_STAGES:
        raise ConfigurationError(f"only stages {sorted(ARC_ELIGIBLE_STAGES)} may be replaced, "
                                 f"got {sorted(replace)}")
    if n < 1:
        raise ConfigurationError("n must be >= 1")

    R = LayerRecord
    records: List[LayerRecord] = [
        R(kind=LayerKind.CONV, c_in=3, c_out=64, k=7, stride=2, padding=3, name="conv1"),
        R(kind=LayerKind.NORM, c_in=64, c_out=64, name="bn1"),
        R(kind=LayerKind.RELU, c_in=64, c_out=64),
        R(kind=LayerKind.POOL, c_in=64, c_out=64, k=3, stride=2, padding=1, name="maxpool"),
    ]
    c_prev = 64
    for stage, (width, blocks, stride) in RESNET50_STAGES.items():
        c_out = width * RESNET50_EXPANSION
        for b in range(blocks):
            name = f"layer{stage}.{b}"
            s = stride if b == 0 else 1
            arc = stage in replace and (include_strided or s == 1)
            records += [
                R(kind=LayerKind.CONV, c_in=c_prev, c_out=width, k=1, block_start=True, name=name + ".conv1"),
                R(kind=LayerKind.NORM, c_in=width, c_out=width),
                R(kind=LayerKind.RELU, c_in=width, c_out=width),
                R(kind=LayerKind.ARC_CONV if arc else LayerKind.CONV, c_in=width, c_out=width, k=3,
                  stride=s, padding=1, n=n if arc else 1, name=name + ".conv2"),
                R(kind=LayerKind.NORM, c_in=width, c_out=width),
                R(kind=LayerKind.RELU, c_in=width, c_out=width),
                R(kind=LayerKind.CONV, c_in=width, c_out=c_out, k=1, name=name + ".conv3"),
                R(kind=LayerKind.NORM, c_in=c_out, c_out=c_out),
            ]
            if b == 0:
                records += [
                    R(kind=LayerKind.CONV, c_in=c_prev, c_out=c_out, k=1, stride=s, shortcut=True,
                      name=name + ".downsample"),
                    R(kind=LayerKind.NORM, c_in=c_out, c_out=c_out, shortcut=True),
                ]
            records.append(R(kind=LayerKind.RELU, c_in=c_out, c_out=c_out))
            c_prev = c_out
    try:
        return NetworkDescriptor(name=f"resnet50-n{n}", in_channels=3, layers=records)
    except ValidationError as exc:
        raise ConfigurationError(str(exc)) from exc
