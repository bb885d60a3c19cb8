"""Parameter and FLOP counting over network descriptors.

FLOPs count multiplies and adds separately (2 per multiply-accumulate). The
convolution term of an ARC layer is counted once whatever the expert count;
only its routing and rotation/combination terms grow with n.
"""

from typing import Iterable, List, Optional, Sequence

from arcconv.analysis.base_check import BaseCheck, CheckOutcome
from arcconv.core.descriptors import resnet50_descriptor
from arcconv.models.descriptor import LayerKind, LayerRecord, NetworkDescriptor
from arcconv.models.reports import (CheckReport, CostEstimate, CostItem, KernelScalingRow,
                                    KernelScalingSummary)

NORM_FLOPS_PER_ELEMENT = 4  # subtract mean, scale by 1/std, affine multiply and add
ROTATION_FLOPS_PER_ELEMENT = 4  # bilinear resample plus weighted accumulation, per expert
ROUTING_KERNEL = 3

# kernel-number ablation reference: 52.25M - 41.18M per added kernel
REFERENCE_PARAM_DELTA = 11.07e6
PARAM_DELTA_TOLERANCE = 0.03
FLOP_GROWTH_BOUND = 0.0015


def routing_params(c_in: int, n: int) -> int:
    """Depthwise 3x3, layer-norm affine, bias-free angle head, biased combination head."""
    return c_in * ROUTING_KERNEL * ROUTING_KERNEL + 2 * c_in + 2 * n * c_in + n


def routing_flops(c_in: int, hw: int, n: int) -> int:
    plane = c_in * hw * hw
    encoder = 2 * ROUTING_KERNEL * ROUTING_KERNEL * plane + NORM_FLOPS_PER_ELEMENT * plane + plane
    pool = plane
    heads = 2 * 2 * c_in * n + 2 * n
    return encoder + pool + heads


class CostEstimator:
    """Walks a descriptor, tracking spatial size along the main path and shortcut branches."""

    def __init__(self, descriptor: NetworkDescriptor):
        self.descriptor = descriptor

    def estimate(self, input_hw: int) -> CostEstimate:
        breakdown: List[CostItem] = []
        hw = block_hw = input_hw
        branch_hw: Optional[int] = None
        for layer in self.descriptor.expanded():
            if layer.shortcut:
                source = block_hw if branch_hw is None else branch_hw
                out = layer.output_hw(source)
                breakdown += self.layer_cost(layer, source, out)
                branch_hw = out
                continue
            branch_hw = None
            if layer.block_start:
                block_hw = hw
            out = layer.output_hw(hw)
            breakdown += self.layer_cost(layer, hw, out)
            hw = out
        return CostEstimate(input_hw=input_hw, breakdown=breakdown)

    @staticmethod
    def layer_cost(layer: LayerRecord, hw_in: int, hw_out: int) -> List[CostItem]:
        kind = layer.kind
        if kind in (LayerKind.CONV, LayerKind.ARC_CONV):
            kernel = layer.c_out * (layer.c_in // layer.groups) * layer.k * layer.k
            conv_flops = 2 * kernel * hw_out * hw_out
            bias = layer.c_out if layer.bias else 0
            bias_flops = bias * hw_out * hw_out
            if kind is LayerKind.CONV:
                return [CostItem(kind="conv", params=kernel + bias, flops=conv_flops + bias_flops)]
            return [
                CostItem(kind="arc-conv", params=layer.n * kernel + bias, flops=conv_flops + bias_flops),
                CostItem(kind="arc-routing", params=routing_params(layer.c_in, layer.n),
                         flops=routing_flops(layer.c_in, hw_in, layer.n)),
                CostItem(kind="arc-rotation", params=0, flops=ROTATION_FLOPS_PER_ELEMENT * layer.n * kernel),
            ]
        if kind is LayerKind.NORM:
            return [CostItem(kind="norm", params=2 * layer.c_in,
                             flops=NORM_FLOPS_PER_ELEMENT * layer.c_in * hw_in * hw_in)]
        if kind is LayerKind.RELU:
            return [CostItem(kind="relu", flops=layer.c_in * hw_in * hw_in)]
        if kind is LayerKind.POOL:
            window = hw_in * hw_in if layer.k == 0 else layer.k * layer.k
            return [CostItem(kind="pool", flops=layer.c_in * hw_out * hw_out * window)]
        bias = layer.c_out if layer.bias else 0
        return [CostItem(kind="linear", params=layer.c_in * layer.c_out + bias,
                         flops=2 * layer.c_in * layer.c_out + bias)]


def estimate_cost(descriptor: NetworkDescriptor, input_hw: int) -> CostEstimate:
    return CostEstimator(descriptor).estimate(input_hw)


def kernel_scaling_summary(stages: Iterable[int] = (2, 3, 4), include_strided: bool = True,
                           ns: Sequence[int] = (1, 2, 4, 6), input_hw: int = 1024) -> KernelScalingSummary:
    """ResNet-50 cost at each expert count in `ns`."""
    stages = sorted(set(stages))
    rows = []
    for n in sorted(ns):
        estimate = estimate_cost(resnet50_descriptor(stages, n, include_strided), input_hw)
        rows.append(KernelScalingRow(n=n, params=estimate.params, flops=estimate.flops,
                                     conv_flops=estimate.conv_flops))
    return KernelScalingSummary(stages=stages, include_strided=include_strided, input_hw=input_hw, rows=rows)


class ParamDeltaCheck(BaseCheck):
    """Per-added-kernel parameter delta against the 11.07M reference (relative deviation)."""

    def __init__(self, include_strided: bool = True, tolerance: float = PARAM_DELTA_TOLERANCE):
        super().__init__("cost:param-delta", tolerance, "rel_deviation")
        self.include_strided = include_strided

    def run(self) -> CheckOutcome:
        summary = kernel_scaling_summary(include_strided=self.include_strided, ns=(1, 2))
        delta = summary.param_delta_per_kernel
        return CheckOutcome(metric=abs(delta - REFERENCE_PARAM_DELTA) / REFERENCE_PARAM_DELTA,
                            details={"delta": delta, "reference": REFERENCE_PARAM_DELTA},
                            fingerprint=f"resnet50,stages=2,3,4,strided={int(self.include_strided)}")


class FlopGrowthCheck(BaseCheck):
    """FLOP growth from n=1 to n=6 at 1024x1024, relative to backbone conv FLOPs."""

    def __init__(self, include_strided: bool = True, tolerance: float = FLOP_GROWTH_BOUND):
        super().__init__("cost:flop-growth", tolerance, "flop_growth")
        self.include_strided = include_strided

    def run(self) -> CheckOutcome:
        summary = kernel_scaling_summary(include_strided=self.include_strided, ns=(1, 6))
        return CheckOutcome(metric=summary.flop_growth,
                            details={"flops": [row.flops for row in summary.rows],
                                     "conv_flops": summary.rows[0].conv_flops},
                            fingerprint=f"resnet50,hw=1024,strided={int(self.include_strided)}")


def check_param_delta(include_strided: bool = True) -> CheckReport:
    return ParamDeltaCheck(include_strided).execute()


def check_flop_growth(include_strided: bool = True) -> CheckReport:
    return FlopGrowthCheck(include_strided).execute()
