"""Result models emitted by checks, the cost estimator, benchmarks and training."""

from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, computed_field


class CheckStatus(str, Enum):
    """Outcome of a check (RUNNING only appears in orchestrator task tracking)."""
    PASS = "pass"
    FAIL = "fail"
    RUNNING = "running"


class Comparison(str, Enum):
    """How a check's metric is compared with its tolerance."""
    AT_MOST = "le"
    AT_LEAST = "ge"


class CheckReport(BaseModel):
    """Outcome of one verification run; status derives only from metric vs tolerance."""
    name: str
    metric: float
    tolerance: float
    metric_name: str = "max_abs_error"
    comparison: Comparison = Comparison.AT_MOST
    fingerprint: str = ""
    details: Dict[str, Any] = Field(default_factory=dict)
    error_message: Optional[str] = None
    elapsed: float = 0.0

    @computed_field
    @property
    def status(self) -> CheckStatus:
        if self.error_message is not None or self.metric != self.metric:
            return CheckStatus.FAIL
        if self.comparison is Comparison.AT_MOST:
            ok = self.metric <= self.tolerance
        else:
            ok = self.metric >= self.tolerance
        return CheckStatus.PASS if ok else CheckStatus.FAIL

    @property
    def passed(self) -> bool:
        return self.status is CheckStatus.PASS

    def csv_row(self) -> List[str]:
        return [self.name, self.status.value, self.metric_name, f"{self.metric:.6e}",
                f"{self.tolerance:.6e}", self.fingerprint]


CHECK_CSV_HEADER = ["name", "status", "metric_name", "metric", "tolerance", "fingerprint"]


class CostItem(BaseModel):
    """Parameter and FLOP count of one layer-kind contribution."""
    kind: str
    params: int = 0
    flops: int = 0


class CostEstimate(BaseModel):
    """Parameter/FLOP estimate of a descriptor; totals are sums of the breakdown."""
    input_hw: int
    breakdown: List[CostItem] = Field(default_factory=list)

    @computed_field
    @property
    def params(self) -> int:
        return sum(item.params for item in self.breakdown)

    @computed_field
    @property
    def flops(self) -> int:
        return sum(item.flops for item in self.breakdown)

    def by_kind(self, kind: str) -> CostItem:
        """Aggregate of every breakdown item of one kind."""
        items = [item for item in self.breakdown if item.kind == kind]
        return CostItem(kind=kind, params=sum(i.params for i in items),
                        flops=sum(i.flops for i in items))

    def kinds(self) -> List[str]:
        seen: List[str] = []
        for item in self.breakdown:
            if item.kind not in seen:
                seen.append(item.kind)
        return seen

    @property
    def conv_flops(self) -> int:
        """Convolution FLOPs of the backbone, static and ARC alike."""
        return self.by_kind("conv").flops + self.by_kind("arc-conv").flops


class BenchReport(BaseModel):
    """Median wall times (ms) of the three convolution paths."""
    fingerprint: str
    input_shape: List[int]
    trials: int
    warmup: int
    static_ms: float
    combined_ms: float
    naive_ms: float

    @computed_field
    @property
    def naive_over_combined(self) -> float:
        return self.naive_ms / self.combined_ms

    @computed_field
    @property
    def combined_over_static(self) -> float:
        return self.combined_ms / self.static_ms


class EpochMetrics(BaseModel):
    """Per-epoch training record."""
    epoch: int
    train_loss: float
    train_acc: float
    test_loss: float
    test_acc: float

    def csv_rows(self) -> List[List[str]]:
        return [
            [str(self.epoch), "train", repr(float(self.train_loss)), repr(float(self.train_acc))],
            [str(self.epoch), "test", repr(float(self.test_loss)), repr(float(self.test_acc))],
        ]


METRICS_CSV_HEADER = ["epoch", "split", "loss", "accuracy"]


class AblationRow(BaseModel):
    """Test accuracy of one stage subset (or the static baseline) over several seeds."""
    stages: str
    seeds: List[int]
    accuracies: List[float]

    @computed_field
    @property
    def mean_accuracy(self) -> float:
        return sum(self.accuracies) / len(self.accuracies) if self.accuracies else float("nan")

    def csv_row(self) -> List[str]:
        return [self.stages, str(len(self.seeds)), repr(float(self.mean_accuracy)),
                " ".join(repr(float(a)) for a in self.accuracies)]


ABLATION_CSV_HEADER = ["stages", "seeds", "mean_accuracy", "accuracies"]


class KernelScalingRow(BaseModel):
    """Cost of the descriptor at one expert count."""
    n: int
    params: int
    flops: int
    conv_flops: int


class KernelScalingSummary(BaseModel):
    """Parameter and FLOP growth of a descriptor as the expert count grows."""
    stages: List[int]
    include_strided: bool
    input_hw: int
    rows: List[KernelScalingRow]

    @computed_field
    @property
    def param_delta_per_kernel(self) -> float:
        first, last = self.rows[0], self.rows[-1]
        if last.n == first.n:
            return 0.0
        return (last.params - first.params) / (last.n - first.n)

    @computed_field
    @property
    def flop_growth(self) -> float:
        """FLOP increase from the smallest to the largest n, relative to backbone conv FLOPs."""
        first, last = self.rows[0], self.rows[-1]
        return (last.flops - first.flops) / first.conv_flops if first.conv_flops else 0.0


KERNEL_SCALING_CSV_HEADER = ["n", "params", "flops", "conv_flops"]
