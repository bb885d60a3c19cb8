"""Base class for all verification checks."""

import logging
import math
import time
from abc import ABC, abstractmethod
from typing import Any, Dict, NamedTuple, Optional

from arcconv.models.reports import CheckReport, CheckStatus, Comparison

logger = logging.getLogger(__name__)


class CheckOutcome(NamedTuple):
    """What a check measured: its worst-case metric plus diagnostics."""
    metric: float
    details: Dict[str, Any]
    fingerprint: str = ""


class BaseCheck(ABC):
    """Abstract base class for all checks.

    Subclasses implement `run()`; `execute()` times it and turns the outcome
    into a CheckReport. A check never raises: any exception becomes a FAIL
    report with the message recorded.
    """

    def __init__(self, name: str, tolerance: float, metric_name: str,
                 comparison: Comparison = Comparison.AT_MOST):
        self.name = name
        self.tolerance = tolerance
        self.metric_name = metric_name
        self.comparison = comparison
        self.status: Optional[CheckStatus] = None
        self.execution_start_time: Optional[float] = None

    @abstractmethod
    def run(self) -> CheckOutcome:
        """Measure the check's metric."""

    def execute(self) -> CheckReport:
        """Run the check and report pass/fail against the tolerance."""
        self.execution_start_time = time.perf_counter()
        try:
            outcome = self.run()
            report = CheckReport(name=self.name, metric=outcome.metric, tolerance=self.tolerance,
                                 metric_name=self.metric_name, comparison=self.comparison,
                                 fingerprint=outcome.fingerprint, details=outcome.details,
                                 elapsed=self._elapsed())
        except Exception as e:
            logger.error("%s raised %s: %s", self.name, type(e).__name__, e)
            report = CheckReport(name=self.name, metric=math.nan, tolerance=self.tolerance,
                                 metric_name=self.metric_name, comparison=self.comparison,
                                 error_message=f"{type(e).__name__}: {e}", elapsed=self._elapsed())
        self.status = report.status
        logger.info("%s: %s (%s=%.3e, tolerance %.1e, %.2fs)", self.name, report.status.value,
                    self.metric_name, report.metric, self.tolerance, report.elapsed)
        return report

    def _elapsed(self) -> float:
        if self.execution_start_time is None:
            return 0.0
        return time.perf_counter() - self.execution_start_time
