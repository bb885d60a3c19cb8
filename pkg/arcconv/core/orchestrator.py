"""Verification orchestrator that runs the full check suite."""

import logging
import time
from typing import Any, Dict, List, Optional

from arcconv.analysis.base_check import BaseCheck
from arcconv.analysis.benchmark import BenchmarkCheck
from arcconv.analysis.cost_estimator import FlopGrowthCheck, ParamDeltaCheck
from arcconv.analysis.equivalence_check import EquivalenceCheck
from arcconv.analysis.gradient_check import TARGETS, GradientCheck
from arcconv.config import settings
from arcconv.models.configs import ArcLayerConfig, DType
from arcconv.models.reports import CheckReport, CheckStatus

logger = logging.getLogger(__name__)

BENCH_INPUT = (8, 64, 56, 56)


class VerificationOrchestrator:
    """Runs equivalence, gradient and cost checks (plus optional benchmarks) phase by phase."""

    def __init__(self, seed: Optional[int] = None, include_bench: bool = False):
        self.seed = settings.default_seed if seed is None else seed
        self.include_bench = include_bench
        self.active_tasks: Dict[str, Dict[str, Any]] = {}

    def phases(self) -> Dict[str, List[BaseCheck]]:
        phases: Dict[str, List[BaseCheck]] = {
            "equivalence": [EquivalenceCheck(dtype=DType.BINARY64, seed=self.seed),
                            EquivalenceCheck(dtype=DType.BINARY32, seed=self.seed)],
            "gradients": [GradientCheck(target, seed=self.seed) for target in TARGETS],
            "cost": [ParamDeltaCheck(), FlopGrowthCheck()],
        }
        if self.include_bench:
            phases["bench"] = [
                BenchmarkCheck(ArcLayerConfig(n=4, k=3, c_in=64, c_out=64), BENCH_INPUT, seed=self.seed),
                BenchmarkCheck(ArcLayerConfig(n=1, k=3, c_in=64, c_out=64), BENCH_INPUT, seed=self.seed),
            ]
        return phases

    def run_suite(self, run_id: Optional[str] = None) -> Dict[str, Any]:
        """Run every phase in order and aggregate the reports."""

        run_id = run_id or f"verify_{int(time.time())}"
        self.active_tasks[run_id] = {
            "status": CheckStatus.RUNNING,
            "start_time": time.time(),
            "current_phase": None,
            "progress": 0,
        }

        try:
            phases = self.phases()
            total = sum(len(checks) for checks in phases.values())
            reports: List[CheckReport] = []
            for phase, checks in phases.items():
                self.active_tasks[run_id]["current_phase"] = phase
                logger.info("phase %s: %d check(s)", phase, len(checks))
                for check in checks:
                    reports.append(check.execute())
                    self.active_tasks[run_id]["progress"] = int(100 * len(reports) / total)

            failed = [report.name for report in reports if not report.passed]
            status = CheckStatus.FAIL if failed else CheckStatus.PASS
            self.active_tasks[run_id]["status"] = status
            self.active_tasks[run_id]["progress"] = 100
            logger.info("verify %s: %d/%d checks passed", run_id, total - len(failed), total)

            return {
                "status": "success" if not failed else "failed",
                "run_id": run_id,
                "reports": reports,
                "failed": failed,
                "execution_time": time.time() - self.active_tasks[run_id]["start_time"],
            }

        except Exception as e:
            logger.error("verify %s aborted: %s", run_id, e)
            return self._create_error_response(run_id, "Suite execution failed", str(e))

    def _create_error_response(self, run_id: str, error_type: str, message: str) -> Dict[str, Any]:
        """Create standardized error response."""

        if run_id in self.active_tasks:
            self.active_tasks[run_id]["status"] = CheckStatus.FAIL

        return {
            "status": "error",
            "run_id": run_id,
            "error_type": error_type,
            "message": message,
            "reports": [],
            "failed": [],
        }

    def get_task_status(self, run_id: str) -> Dict[str, Any]:
        """Current phase and progress of a suite run."""

        if run_id not in self.active_tasks:
            return {"error": "Task not found"}

        task_info = self.active_tasks[run_id]
        return {
            "run_id": run_id,
            "status": task_info["status"],
            "progress": task_info["progress"],
            "current_phase": task_info.get("current_phase"),
            "elapsed_time": time.time() - task_info["start_time"],
        }
