"""Tests for the verification orchestrator."""

import pytest

from arcconv.analysis.base_check import BaseCheck, CheckOutcome
from arcconv.analysis.benchmark import BenchmarkCheck
from arcconv.core.orchestrator import VerificationOrchestrator
from arcconv.models.reports import CheckStatus


class _StubCheck(BaseCheck):
    def __init__(self, name: str, metric: float):
        super().__init__(name, 1.0, "value")
        self.metric = metric

    def run(self) -> CheckOutcome:
        return CheckOutcome(metric=self.metric, details={})


class TestVerificationOrchestrator:
    """Test cases for VerificationOrchestrator."""

    @pytest.fixture
    def orchestrator(self):
        return VerificationOrchestrator(seed=0)

    def test_orchestrator_initialization(self, orchestrator):
        """Test orchestrator initialization."""
        assert orchestrator.seed == 0
        assert orchestrator.include_bench is False
        assert orchestrator.active_tasks == {}

    def test_default_phases(self, orchestrator):
        """Test the phase layout without benchmarks."""
        phases = orchestrator.phases()
        assert list(phases) == ["equivalence", "gradients", "cost"]
        assert [check.name for check in phases["equivalence"]] == ["equiv:binary64", "equiv:binary32"]
        assert len(phases["gradients"]) == 4
        assert [check.name for check in phases["cost"]] == ["cost:param-delta", "cost:flop-growth"]

    def test_bench_phase(self):
        """Test that benchmarks are appended on request."""
        phases = VerificationOrchestrator(include_bench=True).phases()
        assert list(phases)[-1] == "bench"
        assert all(isinstance(check, BenchmarkCheck) for check in phases["bench"])

    def test_run_suite_success(self, orchestrator):
        """Test a run where every check passes."""
        orchestrator.phases = lambda: {"one": [_StubCheck("a", 0.1)], "two": [_StubCheck("b", 0.2)]}
        result = orchestrator.run_suite("run-1")
        assert result["status"] == "success"
        assert result["run_id"] == "run-1"
        assert [report.name for report in result["reports"]] == ["a", "b"]
        assert result["failed"] == []
        assert result["execution_time"] >= 0.0

    def test_run_suite_failed(self, orchestrator):
        """Test that failing checks are listed by name."""
        orchestrator.phases = lambda: {"one": [_StubCheck("a", 0.1), _StubCheck("b", 5.0)]}
        result = orchestrator.run_suite("run-2")
        assert result["status"] == "failed"
        assert result["failed"] == ["b"]
        assert orchestrator.active_tasks["run-2"]["status"] is CheckStatus.FAIL

    def test_get_task_status(self, orchestrator):
        """Test progress reporting for a finished run."""
        orchestrator.phases = lambda: {"only": [_StubCheck("a", 0.0)]}
        orchestrator.run_suite("run-3")
        status = orchestrator.get_task_status("run-3")
        assert status["status"] is CheckStatus.PASS
        assert status["progress"] == 100
        assert status["current_phase"] == "only"

    def test_get_task_status_unknown(self, orchestrator):
        """Test status lookup for an unknown run."""
        assert orchestrator.get_task_status("missing") == {"error": "Task not found"}

    def test_suite_error(self, orchestrator):
        """Test that an exception outside the checks becomes an error response."""
        def broken():
            raise RuntimeError("no phases")

        orchestrator.phases = broken
        result = orchestrator.run_suite("run-4")
        assert result["status"] == "error"
        assert result["error_type"] == "Suite execution failed"
        assert result["message"] == "no phases"
        assert result["reports"] == []
        assert orchestrator.active_tasks["run-4"]["status"] is CheckStatus.FAIL

    def test_create_error_response(self, orchestrator):
        """Test error response creation."""
        response = orchestrator._create_error_response("run-5", "Test Error", "message")
        assert response["status"] == "error"
        assert response["run_id"] == "run-5"
        assert response["error_type"] == "Test Error"
