"""Tests for the invariant gates."""

import pytest

from services.checks import GATES, MODULES, CheckReport, GateResult, run_checks
from state.errors import ConfigError


class TestGateRegistry:
    """Tests for the gate table."""

    def test_every_module_has_gates(self) -> None:
        """Test each module name has at least one gate."""
        assert set(GATES) == set(MODULES)
        assert all(GATES[module] for module in MODULES)


class TestRunChecks:
    """Tests for running gates."""

    @pytest.mark.parametrize("module", MODULES)
    def test_module_passes(self, module: str) -> None:
        """Test the gates of one module pass."""
        report = run_checks(module)
        assert report.passed, report.failed_gates
        assert {r.module for r in report.results} == {module}

    def test_registration_order(self) -> None:
        """Test results come back in registration order."""
        report = run_checks("graph")
        assert [r.name for r in report.results] == ["metropolis_weights", "locality"]

    def test_unknown_module(self) -> None:
        """Test an unknown filter is a ConfigError."""
        with pytest.raises(ConfigError, match="Unknown check module"):
            run_checks("physics")

    def test_gate_exception_becomes_failure(self, monkeypatch: pytest.MonkeyPatch) -> None:
        """Test a gate that raises is reported as failed instead of aborting the run."""

        def broken() -> tuple[bool, str]:
            raise RuntimeError("boom")

        monkeypatch.setitem(GATES, "graph", [("broken", broken)])
        report = run_checks("graph")
        assert not report.passed
        assert report.failed_gates == ["graph.broken"]
        assert "boom" in report.results[0].detail


class TestReport:
    """Tests for report formatting."""

    def test_line(self) -> None:
        """Test the one-line verdict format."""
        assert GateResult("graph", "locality", True, "ok").line() == "PASS graph.locality: ok"
        assert GateResult("saddle", "x", False, "bad").line() == "FAIL saddle.x: bad"

    def test_empty_report_passes(self) -> None:
        """Test a report without gates passes."""
        assert CheckReport(()).passed
