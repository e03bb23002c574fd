"""Tests for the experiment harness and the pdtool command line."""

import json
from pathlib import Path
from typing import Any

import pytest

from config.experiment import parse_experiment
from harness import ExitStatus, run_experiment, run_experiments, versions
from pdtool import main
from state.errors import ConfigError, TopologyError


def scalar(curvature: float, slope: float) -> dict[str, Any]:
    """Oracle document for curvature x^2/2 + slope x."""
    return {"kind": "quadratic", "Q": [[curvature]], "q": [slope]}


@pytest.fixture
def saddle_document() -> dict[str, Any]:
    """x_1^2/2 + x_1 + x_2^2/2 - 2 x_2 subject to x_1 + x_2 = 0, solved by ALM."""
    return {
        "kind": "saddle",
        "name": "witness_alm",
        "blocks": [{"oracle": scalar(1.0, 1.0), "A": [[1.0]]}, {"oracle": scalar(1.0, -2.0), "A": [[1.0]]}],
        "rho": 2.0,
        "method": "alm",
        "max_iters": 200,
    }


@pytest.fixture
def energy_document() -> dict[str, Any]:
    """Cheap and expensive producer on one edge."""
    return {
        "kind": "energy",
        "name": "two_peer",
        "peers": [
            {"consumption": 1.0, "cost": scalar(1.0, 0.5)},
            {"consumption": 1.0, "cost": scalar(2.0, 2.0)},
        ],
        "arcs": [{"edge": [0, 1], "gamma": scalar(0.2, 0.1)}],
        "trading": {"alpha0": 0.1, "step_schedule": "constant", "max_outer": 2000},
    }


@pytest.fixture
def federated_document() -> dict[str, Any]:
    """Three quadratic devices with the FedProx baseline."""
    return {
        "kind": "federated",
        "name": "fed3",
        "devices": [scalar(1.0, -1.0), scalar(1.0, 0.0), scalar(1.0, 2.0)],
        "M": 3,
        "T": 20,
        "baseline": True,
    }


def write_config(directory: Path, document: dict[str, Any]) -> Path:
    """Store a document as <name>.json."""
    path = directory / f"{document['name']}.json"
    path.write_text(json.dumps(document))
    return path


class TestRunExperiment:
    """Tests for routing and output files."""

    def test_saddle(self, saddle_document: dict[str, Any], tmp_path: Path) -> None:
        """Test a saddle run writes its trace and sidecar with metadata."""
        result = run_experiment(parse_experiment(saddle_document), tmp_path)
        assert result.status == ExitStatus.OK
        assert [p.name for p in result.files] == ["witness_alm.csv", "witness_alm.json"]
        sidecar = json.loads((tmp_path / "witness_alm.json").read_text())
        assert len(sidecar["metadata"]["config_hash"]) == 64
        assert sidecar["metadata"]["optimal_value"] == pytest.approx(result.trace.last("objective"), abs=1e-6)
        assert sidecar["metadata"]["versions"] == versions()

    def test_flagged_run(self, saddle_document: dict[str, Any], tmp_path: Path) -> None:
        """Test a diverging Jacobi run finishes with the flagged status."""
        saddle_document["method"] = "jacobi"
        result = run_experiment(parse_experiment(saddle_document), tmp_path)
        assert result.status == ExitStatus.FLAGGED
        assert "diverged" in json.loads((tmp_path / "witness_alm.json").read_text())["flags"]

    def test_consensus(self, consensus_document: dict[str, Any], tmp_path: Path) -> None:
        """Test a consensus run reports the optimal value."""
        result = run_experiment(parse_experiment(consensus_document), tmp_path)
        assert result.status == ExitStatus.OK
        assert result.trace.metadata["optimal_value"] is not None
        assert (tmp_path / "path3.csv").exists()

    def test_consensus_equivalence(self, consensus_document: dict[str, Any], tmp_path: Path) -> None:
        """Test equivalence mode writes a native and a primal-dual trace."""
        consensus_document.update({"equivalence": True, "rho": 10.0})
        result = run_experiment(parse_experiment(consensus_document), tmp_path)
        assert set(result.traces) == {"native", "pd"}
        assert (tmp_path / "path3.native.csv").exists()
        assert (tmp_path / "path3.pd.csv").exists()
        assert result.traces["pd"].metadata["max_deviation"] <= 1e-10

    def test_dynamics(self, consensus_document: dict[str, Any], tmp_path: Path) -> None:
        """Test a dynamics run records the step and the Lyapunov summary."""
        document = {
            "kind": "dynamics",
            "name": "flow3",
            "topology": consensus_document["topology"],
            "agents": consensus_document["agents"],
            "steps": 200,
        }
        result = run_experiment(parse_experiment(document), tmp_path)
        assert result.status == ExitStatus.OK
        assert len(result.trace) == 201
        assert result.trace.metadata["h"] > 0

    def test_federated_with_baseline(self, federated_document: dict[str, Any], tmp_path: Path) -> None:
        """Test the baseline trace is written next to the primary one."""
        result = run_experiment(parse_experiment(federated_document), tmp_path)
        assert set(result.traces) == {"", "fedprox"}
        assert (tmp_path / "fed3.csv").exists()
        assert (tmp_path / "fed3.fedprox.csv").exists()

    def test_federated_bregman_floor(self, federated_document: dict[str, Any]) -> None:
        """Test partial participation raises eta0 to the floor unless disabled."""
        stabilized = run_experiment(parse_experiment(federated_document))
        assert stabilized.trace.metadata["eta0"] == pytest.approx(2.25)
        federated_document["auto_bregman"] = False
        raw = run_experiment(parse_experiment(federated_document))
        assert raw.trace.metadata["eta0"] == 0.0

    def test_energy_allocation(self, energy_document: dict[str, Any], tmp_path: Path) -> None:
        """Test the allocation goes to its own JSON file."""
        result = run_experiment(parse_experiment(energy_document), tmp_path)
        assert result.status == ExitStatus.OK
        allocation = json.loads((tmp_path / "two_peer.allocation.json").read_text())
        assert set(allocation) == {"0", "1"}
        assert "allocation" not in result.trace.metadata

    def test_check(self) -> None:
        """Test a check experiment carries a report and no traces."""
        result = run_experiment(parse_experiment({"kind": "check", "name": "gates", "filter": "graph"}))
        assert result.report is not None and result.report.passed
        assert result.traces == {}
        assert result.status == ExitStatus.OK

    def test_pdmm_follows_seed(self, saddle_document: dict[str, Any]) -> None:
        """Test the experiment seed drives PDMM block sampling."""
        saddle_document.update({"method": "pdmm", "max_iters": 50, "pdmm": {"K": 1, "tau": 0.5, "eta": 1.0}})
        first = run_experiment(parse_experiment(saddle_document, seed=0))
        again = run_experiment(parse_experiment(saddle_document, seed=0))
        other = run_experiment(parse_experiment(saddle_document, seed=1))
        assert first.trace.rows == again.trace.rows
        assert first.trace.rows != other.trace.rows

    def test_no_output_dir(self, saddle_document: dict[str, Any]) -> None:
        """Test out_dir=None computes without writing."""
        assert run_experiment(parse_experiment(saddle_document)).files == []

    def test_byte_identical_reruns(self, saddle_document: dict[str, Any], tmp_path: Path) -> None:
        """Test the same config and seed reproduce the same bytes."""
        cfg = parse_experiment(saddle_document)
        run_experiment(cfg, tmp_path / "a")
        run_experiment(cfg, tmp_path / "b")
        for name in ("witness_alm.csv", "witness_alm.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


class TestRunExperiments:
    """Tests for batches of experiments."""

    def test_duplicate_names(self, saddle_document: dict[str, Any]) -> None:
        """Test names must be unique within a run."""
        cfg = parse_experiment(saddle_document)
        with pytest.raises(ConfigError, match="unique"):
            run_experiments([cfg, cfg])

    def test_nothing_written_on_error(
        self, saddle_document: dict[str, Any], consensus_document: dict[str, Any], tmp_path: Path
    ) -> None:
        """Test a failing experiment leaves no partial output."""
        consensus_document["topology"] = {"n": 3, "edges": [[0, 1]]}
        configs = [parse_experiment(saddle_document), parse_experiment(consensus_document)]
        with pytest.raises(TopologyError):
            run_experiments(configs, tmp_path / "out")
        assert not (tmp_path / "out").exists()

    def test_results_in_input_order(
        self, saddle_document: dict[str, Any], energy_document: dict[str, Any], monkeypatch: pytest.MonkeyPatch
    ) -> None:
        """Test parallel runs return results in input order."""
        monkeypatch.setenv("PDTOOL_THREADS", "2")
        results = run_experiments([parse_experiment(energy_document), parse_experiment(saddle_document)])
        assert [r.name for r in results] == ["two_peer", "witness_alm"]


class TestCli:
    """Tests for the pdtool entry point."""

    def test_run(self, saddle_document: dict[str, Any], tmp_path: Path, capsys: pytest.CaptureFixture) -> None:
        """Test run prints written paths and exits 0."""
        config = write_config(tmp_path, saddle_document)
        assert main(["run", str(config), "--out", str(tmp_path / "runs")]) == 0
        assert "witness_alm.csv" in capsys.readouterr().out

    def test_seed_override(self, saddle_document: dict[str, Any], tmp_path: Path) -> None:
        """Test --seed replaces the config seed."""
        config = write_config(tmp_path, saddle_document)
        main(["run", str(config), "--out", str(tmp_path / "runs"), "--seed", "5"])
        sidecar = json.loads((tmp_path / "runs" / "witness_alm.json").read_text())
        assert sidecar["metadata"]["seed"] == 5

    def test_flagged_exit_code(self, saddle_document: dict[str, Any], tmp_path: Path) -> None:
        """Test flagged runs exit with 2."""
        saddle_document["method"] = "jacobi"
        config = write_config(tmp_path, saddle_document)
        assert main(["run", str(config), "--out", str(tmp_path / "runs")]) == 2

    def test_worst_status_wins(
        self, saddle_document: dict[str, Any], energy_document: dict[str, Any], tmp_path: Path
    ) -> None:
        """Test one flagged run among clean ones gives exit code 2."""
        saddle_document["method"] = "jacobi"
        configs = [str(write_config(tmp_path, saddle_document)), str(write_config(tmp_path, energy_document))]
        assert main(["run", *configs, "--out", str(tmp_path / "runs")]) == 2

    def test_bad_config(self, tmp_path: Path, capsys: pytest.CaptureFixture) -> None:
        """Test an unreadable config exits 1 with a message on stderr."""
        assert main(["run", str(tmp_path / "missing.json")]) == 1
        assert "pdtool: error" in capsys.readouterr().err

    def test_invalid_config(self, saddle_document: dict[str, Any], tmp_path: Path) -> None:
        """Test a schema violation exits 1."""
        saddle_document["method"] = "newton"
        config = write_config(tmp_path, saddle_document)
        assert main(["run", str(config), "--out", str(tmp_path / "runs")]) == 1

    def test_check(self, capsys: pytest.CaptureFixture) -> None:
        """Test check prints one line per gate."""
        assert main(["check", "--filter", "graph"]) == 0
        assert "PASS graph.locality" in capsys.readouterr().out

    def test_schema(self, capsys: pytest.CaptureFixture) -> None:
        """Test schema prints the config schema."""
        assert main(["schema"]) == 0
        assert "saddle" in capsys.readouterr().out
