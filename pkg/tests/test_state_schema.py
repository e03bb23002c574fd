"""Tests for state schema definitions."""

import numpy as np
import pytest

from state.errors import ConfigError, DimensionError, PdtoolError, TopologyError, TraceSchemaError
from state.schema import (
    CONSENSUS_COLUMNS,
    ENERGY_COLUMNS,
    FEDERATED_COLUMNS,
    FLOW_COLUMNS,
    SADDLE_COLUMNS,
    ConsensusMethod,
    ExperimentKind,
    PeerAllocation,
    SaddleMethod,
    Trace,
    TraceFlag,
)


class TestEnums:
    """Test enum definitions."""

    def test_experiment_kinds(self) -> None:
        """Test ExperimentKind enum values."""
        assert ExperimentKind.SADDLE.value == "saddle"
        assert ExperimentKind.CHECK.value == "check"
        assert len(ExperimentKind) == 6

    def test_saddle_methods(self) -> None:
        """Test SaddleMethod enum values."""
        assert SaddleMethod.ALM.value == "alm"
        assert SaddleMethod.PDMM.value == "pdmm"
        assert SaddleMethod("inexact_alm") is SaddleMethod.INEXACT_ALM

    def test_consensus_pd_names(self) -> None:
        """Test every native method with a twin names it with a _pd suffix."""
        assert ConsensusMethod(f"{ConsensusMethod.EXTRA.value}_pd") is ConsensusMethod.EXTRA_PD
        assert ConsensusMethod.GRADIENT_TRACKING_PD.value == "gradient_tracking_pd"

    def test_trace_flags(self) -> None:
        """Test TraceFlag enum values."""
        assert TraceFlag.DIVERGED.value == "diverged"
        assert TraceFlag.TRADE_CAP_ACTIVE.value == "trade_cap_active"


class TestColumns:
    """Test declared trace column sets."""

    @pytest.mark.parametrize(
        "columns, index",
        [
            (SADDLE_COLUMNS, "k"),
            (CONSENSUS_COLUMNS, "k"),
            (FLOW_COLUMNS, "t"),
            (FEDERATED_COLUMNS, "round"),
            (ENERGY_COLUMNS, "k"),
        ],
    )
    def test_index_column_first(self, columns: tuple[str, ...], index: str) -> None:
        """Test the index column leads and names are unique."""
        assert columns[0] == index
        assert len(set(columns)) == len(columns)


class TestTrace:
    """Test the Trace container."""

    def test_append_and_read(self) -> None:
        """Test rows are stored in declared column order."""
        trace = Trace(columns=("k", "a", "b"))
        trace.append(b=2.0, k=0, a=1.0)
        trace.append(k=1, a=3.0, b=4.0)
        assert trace.rows[0] == (0.0, 1.0, 2.0)
        assert np.array_equal(trace.column("a"), np.array([1.0, 3.0]))
        assert trace.last("b") == 4.0
        assert len(trace) == 2

    def test_missing_column_rejected(self) -> None:
        """Test a row without every column raises."""
        trace = Trace(columns=("k", "a"))
        with pytest.raises(TraceSchemaError, match="missing"):
            trace.append(k=0)

    def test_extra_column_rejected(self) -> None:
        """Test undeclared values raise."""
        trace = Trace(columns=("k",))
        with pytest.raises(TraceSchemaError, match="unexpected"):
            trace.append(k=0, extra=1.0)

    def test_index_must_not_decrease(self) -> None:
        """Test the iteration index is nondecreasing."""
        trace = Trace(columns=("k", "a"))
        trace.append(k=2, a=0.0)
        trace.append(k=2, a=0.0)
        with pytest.raises(TraceSchemaError, match="decreased"):
            trace.append(k=1, a=0.0)

    def test_unknown_column_lookup(self) -> None:
        """Test column() rejects unknown names."""
        with pytest.raises(TraceSchemaError):
            Trace(columns=("k",)).column("gap")

    def test_last_on_empty_trace(self) -> None:
        """Test last() on a header-only trace raises."""
        with pytest.raises(TraceSchemaError):
            Trace(columns=("k",)).last("k")

    def test_flags(self) -> None:
        """Test flags accept enums and plain strings."""
        trace = Trace(columns=("k",))
        assert trace.flagged is False
        trace.add_flag(TraceFlag.OSCILLATION)
        trace.merge_flags(frozenset({"diverged"}))
        assert trace.flags == {"oscillation", "diverged"}
        assert trace.flagged is True


class TestTypedDicts:
    """Test TypedDict structures."""

    def test_peer_allocation_creation(self) -> None:
        """Test PeerAllocation creation."""
        allocation: PeerAllocation = {"eps": 1.0, "sales": {"1": 1.0}, "price": -2.0}
        assert allocation["sales"]["1"] == 1.0


class TestErrors:
    """Test the exception hierarchy."""

    def test_all_derive_from_base(self) -> None:
        """Test every toolkit error is a PdtoolError."""
        for error in (ConfigError, DimensionError, TopologyError, TraceSchemaError):
            assert issubclass(error, PdtoolError)

    def test_value_errors(self) -> None:
        """Test shape and graph errors are also ValueErrors."""
        assert issubclass(DimensionError, ValueError)
        assert issubclass(TopologyError, ValueError)
