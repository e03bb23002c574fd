"""Round-based simulators: federated learning and peer-to-peer energy trading."""

from simulators.energy import (
    EnergyNetwork,
    TradeState,
    TradingConfig,
    TradingMode,
    run_dual_decomposition,
    run_inexact_alm_trading,
    run_trading,
)
from simulators.federated import (
    FedConfig,
    FederatedInstance,
    FedState,
    run_federated,
    run_fedprox_baseline,
)

__all__ = [
    "EnergyNetwork",
    "TradeState",
    "TradingConfig",
    "TradingMode",
    "run_dual_decomposition",
    "run_inexact_alm_trading",
    "run_trading",
    "FedConfig",
    "FederatedInstance",
    "FedState",
    "run_federated",
    "run_fedprox_baseline",
]
