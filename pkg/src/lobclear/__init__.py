"""Multi-asset limit order book simulator: sequential vs parallel clearing."""

from .market import (
    Mode,
    Order,
    OrderBook,
    PriceSeries,
    Proceeds,
    Side,
    SimConfig,
    Trade,
    Traders,
    TraderState,
)
from .clearing import ClearingOutcome, run_simulation

__all__ = [
    "Mode",
    "Order",
    "OrderBook",
    "PriceSeries",
    "Proceeds",
    "Side",
    "SimConfig",
    "Trade",
    "Traders",
    "TraderState",
    "ClearingOutcome",
    "run_simulation",
]

__version__ = "0.1.0"
