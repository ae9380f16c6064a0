"""Runnable multi-validator target behind the adapter interface."""

from __future__ import annotations

from chainbench.errors import ConfigurationError

from .adapter import POLL, NetworkInfo, Receipt, ReceiptStatus, RejectReason, TargetAdapter, Wait
from .config import ChainConfig, ConsensusKind, CostModel, Mode
from .node import ValidatorNode
from .virtual import VirtualNetwork


def spawn_network(config: ChainConfig) -> TargetAdapter:
    """Start validators with an empty genesis ledger and return the adapter handle."""
    if not isinstance(config, ChainConfig):
        raise ConfigurationError("config", "expected a ChainConfig")
    config.validate()
    if Mode(config.mode) is Mode.VIRTUAL:
        return VirtualNetwork(config)
    from .wall import WallNetwork

    return WallNetwork(config)


__all__ = [
    "POLL",
    "ChainConfig",
    "ConsensusKind",
    "CostModel",
    "Mode",
    "NetworkInfo",
    "Receipt",
    "ReceiptStatus",
    "RejectReason",
    "TargetAdapter",
    "ValidatorNode",
    "VirtualNetwork",
    "Wait",
    "spawn_network",
]
