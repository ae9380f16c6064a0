"""Consensus layer: chained BFT, a leader-majority baseline, and the link model."""

from .bft import BftValidator, SafetyViolation, commit_rule, handle_event
from .cft import CftValidator
from .mempool import Mempool
from .network import NetConfig, Network, net_schedule
from .types import (
    GENESIS,
    Block,
    HandleResult,
    QuorumCert,
    bft_quorum,
    cft_quorum,
    leader_for_round,
)

__all__ = [
    "BftValidator",
    "Block",
    "CftValidator",
    "GENESIS",
    "HandleResult",
    "Mempool",
    "NetConfig",
    "Network",
    "QuorumCert",
    "SafetyViolation",
    "bft_quorum",
    "cft_quorum",
    "commit_rule",
    "handle_event",
    "leader_for_round",
    "net_schedule",
]
