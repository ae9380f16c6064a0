from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Any, Mapping

from chainbench.consensus.network import NetConfig
from chainbench.errors import ConfigurationError


class ConsensusKind(str, enum.Enum):
    BFT = "bft"
    CFT = "cft"


class Mode(str, enum.Enum):
    VIRTUAL = "virtual"
    WALL = "wall"


@dataclass(frozen=True)
class CostModel:
    """CPU time (seconds) charged per operation on a validator's single core.

    Defaults are a stand-in for a release-mode node: signature checks
    dominate per-transaction work, a VM step is a few nanoseconds.
    """

    msg_base: float = 10e-6
    txn_send: float = 0.5e-6
    admission: float = 2e-6
    mempool_insert: float = 0.5e-6
    mempool_scan: float = 0.05e-6
    verify_txn: float = 3e-6
    verify_vote: float = 20e-6
    block_build: float = 20e-6
    exec_txn: float = 2e-6
    exec_step: float = 2e-9
    storage_txn: float = 1e-6
    storage_write: float = 1e-6

    @classmethod
    def zero(cls) -> "CostModel":
        return cls(**{name: 0.0 for name in cls.__dataclass_fields__})


@dataclass(frozen=True)
class ChainConfig:
    num_validators: int = 4
    consensus: ConsensusKind = ConsensusKind.BFT
    batch_size: int = 500
    mode: Mode = Mode.VIRTUAL
    net: NetConfig = field(default_factory=NetConfig)
    mempool_capacity: int = 100_000
    gateway: int = 0
    gossip_interval: float = 0.0005
    timeout_factor: float = 10.0
    max_backoff_exp: int = 6
    costs: CostModel = field(default_factory=CostModel)
    simulate_costs: bool = True
    trace: bool = False

    def validate(self) -> "ChainConfig":
        if not isinstance(self.num_validators, int) or self.num_validators < 1:
            raise ConfigurationError("num_validators", "must be an integer >= 1")
        if not isinstance(self.batch_size, int) or self.batch_size < 1:
            raise ConfigurationError("batch_size", "must be an integer >= 1")
        if not isinstance(self.mempool_capacity, int) or self.mempool_capacity < 1:
            raise ConfigurationError("mempool_capacity", "must be an integer >= 1")
        if not 0 <= self.gateway < self.num_validators:
            raise ConfigurationError("gateway", "must index an existing validator")
        try:
            ConsensusKind(self.consensus)
        except ValueError:
            raise ConfigurationError("consensus", f"unknown consensus {self.consensus!r}") from None
        try:
            Mode(self.mode)
        except ValueError:
            raise ConfigurationError("mode", f"unknown mode {self.mode!r}") from None
        if self.gossip_interval < 0:
            raise ConfigurationError("gossip_interval", "must be >= 0")
        if self.timeout_factor <= 0:
            raise ConfigurationError("timeout_factor", "must be > 0")
        return self

    @property
    def base_timeout(self) -> float:
        return self.timeout_factor * self.net.base_latency

    def with_seed(self, seed: int) -> "ChainConfig":
        return replace(self, net=replace(self.net, seed=seed))

    def to_dict(self) -> dict[str, Any]:
        return {
            "num_validators": self.num_validators,
            "consensus": ConsensusKind(self.consensus).value,
            "batch_size": self.batch_size,
            "mode": Mode(self.mode).value,
            "mempool_capacity": self.mempool_capacity,
            "gateway": self.gateway,
            "gossip_interval": self.gossip_interval,
            "timeout_factor": self.timeout_factor,
            "net": {
                "base_latency": self.net.base_latency,
                "jitter": self.net.jitter,
                "drop_rate": self.net.drop_rate,
                "seed": self.net.seed,
            },
        }

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "ChainConfig":
        data = dict(data)
        net_keys = {"base_latency", "jitter", "drop_rate", "seed"}
        net_args = {k: data.pop(k) for k in list(data) if k in net_keys}
        net_args.update(data.pop("net", {}))
        unknown = set(data) - set(cls.__dataclass_fields__) - {"costs"}
        if unknown:
            raise ConfigurationError(sorted(unknown)[0], "unknown [chain] key")
        costs = data.pop("costs", None)
        kwargs: dict[str, Any] = dict(data)
        if "consensus" in kwargs:
            try:
                kwargs["consensus"] = ConsensusKind(kwargs["consensus"])
            except ValueError:
                raise ConfigurationError("consensus", f"unknown consensus {kwargs['consensus']!r}") from None
        if "mode" in kwargs:
            try:
                kwargs["mode"] = Mode(kwargs["mode"])
            except ValueError:
                raise ConfigurationError("mode", f"unknown mode {kwargs['mode']!r}") from None
        if costs:
            kwargs["costs"] = CostModel(**costs)
        return cls(net=NetConfig(**net_args), **kwargs).validate()
