"""Seeded message-delay model for the simulated LAN."""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Optional

from chainbench.errors import ConfigurationError


@dataclass(frozen=True)
class NetConfig:
    base_latency: float = 0.001
    jitter: float = 0.0001
    drop_rate: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.base_latency > 0:
            raise ConfigurationError("base_latency", "must be > 0")
        if not 0 <= self.jitter < self.base_latency:
            raise ConfigurationError("jitter", "must satisfy 0 <= jitter < base_latency")
        if not 0 <= self.drop_rate < 1:
            raise ConfigurationError("drop_rate", "must be in [0, 1)")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed", "must be a u64")


def net_schedule(now: float, cfg: NetConfig, rng: random.Random) -> Optional[float]:
    """Delivery time for a message sent at ``now``, or None if it is dropped.

    Both random draws happen for every message so the stream stays aligned
    with the send order regardless of outcome.
    """
    dropped = rng.random() < cfg.drop_rate
    offset = rng.uniform(-cfg.jitter, cfg.jitter)
    if dropped:
        return None
    return now + cfg.base_latency + offset


class Network:
    """Per-run link model; owns the RNG so schedules depend only on seed and send order."""

    def __init__(self, cfg: NetConfig):
        self.cfg = cfg
        self.rng = random.Random(cfg.seed)
        self.sent = 0
        self.dropped = 0

    def schedule(self, now: float) -> Optional[float]:
        self.sent += 1
        at = net_schedule(now, self.cfg, self.rng)
        if at is None:
            self.dropped += 1
        return at
