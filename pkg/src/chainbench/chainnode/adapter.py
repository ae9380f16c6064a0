"""The surface the bench engine talks to, and the client-worker clock protocol."""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass
from typing import Generator, Iterable, Optional, Protocol, Union, runtime_checkable

from chainbench.ledger import AccountState
from chainbench.scripts import Address, SignedTransaction


class ReceiptStatus(str, enum.Enum):
    ADMITTED = "admitted"
    REJECTED = "rejected"


class RejectReason(str, enum.Enum):
    DUPLICATE = "duplicate"
    BACKPRESSURE = "backpressure"
    UNKNOWN_SENDER = "unknown-sender"
    BAD_AUTH = "bad-auth"
    STALE = "stale-seq"
    EXPIRED = "expired"


@dataclass(frozen=True)
class Receipt:
    status: ReceiptStatus
    reason: Optional[RejectReason] = None

    @property
    def admitted(self) -> bool:
        return self.status is ReceiptStatus.ADMITTED

    @classmethod
    def ok(cls) -> "Receipt":
        return cls(ReceiptStatus.ADMITTED)

    @classmethod
    def rejected(cls, reason: RejectReason) -> "Receipt":
        return cls(ReceiptStatus.REJECTED, reason)


ADMITTED = Receipt.ok()


@dataclass(frozen=True)
class NetworkInfo:
    num_validators: int
    consensus: str
    mode: str
    uptime: float
    gateway: int = 0
    committed_txns: int = 0
    aborted_txns: int = 0
    skipped_txns: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Wait:
    """Worker yield: resume after ``delay`` seconds on the target's clock."""
    delay: float


class _Poll:
    def __repr__(self) -> str:
        return "POLL"


# Worker yield: resume at the next query opportunity (one event step in
# virtual time, one poll interval on a wall clock).
POLL = _Poll()

Worker = Generator[Union[Wait, _Poll], None, None]


@runtime_checkable
class Clock(Protocol):
    def now(self) -> float: ...

    def run_workers(self, workers: Iterable[Worker], timeout: float, poll_interval: Optional[float] = None) -> bool:
        """Drive all workers to completion; False if ``timeout`` elapsed first."""
        ...


@runtime_checkable
class TargetAdapter(Protocol):
    clock: Clock

    def submit_txn(self, txn: SignedTransaction) -> Receipt: ...

    def query_account(self, address: Address) -> AccountState: ...

    def mint(self, address: Address, amount: int) -> None: ...

    def create_account(self, address: Address) -> None: ...

    def network_info(self) -> NetworkInfo: ...

    def close(self) -> None: ...

