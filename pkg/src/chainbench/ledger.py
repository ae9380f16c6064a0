"""Account balances, sequence numbers, and transaction admission/application.

``LedgerState`` is treated as immutable: every operation returns a new state,
so a published state can be read by queries while the commit pipeline builds
the next one.
"""

from __future__ import annotations

import enum
import hashlib
import json
from collections.abc import Mapping as MappingABC
from dataclasses import dataclass
from types import MappingProxyType
from typing import Iterator, Mapping, Optional

from chainbench.errors import AlreadyExists, InvalidArgument, UnknownAddress
from chainbench.scripts import U64_MAX, Address, SignedTransaction
from chainbench.vm import VmOutcome


@dataclass(frozen=True)
class AccountState:
    address: Address
    balance: int = 0
    sequence_number: int = 0


class LedgerState:
    __slots__ = ("_accounts", "version", "minted")

    def __init__(self, accounts: Optional[Mapping[Address, AccountState]] = None,
                 version: int = 0, minted: int = 0):
        self._accounts = dict(accounts or {})
        self.version = version
        self.minted = minted

    @property
    def accounts(self) -> Mapping[Address, AccountState]:
        return MappingProxyType(self._accounts)

    def __contains__(self, address: object) -> bool:
        return address in self._accounts

    def __len__(self) -> int:
        return len(self._accounts)

    def balances(self) -> dict[Address, int]:
        return {a: s.balance for a, s in self._accounts.items()}

    def total_balance(self) -> int:
        return sum(s.balance for s in self._accounts.values())

    def _replace(self, changes: Mapping[Address, AccountState], version: int, minted: int) -> "LedgerState":
        accounts = dict(self._accounts)
        accounts.update(changes)
        return LedgerState(accounts, version, minted)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LedgerState):
            return NotImplemented
        return (self._accounts, self.version, self.minted) == (other._accounts, other.version, other.minted)

    def __repr__(self) -> str:
        return f"LedgerState(accounts={len(self._accounts)}, version={self.version})"


class BalanceView(MappingABC):
    """Read-only address -> balance view handed to the VM."""

    __slots__ = ("_accounts",)

    def __init__(self, state: LedgerState):
        self._accounts = state._accounts

    def __getitem__(self, address: Address) -> int:
        return self._accounts[address].balance

    def __contains__(self, address: object) -> bool:
        return address in self._accounts

    def __iter__(self) -> Iterator[Address]:
        return iter(self._accounts)

    def __len__(self) -> int:
        return len(self._accounts)


def create_account(state: LedgerState, address: Address) -> LedgerState:
    if address in state:
        raise AlreadyExists(f"account {address.hex()} already exists")
    return state._replace({address: AccountState(address)}, state.version, state.minted)


def mint(state: LedgerState, address: Address, amount: int) -> LedgerState:
    if address not in state:
        raise UnknownAddress(f"unknown address {address.hex()}")
    if amount < 0:
        raise InvalidArgument("mint amount must be non-negative")
    acct = state.accounts[address]
    if acct.balance + amount > U64_MAX:
        raise InvalidArgument("mint would overflow a u64 balance")
    updated = AccountState(address, acct.balance + amount, acct.sequence_number)
    return state._replace({address: updated}, state.version, state.minted + amount)


def query_account(state: LedgerState, address: Address) -> AccountState:
    try:
        return state.accounts[address]
    except KeyError:
        raise UnknownAddress(f"unknown address {address.hex()}") from None


class Verdict(str, enum.Enum):
    ACCEPT = "accept"
    SEQ_GAP = "seq-gap"
    STALE_SEQ = "stale-seq"
    EXPIRED = "expired"
    BAD_AUTH = "bad-auth"
    UNKNOWN_SENDER = "unknown-sender"


def check_txn(expected_seq: Optional[int], txn: SignedTransaction, now: float) -> Verdict:
    """Admission rule shared by the ledger and the mempool's readiness tracker."""
    if expected_seq is None:
        return Verdict.UNKNOWN_SENDER
    if txn.sequence_number > expected_seq:
        return Verdict.SEQ_GAP
    if txn.sequence_number < expected_seq:
        return Verdict.STALE_SEQ
    if txn.expired(now):
        return Verdict.EXPIRED
    if not txn.auth_ok():
        return Verdict.BAD_AUTH
    return Verdict.ACCEPT


def validate_txn(state: LedgerState, txn: SignedTransaction, now: float = 0.0) -> Verdict:
    acct = state.accounts.get(txn.sender)
    return check_txn(None if acct is None else acct.sequence_number, txn, now)


def apply_txn(state: LedgerState, txn: SignedTransaction, outcome: VmOutcome) -> tuple[LedgerState, VmOutcome]:
    """Charge the sender's sequence number and apply the write set iff execution succeeded."""
    sender = state.accounts[txn.sender]
    changes: dict[Address, AccountState] = {}
    if outcome.ok and outcome.write_set:
        balances: dict[Address, int] = {}
        for addr, delta in outcome.write_set:
            base = balances.get(addr, state.accounts[addr].balance)
            balances[addr] = base + delta
        if any(b < 0 or b > U64_MAX for b in balances.values()):
            raise InvalidArgument("write set would leave a balance outside u64 range")
        for addr, bal in balances.items():
            acct = state.accounts[addr]
            changes[addr] = AccountState(addr, bal, acct.sequence_number)
    current = changes.get(txn.sender, sender)
    changes[txn.sender] = AccountState(txn.sender, current.balance, current.sequence_number + 1)
    return state._replace(changes, state.version + 1, state.minted), outcome


def dump_state(state: LedgerState) -> dict[str, dict[str, int]]:
    return {
        addr.hex(): {"balance": acct.balance, "sequence_number": acct.sequence_number}
        for addr, acct in sorted(state.accounts.items())
    }


def dump_json(state: LedgerState) -> str:
    return json.dumps({"version": state.version, "accounts": dump_state(state)}, sort_keys=True)


def state_hash(state: LedgerState) -> str:
    return hashlib.sha256(dump_json(state).encode()).hexdigest()
