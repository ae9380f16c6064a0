"""Workload transaction scripts and the signed-transaction envelope.

Only three script shapes exist: a peer-to-peer transfer, a script whose body
is a bare ``return``, and a Fibonacci loop whose iteration count sets the
execution cost. Transactions carry a stub authenticator instead of a real
signature.
"""

from __future__ import annotations

import enum
import hashlib
import math
import struct
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

from chainbench.errors import ConfigurationError, InvalidArgument

Address = bytes

ADDRESS_LEN = 16
DEFAULT_MAX_STEPS = 1_000_000
DEFAULT_EXPIRATION_WINDOW = 60.0
U64_MAX = 2**64 - 1


def make_address(label: str) -> Address:
    """Deterministic 16-byte address derived from a human label."""
    return hashlib.sha256(label.encode()).digest()[:ADDRESS_LEN]


class ScriptKind(enum.IntEnum):
    TRANSFER = 1
    DO_NOTHING = 2
    VM_HEAVY = 3


@dataclass(frozen=True)
class TransferParams:
    payee: Address
    amount: int


@dataclass(frozen=True)
class VmParams:
    iterations: int


@dataclass(frozen=True)
class Script:
    kind: ScriptKind
    transfer_params: Optional[TransferParams] = None
    vm_params: Optional[VmParams] = None

    def __post_init__(self) -> None:
        if (self.kind is ScriptKind.TRANSFER) != (self.transfer_params is not None):
            raise InvalidArgument("transfer_params present iff kind is TRANSFER")
        if (self.kind is ScriptKind.VM_HEAVY) != (self.vm_params is not None):
            raise InvalidArgument("vm_params present iff kind is VM_HEAVY")
        if self.transfer_params is not None:
            amount = self.transfer_params.amount
            if not 0 < amount <= U64_MAX:
                raise InvalidArgument(f"transfer amount must be in [1, 2^64), got {amount}")
            if len(self.transfer_params.payee) != ADDRESS_LEN:
                raise InvalidArgument("payee must be a 16-byte address")
        if self.vm_params is not None and not 0 <= self.vm_params.iterations <= U64_MAX:
            raise InvalidArgument(f"iterations must be a u64, got {self.vm_params.iterations}")

    @property
    def name(self) -> str:
        return _KIND_NAMES[self.kind]


_KIND_NAMES = {
    ScriptKind.TRANSFER: "transfer",
    ScriptKind.DO_NOTHING: "do_nothing",
    ScriptKind.VM_HEAVY: "vm_heavy",
}


def make_transfer(payee: Address, amount: int) -> Script:
    return Script(ScriptKind.TRANSFER, transfer_params=TransferParams(bytes(payee), amount))


def make_do_nothing() -> Script:
    return Script(ScriptKind.DO_NOTHING)


def make_vm_heavy(iterations: int) -> Script:
    return Script(ScriptKind.VM_HEAVY, vm_params=VmParams(iterations))


def script_from_config(cfg: Mapping[str, Any], payee: Optional[Address] = None) -> Script:
    """Build a script from a config table such as ``{"script": "vm_heavy", "iterations": 10}``.

    ``payee`` supplies the transfer target; the config only carries the amount.
    """
    name = cfg.get("script", "transfer")
    if name == "transfer":
        if payee is None:
            raise ConfigurationError("script", "transfer template needs a payee")
        return make_transfer(payee, int(cfg.get("amount", 1)))
    if name == "do_nothing":
        return make_do_nothing()
    if name == "vm_heavy":
        if "iterations" not in cfg:
            raise ConfigurationError("iterations", "vm_heavy template requires an iterations key")
        return make_vm_heavy(int(cfg["iterations"]))
    raise ConfigurationError("script", f"unknown script template {name!r}")


# --- canonical encoding ---------------------------------------------------
#
# Every field is a u32 little-endian length followed by that many bytes, in a
# fixed order. Integers inside fields are little-endian u64; the expiration is
# an IEEE-754 double.

class DecodeError(ValueError):
    def __init__(self, offset: int, reason: str):
        super().__init__(f"decode error at offset {offset}: {reason}")
        self.offset = offset
        self.reason = reason


def _field(data: bytes) -> bytes:
    return struct.pack("<I", len(data)) + data


def _u64(value: int) -> bytes:
    return struct.pack("<Q", value)


def encode_script(script: Script) -> bytes:
    out = [_field(bytes([script.kind]))]
    if script.transfer_params is not None:
        out.append(_field(script.transfer_params.payee))
        out.append(_field(_u64(script.transfer_params.amount)))
    elif script.vm_params is not None:
        out.append(_field(_u64(script.vm_params.iterations)))
    return b"".join(out)


def compute_auth_tag(sender: Address, sequence_number: int, script: Script) -> bytes:
    return hashlib.sha256(sender + _u64(sequence_number) + encode_script(script)).digest()


@dataclass(frozen=True)
class SignedTransaction:
    sender: Address
    sequence_number: int
    script: Script
    expiration: float
    max_steps: int = DEFAULT_MAX_STEPS
    auth_tag: bytes = field(default=b"", repr=False)

    def __post_init__(self) -> None:
        if len(self.sender) != ADDRESS_LEN:
            raise InvalidArgument("sender must be a 16-byte address")
        if not 0 <= self.sequence_number <= U64_MAX:
            raise InvalidArgument("sequence_number must be a u64")
        if not 0 < self.max_steps <= U64_MAX:
            raise InvalidArgument("max_steps must be a positive u64")
        if not math.isfinite(self.expiration):
            raise InvalidArgument("expiration must be finite")

    @property
    def key(self) -> tuple[Address, int]:
        return (self.sender, self.sequence_number)

    def auth_ok(self) -> bool:
        return self.auth_tag == compute_auth_tag(self.sender, self.sequence_number, self.script)

    def expired(self, now: float) -> bool:
        return now > self.expiration


def sign_txn(
    sender: Address,
    sequence_number: int,
    script: Script,
    submitted_at: float = 0.0,
    *,
    expiration_window: float = DEFAULT_EXPIRATION_WINDOW,
    max_steps: int = DEFAULT_MAX_STEPS,
) -> SignedTransaction:
    return SignedTransaction(
        sender=bytes(sender),
        sequence_number=sequence_number,
        script=script,
        expiration=submitted_at + expiration_window,
        max_steps=max_steps,
        auth_tag=compute_auth_tag(bytes(sender), sequence_number, script),
    )


def encode_txn(txn: SignedTransaction) -> bytes:
    return b"".join(
        [
            _field(txn.sender),
            _field(_u64(txn.sequence_number)),
            _field(encode_script(txn.script)),
            _field(struct.pack("<d", txn.expiration)),
            _field(_u64(txn.max_steps)),
            _field(txn.auth_tag),
        ]
    )


class _Reader:
    def __init__(self, data: bytes, base: int = 0):
        self.data = data
        self.pos = 0
        self.base = base

    def offset(self) -> int:
        return self.base + self.pos

    def field(self, what: str, size: Optional[int] = None) -> tuple[int, bytes]:
        start = self.offset()
        if len(self.data) - self.pos < 4:
            raise DecodeError(start, f"truncated length prefix for {what}")
        (length,) = struct.unpack_from("<I", self.data, self.pos)
        if len(self.data) - self.pos - 4 < length:
            raise DecodeError(start, f"truncated {what}: need {length} bytes")
        if size is not None and length != size:
            raise DecodeError(start, f"{what} must be {size} bytes, got {length}")
        body_start = self.offset() + 4
        body = self.data[self.pos + 4 : self.pos + 4 + length]
        self.pos += 4 + length
        return body_start, body

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.field(what, 8)[1])[0]

    def finish(self) -> None:
        if self.pos != len(self.data):
            raise DecodeError(self.offset(), "trailing bytes")


def _decode_script(data: bytes, base: int) -> Script:
    r = _Reader(data, base)
    kind_at, kind_raw = r.field("script kind", 1)
    try:
        kind = ScriptKind(kind_raw[0])
    except ValueError:
        raise DecodeError(kind_at, f"unknown script kind {kind_raw[0]}") from None
    try:
        if kind is ScriptKind.TRANSFER:
            _, payee = r.field("payee", ADDRESS_LEN)
            script = make_transfer(payee, r.u64("amount"))
        elif kind is ScriptKind.VM_HEAVY:
            script = make_vm_heavy(r.u64("iterations"))
        else:
            script = make_do_nothing()
    except InvalidArgument as exc:
        raise DecodeError(base, str(exc)) from None
    r.finish()
    return script


def decode_txn(data: bytes) -> SignedTransaction:
    r = _Reader(bytes(data))
    _, sender = r.field("sender", ADDRESS_LEN)
    seq = r.u64("sequence_number")
    script_at, script_raw = r.field("script")
    script = _decode_script(script_raw, script_at)
    exp_at, exp_raw = r.field("expiration", 8)
    (expiration,) = struct.unpack("<d", exp_raw)
    if not math.isfinite(expiration):
        raise DecodeError(exp_at, "expiration must be finite")
    steps_at = r.offset()
    max_steps = r.u64("max_steps")
    if max_steps == 0:
        raise DecodeError(steps_at, "max_steps must be positive")
    _, auth_tag = r.field("auth_tag")
    r.finish()
    return SignedTransaction(sender, seq, script, expiration, max_steps, auth_tag)
