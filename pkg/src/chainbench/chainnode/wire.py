"""Line-delimited JSON over a local TCP socket.

Request:  {"op": "submit", "params": {"txn": "<hex of the canonical encoding>"}}
Response: {"ok": true, "result": ...} or {"ok": false, "error": {"type": ..., "message": ...}}

Ops: submit, query, mint, create_account, network_info. Addresses are hex.
"""

from __future__ import annotations

import json
import socket
import socketserver
import threading
import time
from typing import Any, Optional

from chainbench.errors import AlreadyExists, ChainbenchError, InvalidArgument, RunFailed, UnknownAddress
from chainbench.ledger import AccountState
from chainbench.scripts import Address, DecodeError, SignedTransaction, decode_txn, encode_txn

from .adapter import NetworkInfo, Receipt, ReceiptStatus, RejectReason, TargetAdapter
from .wall import WallClock

_ERRORS = {
    "unknown-address": UnknownAddress,
    "already-exists": AlreadyExists,
    "invalid-argument": InvalidArgument,
}


def _error_type(exc: BaseException) -> str:
    if isinstance(exc, UnknownAddress):
        return "unknown-address"
    if isinstance(exc, AlreadyExists):
        return "already-exists"
    if isinstance(exc, (InvalidArgument, DecodeError, ValueError, KeyError, TypeError)):
        return "invalid-argument"
    return "internal"


def dispatch(target: TargetAdapter, request: dict) -> dict:
    try:
        op = request["op"]
        params = request.get("params") or {}
        if op == "submit":
            receipt = target.submit_txn(decode_txn(bytes.fromhex(params["txn"])))
            result: Any = {"status": receipt.status.value, "reason": receipt.reason.value if receipt.reason else None}
        elif op == "query":
            acct = target.query_account(bytes.fromhex(params["address"]))
            result = {"balance": acct.balance, "sequence_number": acct.sequence_number}
        elif op == "mint":
            target.mint(bytes.fromhex(params["address"]), int(params["amount"]))
            result = None
        elif op == "create_account":
            target.create_account(bytes.fromhex(params["address"]))
            result = None
        elif op == "network_info":
            result = target.network_info().to_dict()
        else:
            raise InvalidArgument(f"unknown op {op!r}")
    except (ChainbenchError, ValueError, KeyError, TypeError) as exc:
        return {"ok": False, "error": {"type": _error_type(exc), "message": str(exc)}}
    return {"ok": True, "result": result}


class _Handler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        for line in self.rfile:
            if not line.strip():
                continue
            try:
                request = json.loads(line)
                if not isinstance(request, dict):
                    raise ValueError("request must be a JSON object")
            except ValueError as exc:
                response = {"ok": False, "error": {"type": "invalid-argument", "message": f"bad request: {exc}"}}
            else:
                response = dispatch(self.server.target, request)
            self.wfile.write(json.dumps(response).encode() + b"\n")
            self.wfile.flush()


class WireServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, target: TargetAdapter, host: str = "127.0.0.1", port: int = 0):
        super().__init__((host, port), _Handler)
        self.target = target
        self._thread: Optional[threading.Thread] = None

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[:2]

    def start(self) -> "WireServer":
        self._thread = threading.Thread(target=self.serve_forever, name="wire-server", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()


class RemoteTarget:
    """TargetAdapter speaking the wire protocol; one connection per calling thread."""

    def __init__(self, host: str, port: int, timeout: float = 10.0):
        self.host, self.port, self.timeout = host, port, timeout
        self._local = threading.local()
        self._conns: list[socket.socket] = []
        self._lock = threading.Lock()
        uptime = self.network_info().uptime
        offset = uptime - time.monotonic()
        self.clock = WallClock(lambda: time.monotonic() + offset)

    def _conn(self):
        f = getattr(self._local, "file", None)
        if f is None:
            try:
                sock = socket.create_connection((self.host, self.port), timeout=self.timeout)
            except OSError as exc:
                raise RunFailed(f"target unreachable at {self.host}:{self.port}: {exc}") from exc
            with self._lock:
                self._conns.append(sock)
            f = self._local.file = sock.makefile("rwb")
        return f

    def call(self, op: str, **params) -> Any:
        f = self._conn()
        try:
            f.write(json.dumps({"op": op, "params": params}).encode() + b"\n")
            f.flush()
            line = f.readline()
        except OSError as exc:
            raise RunFailed(f"connection to target lost: {exc}") from exc
        if not line:
            raise RunFailed("target closed the connection")
        response = json.loads(line)
        if not response.get("ok"):
            err = response.get("error") or {}
            cls = _ERRORS.get(err.get("type"), ChainbenchError)
            raise cls(err.get("message", "remote error"))
        return response.get("result")

    def submit_txn(self, txn: SignedTransaction) -> Receipt:
        r = self.call("submit", txn=encode_txn(txn).hex())
        status = ReceiptStatus(r["status"])
        return Receipt(status, RejectReason(r["reason"]) if r["reason"] else None)

    def query_account(self, address: Address) -> AccountState:
        r = self.call("query", address=address.hex())
        return AccountState(address, r["balance"], r["sequence_number"])

    def mint(self, address: Address, amount: int) -> None:
        self.call("mint", address=address.hex(), amount=amount)

    def create_account(self, address: Address) -> None:
        self.call("create_account", address=address.hex())

    def network_info(self) -> NetworkInfo:
        return NetworkInfo(**self.call("network_info"))

    def close(self) -> None:
        with self._lock:
            for s in self._conns:
                s.close()
            self._conns.clear()
