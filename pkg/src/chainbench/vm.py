"""Execution layer: lowers scripts to a tiny stack machine and runs them.

Every instruction costs one step. Integers are u64 and ``Add`` wraps. The
interpreter never mutates ledger state; a successful transfer only reports a
write set of balance deltas for the ledger to apply.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Mapping, Optional, Union

from chainbench.scripts import Address, Script, ScriptKind

U64_MASK = 2**64 - 1

Value = Union[int, bytes]


class Op(enum.IntEnum):
    LOAD_CONST = 0
    COPY_LOCAL = 1
    STORE_LOCAL = 2
    ADD = 3
    LESS_THAN = 4
    JUMP_IF_FALSE = 5
    JUMP = 6
    TRANSFER = 7
    RETURN = 8


Instr = tuple  # (Op, arg or None)


@dataclass(frozen=True)
class VmProgram:
    instructions: tuple[Instr, ...]
    local_count: int = 0

    def __post_init__(self) -> None:
        n = len(self.instructions)
        for pc, (op, arg) in enumerate(self.instructions):
            if op in (Op.JUMP, Op.JUMP_IF_FALSE) and not 0 <= arg < n:
                raise ValueError(f"jump target {arg} out of bounds at pc {pc}")
            if op in (Op.COPY_LOCAL, Op.STORE_LOCAL) and not 0 <= arg < self.local_count:
                raise ValueError(f"local {arg} out of bounds at pc {pc}")

    @property
    def reads_state(self) -> bool:
        """Whether execution consults the ledger; state-free programs can be memoized."""
        return any(op is Op.TRANSFER for op, _ in self.instructions)


class VmStatus(str, enum.Enum):
    SUCCESS = "success"
    OUT_OF_STEPS = "out_of_steps"
    ABORTED = "aborted"


@dataclass(frozen=True)
class VmOutcome:
    status: VmStatus
    steps_used: int
    write_set: tuple[tuple[Address, int], ...] = ()
    abort_reason: Optional[str] = None
    locals: tuple[Value, ...] = field(default=(), compare=False)

    @property
    def ok(self) -> bool:
        return self.status is VmStatus.SUCCESS

    def to_json(self) -> str:
        status = self.status.value
        if self.abort_reason:
            status = f"{status}({self.abort_reason})"
        return json.dumps(
            {
                "status": status,
                "steps_used": self.steps_used,
                "write_set": [[addr.hex(), delta] for addr, delta in self.write_set],
            },
            sort_keys=True,
        )


# VM-heavy local slots
I, X, Y, Z, TMP = range(5)


def compile_script(script: Script) -> VmProgram:
    if script.kind is ScriptKind.DO_NOTHING:
        return VmProgram(((Op.RETURN, None),))
    if script.kind is ScriptKind.TRANSFER:
        p = script.transfer_params
        return VmProgram(
            (
                (Op.LOAD_CONST, p.payee),
                (Op.LOAD_CONST, p.amount),
                (Op.TRANSFER, None),
                (Op.RETURN, None),
            )
        )
    bound = script.vm_params.iterations
    code = [
        (Op.LOAD_CONST, 0), (Op.STORE_LOCAL, I),
        (Op.LOAD_CONST, 1), (Op.STORE_LOCAL, X),
        (Op.LOAD_CONST, 1), (Op.STORE_LOCAL, Y),
        (Op.LOAD_CONST, 2), (Op.STORE_LOCAL, Z),
    ]
    head = len(code)
    code += [
        (Op.COPY_LOCAL, I), (Op.LOAD_CONST, bound), (Op.LESS_THAN, None),
        (Op.JUMP_IF_FALSE, None),  # patched below
        # i = i + 1
        (Op.COPY_LOCAL, I), (Op.LOAD_CONST, 1), (Op.ADD, None), (Op.STORE_LOCAL, I),
        # tmp = z
        (Op.COPY_LOCAL, Z), (Op.STORE_LOCAL, TMP),
        # z = x + y
        (Op.COPY_LOCAL, X), (Op.COPY_LOCAL, Y), (Op.ADD, None), (Op.STORE_LOCAL, Z),
        # x = y
        (Op.COPY_LOCAL, Y), (Op.STORE_LOCAL, X),
        # y = tmp
        (Op.COPY_LOCAL, TMP), (Op.STORE_LOCAL, Y),
        (Op.JUMP, head),
    ]
    exit_pc = len(code)
    code[head + 3] = (Op.JUMP_IF_FALSE, exit_pc)
    code.append((Op.RETURN, None))
    return VmProgram(tuple(code), local_count=5)


class _Abort(Exception):
    pass


def execute(
    program: VmProgram,
    sender: Address,
    state_view: Mapping[Address, int],
    max_steps: int,
) -> VmOutcome:
    """Run ``program`` on behalf of ``sender``.

    ``state_view`` maps addresses to balances and is only read.
    """
    if max_steps <= 0:
        raise ValueError("max_steps must be positive")
    code = program.instructions
    local_vars: list[Value] = [0] * program.local_count
    stack: list[Value] = []
    writes: list[tuple[Address, int]] = []
    pc = 0
    steps = 0
    try:
        while True:
            if steps >= max_steps:
                return VmOutcome(VmStatus.OUT_OF_STEPS, steps, locals=tuple(local_vars))
            op, arg = code[pc]
            steps += 1
            pc += 1
            if op is Op.COPY_LOCAL:
                stack.append(local_vars[arg])
            elif op is Op.STORE_LOCAL:
                local_vars[arg] = stack.pop()
            elif op is Op.LOAD_CONST:
                stack.append(arg)
            elif op is Op.ADD:
                b = stack.pop()
                stack.append((stack.pop() + b) & U64_MASK)
            elif op is Op.LESS_THAN:
                b = stack.pop()
                stack.append(1 if stack.pop() < b else 0)
            elif op is Op.JUMP_IF_FALSE:
                if not stack.pop():
                    pc = arg
            elif op is Op.JUMP:
                pc = arg
            elif op is Op.TRANSFER:
                amount = stack.pop()
                payee = stack.pop()
                if payee not in state_view:
                    raise _Abort("unknown-payee")
                if state_view.get(sender, 0) < amount:
                    raise _Abort("insufficient-balance")
                writes.append((sender, -amount))
                writes.append((payee, amount))
            elif op is Op.RETURN:
                return VmOutcome(VmStatus.SUCCESS, steps, tuple(writes), locals=tuple(local_vars))
    except _Abort as exc:
        return VmOutcome(VmStatus.ABORTED, steps, abort_reason=str(exc), locals=tuple(local_vars))
