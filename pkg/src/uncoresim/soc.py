"""Core-side protocol: packets, core state machine, liveness check.

Cores talk to the memory subsystem exclusively through request/return packets
crossing the crossbar.  Instruction fetch itself goes through the memory
system, so corrupted memory corrupts code.  A core is blocking: at most one
outstanding request, and it stalls until the matching return arrives.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from . import isa
from .isa import MASK32, TrapCause

# Request kinds (2-bit field in the detailed models)
LOAD, STORE, FETCH = 0, 1, 2
KIND_NAMES = {LOAD: "load", STORE: "store", FETCH: "fetch"}


@dataclass(slots=True)
class RequestPacket:
    req_id: int
    core_id: int
    kind: int
    addr: int
    data: int | None = None  # stores only
    issue_cycle: int = 0


@dataclass(slots=True)
class ReturnPacket:
    req_id: int
    core_id: int
    kind: int
    data: int | None = None  # loads / fetches only
    deliver_cycle: int = 0


class Liveness(Enum):
    PROGRESSING = "progressing"
    HUNG = "hung"
    ALL_HALTED = "all_halted"


# Core phases
_FETCH, _WAIT_FETCH, _WAIT_DATA = 0, 1, 2


@dataclass(slots=True)
class CoreState:
    core_id: int
    pc: int = 0
    regs: list[int] = field(default_factory=lambda: [0] * 16)
    halted: bool = False
    trap: TrapCause | None = None
    phase: int = _FETCH
    outstanding: int | None = None  # req_id of the in-flight request
    next_req_id: int = 0
    cur_op: tuple | None = None  # decoded instruction awaiting its data return
    retired_count: int = 0
    last_retire_cycle: int = 0

    @property
    def active(self) -> bool:
        return not self.halted and self.trap is None


def step_core(core: CoreState, incoming: ReturnPacket | None, cycle: int,
              address_space: int) -> RequestPacket | None:
    """Advance one core phase; returns the request packet to emit, if any.

    Phases: emit fetch -> consume fetch return (decode + execute; memory ops
    emit their data request here) -> consume data return (writeback, retire).
    Traps are recorded on the core and never raise; a trapped or halted core
    emits nothing.
    """
    if core.halted or core.trap is not None:
        return None

    if core.phase == _FETCH:
        if core.pc & 3:
            core.trap = TrapCause.UNALIGNED_ACCESS
            return None
        if core.pc >= address_space:
            core.trap = TrapCause.OUT_OF_RANGE_ADDRESS
            return None
        # globally unique and strictly increasing per core
        rid = (core.next_req_id << 4) | core.core_id
        core.next_req_id += 1
        core.outstanding = rid
        core.phase = _WAIT_FETCH
        return RequestPacket(rid, core.core_id, FETCH, core.pc, None, cycle)

    if incoming is None or incoming.req_id != core.outstanding:
        return None  # spurious or missing return: keep waiting
    core.outstanding = None

    if core.phase == _WAIT_FETCH:
        decoded = isa.decode_cached(incoming.data & MASK32)
        if decoded is None:
            core.trap = TrapCause.ILLEGAL_OPCODE
            return None
        return _execute(core, decoded, cycle, address_space)

    # _WAIT_DATA: finish the pending load
    op, rd, rs1, rs2, imm = core.cur_op
    if op == isa.LD:
        core.regs[rd] = incoming.data & MASK32
    core.cur_op = None
    _retire(core, cycle, core.pc + 4)
    return None


def _execute(core: CoreState, decoded: tuple, cycle: int,
             address_space: int) -> RequestPacket | None:
    op, rd, rs1, rs2, imm = decoded
    regs = core.regs
    pc = core.pc

    if op == isa.LD or op == isa.ST:
        addr = (regs[rs1] + imm) & MASK32
        if addr & 3:
            core.trap = TrapCause.UNALIGNED_ACCESS
            return None
        if addr >= address_space:
            core.trap = TrapCause.OUT_OF_RANGE_ADDRESS
            return None
        rid = (core.next_req_id << 4) | core.core_id
        core.next_req_id += 1
        core.outstanding = rid
        core.phase = _WAIT_DATA
        core.cur_op = decoded
        if op == isa.LD:
            return RequestPacket(rid, core.core_id, LOAD, addr, None, cycle)
        # ST completes architecturally at the ack; rd is the source register
        return RequestPacket(rid, core.core_id, STORE, addr, regs[rd], cycle)

    if op == isa.ADDI:
        regs[rd] = (regs[rs1] + imm) & MASK32
    elif op == isa.ADD:
        regs[rd] = (regs[rs1] + regs[rs2]) & MASK32
    elif op == isa.SUB:
        regs[rd] = (regs[rs1] - regs[rs2]) & MASK32
    elif op == isa.MUL:
        regs[rd] = (regs[rs1] * regs[rs2]) & MASK32
    elif op == isa.DIV:
        if regs[rs2] == 0:
            core.trap = TrapCause.DIVIDE_BY_ZERO
            return None
        regs[rd] = regs[rs1] // regs[rs2]
    elif op == isa.AND:
        regs[rd] = regs[rs1] & regs[rs2]
    elif op == isa.OR:
        regs[rd] = regs[rs1] | regs[rs2]
    elif op == isa.XOR:
        regs[rd] = regs[rs1] ^ regs[rs2]
    elif op == isa.SHL:
        regs[rd] = (regs[rs1] << (regs[rs2] & 31)) & MASK32
    elif op == isa.SHR:
        regs[rd] = regs[rs1] >> (regs[rs2] & 31)
    elif op == isa.LUI:
        regs[rd] = (imm << 10) & MASK32
    elif op == isa.BEQ:
        _retire(core, cycle, (pc + 4 + imm * 4) & MASK32 if regs[rs1] == regs[rs2] else pc + 4)
        return None
    elif op == isa.BNE:
        _retire(core, cycle, (pc + 4 + imm * 4) & MASK32 if regs[rs1] != regs[rs2] else pc + 4)
        return None
    elif op == isa.JAL:
        regs[rd] = (pc + 4) & MASK32
        _retire(core, cycle, (pc + 4 + imm * 4) & MASK32)
        return None
    elif op == isa.JR:
        _retire(core, cycle, regs[rs1])
        return None
    elif op == isa.HALT:
        core.retired_count += 1
        core.last_retire_cycle = cycle
        core.halted = True
        return None
    _retire(core, cycle, pc + 4)
    return None


def _retire(core: CoreState, cycle: int, next_pc: int) -> None:
    core.retired_count += 1
    core.last_retire_cycle = cycle
    core.pc = next_pc & MASK32
    core.phase = _FETCH


def check_liveness(cores: list[CoreState], window: int, now: int) -> Liveness:
    """Hung iff nothing retired in the last `window` cycles and not all halted."""
    if all(c.halted for c in cores):
        return Liveness.ALL_HALTED
    if any(now - c.last_retire_cycle <= window for c in cores):
        return Liveness.PROGRESSING
    return Liveness.HUNG
