"""Workload loading: a small line-oriented assembler plus built-in programs.

Workload source format (full grammar in docs/workload_format.md):

    .org 0x1000          ; set assembly address
    .word 0xDEAD 17      ; emit literal words
    .output 0x80000 64   ; output region: start byte address, length in words
    .entry 2 start_2     ; entry point for core 2 (label or address)
    label:               ; labels end with ':'
    ADDI r1, r0, 5       ; mnemonics from the mini-ISA, registers r0..r15
    LD   r2, [r1+8]      ; memory operands: [rN], [rN+imm], [rN-imm]
    BNE  r1, r0, label   ; branch targets: label or signed word offset

Error-free execution of every built-in workload is deterministic and its
output region content is independent of request interleaving, which is what
makes outcome classification and mode-switch transparency well defined.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from . import isa

CODE_BASE = 0x0000
CODE_STRIDE = 0x800
SHARED_BASE = 0x10000
DATA_BASE = 0x20000
DATA_STRIDE = 0x8000
OUTPUT_BASE = 0x80000


class ParseError(ValueError):
    def __init__(self, line_no: int, msg: str):
        super().__init__(f"line {line_no}: {msg}")
        self.line_no = line_no


@dataclass(frozen=True)
class WorkloadProgram:
    name: str
    image: tuple[tuple[int, int], ...]  # sorted (byte address, word) pairs
    entries: tuple[int, ...]  # entry pc per core
    output_start: int
    output_words: int

    def output_addresses(self) -> list[int]:
        return [self.output_start + 4 * i for i in range(self.output_words)]


_REG_RE = re.compile(r"^r(\d+)$")
_MEM_RE = re.compile(r"^\[\s*r(\d+)\s*(?:([+-])\s*(0x[0-9a-fA-F]+|\d+))?\s*\]$")


def _parse_int(tok: str, line_no: int) -> int:
    try:
        return int(tok, 0)
    except ValueError:
        raise ParseError(line_no, f"bad integer {tok!r}") from None


def _parse_reg(tok: str, line_no: int) -> int:
    m = _REG_RE.match(tok)
    if not m or not 0 <= int(m.group(1)) <= 15:
        raise ParseError(line_no, f"bad register {tok!r}")
    return int(m.group(1))


def _split_operands(rest: str) -> list[str]:
    # memory operands contain no commas, so a plain comma split is safe
    return [p.strip() for p in rest.split(",")] if rest.strip() else []


def load_workload(source: str, n_cores: int, name: str = "custom") -> WorkloadProgram:
    """Assemble workload source text into a deterministic memory image.

    Two loads of the same source are bit-identical.  Raises ParseError with a
    line number on syntax errors and on duplicate image addresses.
    """
    labels: dict[str, int] = {}
    # pass 1: label addresses
    addr = 0
    for line_no, raw in enumerate(source.splitlines(), 1):
        line = raw.split(";")[0].split("#")[0].strip()
        if not line:
            continue
        while line:
            head, _, rest = line.partition(" ")
            if head.endswith(":"):
                label = head[:-1]
                if not label or label in labels:
                    raise ParseError(line_no, f"bad or duplicate label {head!r}")
                labels[label] = addr
                line = rest.strip()
                continue
            if head == ".org":
                addr = _parse_int(rest.strip(), line_no)
                if addr & 3:
                    raise ParseError(line_no, ".org address must be word aligned")
            elif head == ".word":
                addr += 4 * len(rest.split())
            elif head in (".output", ".entry"):
                pass
            else:
                addr += 4
            break

    # pass 2: emit
    image: dict[int, int] = {}
    entries: dict[int, int] = {}
    output_start, output_words = 0, 0
    addr = 0

    def emit(word: int, line_no: int) -> None:
        nonlocal addr
        if addr in image:
            raise ParseError(line_no, f"duplicate image address 0x{addr:x}")
        image[addr] = word & isa.MASK32
        addr += 4

    def resolve(tok: str, line_no: int) -> int:
        if tok in labels:
            return labels[tok]
        return _parse_int(tok, line_no)

    for line_no, raw in enumerate(source.splitlines(), 1):
        line = raw.split(";")[0].split("#")[0].strip()
        if not line:
            continue
        while line.split(" ", 1)[0].endswith(":"):
            line = line.split(" ", 1)[1].strip() if " " in line else ""
        if not line:
            continue
        head, _, rest = line.partition(" ")
        rest = rest.strip()
        if head == ".org":
            addr = _parse_int(rest, line_no)
        elif head == ".word":
            for tok in rest.split():
                emit(_parse_int(tok, line_no), line_no)
        elif head == ".output":
            parts = rest.split()
            if len(parts) != 2:
                raise ParseError(line_no, ".output needs start and word count")
            output_start, output_words = _parse_int(parts[0], line_no), _parse_int(parts[1], line_no)
        elif head == ".entry":
            parts = rest.split()
            if len(parts) != 2:
                raise ParseError(line_no, ".entry needs core index and target")
            core = _parse_int(parts[0], line_no)
            if not 0 <= core < n_cores:
                raise ParseError(line_no, f"entry core {core} out of range")
            entries[core] = resolve(parts[1], line_no)
        else:
            emit(_assemble_instr(head.upper(), _split_operands(rest), labels, addr, line_no), line_no)

    if not image:  # empty program: a shared HALT at address 0 for every core
        image[0] = isa.encode(isa.HALT)
    prog = WorkloadProgram(
        name=name,
        image=tuple(sorted(image.items())),
        entries=tuple(entries.get(c, 0) for c in range(n_cores)),
        output_start=output_start,
        output_words=output_words,
    )
    return prog


def _assemble_instr(mnem: str, ops: list[str], labels: dict[str, int],
                    addr: int, line_no: int) -> int:
    if mnem not in isa.MNEMONICS:
        raise ParseError(line_no, f"unknown mnemonic {mnem!r}")
    op = isa.MNEMONICS[mnem]

    def reg(i):
        return _parse_reg(ops[i], line_no)

    def imm(i):
        tok = ops[i]
        if tok in labels:  # branch/jump label: signed word offset from pc+4
            return (labels[tok] - (addr + 4)) // 4
        return _parse_int(tok, line_no)

    def need(n):
        if len(ops) != n:
            raise ParseError(line_no, f"{mnem} expects {n} operands, got {len(ops)}")

    try:
        if op == isa.HALT:
            need(0)
            return isa.encode(op)
        if op == isa.JR:
            need(1)
            return isa.encode(op, rs1=reg(0))
        if op in (isa.LUI, isa.JAL):
            need(2)
            return isa.encode(op, rd=reg(0), imm=imm(1))
        if op in (isa.BEQ, isa.BNE):
            need(3)
            return isa.encode(op, rs1=reg(0), rs2=reg(1), imm=imm(2))
        if op == isa.ADDI:
            need(3)
            return isa.encode(op, rd=reg(0), rs1=reg(1), imm=imm(2))
        if op in (isa.LD, isa.ST):
            need(2)
            m = _MEM_RE.match(ops[1])
            if not m:
                raise ParseError(line_no, f"bad memory operand {ops[1]!r}")
            base = int(m.group(1))
            off = int(m.group(3), 0) if m.group(3) else 0
            if m.group(2) == "-":
                off = -off
            return isa.encode(op, rd=reg(0), rs1=base, imm=off)
        need(3)  # three-register ALU ops
        return isa.encode(op, rd=reg(0), rs1=reg(1), rs2=reg(2))
    except ValueError as e:
        raise ParseError(line_no, str(e)) from None


# ---------------------------------------------------------------------------
# Built-in workloads.  Each generator emits assembly text; data patterns come
# from a small multiplicative generator so images are self-contained.
# ---------------------------------------------------------------------------

BUILTIN_WORKLOADS = ("checksum_stream", "lock_contention", "pointer_chase", "matrix_tile")


def _pattern(seed: int):
    x = (seed * 2654435761 + 1) & isa.MASK32
    while True:
        x = (x * 1664525 + 1013904223) & isa.MASK32
        yield x


def _load_addr_ops(reg: int, value: int) -> list[str]:
    """Materialize a 32-bit constant: LUI for the high bits, ADDI for the low."""
    if 0 <= value <= isa.IMM14_MAX:
        return [f"ADDI r{reg}, r0, {value}"]
    return [f"LUI r{reg}, {value >> 10}", f"ADDI r{reg}, r{reg}, {value & 0x3FF}"]


def checksum_stream_source(n_cores: int, size: int) -> str:
    """Each core folds a private input stream into running checksums.

    size = total output words; every core owns size//n_cores of them.
    """
    per_core = max(1, size // n_cores)
    lines = [f".output 0x{OUTPUT_BASE:x} {per_core * n_cores}"]
    gen = _pattern(7)
    for c in range(n_cores):
        in_base = DATA_BASE + c * DATA_STRIDE
        out_base = OUTPUT_BASE + c * per_core * 4
        lines += [f".org 0x{in_base:x}"]
        lines += [f".word 0x{next(gen):08x}" for _ in range(per_core)]
        lines += [f".entry {c} start_{c}", f".org 0x{CODE_BASE + c * CODE_STRIDE:x}", f"start_{c}:"]
        lines += _load_addr_ops(1, in_base)
        lines += _load_addr_ops(2, out_base)
        lines += _load_addr_ops(3, per_core)
        lines += [
            "ADDI r5, r0, 0",
            "ADDI r6, r0, 1",
            f"loop_{c}:",
            "LD r4, [r1]",
            "SHL r7, r5, r6",
            "ADD r5, r7, r4",
            "XOR r5, r5, r7",
            "ST r5, [r2]",
            "ADDI r1, r1, 4",
            "ADDI r2, r2, 4",
            "ADDI r3, r3, -1",
            f"BNE r3, r0, loop_{c}",
            "HALT",
        ]
    return "\n".join(lines)


def lock_contention_source(n_cores: int, iters: int) -> str:
    """Token-passing lock around a shared counter; output is timing-free.

    Each core takes the token `iters` times, increments the shared counter in
    its critical section, then spins at a barrier until the counter reaches
    n_cores*iters and stores that total to its output slot.
    """
    turn, count = SHARED_BASE, SHARED_BASE + 4
    total = n_cores * iters
    lines = [
        f".output 0x{OUTPUT_BASE:x} {n_cores}",
        f".org 0x{turn:x}",
        ".word 0",  # token starts at core 0
        ".word 0",  # shared counter
    ]
    for c in range(n_cores):
        lines += [f".entry {c} start_{c}", f".org 0x{CODE_BASE + c * CODE_STRIDE:x}", f"start_{c}:"]
        lines += _load_addr_ops(1, turn)
        lines += _load_addr_ops(2, count)
        lines += [
            f"ADDI r3, r0, {c}",
            f"ADDI r4, r0, {iters}",
            f"ADDI r6, r0, {(c + 1) % n_cores}",
        ]
        lines += _load_addr_ops(7, total)
        lines += _load_addr_ops(8, OUTPUT_BASE + 4 * c)
        lines += [
            f"spin_{c}:",
            "LD r5, [r1]",
            f"BNE r5, r3, spin_{c}",
            "LD r5, [r2]",
            "ADDI r5, r5, 1",
            "ST r5, [r2]",
            "ST r6, [r1]",
            "ADDI r4, r4, -1",
            f"BNE r4, r0, spin_{c}",
            f"barrier_{c}:",
            "LD r5, [r2]",
            f"BNE r5, r7, barrier_{c}",
            "ST r5, [r8]",
            "HALT",
        ]
    return "\n".join(lines)


def pointer_chase_source(n_cores: int, nodes: int) -> str:
    """Each core walks a scrambled private linked list, mixing payloads.

    Output per core: (checksum, node count).  Corrupting a next pointer sends
    the walk to wild addresses, so this workload exercises traps and hangs.
    """
    lines = [f".output 0x{OUTPUT_BASE:x} {2 * n_cores}"]
    gen = _pattern(23)
    for c in range(n_cores):
        base = DATA_BASE + c * DATA_STRIDE
        # node i occupies 8 bytes; visit order is a fixed stride permutation
        stride = 7
        while math.gcd(stride, nodes) != 1:
            stride += 2
        order = [(i * stride + 3) % nodes for i in range(nodes)]
        node_addr = [base + 8 * i for i in range(nodes)]
        next_of = {}
        for i in range(nodes - 1):
            next_of[order[i]] = node_addr[order[i + 1]]
        next_of[order[-1]] = 0
        payload = {i: next(gen) for i in range(nodes)}
        lines += [f".org 0x{base:x}"]
        for i in range(nodes):
            lines += [f".word 0x{next_of[i]:08x}", f".word 0x{payload[i]:08x}"]
        lines += [f".entry {c} start_{c}", f".org 0x{CODE_BASE + c * CODE_STRIDE:x}", f"start_{c}:"]
        lines += _load_addr_ops(1, node_addr[order[0]])
        lines += _load_addr_ops(8, OUTPUT_BASE + 8 * c)
        lines += [
            "ADDI r5, r0, 0",
            "ADDI r6, r0, 0",
            "ADDI r7, r0, 1",
            f"walk_{c}:",
            f"BEQ r1, r0, done_{c}",
            "LD r2, [r1]",
            "LD r3, [r1+4]",
            "SHL r4, r5, r7",
            "ADD r5, r4, r3",
            "ADDI r6, r6, 1",
            "ADD r1, r2, r0",
            f"BEQ r0, r0, walk_{c}",
            f"done_{c}:",
            "ST r5, [r8]",
            "ST r6, [r8+4]",
            "HALT",
        ]
    return "\n".join(lines)


def matrix_tile_source(n_cores: int, dim: int) -> str:
    """Each core multiplies two private dim x dim matrices into its tile."""
    words = dim * dim
    lines = [f".output 0x{OUTPUT_BASE:x} {words * n_cores}"]
    gen = _pattern(41)
    for c in range(n_cores):
        a_base = DATA_BASE + c * DATA_STRIDE
        b_base = a_base + 4 * words
        out_base = OUTPUT_BASE + c * 4 * words
        lines += [f".org 0x{a_base:x}"]
        lines += [f".word 0x{next(gen) & 0xFFFF:08x}" for _ in range(2 * words)]
        lines += [f".entry {c} start_{c}", f".org 0x{CODE_BASE + c * CODE_STRIDE:x}", f"start_{c}:"]
        # r1=i r2=j r3=k r4=dim r8=4 r5=acc r9=A r10=B r11=OUT r12..r15 scratch
        lines += _load_addr_ops(9, a_base) + _load_addr_ops(10, b_base) + _load_addr_ops(11, out_base)
        lines += [
            f"ADDI r4, r0, {dim}",
            "ADDI r8, r0, 4",
            "ADDI r1, r0, 0",
            f"i_loop_{c}:",
            "ADDI r2, r0, 0",
            f"j_loop_{c}:",
            "ADDI r3, r0, 0",
            "ADDI r5, r0, 0",
            f"k_loop_{c}:",
            "MUL r12, r1, r4",
            "ADD r12, r12, r3",
            "MUL r13, r12, r8",
            "ADD r13, r13, r9",
            "LD r14, [r13]",     # A[i*dim+k]
            "MUL r12, r3, r4",
            "ADD r12, r12, r2",
            "MUL r13, r12, r8",
            "ADD r13, r13, r10",
            "LD r15, [r13]",     # B[k*dim+j]
            "MUL r12, r14, r15",
            "ADD r5, r5, r12",
            "ADDI r3, r3, 1",
            f"BNE r3, r4, k_loop_{c}",
            "MUL r12, r1, r4",
            "ADD r12, r12, r2",
            "MUL r13, r12, r8",
            "ADD r13, r13, r11",
            "ST r5, [r13]",      # OUT[i*dim+j]
            "ADDI r2, r2, 1",
            f"BNE r2, r4, j_loop_{c}",
            "ADDI r1, r1, 1",
            f"BNE r1, r4, i_loop_{c}",
            "HALT",
        ]
    return "\n".join(lines)


def builtin_source(name: str, n_cores: int, size: int) -> str:
    if name == "checksum_stream":
        return checksum_stream_source(n_cores, size)
    if name == "lock_contention":
        return lock_contention_source(n_cores, max(1, size))
    if name == "pointer_chase":
        return pointer_chase_source(n_cores, max(2, size))
    if name == "matrix_tile":
        return matrix_tile_source(n_cores, max(2, min(16, size)))
    raise ValueError(f"unknown workload {name!r} (built-ins: {BUILTIN_WORKLOADS})")


def get_workload(name: str, n_cores: int, size: int) -> WorkloadProgram:
    return load_workload(builtin_source(name, n_cores, size), n_cores, name=name)
