"""Mini-ISA: 16 registers, 32-bit fixed-width instructions.

Encoding (bit 31 is the MSB):
    [31:26] opcode   [25:22] rd   [21:18] rs1   [17:14] rs2   [13:0] imm14 (signed)
    LUI / JAL use a wide immediate instead:  [25:22] rd   [21:0] imm22

Opcode 0 is deliberately unassigned so that zeroed memory never decodes; any
word that does not decode to exactly one instruction traps as ILLEGAL_OPCODE.
Unused fields must be zero, which makes single-bit corruption of code words
likely to trap rather than silently execute a neighbouring instruction.

Arithmetic is unsigned modulo 2**32.  Branch/jump immediates are signed word
offsets relative to pc+4.  DIV by zero traps; shifts use the low 5 bits of
rs2.  ST encodes the source register in the rd field.
"""

from __future__ import annotations

from enum import Enum

MASK32 = 0xFFFFFFFF

LUI = 1
ADDI = 2
ADD = 3
SUB = 4
MUL = 5
DIV = 6
AND = 7
OR = 8
XOR = 9
SHL = 10
SHR = 11
LD = 12
ST = 13
BEQ = 14
BNE = 15
JAL = 16
JR = 17
HALT = 18

MNEMONICS = {
    "LUI": LUI, "ADDI": ADDI, "ADD": ADD, "SUB": SUB, "MUL": MUL, "DIV": DIV,
    "AND": AND, "OR": OR, "XOR": XOR, "SHL": SHL, "SHR": SHR, "LD": LD,
    "ST": ST, "BEQ": BEQ, "BNE": BNE, "JAL": JAL, "JR": JR, "HALT": HALT,
}

_R_OPS = {ADD, SUB, MUL, DIV, AND, OR, XOR, SHL, SHR}
_WIDE_OPS = {LUI, JAL}

IMM14_MIN, IMM14_MAX = -(1 << 13), (1 << 13) - 1
IMM22_MIN, IMM22_MAX = -(1 << 21), (1 << 21) - 1


class TrapCause(Enum):
    ILLEGAL_OPCODE = "illegal_opcode"
    UNALIGNED_ACCESS = "unaligned_access"
    OUT_OF_RANGE_ADDRESS = "out_of_range_address"
    DIVIDE_BY_ZERO = "divide_by_zero"


def _sext(value: int, bits: int) -> int:
    sign = 1 << (bits - 1)
    return (value & (sign - 1)) - (value & sign)


def encode(op: int, rd: int = 0, rs1: int = 0, rs2: int = 0, imm: int = 0) -> int:
    if op in _WIDE_OPS:
        if not IMM22_MIN <= imm <= IMM22_MAX:
            raise ValueError(f"imm22 out of range: {imm}")
        return (op << 26) | (rd << 22) | (imm & 0x3FFFFF)
    if not IMM14_MIN <= imm <= IMM14_MAX:
        raise ValueError(f"imm14 out of range: {imm}")
    return (op << 26) | (rd << 22) | (rs1 << 18) | (rs2 << 14) | (imm & 0x3FFF)


def decode(word: int):
    """Decode a 32-bit word to (op, rd, rs1, rs2, imm) or None if illegal.

    Total: every word either yields exactly one instruction or None.
    """
    op = word >> 26
    if op < LUI or op > HALT:
        return None
    rd = (word >> 22) & 0xF
    if op in _WIDE_OPS:
        return (op, rd, 0, 0, _sext(word & 0x3FFFFF, 22))
    rs1 = (word >> 18) & 0xF
    rs2 = (word >> 14) & 0xF
    imm = _sext(word & 0x3FFF, 14)
    if op in _R_OPS:
        if imm != 0:
            return None
    elif op in (BEQ, BNE):
        if rd != 0:
            return None
    elif op == JR:
        if rd != 0 or rs2 != 0 or imm != 0:
            return None
    elif op == HALT:
        if rd != 0 or rs1 != 0 or rs2 != 0 or imm != 0:
            return None
    elif op in (ADDI, LD, ST):
        if rs2 != 0:
            return None
    return (op, rd, rs1, rs2, imm)


_DECODE_CACHE: dict[int, object] = {}


def decode_cached(word: int):
    """Memoized decode; safe because decode() is pure."""
    try:
        return _DECODE_CACHE[word]
    except KeyError:
        d = _DECODE_CACHE[word] = decode(word)
        return d
