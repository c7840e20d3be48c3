import pytest
from hypothesis import given, strategies as st

from uncoresim import isa


def test_encode_decode_roundtrip():
    cases = [
        (isa.ADDI, 1, 0, 0, 5),
        (isa.ADD, 3, 1, 2, 0),
        (isa.LD, 2, 1, 0, 8),
        (isa.ST, 7, 1, 0, -4),
        (isa.BEQ, 0, 1, 2, -17),
        (isa.LUI, 4, 0, 0, 0x3FFFF),
        (isa.JAL, 15, 0, 0, -1000),
        (isa.JR, 0, 9, 0, 0),
        (isa.HALT, 0, 0, 0, 0),
    ]
    for op, rd, rs1, rs2, imm in cases:
        word = isa.encode(op, rd, rs1, rs2, imm)
        assert isa.decode(word) == (op, rd, rs1, rs2, imm)


def test_zero_word_is_illegal():
    assert isa.decode(0) is None


def test_nonzero_unused_fields_trap():
    word = isa.encode(isa.ADD, 1, 2, 3, 0) | 0x1  # dirty imm bits on an R-op
    assert isa.decode(word) is None
    word = isa.encode(isa.JR, rs1=3) | (1 << 22)  # rd must be zero
    assert isa.decode(word) is None


@given(st.integers(min_value=0, max_value=0xFFFFFFFF))
def test_decode_total(word):
    # every word decodes to exactly one instruction or to None (trap)
    d = isa.decode(word)
    if d is not None:
        op, rd, rs1, rs2, imm = d
        assert isa.LUI <= op <= isa.HALT
        assert 0 <= rd <= 15 and 0 <= rs1 <= 15 and 0 <= rs2 <= 15
        # decoding is deterministic and cache-consistent
        assert isa.decode_cached(word) == d


def test_imm_range_checks():
    with pytest.raises(ValueError):
        isa.encode(isa.ADDI, 1, 0, 0, 1 << 13)
    with pytest.raises(ValueError):
        isa.encode(isa.JAL, 1, 0, 0, 1 << 21)
