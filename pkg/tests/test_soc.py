from uncoresim import isa
from uncoresim.isa import TrapCause
from uncoresim.soc import (CoreState, Liveness, ReturnPacket, check_liveness,
                           step_core, LOAD, STORE, FETCH)

SPACE = 1 << 20


def fetch_then(core, word, cycle=0):
    """Drive one fetch round trip delivering `word` as the instruction."""
    req = step_core(core, None, cycle, SPACE)
    assert req is not None and req.kind == FETCH
    ret = ReturnPacket(req.req_id, core.core_id, FETCH, word, cycle + 10)
    return step_core(core, ret, cycle + 10, SPACE)


def test_register_op_emits_no_packet():
    core = CoreState(0)
    out = fetch_then(core, isa.encode(isa.ADDI, 1, 0, 0, 5))
    assert out is None
    assert core.regs[1] == 5
    assert core.retired_count == 1
    assert core.pc == 4


def test_load_emits_packet_and_stalls():
    core = CoreState(0)
    out = fetch_then(core, isa.encode(isa.LD, 2, 0, 0, 0x1000))
    assert out is not None and out.kind == LOAD and out.addr == 0x1000
    assert core.outstanding == out.req_id
    # data return completes the load
    ret = ReturnPacket(out.req_id, 0, LOAD, 1234, 20)
    assert step_core(core, ret, 20, SPACE) is None
    assert core.regs[2] == 1234
    assert core.retired_count == 1


def test_illegal_opcode_traps():
    core = CoreState(0)
    fetch_then(core, 0xFFFFFFFF)
    assert core.trap is TrapCause.ILLEGAL_OPCODE


def test_unaligned_and_range_traps():
    core = CoreState(0)
    core.regs[1] = 2
    fetch_then(core, isa.encode(isa.LD, 2, 1, 0, 0))
    assert core.trap is TrapCause.UNALIGNED_ACCESS
    core = CoreState(0)
    core.regs[1] = SPACE
    fetch_then(core, isa.encode(isa.ST, 2, 1, 0, 0))
    assert core.trap is TrapCause.OUT_OF_RANGE_ADDRESS


def test_divide_by_zero_traps():
    core = CoreState(0)
    fetch_then(core, isa.encode(isa.DIV, 1, 2, 3))
    assert core.trap is TrapCause.DIVIDE_BY_ZERO


def test_store_carries_data_loads_do_not():
    core = CoreState(0)
    core.regs[3] = 0xDEAD
    out = fetch_then(core, isa.encode(isa.ST, 3, 0, 0, 0x40))
    assert out.kind == STORE and out.data == 0xDEAD
    core2 = CoreState(1)
    out2 = fetch_then(core2, isa.encode(isa.LD, 3, 0, 0, 0x40))
    assert out2.kind == LOAD and out2.data is None


def test_req_ids_unique_and_increasing_per_core():
    cores = [CoreState(c) for c in range(4)]
    seen = set()
    for _ in range(5):
        for core in cores:
            req = step_core(core, None, 0, SPACE)
            assert req.req_id not in seen
            seen.add(req.req_id)
            ret = ReturnPacket(req.req_id, core.core_id, FETCH,
                               isa.encode(isa.ADDI, 1, 1, 0, 1), 10)
            step_core(core, ret, 10, SPACE)


def test_unmatched_return_is_ignored():
    core = CoreState(0)
    req = step_core(core, None, 0, SPACE)
    stray = ReturnPacket(req.req_id ^ 0x30, 0, FETCH, 0, 5)
    assert step_core(core, stray, 5, SPACE) is None
    assert core.outstanding == req.req_id  # still waiting


def test_liveness():
    cores = [CoreState(c) for c in range(3)]
    assert check_liveness(cores, 100, 50) is Liveness.PROGRESSING
    for c in cores:
        c.last_retire_cycle = 10
    assert check_liveness(cores, 100, 500) is Liveness.HUNG
    cores[1].last_retire_cycle = 450
    assert check_liveness(cores, 100, 500) is Liveness.PROGRESSING
    for c in cores:
        c.halted = True
    assert check_liveness(cores, 100, 500) is Liveness.ALL_HALTED
