import random

import pytest

from harness import drive_abstract, drive_detailed, flat_reference, gen_trace
from uncoresim.abstractmem import AbstractMcu, BankState
from uncoresim.config import SimConfig
from uncoresim.detailed.l2bank import DetailedBank
from uncoresim.detailed.structs import (FlipFlopId, ProtectionClass,
                                        enumerate_flipflops, micro_diff_bits,
                                        state_divergence, bank_schema,
                                        mcu_schema, ccx_schema, L2C)
from uncoresim.soc import LOAD, STORE, RequestPacket


# -- registry ----------------------------------------------------------------


def expected_registry_bits(cfg: SimConfig) -> int:
    """Independent width sum over the declared structure shapes."""
    core_b = max(1, (cfg.n_cores - 1).bit_length())
    way_b = max(1, (cfg.ways - 1).bit_length())
    bank_b = max(1, (cfg.n_banks - 1).bit_length())
    line_bits = 32 * cfg.line_words
    pkt = 1 + 2 + core_b + 32 + 32 + 32
    ret = 1 + 2 + core_b + 32 + 32
    mb = 1 + 2 + core_b + 32 + 32 + 32 + way_b + 2 + 1 + 1 + 10 + 26
    per_bank = (cfg.input_queue * pkt + 3 * pkt + cfg.miss_buffer * mb
                + cfg.wb_buffer * (1 + 26 + 1 + line_bits)
                + cfg.wb_buffer * (1 + 26 + line_bits)
                + cfg.output_queue * ret + ret + 1 + cfg.ways + 16)
    op = 1 + 1 + 26 + line_bits + bank_b
    per_mcu = cfg.mcu_queue * op + op + (2 + 10) + op + 4 + 16
    req = pkt
    per_ccx = (cfg.n_cores * req + cfg.n_banks * req + cfg.n_banks * ret
               + cfg.n_cores * ret + cfg.n_banks * core_b + cfg.n_cores * bank_b
               + 16)
    return cfg.n_banks * per_bank + cfg.n_mcus * per_mcu + per_ccx


def test_registry_total_matches_width_sum():
    for cfg in (SimConfig(), SimConfig(n_cores=2, n_banks=2, n_mcus=1,
                                       input_queue=4, miss_buffer=3,
                                       wb_buffer=2, output_queue=5,
                                       mcu_queue=2, line_words=8)):
        reg = enumerate_flipflops(cfg)
        assert len(reg) == expected_registry_bits(cfg)
        assert sum(reg.totals().values()) == len(reg)


def test_registry_deterministic_and_classified():
    cfg = SimConfig()
    a = enumerate_flipflops(cfg)
    b = enumerate_flipflops(cfg)
    assert [(str(f), c) for f, c in a.entries] == [(str(f), c) for f, c in b.entries]
    totals = a.totals()
    assert totals[ProtectionClass.HARDENED] > 0
    assert totals[ProtectionClass.INACTIVE] > 0
    assert totals[ProtectionClass.PARITY_PROTECTED] == 0  # QRR off
    qcfg = SimConfig(qrr_enabled=True)
    qreg = enumerate_flipflops(qcfg)
    assert qreg.totals()[ProtectionClass.PARITY_PROTECTED] > 0
    # the crossbar stays outside QRR coverage
    ccx_classes = {c for f, c in qreg.entries if f.component == "ccx"}
    assert ProtectionClass.PARITY_PROTECTED not in ccx_classes
    assert ProtectionClass.INJECTABLE in ccx_classes


def test_zero_entry_miss_buffer_has_no_ids():
    cfg = SimConfig(miss_buffer=1)
    reg = enumerate_flipflops(cfg)
    assert all(f.entry == 0 for f, _ in reg.entries if f.structure == "miss_buffer")


def test_hardened_extra_override():
    cfg = SimConfig(hardened_extra=("l2c.tag_pipe", "mcu.req_queue.data"))
    reg = enumerate_flipflops(cfg)
    assert all(c is ProtectionClass.HARDENED
               for f, c in reg.entries
               if f.component == "l2c" and f.structure == "tag_pipe")
    assert all(c is ProtectionClass.HARDENED
               for f, c in reg.entries
               if f.component == "mcu" and f.structure == "req_queue"
               and f.field == "data")


def test_flipflop_id_string_roundtrip():
    ff = FlipFlopId("l2c", 2, "miss_buffer", 3, "addr", 17)
    assert FlipFlopId.parse(str(ff)) == ff


def test_registry_dump_format(tmp_path):
    cfg = SimConfig(n_cores=2, n_banks=2, n_mcus=1)
    reg = enumerate_flipflops(cfg)
    path = tmp_path / "reg.tsv"
    with open(path, "w") as fh:
        reg.dump(fh)
    lines = path.read_text().splitlines()
    assert len(lines) == len(reg)
    ident, cls = lines[0].split("\t")
    assert FlipFlopId.parse(ident) == reg.entries[0][0]
    assert cls == reg.entries[0][1].value


# -- pipeline behaviour -------------------------------------------------------


def _bench(cfg=None, image=None):
    cfg = cfg or SimConfig()
    arrays = BankState(cfg, 0)
    bank = DetailedBank(cfg, 0, arrays)
    bank.last_writer = {}
    dram = dict(image or {})
    mcu = AbstractMcu(dram, cfg.dram_latency)
    return cfg, bank, arrays, dram, mcu


def _run(cfg, bank, mcu, feeds, cycles):
    """feeds: {cycle: packet}; returns [(cycle, ReturnPacket)] and events."""
    outs_log, ev_log = [], []
    leftover = ()
    pending = None
    for cycle in range(cycles):
        if pending is None:
            pending = feeds.pop(cycle, None)
        resps = tuple(mcu.due(cycle)) + leftover
        outs, ops, accepted, events, leftover = bank.step(cycle, pending, resps)
        if accepted:
            pending = None
        for op in ops:
            mcu.submit(op, cycle + 1, cfg.line_words)
        outs_log += [(cycle, o) for o in outs]
        ev_log += events
    return outs_log, ev_log


def test_single_load_hit_pipeline_constant():
    cfg, bank, arrays, dram, mcu = _bench()
    s = arrays.set_of(0)
    arrays.tags[s][0] = 0
    arrays.state[s][0] = 1
    arrays.data[s][0][3] = 99
    outs, _ = _run(cfg, bank, mcu, {2: RequestPacket(0, 0, LOAD, 12, None, 0)}, 40)
    assert len(outs) == 1
    cycle, ret = outs[0]
    assert ret.data == 99
    # issue at 0, crossbar in 2, bank pipeline 6 -> emitted at cycle 8,
    # delivered at 10 with the return crossbar leg: the calibration constant
    assert cycle == 8


def test_store_miss_early_ack_and_busy_until_fill():
    cfg, bank, arrays, dram, mcu = _bench()
    outs, events = _run(cfg, bank, mcu,
                        {2: RequestPacket(16, 1, STORE, 0x40, 0xBEEF, 0)}, 300)
    assert len(outs) == 1
    ack_cycle, ack = outs[0]
    assert ack.kind == STORE and ack.data is None
    assert ack_cycle == 8  # acknowledged at allocation, like a hit
    mc = [e for e in events if e[0] == "miss_complete"]
    assert mc == [("miss_complete", 16)]
    # the ack precedes miss completion by roughly the fill latency
    rs = [e for e in events if e[0] == "return_sent"]
    assert rs == [("return_sent", 16)]
    assert dram == {}  # store landed in the arrays, dirty
    assert arrays.dirty_words() == {0x40 >> 2: 0xBEEF}


def test_empty_step_is_identity():
    cfg, bank, arrays, dram, mcu = _bench()
    before = {k: [r[:] for r in v] for k, v in bank.micro.s.items()}
    for cycle in range(20):
        outs, ops, accepted, events, leftover = bank.step(cycle, None, ())
        assert not outs and not ops and not accepted and not events
    assert bank.micro.s == before


def test_backpressure_never_drops(checksum_cfg):
    cfg = SimConfig(input_queue=2, miss_buffer=2, wb_buffer=1, output_queue=2)
    rng = random.Random(5)
    trace = gen_trace(rng, cfg, 150, lines_pool=30)
    want_mem, want_data = flat_reference(trace)
    got_mem, got_data = drive_detailed(cfg, trace)
    assert got_data == want_data  # every request answered exactly once
    assert got_mem == want_mem


def test_cross_abstraction_equivalence_sample():
    cfg = SimConfig()
    rng = random.Random(77)
    for _ in range(25):
        trace = gen_trace(rng, cfg, 90)
        image = {w: rng.randrange(1 << 32) for w in range(0, 600, 7)}
        ref_mem, ref_data = flat_reference(trace, image)
        a_mem, a_data = drive_abstract(cfg, trace, image=image)
        d_mem, d_data = drive_detailed(cfg, trace, image=image)
        assert a_data == ref_data and d_data == ref_data
        assert a_mem == ref_mem and d_mem == ref_mem


# -- lockstep and comparison ----------------------------------------------------


from harness import lockstep_pair


def test_lockstep_purity_sample():
    cfg = SimConfig()
    rng = random.Random(123)
    for _ in range(5):
        lockstep_pair(cfg, gen_trace(rng, cfg, 60))


def test_micro_diff_classification():
    cfg = SimConfig()
    a = DetailedBank(cfg, 0, BankState(cfg, 0)).micro
    b = DetailedBank(cfg, 0, BankState(cfg, 0)).micro
    rel, irr = micro_diff_bits(L2C, 0, a, b)
    assert rel == irr == []
    # a data difference under a clear valid flag is functionally irrelevant
    b.s["input_queue"][2][5] ^= 0x10
    rel, irr = micro_diff_bits(L2C, 0, a, b)
    assert rel == [] and len(irr) == 1
    assert irr[0] == FlipFlopId(L2C, 0, "input_queue", 2, "data", 4)
    # the same difference with the valid flag set is relevant
    a.s["input_queue"][2][0] = b.s["input_queue"][2][0] = 1
    rel, irr = micro_diff_bits(L2C, 0, a, b)
    assert len(rel) == 1 and irr == []
    # scheduling-fairness pointers never count as relevant
    a.s["input_queue"][2][5] ^= 0x10
    a.s["arbiter_fsm"][0][0] ^= 1
    rel, irr = micro_diff_bits(L2C, 0, a, b)
    assert rel == [] and len(irr) == 1


def test_state_divergence_bounds_and_exclusion():
    from uncoresim.detailed.structs import Micro
    cfg = SimConfig()
    a = Micro(bank_schema(cfg))
    b = Micro(bank_schema(cfg))
    assert state_divergence(L2C, a, b) == 0.0
    # flips in entries the reference never filled are excluded entirely
    a.s["miss_buffer"][5][4] ^= 0xFFFF
    assert state_divergence(L2C, a, b) == 0.0
    b.mark_filled("miss_buffer", 5)
    assert state_divergence(L2C, a, b) > 0.0
    # every bit differing over every filled entry gives exactly one
    full = Micro(bank_schema(cfg))
    zeros = Micro(bank_schema(cfg))
    for name, entries, flds in full.schema:
        for e in range(entries):
            zeros.mark_filled(name, e)
            full.mark_filled(name, e)
            for i, (fname, width) in enumerate(flds):
                full.s[name][e][i] = (1 << width) - 1
    assert state_divergence(L2C, full, zeros) == 1.0


def test_irrelevance_soundness_random_forcing():
    """Forcing any invalid-entry bit must never change subsequent outputs."""
    cfg = SimConfig()
    rng = random.Random(31337)
    trace = gen_trace(rng, cfg, 60)
    base_mem, base_data, base_timing = drive_detailed(cfg, trace, collect_timing=True)

    for trial in range(12):
        arrays = BankState(cfg, 0)
        bank = DetailedBank(cfg, 0, arrays)
        bank.last_writer = {}
        dram = {}
        mcu = AbstractMcu(dram, cfg.dram_latency)
        queue = list(trace)
        leftover = ()
        force_at = rng.randrange(10, 300)
        returned = {}
        emitted = {}
        cycle = -1
        idle = 0
        while queue or bank.busy or mcu.busy or leftover or idle < 4:
            cycle += 1
            if cycle == force_at:
                # force a random bit of a currently-invalid entry either way
                names = [n for n in ("input_queue", "miss_buffer", "wb_buffer",
                                     "fill_buffer", "output_queue")]
                name = rng.choice(names)
                rows = bank.micro.s[name]
                invalid = [i for i, r in enumerate(rows) if not r[0]]
                if invalid:
                    entry = rng.choice(invalid)
                    fields = bank.micro.fields[name]
                    fname = rng.choice([f for f in fields if f != "valid"])
                    widths = dict(next(f for n, e, f in bank.micro.schema
                                       if n == name))
                    bit = rng.randrange(widths[fname])
                    if rng.random() < 0.5:
                        rows[entry][fields[fname]] |= (1 << bit)
                    else:
                        rows[entry][fields[fname]] &= ~(1 << bit)
            incoming = queue[0][1] if queue and queue[0][0] <= cycle else None
            resps = tuple(mcu.due(cycle)) + leftover
            outs, ops, accepted, _ev, leftover = bank.step(cycle, incoming, resps)
            if accepted:
                queue.pop(0)
            for op in ops:
                mcu.submit(op, cycle + 1, cfg.line_words)
            for ret in outs:
                returned[ret.req_id] = ret.data
                emitted[ret.req_id] = cycle
            idle = 0 if (queue or bank.busy or mcu.busy or leftover) else idle + 1
            if cycle > 50000:
                raise AssertionError("forced run did not drain")
        assert returned == base_data
        assert emitted == base_timing
