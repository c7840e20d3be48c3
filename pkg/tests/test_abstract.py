import random

import pytest

from harness import drive_abstract, flat_reference, gen_trace
from uncoresim.config import SimConfig
from uncoresim.engine import SocSim
from uncoresim.snapshot import Snapshot, SnapshotError, snapshot_base_cycle
from uncoresim.soc import LOAD, STORE, RequestPacket
from uncoresim.workload import get_workload


def _service(bank_cfg, pkt, bank, dram, pending, cycle=0):
    return bank.service(pkt, cycle, dram, {}, pending, bank_cfg)


def test_load_miss_then_hit_latencies():
    cfg = SimConfig()
    from uncoresim.abstractmem import BankState
    bank = BankState(cfg, 0)
    dram = {0x40 >> 2: 77}
    pending = {}
    data, ready = _service(cfg, RequestPacket(0, 0, LOAD, 0x40, None, 0),
                           bank, dram, pending)
    assert data == 77 and ready == cfg.miss_latency  # cold start: a miss
    data, ready = _service(cfg, RequestPacket(16, 0, LOAD, 0x40, None, 500),
                           bank, dram, pending, cycle=500)
    assert data == 77 and ready == 500 + cfg.hit_latency


def test_store_miss_write_allocates_and_evicts_dirty_victim():
    cfg = SimConfig(sets=2, ways=2)
    from uncoresim.abstractmem import BankState
    bank = BankState(cfg, 0)
    dram = {}
    pending = {}
    # fill both ways of set 0 (bank 0 lines are multiples of n_banks)
    lines = [0, cfg.n_banks * cfg.sets, 2 * cfg.n_banks * cfg.sets]
    addr = lambda line: line * cfg.line_bytes
    _service(cfg, RequestPacket(0, 0, STORE, addr(lines[0]), 0xA, 0), bank, dram, pending)
    _service(cfg, RequestPacket(16, 0, STORE, addr(lines[1]), 0xB, 300), bank, dram, pending)
    # third store to the same set evicts the LRU dirty victim to DRAM
    _service(cfg, RequestPacket(32, 0, STORE, addr(lines[2]), 0xC, 600), bank, dram, pending)
    assert dram[addr(lines[0]) >> 2] == 0xA
    assert bank.probe(lines[0]) is None
    assert bank.probe(lines[1]) is not None and bank.probe(lines[2]) is not None


def test_two_loads_same_address_identical():
    cfg = SimConfig()
    from uncoresim.abstractmem import BankState
    bank = BankState(cfg, 0)
    dram = {0x100 >> 2: 123}
    pending = {}
    d1, _ = _service(cfg, RequestPacket(0, 0, LOAD, 0x100, None, 0), bank, dram, pending)
    d2, _ = _service(cfg, RequestPacket(16, 0, LOAD, 0x100, None, 500), bank, dram, pending)
    assert d1 == d2 == 123


def test_functional_equivalence_vs_flat_reference():
    cfg = SimConfig()
    rng = random.Random(1234)
    for trial in range(50):
        trace = gen_trace(rng, cfg, 120)
        image = {w: rng.randrange(1 << 32) for w in range(0, 400, 3)}
        want_mem, want_data = flat_reference(trace, image)
        got_mem, got_data = drive_abstract(cfg, trace, image=image)
        assert got_data == want_data
        assert got_mem == want_mem


def test_bank_disjointness():
    cfg = SimConfig()
    from uncoresim.abstractmem import BankState
    banks = [BankState(cfg, b) for b in range(cfg.n_banks)]
    dram, pending = {}, {}
    before = [b.to_state() for b in banks[1:]]
    for i in range(50):
        addr = (i * cfg.n_banks) * cfg.line_bytes  # all map to bank 0
        banks[0].service(RequestPacket(i << 4, 0, STORE, addr, i + 1, i * 10),
                         i * 10, dram, {}, pending, cfg)
    assert [b.to_state() for b in banks[1:]] == before


# -- snapshots -------------------------------------------------------------------


def test_snapshot_base_cycle_formula():
    assert snapshot_base_cycle(5_300_000, 2_000_000) == 4_000_000
    assert snapshot_base_cycle(2_000_000, 2_000_000) == 2_000_000
    assert snapshot_base_cycle(1_999_999, 2_000_000) == 0
    with pytest.raises(ValueError):
        snapshot_base_cycle(1, 0)


def test_snapshot_roundtrip_random_cycles(checksum_cfg, checksum_ctx):
    cfg, prog = checksum_cfg, checksum_ctx.program
    rng = random.Random(9)
    base = SocSim(cfg, prog)
    base.start()
    ref = SocSim(cfg, prog)
    ref.start()
    for _ in range(4):
        c = rng.randrange(500, checksum_ctx.golden.length - 2000)
        k = rng.randrange(100, 1500)
        sim = SocSim(cfg, prog)
        sim.start()
        sim.advance_until(c)
        snap = sim.take_snapshot()
        restored = SocSim.restore_snapshot(cfg, prog, snap)
        restored.advance_until(c + k)
        direct = SocSim(cfg, prog)
        direct.start()
        direct.advance_until(c + k)
        assert restored.take_snapshot().payload == direct.take_snapshot().payload


def test_snapshot_file_roundtrip_and_hash_check(tmp_path, checksum_cfg, checksum_ctx):
    sim = SocSim(checksum_cfg, checksum_ctx.program)
    sim.start()
    sim.advance_until(1000)
    snap = sim.take_snapshot()
    path = tmp_path / "s.snap"
    snap.to_file(str(path))
    loaded = Snapshot.from_file(str(path))
    assert loaded == snap
    # restoring under a different geometry is refused
    other = checksum_cfg.replace(n_banks=8)
    with pytest.raises(SnapshotError, match="config hash"):
        SocSim.restore_snapshot(other, checksum_ctx.program, loaded)


def test_snapshot_rejects_bad_magic():
    with pytest.raises(SnapshotError, match="magic"):
        Snapshot.from_bytes(b"NOTASNAP" + b"\0" * 32)


def test_midrun_save_restore_preserves_final_output(checksum_cfg, checksum_ctx):
    cfg, prog, art = checksum_cfg, checksum_ctx.program, checksum_ctx.golden
    sim = SocSim(cfg, prog)
    sim.start()
    sim.advance_until(art.length // 2)
    snap = sim.take_snapshot()
    resumed = SocSim.restore_snapshot(cfg, prog, snap)
    resumed.run_to_end()
    assert resumed.status == "done"
    assert resumed.output_values() == art.output
