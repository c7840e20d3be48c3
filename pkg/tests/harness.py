"""Shared unit-level harnesses: random request traces driven through the
flat-memory reference, the functional bank, and the bit-level bank."""

import random

from uncoresim.abstractmem import AbstractMcu, BankState
from uncoresim.config import SimConfig
from uncoresim.detailed.l2bank import DetailedBank
from uncoresim.soc import LOAD, STORE, FETCH, RequestPacket


def gen_trace(rng: random.Random, cfg: SimConfig, n: int, bank: int = 0,
              lines_pool: int = 24):
    """Random (arrival, RequestPacket) list addressed to one bank.

    The pool is small enough to produce hits, misses, evictions and same-line
    chains; arrivals are non-decreasing with random gaps.
    """
    trace = []
    cycle = 0
    for i in range(n):
        cycle += rng.choice((0, 1, 1, 2, 3, 8))
        line = (rng.randrange(lines_pool) * cfg.n_banks + bank)
        off = rng.randrange(cfg.line_words)
        addr = (line * cfg.line_words + off) * 4
        kind = rng.choice((LOAD, STORE, LOAD, FETCH, STORE))
        data = rng.randrange(1 << 32) if kind == STORE else None
        trace.append((cycle, RequestPacket((i << 4) | rng.randrange(4), i % 4,
                                           kind, addr, data, cycle)))
    return trace


def flat_reference(trace, image=None):
    """Apply the trace to a flat word store in arrival order."""
    mem = dict(image or {})
    returned = {}
    for _, pkt in trace:
        w = pkt.addr >> 2
        if pkt.kind == STORE:
            if pkt.data:
                mem[w] = pkt.data
            else:
                mem.pop(w, None)
            returned[pkt.req_id] = None
        else:
            returned[pkt.req_id] = mem.get(w, 0)
    return mem, returned


def drive_abstract(cfg: SimConfig, trace, bank_id: int = 0, image=None):
    """Serve the trace through the functional bank; returns (memory, data)."""
    bank = BankState(cfg, bank_id)
    dram = dict(image or {})
    pending, last_writer = {}, {}
    returned = {}
    for cycle, pkt in trace:
        data, _ready = bank.service(pkt, cycle, dram, last_writer, pending, cfg)
        returned[pkt.req_id] = data
    mem = dict(dram)
    for w, v in bank.dirty_words().items():
        mem[w] = v
    assert bank.clean_lines_consistent(dram)
    return mem, returned


def lockstep_pair(cfg: SimConfig, trace, check_every: int = 25):
    """Target and golden twins stepped in lockstep on identical inputs.

    Asserts bit-for-bit equality of micro-state, arrays and DRAM at every
    comparison point.  Returns the pair.
    """
    arrays_t = BankState(cfg, 0)
    arrays_g = BankState(cfg, 0)
    t = DetailedBank(cfg, 0, arrays_t)
    g = DetailedBank(cfg, 0, arrays_g)
    t.last_writer = {}
    g.last_writer = {}
    dram_t, dram_g = {}, {}
    mcu_t = AbstractMcu(dram_t, cfg.dram_latency)
    mcu_g = AbstractMcu(dram_g, cfg.dram_latency)
    queue_t, queue_g = list(trace), list(trace)
    left_t = left_g = ()
    horizon = (trace[-1][0] + 800) if trace else 800
    for cycle in range(horizon):
        for which, (bank, mcu, queue) in enumerate(
                ((t, mcu_t, queue_t), (g, mcu_g, queue_g))):
            incoming = queue[0][1] if queue and queue[0][0] <= cycle else None
            left = left_t if which == 0 else left_g
            resps = tuple(mcu.due(cycle)) + left
            outs, ops, accepted, _ev, leftover = bank.step(cycle, incoming, resps)
            if accepted:
                queue.pop(0)
            for op in ops:
                mcu.submit(op, cycle + 1, cfg.line_words)
            if which == 0:
                left_t = tuple(leftover)
            else:
                left_g = tuple(leftover)
        if cycle % check_every == 0:
            assert t.micro.s == g.micro.s
            assert arrays_t.arrays_equal(arrays_g)
            assert dram_t == dram_g
    assert t.micro.s == g.micro.s
    assert arrays_t.arrays_equal(arrays_g)
    assert dram_t == dram_g
    return t, g


def drive_detailed(cfg: SimConfig, trace, bank_id: int = 0, image=None,
                   collect_timing: bool = False):
    """Step the bit-level bank over the trace, then drain it dry."""
    arrays = BankState(cfg, bank_id)
    bank = DetailedBank(cfg, bank_id, arrays)
    bank.last_writer = {}
    dram = dict(image or {})
    mcu = AbstractMcu(dram, cfg.dram_latency)
    queue = list(trace)
    leftover = ()
    returned = {}
    emitted_at = {}
    cycle = -1
    idle = 0
    while queue or bank.busy or mcu.busy or leftover or idle < 4:
        cycle += 1
        if cycle > 400 * (len(trace) + 4):
            raise AssertionError("detailed drive did not drain")
        incoming = None
        if queue and queue[0][0] <= cycle:
            incoming = queue[0][1]
        resps = tuple(mcu.due(cycle)) + leftover
        outs, ops, accepted, _ev, leftover = bank.step(cycle, incoming, resps)
        if accepted:
            queue.pop(0)
        for op in ops:
            mcu.submit(op, cycle + 1, cfg.line_words)
        for ret in outs:
            returned[ret.req_id] = ret.data
            emitted_at[ret.req_id] = cycle
        idle = 0 if (queue or bank.busy or mcu.busy or leftover) else idle + 1
    mem = dict(dram)
    for w, v in arrays.dirty_words().items():
        mem[w] = v
    assert arrays.clean_lines_consistent(dram)
    assert bank.busy == bank.recount_busy() == 0
    if collect_timing:
        return mem, returned, emitted_at
    return mem, returned
