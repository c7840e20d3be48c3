"""Whole-SoC run engine: event-driven accelerated execution.

Cores are blocking, so between packet deliveries there is nothing to compute;
the engine keeps a heap of (cycle, seq, event) entries and jumps from event to
event.  Requests to banks are served atomically by the functional bank model;
during co-simulation the driver detaches selected banks and receives their
traffic through a sink instead.

Termination: all cores halted (done), any trap (whole run ends), watchdog
(no retirement within the window), hard cycle budget, or a deadlock (no
pending events while cores are unhalted, e.g. a dropped return packet).
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

from . import soc
from .abstractmem import BankState
from .config import SimConfig
from .snapshot import Snapshot, encode_state, decode_state, snapshot_base_cycle
from .soc import CoreState, RequestPacket, ReturnPacket, step_core
from .workload import WorkloadProgram

# event codes
_EV_ACT, _EV_RET, _EV_WD = 0, 1, 2

# run status
RUNNING, DONE, TRAP, HANG = "running", "done", "trap", "hang"


class InfraError(RuntimeError):
    """Internal inconsistency: fails the run loudly (never an outcome)."""


class SocSim:
    def __init__(self, cfg: SimConfig, program: WorkloadProgram):
        self.cfg = cfg
        self.program = program
        self.lob = cfg.line_offset_bits
        self.n_banks = cfg.n_banks
        self.cores = [CoreState(c, pc=program.entries[c]) for c in range(cfg.n_cores)]
        self.banks = [BankState(cfg, b) for b in range(cfg.n_banks)]
        self.dram: dict[int, int] = {addr >> 2: word for addr, word in program.image if word}
        self.last_writer: dict[int, int] = {}
        self.pending = [dict() for _ in range(cfg.n_banks)]
        self.heap: list = []
        self.seq = 0
        self.cycle = 0
        self.status = RUNNING
        self.end_cycle: int | None = None
        self.trap_cause = None
        self.halted_count = 0
        self.inflight = [0] * cfg.n_banks
        self.held: set[int] = set()
        self.parked: list[list[RequestPacket]] = [[] for _ in range(cfg.n_banks)]
        self.detached: set[int] = set()
        self.detach_sink = None  # cb(RequestPacket, cycle) during co-simulation
        self.store_trace: list | None = None
        self.request_tap: dict[int, list] | None = None  # bank -> (arrival, pkt)
        self.rng_seed = cfg.master_seed
        self.rng_draws = 0
        self.budget: int | None = None
        self._started = False

    # -- scheduling -----------------------------------------------------------

    def _push(self, cycle: int, code: int, a=None, b=None) -> None:
        heapq.heappush(self.heap, (cycle, self.seq, code, a, b))
        self.seq += 1

    def start(self) -> None:
        if self._started:
            return
        self._started = True
        for c in range(self.cfg.n_cores):
            self._push(0, _EV_ACT, c)
        self._push(self.cfg.watchdog_window, _EV_WD)

    # -- request routing --------------------------------------------------------

    def emit_request(self, core_id: int, req: RequestPacket, cycle: int) -> None:
        bank = (req.addr >> self.lob) % self.n_banks
        if bank in self.detached:
            self.detach_sink(req, cycle)
            return
        if bank in self.held:
            self.parked[bank].append(req)
            return
        if self.request_tap is not None and bank in self.request_tap:
            self.request_tap[bank].append((cycle + self.cfg.xbar_delay, req))
        data, ready = self.banks[bank].service(
            req, cycle, self.dram, self.last_writer, self.pending[bank],
            self.cfg, self.store_trace)
        self.inflight[bank] += 1
        self._push(ready, _EV_RET, core_id,
                   (ReturnPacket(req.req_id, core_id, req.kind, data, ready), bank))

    def deliver_return(self, pkt: ReturnPacket, cycle: int) -> None:
        """Schedule a return produced outside the fast path (co-sim plants)."""
        self._push(cycle, _EV_RET, pkt.core_id, (pkt, None))

    def hold_banks(self, banks: set[int]) -> None:
        self.held |= banks

    def release_banks(self, banks: set[int], cycle: int) -> None:
        self.held -= banks
        for b in sorted(banks):
            parked, self.parked[b] = self.parked[b], []
            for req in parked:
                self.emit_request(req.core_id, req, cycle)

    def quiescent(self, banks: set[int]) -> bool:
        """No transaction in flight at these banks (held packets wait outside)."""
        return all(self.inflight[b] == 0 for b in banks)

    # -- event processing -------------------------------------------------------

    def _handle(self, ev) -> None:
        cycle, _, code, a, b = ev
        if code == _EV_ACT:
            core = self.cores[a]
            req = step_core(core, None, cycle, self.cfg.address_space)
            self._after_step(core, req, cycle)
        elif code == _EV_WD:
            live = soc.check_liveness(self.cores, self.cfg.watchdog_window, cycle)
            if live is soc.Liveness.HUNG:
                self.status = HANG
                self.end_cycle = cycle
            elif self.status == RUNNING:
                self._push(cycle + self.cfg.watchdog_window, _EV_WD)

    def _after_step(self, core: CoreState, req, cycle: int) -> None:
        if req is not None:
            self.emit_request(core.core_id, req, cycle)
            return
        if core.trap is not None:
            self.status = TRAP
            self.trap_cause = core.trap
            self.end_cycle = cycle
            return
        if core.halted:
            self.halted_count += 1
            if self.halted_count == self.cfg.n_cores:
                self.status = DONE
                self.end_cycle = cycle
            return
        if core.phase == 0:
            # retired an ALU/branch op: issue the next fetch directly at the
            # following cycle instead of bouncing through the event heap
            nxt = step_core(core, None, cycle + 1, self.cfg.address_space)
            if nxt is not None:
                self.emit_request(core.core_id, nxt, cycle + 1)
            elif core.trap is not None:
                self.status = TRAP
                self.trap_cause = core.trap
                self.end_cycle = cycle + 1

    def _process_event(self, ev) -> None:
        cycle, _, code, a, b = ev
        if code == _EV_RET:
            pkt, bank = b
            if bank is not None:
                self.inflight[bank] -= 1
            core = self.cores[a]
            if pkt.req_id != core.outstanding:
                return  # unmatched return (possible under injection): ignored
            req = step_core(core, pkt, cycle, self.cfg.address_space)
            self._after_step(core, req, cycle)
        else:
            self._handle(ev)

    def _serve_fast(self, core_id: int, req: RequestPacket, cycle: int) -> None:
        """Fast-path service used by the inlined accelerated loop."""
        if self.detached or self.held or self.request_tap is not None:
            self.emit_request(core_id, req, cycle)
            return
        bank = (req.addr >> self.lob) % self.n_banks
        data, ready = self.banks[bank].service(
            req, cycle, self.dram, self.last_writer, self.pending[bank],
            self.cfg, self.store_trace)
        self.inflight[bank] += 1
        heapq.heappush(self.heap, (ready, self.seq, _EV_RET, core_id,
                                   (ReturnPacket(req.req_id, core_id, req.kind,
                                                 data, ready), bank)))
        self.seq += 1

    def run_events_at(self, cycle: int) -> None:
        """Process exactly the events scheduled for `cycle` (co-sim stepping)."""
        heap = self.heap
        while heap and heap[0][0] <= cycle and self.status == RUNNING:
            ev = heapq.heappop(heap)
            if ev[0] < cycle:
                raise InfraError(f"missed event at {ev[0]} while at {cycle}")
            self._process_event(ev)
        self.cycle = cycle

    def next_event_cycle(self) -> int | None:
        return self.heap[0][0] if self.heap else None

    def advance_until(self, target: int) -> None:
        """Run events up to and including `target`; stops early on terminal."""
        heap = self.heap
        budget = self.budget
        while heap and self.status == RUNNING:
            if heap[0][0] > target:
                break
            ev = heapq.heappop(heap)
            if budget is not None and ev[0] > budget:
                self.status = HANG
                self.end_cycle = budget
                return
            self.cycle = ev[0]
            self._process_event(ev)
        if self.status == RUNNING:
            self.cycle = target

    def run_to_end(self) -> str:
        """Run until a terminal state; returns the status.

        The return-event path is inlined: it executes a couple of million
        times per simulated second and dominates accelerated-mode throughput.
        """
        heap = self.heap
        budget = self.budget
        pop = heapq.heappop
        cores = self.cores
        space = self.cfg.address_space
        serve = self._serve_fast
        while self.status == RUNNING:
            if not heap:
                # cores alive but nothing scheduled: a return was lost
                self.status = HANG
                self.end_cycle = self.cycle + self.cfg.watchdog_window
                break
            ev = pop(heap)
            cycle = ev[0]
            if budget is not None and cycle > budget:
                self.status = HANG
                self.end_cycle = budget
                break
            self.cycle = cycle
            if ev[2] == _EV_RET:
                pkt, bank = ev[4]
                if bank is not None:
                    self.inflight[bank] -= 1
                core = cores[ev[3]]
                if pkt.req_id != core.outstanding:
                    continue  # unmatched return: ignored
                req = step_core(core, pkt, cycle, space)
                # mirror of _after_step, flattened
                if req is not None:
                    serve(core.core_id, req, cycle)
                elif core.trap is not None:
                    self.status = TRAP
                    self.trap_cause = core.trap
                    self.end_cycle = cycle
                elif core.halted:
                    self.halted_count += 1
                    if self.halted_count == self.cfg.n_cores:
                        self.status = DONE
                        self.end_cycle = cycle
                elif core.phase == 0:
                    nxt = step_core(core, None, cycle + 1, space)
                    if nxt is not None:
                        serve(core.core_id, nxt, cycle + 1)
                    elif core.trap is not None:
                        self.status = TRAP
                        self.trap_cause = core.trap
                        self.end_cycle = cycle + 1
            else:
                self._handle(ev)
        if self.status == DONE:
            self.cycle = self.end_cycle
        return self.status

    # -- memory views -------------------------------------------------------------

    def value(self, addr: int) -> int:
        waddr = addr >> 2
        bank = (addr >> self.lob) % self.n_banks
        v = self.banks[bank].lookup_word(waddr)
        if v is not None:
            return v
        return self.dram.get(waddr, 0)

    def memory_map(self) -> dict[int, int]:
        """Functional memory contents: DRAM overlaid with dirty lines."""
        out = dict(self.dram)
        for bank in self.banks:
            lw = bank.line_words
            for s in range(bank.sets):
                for w in range(bank.ways):
                    if bank.state[s][w] == 2:
                        base = bank.tags[s][w] * lw
                        row = bank.data[s][w]
                        for i in range(lw):
                            if row[i]:
                                out[base + i] = row[i]
                            else:
                                out.pop(base + i, None)
        return out

    def output_values(self) -> tuple[int, ...]:
        return tuple(self.value(a) for a in self.program.output_addresses())

    def arch_results(self) -> tuple:
        return tuple((c.pc, tuple(c.regs)) for c in self.cores)

    # -- snapshots ------------------------------------------------------------------

    def state_dict(self) -> dict:
        if any(self.parked) or self.held or self.detached:
            raise InfraError("snapshot requires pure accelerated mode")
        events = []
        for (cy, sq, code, a, b) in sorted(self.heap):
            if code == _EV_RET:
                pkt, bank = b
                events.append((cy, sq, code, a,
                               (pkt.req_id, pkt.core_id, pkt.kind, pkt.data,
                                pkt.deliver_cycle, -1 if bank is None else bank)))
            else:
                events.append((cy, sq, code, a, None))
        return {
            "cycle": self.cycle,
            "seq": self.seq,
            "status": self.status,
            "halted": self.halted_count,
            "cores": [[c.pc, list(c.regs), c.halted,
                       c.trap.value if c.trap else None, c.phase,
                       -1 if c.outstanding is None else c.outstanding,
                       c.next_req_id, list(c.cur_op) if c.cur_op else None,
                       c.retired_count, c.last_retire_cycle]
                      for c in self.cores],
            "banks": [b.to_state() for b in self.banks],
            "dram": dict(self.dram),
            "last_writer": dict(self.last_writer),
            "pending": [dict(p) for p in self.pending],
            "inflight": list(self.inflight),
            "events": events,
            "rng": [self.rng_seed, self.rng_draws],
        }

    def load_state(self, st: dict) -> None:
        from .isa import TrapCause
        self.cycle = st["cycle"]
        self.seq = st["seq"]
        self.status = st["status"]
        self.halted_count = st["halted"]
        for core, row in zip(self.cores, st["cores"]):
            (core.pc, regs, core.halted, trap, core.phase, outst,
             core.next_req_id, cur_op, core.retired_count, core.last_retire_cycle) = row
            core.regs = list(regs)
            core.trap = TrapCause(trap) if trap else None
            core.outstanding = None if outst == -1 else outst
            core.cur_op = tuple(cur_op) if cur_op else None
        for bank, bst in zip(self.banks, st["banks"]):
            bank.load_state(bst)
        self.dram = dict(st["dram"])
        self.last_writer = dict(st["last_writer"])
        self.pending = [dict(p) for p in st["pending"]]
        self.inflight = list(st["inflight"])
        self.heap = []
        for (cy, sq, code, a, b) in st["events"]:
            if code == _EV_RET:
                rid, cid, kind, data, dc, bank = b
                b = (ReturnPacket(rid, cid, kind, data, dc), None if bank == -1 else bank)
            self.heap.append((cy, sq, code, a, b))
        heapq.heapify(self.heap)
        self.rng_seed, self.rng_draws = st["rng"]
        self._started = True

    def take_snapshot(self) -> Snapshot:
        return Snapshot(self.cycle, self.cfg.config_hash(), encode_state(self.state_dict()))

    @classmethod
    def restore_snapshot(cls, cfg: SimConfig, program: WorkloadProgram,
                         snap: Snapshot) -> "SocSim":
        snap.check_config(cfg.config_hash())
        sim = cls(cfg, program)
        sim.load_state(decode_state(snap.payload))
        return sim


# -- golden artifacts ---------------------------------------------------------


@dataclass
class GoldenArtifacts:
    """Everything an injection campaign needs from one error-free run."""
    length: int  # error-free cycle count
    output: tuple[int, ...]
    memory: dict[int, int]
    arch: tuple
    retired: tuple[int, ...]
    snapshots: dict[int, Snapshot]
    last_writer: dict[int, int]


def prepare_golden(cfg: SimConfig, program: WorkloadProgram,
                   with_store_trace: bool = False):
    """One-time error-free accelerated run: snapshots plus reference results.

    Returns (GoldenArtifacts, store_trace or None).
    """
    sim = SocSim(cfg, program)
    if with_store_trace:
        sim.store_trace = []
    sim.start()
    snapshots = {0: sim.take_snapshot()}
    interval = cfg.snapshot_interval
    point = interval
    while True:
        sim.advance_until(point)
        if sim.status != RUNNING:
            break
        snapshots[point] = sim.take_snapshot()
        point += interval
    if sim.status != DONE:
        raise InfraError(
            f"error-free run did not complete (status={sim.status}); "
            "workload or configuration is broken")
    art = GoldenArtifacts(
        length=sim.end_cycle,
        output=sim.output_values(),
        memory=sim.memory_map(),
        arch=sim.arch_results(),
        retired=tuple(c.retired_count for c in sim.cores),
        snapshots={c: s for c, s in snapshots.items() if c <= sim.end_cycle},
        last_writer=dict(sim.last_writer),
    )
    return art, sim.store_trace


def run_accelerated_until(cfg: SimConfig, program: WorkloadProgram,
                          golden: GoldenArtifacts, cycle: int) -> SocSim:
    """Restore the nearest snapshot at or below `cycle` and step up to it."""
    base = snapshot_base_cycle(cycle, cfg.snapshot_interval)
    while base not in golden.snapshots and base > 0:
        base -= cfg.snapshot_interval
    sim = SocSim.restore_snapshot(cfg, program, golden.snapshots[base])
    sim.advance_until(cycle)
    return sim
