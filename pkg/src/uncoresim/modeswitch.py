"""Mixed-mode engine: accelerated <-> co-simulation transitions.

The driver detaches the target component's traffic from the fast functional
path, instantiates the bit-level target, steps everything cycle by cycle, and
checks periodically whether the functional model can take over.  At injection
time the target is forked into a golden twin with a shadowed environment:
from that point on both worlds write DRAM through copy-on-write views over
the frozen pre-injection contents, so the two worlds stay comparable and the
surviving (target) overlay is merged back at exit.

Mode switches happen only at quiescent packet boundaries: traffic to the
target is held and drained before entry and before hand-off, so no packet is
ever lost across a switch.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum

from .abstractmem import (AbstractMcu, BankState, MemView, TxnBank,
                          FILL, WB_ACK, McuOp, McuResp)
from .config import parse_target
from .detailed.crossbar import DetailedCrossbar
from .detailed.l2bank import DetailedBank
from .detailed.mcu import DetailedMcu
from .detailed.structs import (FlipFlopId, Micro, MismatchKind, MismatchReport,
                               micro_diff_bits, L2C, MCU, CCX)
from .engine import SocSim, InfraError, RUNNING, HANG
from .qrr import ParityModel, QrrController, RecordTable, RecoveryStats, PENDING
from .soc import ReturnPacket

HOLD_MARGIN = 600  # input-hold lead time before a planned mode switch
DRAIN_LIMIT = 8192  # safety bound for any drain loop


class ResolutionKind(Enum):
    VANISHED_EARLY = "vanished_early"
    HANDOFF = "handoff"
    EXPIRED = "expired"
    TERMINATED = "terminated"


@dataclass
class CosimResolution:
    kind: ResolutionKind
    at_cycle: int
    corrupted_words: list[tuple[int, int, int]] = field(default_factory=list)
    erroneous_packet_seen: bool = False
    first_erroneous_packet_cycle: int | None = None
    cosim_cycles: int = 0
    recovery: RecoveryStats | None = None
    escaped_outputs: int = 0
    would_stop_at: int | None = None  # early-stop point when forced to run on


def _canon_rets(outs) -> tuple:
    return tuple((p.req_id, p.kind, p.core_id, p.data) for p in outs)


def _canon_resps(outs) -> tuple:
    return tuple((r.kind, r.line, r.data, r.dst_bank) for r in outs)


# ---------------------------------------------------------------------------
# plants: per-target-kind assembly of detailed instances plus wiring
# ---------------------------------------------------------------------------


class L2cPlant:
    """Detailed L2 bank with an abstract MCU environment."""

    kind = L2C

    def __init__(self, sim: SocSim, instance: int, qrr: bool):
        self.sim = sim
        self.cfg = cfg = sim.cfg
        self.instance = instance
        self.target = DetailedBank(cfg, instance, sim.banks[instance])
        self.target.last_writer = sim.last_writer
        self.target.store_trace = sim.store_trace
        self.mcu = AbstractMcu(sim.dram, cfg.dram_latency)
        self.feed: deque = deque()
        self.leftover_resps: tuple = ()
        self.golden: DetailedBank | None = None
        self.golden_mcu: AbstractMcu | None = None
        self.golden_feed: deque = deque()
        self.golden_leftover: tuple = ()
        self.golden_ready = False
        self.frozen = False
        self._feed_held = False
        self.table = RecordTable(cfg.qrr_capacity) if qrr else None
        self.controller = None
        if qrr:
            parity = ParityModel(cfg.qrr_detect_delay, cfg.qrr_gate_delay,
                                 cfg.qrr_immediate_gating)
            self.controller = QrrController(self.table, parity)
        self.replay_queue: deque = deque()
        self.suppress: set[int] = set()
        self.suppressed_count = 0
        self.replay_fed: list = []

    def banks_involved(self) -> set[int]:
        return {self.instance}

    def hold_feed(self, hold: bool) -> None:
        self._feed_held = hold

    def on_engine_request(self, pkt, cycle: int) -> None:
        arrival = cycle + self.cfg.xbar_delay
        self.feed.append((arrival, pkt))
        if self.golden_ready:
            self.golden_feed.append((arrival, pkt))

    def _feed_head(self, feed: deque, cycle: int):
        if self._feed_held or not feed or feed[0][0] > cycle:
            return None
        if self.table is not None and self.table.full:
            return None  # record table backpressure stalls intake upstream
        return feed[0][1]

    def step(self, cycle: int):
        cfg = self.cfg
        incoming = None
        replaying = False
        if self.replay_queue:
            incoming = self.replay_queue[0]
            replaying = True
        elif not (self.controller and self.controller.gating):
            incoming = self._feed_head(self.feed, cycle)

        t_out = ()
        if not self.frozen:
            resps = tuple(self.mcu.due(cycle)) + self.leftover_resps
            outs, ops, accepted, events, leftover = self.target.step(
                cycle, incoming, resps)
            self.leftover_resps = tuple(leftover)
            if accepted:
                if replaying:
                    self.replay_queue.popleft()
                    self.replay_fed.append(incoming)
                else:
                    self.feed.popleft()
                    if self.table is not None:
                        self.table.record(incoming)
            for op in ops:
                self.mcu.submit(op, cycle + 1, cfg.line_words)
            emitted = []
            for ret in outs:
                if ret.req_id in self.suppress:
                    self.suppress.discard(ret.req_id)
                    self.suppressed_count += 1
                    continue
                emitted.append(ret)
                self.sim.deliver_return(ret, cycle + cfg.xbar_delay)
            if self.table is not None:
                for ev, rid in events:
                    if ev == "return_sent":
                        self.table.mark_return_sent(rid)
                    else:
                        self.table.mark_miss_complete(rid)
            t_out = _canon_rets(emitted)

        g_out = ()
        if self.golden_ready:
            # the golden twin mirrors the component's admission behaviour,
            # including the postponed intake during a recovery
            gin = None if (self.controller and self.controller.gating) else \
                self._feed_head(self.golden_feed, cycle)
            gresps = tuple(self.golden_mcu.due(cycle)) + self.golden_leftover
            gouts, gops, gacc, _gev, gleft = self.golden.step(cycle, gin, gresps)
            self.golden_leftover = tuple(gleft)
            if gacc:
                self.golden_feed.popleft()
            for op in gops:
                self.golden_mcu.submit(op, cycle + 1, cfg.line_words)
            g_out = _canon_rets(gouts)
        return t_out, g_out

    def fork_golden(self, cycle: int) -> None:
        cfg = self.cfg
        g = DetailedBank(cfg, self.instance, self.target.arr.clone(cfg))
        self.target.micro.copy_into(g.micro)
        g.busy = self.target.busy
        g.last_writer = {}
        self.golden = g
        # freeze the shared DRAM: both environments write through overlays
        self.mcu.dram = MemView(self.sim.dram)
        self.golden_mcu = AbstractMcu(MemView(self.sim.dram), cfg.dram_latency)
        self.golden_mcu.queue = list(self.mcu.queue)
        self.golden_feed = deque(self.feed)
        self.golden_leftover = tuple(self.leftover_resps)
        self.golden_ready = True

    def merge_target_world(self) -> None:
        """The target world survives: apply its DRAM overlay to the base."""
        if not self.golden_ready:
            return
        view: MemView = self.mcu.dram
        for w, v in view.overlay.items():
            if v is None:
                self.sim.dram.pop(w, None)
            else:
                self.sim.dram[w] = v
        self.mcu.dram = self.sim.dram

    def inject(self, ff: FlipFlopId) -> None:
        if ff.component != L2C or ff.instance != self.instance:
            raise InfraError(f"flip-flop {ff} is not inside target l2c:{self.instance}")
        self.target.micro.flip(ff)
        # a flipped valid flag changes occupancy behind the model's back
        self.target.busy = self.target.recount_busy()

    # -- QRR ------------------------------------------------------------------

    def start_recovery(self, cycle: int) -> None:
        entries = self.controller.begin_recovery()
        self.suppress = {e.packet.req_id for e in entries if e.return_sent}
        self.target.reset()
        self.mcu.queue.clear()  # un-acked responses die with the reset
        self.leftover_resps = ()
        self.replay_queue = deque(e.packet for e in entries)
        self.replay_fed = []
        self.frozen = False

    def recovery_busy(self) -> bool:
        return bool(self.replay_queue) or self.target.busy > 0 or self.mcu.busy

    def golden_busy(self) -> bool:
        return self.golden_ready and (self.golden.busy > 0 or self.golden_mcu.busy
                                      or bool(self.golden_leftover))

    def quiescent(self) -> bool:
        """Internal quiescence; packets still queued outside don't count."""
        return (not self.replay_queue and self.target.busy == 0
                and not self.mcu.busy and not self.leftover_resps
                and not self.golden_busy())

    def drain_leftovers(self, cycle: int) -> None:
        for _, pkt in self.feed:
            self.sim.emit_request(pkt.core_id, pkt, cycle)
        self.feed.clear()

    # -- comparison -------------------------------------------------------------

    def compare(self) -> MismatchReport:
        t, g = self.target, self.golden
        diff_words = self._array_diff()
        if t.micro.s == g.micro.s:
            if not diff_words:
                return MismatchReport(MismatchKind.NO_MISMATCH, [], [], [])
            return MismatchReport(MismatchKind.ARRAY_ONLY_HANDOFF, [], [], diff_words)
        rel, irr = micro_diff_bits(L2C, self.instance, t.micro, g.micro)
        if rel:
            return MismatchReport(MismatchKind.MICROARCH_PERSISTING, rel, irr, diff_words)
        if diff_words:
            return MismatchReport(MismatchKind.ARRAY_ONLY_HANDOFF, [], irr, diff_words)
        return MismatchReport(MismatchKind.FUNCTIONALLY_IRRELEVANT, [], irr, [])

    def _array_diff(self) -> list[tuple[int, int, int]]:
        """Words whose value differs between worlds, now or after eviction.

        Visible value: what a load sees (cached copy of any state, else DRAM).
        Final value: what survives once lines drain (dirty copy, else DRAM;
        a clean copy dies at eviction, exposing the DRAM beneath it).
        """
        t, g = self.target.arr, self.golden.arr
        tview: MemView = self.mcu.dram
        gview: MemView = self.golden_mcu.dram
        lw = self.cfg.line_words
        diff: dict[int, tuple[int, int]] = {}
        arrays_equal = t.tags == g.tags and t.state == g.state and t.data == g.data
        words: set[int] = set(tview.touched) | set(gview.touched)
        if not arrays_equal:
            for side in (t, g):
                for s in range(side.sets):
                    for w in range(side.ways):
                        if side.state[s][w]:
                            base = side.tags[s][w] * lw
                            words.update(range(base, base + lw))

        def values(side: BankState, view: MemView, w: int) -> tuple[int, int]:
            line = w // lw
            way = side.probe(line)
            dram = view.get(w, 0)
            if way is None:
                return dram, dram
            s = side.set_of(line)
            v = side.data[s][way][w % lw]
            return v, (v if side.state[s][way] == 2 else dram)

        for w in sorted(words):
            vis_t, fin_t = values(t, tview, w)
            vis_g, fin_g = values(g, gview, w)
            if vis_t != vis_g:
                diff[w] = (vis_t, vis_g)
            elif fin_t != fin_g:
                diff[w] = (fin_t, fin_g)
        return [(w, a, b) for w, (a, b) in sorted(diff.items())]

    def target_micro(self) -> Micro:
        return self.target.micro

    def golden_micro(self) -> Micro:
        return self.golden.micro


class McuPlant:
    """Detailed memory controller fed by split-transaction functional banks."""

    kind = MCU

    def __init__(self, sim: SocSim, instance: int, qrr: bool):
        self.sim = sim
        self.cfg = cfg = sim.cfg
        self.instance = instance
        self.group = [b for b in range(cfg.n_banks) if cfg.mcu_of_bank(b) == instance]
        self.target = DetailedMcu(cfg, instance, sim.dram)
        self.tables: dict[int, RecordTable | None] = {}
        self.txn_banks: dict[int, TxnBank] = {}
        for b in self.group:
            table = RecordTable(cfg.qrr_capacity) if qrr else None
            self.tables[b] = table
            tb = TxnBank(sim.banks[b], cfg, sim.dram, sim.last_writer,
                         record_table=table, store_trace=sim.store_trace)
            tb.send_return = self._deliver_return
            tb.send_op = self._send_op
            self.txn_banks[b] = tb
        self.feed: deque = deque()
        self.op_wire: deque = deque()
        self.resp_wire: deque = deque()
        self.golden: DetailedMcu | None = None
        self.golden_op_feed: deque = deque()
        self.golden_ready = False
        self.frozen = False
        self._feed_held = False
        self.controller = None
        if qrr:
            parity = ParityModel(cfg.qrr_detect_delay, cfg.qrr_gate_delay,
                                 cfg.qrr_immediate_gating)
            self.controller = QrrController(RecordTable(1 << 30), parity)
        self.replay_fed: list = []
        self.suppressed_count = 0

    def banks_involved(self) -> set[int]:
        return set(self.group)

    def hold_feed(self, hold: bool) -> None:
        self._feed_held = hold

    def _deliver_return(self, ret: ReturnPacket, at_cycle: int) -> None:
        self.sim.deliver_return(ret, at_cycle + self.cfg.xbar_delay)

    def _send_op(self, op: McuOp, cycle: int) -> None:
        self.op_wire.append((cycle + 1, op))
        if self.golden_ready:
            self.golden_op_feed.append((cycle + 1, op))

    def on_engine_request(self, pkt, cycle: int) -> None:
        self.feed.append((cycle + self.cfg.xbar_delay, pkt))

    def step(self, cycle: int):
        cfg = self.cfg
        while self.resp_wire and self.resp_wire[0][0] <= cycle:
            _, resp = self.resp_wire.popleft()
            self.txn_banks[resp.dst_bank % cfg.n_banks].on_mcu_resp(resp, cycle)
        gating = self.controller is not None and self.controller.gating
        while self.feed and self.feed[0][0] <= cycle and not self._feed_held and not gating:
            _, pkt = self.feed[0]
            bank = (pkt.addr >> cfg.line_offset_bits) % cfg.n_banks
            table = self.tables.get(bank)
            if table is not None and table.full:
                break
            self.feed.popleft()
            self.txn_banks[bank].on_request(pkt, cycle)

        t_out = ()
        if not self.frozen:
            op = None
            if self.op_wire and self.op_wire[0][0] <= cycle:
                op = self.op_wire[0][1]
            outs, accepted = self.target.step(cycle, op)
            if accepted:
                self.op_wire.popleft()
            for r in outs:
                self.resp_wire.append((cycle + 1, r))
            t_out = _canon_resps(outs)

        g_out = ()
        if self.golden_ready:
            gop = None
            if self.golden_op_feed and self.golden_op_feed[0][0] <= cycle:
                gop = self.golden_op_feed[0][1]
            gouts, gacc = self.golden.step(cycle, gop)
            if gacc:
                self.golden_op_feed.popleft()
            g_out = _canon_resps(gouts)
        return t_out, g_out

    def fork_golden(self, cycle: int) -> None:
        g = DetailedMcu(self.cfg, self.instance, MemView(self.sim.dram))
        self.target.micro.copy_into(g.micro)
        g.busy = self.target.busy
        self.golden = g
        self.target.dram = MemView(self.sim.dram)  # freeze the shared base
        self.golden_op_feed = deque(self.op_wire)
        self.golden_ready = True

    def merge_target_world(self) -> None:
        if not self.golden_ready:
            return
        view: MemView = self.target.dram
        for w, v in view.overlay.items():
            if v is None:
                self.sim.dram.pop(w, None)
            else:
                self.sim.dram[w] = v
        self.target.dram = self.sim.dram

    def inject(self, ff: FlipFlopId) -> None:
        if ff.component != MCU or ff.instance != self.instance:
            raise InfraError(f"flip-flop {ff} is not inside target mcu:{self.instance}")
        self.target.micro.flip(ff)
        self.target.busy = self.target.recount_busy()

    # -- QRR: detection in the MCU invokes its banks' controllers too --
    # (the banks replay, the MCU resets) -------------------------------

    def start_recovery(self, cycle: int) -> None:
        self.controller.begin_recovery()
        self.target.reset()
        self.op_wire.clear()
        self.resp_wire.clear()
        self.replay_fed = []
        replayed = 0
        for b in self.group:
            fed = self.txn_banks[b].reset_and_replay(cycle)
            self.replay_fed.extend(fed)
            replayed += len(fed)
        self.controller.stats.entries_replayed = replayed
        self.frozen = False

    def recovery_busy(self) -> bool:
        return (any(tb.busy for tb in self.txn_banks.values())
                or bool(self.op_wire) or bool(self.resp_wire)
                or self.target.busy > 0)

    def golden_busy(self) -> bool:
        return self.golden_ready and (self.golden.busy > 0 or bool(self.golden_op_feed))

    def quiescent(self) -> bool:
        """Memory-controller side quiet.  A bank transaction whose fill was
        misrouted by a corrupted MCU will never complete; it stays parked and
        its core simply never gets a return (a hang, observed downstream)."""
        return (not self.op_wire and not self.resp_wire
                and self.target.busy == 0
                and not self.golden_busy())

    def drain_leftovers(self, cycle: int) -> None:
        for _, pkt in self.feed:
            self.sim.emit_request(pkt.core_id, pkt, cycle)
        self.feed.clear()

    def compare(self) -> MismatchReport:
        t, g = self.target, self.golden
        tview: MemView = t.dram
        gview: MemView = g.dram
        lw = self.cfg.line_words
        diff_words = []
        for w in sorted(tview.touched | gview.touched):
            a, b = tview.get(w, 0), gview.get(w, 0)
            if a == b:
                continue
            # the banks are shared state between the worlds here: a dirty
            # cached copy shadows both DRAM views identically and its
            # writeback will land in whichever world survives
            line = w // lw
            bank = self.sim.banks[line % self.cfg.n_banks]
            way = bank.probe(line)
            if way is not None and bank.state[bank.set_of(line)][way] == 2:
                continue
            diff_words.append((w, a, b))
        if t.micro.s == g.micro.s:
            if not diff_words:
                return MismatchReport(MismatchKind.NO_MISMATCH, [], [], [])
            return MismatchReport(MismatchKind.ARRAY_ONLY_HANDOFF, [], [], diff_words)
        rel, irr = micro_diff_bits(MCU, self.instance, t.micro, g.micro)
        if rel:
            return MismatchReport(MismatchKind.MICROARCH_PERSISTING, rel, irr, diff_words)
        if diff_words:
            return MismatchReport(MismatchKind.ARRAY_ONLY_HANDOFF, [], irr, diff_words)
        return MismatchReport(MismatchKind.FUNCTIONALLY_IRRELEVANT, [], irr, [])

    def target_micro(self) -> Micro:
        return self.target.micro

    def golden_micro(self) -> Micro:
        return self.golden.micro


class CcxPlant:
    """Detailed crossbar carrying all core<->bank traffic; banks stay abstract.

    The golden twin receives the same inputs as the target (including bank
    returns computed in the target's world): it detects residual corrupt bits
    and output divergence, while corruption that escaped into the shared world
    is already accounted as an erroneous packet.
    """

    kind = CCX

    def __init__(self, sim: SocSim, instance: int, qrr: bool):
        self.sim = sim
        self.cfg = cfg = sim.cfg
        self.instance = instance
        self.target = DetailedCrossbar(cfg)
        self.core_wire: deque = deque()
        self.bank_rets: list = []  # sorted (ready, seq, bank, pkt)
        self._retseq = 0
        self.rejected_reqs: list = []
        self.rejected_rets: list = []
        self.golden: DetailedCrossbar | None = None
        self.golden_core_feed: deque = deque()
        self.golden_rets: list = []
        self.g_rejected_reqs: list = []
        self.g_rejected_rets: list = []
        self.golden_ready = False
        self.frozen = False
        self._feed_held = False
        self.controller = None  # crossbar is outside QRR coverage
        self.table = None

    def banks_involved(self) -> set[int]:
        return set(range(self.cfg.n_banks))

    def hold_feed(self, hold: bool) -> None:
        self._feed_held = hold

    def on_engine_request(self, pkt, cycle: int) -> None:
        self.core_wire.append((cycle, pkt))
        if self.golden_ready:
            self.golden_core_feed.append((cycle, pkt))

    def step(self, cycle: int):
        cfg = self.cfg
        sim = self.sim
        core_in = list(self.rejected_reqs)
        self.rejected_reqs = []
        if not self._feed_held:
            while self.core_wire and self.core_wire[0][0] <= cycle:
                core_in.append(self.core_wire.popleft()[1])
        rets_in = list(self.rejected_rets)
        self.rejected_rets = []
        while self.bank_rets and self.bank_rets[0][0] <= cycle:
            _, _, bank, pkt = self.bank_rets.pop(0)
            rets_in.append((bank, pkt))

        t_out = ()
        if not self.frozen:
            reqs, rets, rej_q, rej_r = self.target.step(cycle, core_in, rets_in)
            self.rejected_reqs = rej_q
            self.rejected_rets = rej_r
            for bank, pkt in reqs:
                data, ready = sim.banks[bank].service(
                    pkt, cycle, sim.dram, sim.last_writer, sim.pending[bank],
                    cfg, sim.store_trace)
                ready -= 2 * cfg.xbar_delay  # service() prices in the crossbar
                ret_pkt = ReturnPacket(pkt.req_id, pkt.core_id, pkt.kind, data, ready)
                self.bank_rets.append((ready, self._retseq, bank, ret_pkt))
                if self.golden_ready:
                    self.golden_rets.append((ready, self._retseq, bank, ret_pkt))
                    self.golden_rets.sort()
                self._retseq += 1
            self.bank_rets.sort()
            for ret in rets:
                sim.deliver_return(ret, cycle + 1)
            t_out = _canon_rets(rets)

        g_out = ()
        if self.golden_ready:
            gc = list(self.g_rejected_reqs)
            self.g_rejected_reqs = []
            if not self._feed_held:  # the twin mirrors the hold
                while self.golden_core_feed and self.golden_core_feed[0][0] <= cycle:
                    gc.append(self.golden_core_feed.popleft()[1])
            gr = list(self.g_rejected_rets)
            self.g_rejected_rets = []
            while self.golden_rets and self.golden_rets[0][0] <= cycle:
                _, _, bank, pkt = self.golden_rets.pop(0)
                gr.append((bank, pkt))
            _, grets, grq, grr = self.golden.step(cycle, gc, gr)
            self.g_rejected_reqs = grq
            self.g_rejected_rets = grr
            g_out = _canon_rets(grets)
        return t_out, g_out

    def fork_golden(self, cycle: int) -> None:
        g = DetailedCrossbar(self.cfg)
        self.target.micro.copy_into(g.micro)
        g.busy = self.target.busy
        self.golden = g
        self.golden_core_feed = deque(self.core_wire)
        self.golden_rets = list(self.bank_rets)
        self.g_rejected_reqs = list(self.rejected_reqs)
        self.g_rejected_rets = list(self.rejected_rets)
        self.golden_ready = True

    def merge_target_world(self) -> None:
        pass  # banks and DRAM are shared state already

    def inject(self, ff: FlipFlopId) -> None:
        if ff.component != CCX:
            raise InfraError(f"flip-flop {ff} is not inside the crossbar")
        self.target.micro.flip(ff)
        self.target.busy = self.target.recount_busy()

    def quiescent(self) -> bool:
        return (not self.bank_rets
                and not self.rejected_reqs and not self.rejected_rets
                and self.target.busy == 0
                and not self.golden_rets
                and not self.g_rejected_reqs and not self.g_rejected_rets
                and (self.golden is None or self.golden.busy == 0))

    def drain_leftovers(self, cycle: int) -> None:
        for _, pkt in self.core_wire:
            self.sim.emit_request(pkt.core_id, pkt, cycle)
        self.core_wire.clear()

    def compare(self) -> MismatchReport:
        t, g = self.target, self.golden
        if t.micro.s == g.micro.s:
            return MismatchReport(MismatchKind.NO_MISMATCH, [], [], [])
        rel, irr = micro_diff_bits(CCX, 0, t.micro, g.micro)
        if rel:
            return MismatchReport(MismatchKind.MICROARCH_PERSISTING, rel, irr, [])
        return MismatchReport(MismatchKind.FUNCTIONALLY_IRRELEVANT, [], irr, [])

    def target_micro(self) -> Micro:
        return self.target.micro

    def golden_micro(self) -> Micro:
        return self.golden.micro


PLANTS = {L2C: L2cPlant, MCU: McuPlant, CCX: CcxPlant}


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


class CosimContext:
    """One co-simulation episode: entry, warm-up, injection, resolution."""

    def __init__(self, sim: SocSim, target: str | None = None):
        if sim.detached:
            raise InfraError("already in co-simulation mode")
        self.sim = sim
        cfg = sim.cfg
        kind, inst = parse_target(cfg if target is None else cfg.replace(target=target))
        qrr = cfg.qrr_enabled and kind in (L2C, MCU)
        self.plant = PLANTS[kind](sim, inst, qrr)
        self.kind = kind
        self.instance = inst
        self.entered_at = None
        self.injected_at: int | None = None
        self.erroneous_packet_seen = False
        self.first_erroneous_cycle: int | None = None
        self.escaped_outputs = 0
        self.recovery_stats: RecoveryStats | None = None
        self._gate_at: int | None = None
        self._recovering = False
        self._post_recovery_check = False

    # -- entry ------------------------------------------------------------------

    def enter(self, cycle: int) -> None:
        sim = self.sim
        banks = self.plant.banks_involved()
        if not sim.quiescent(banks):
            raise InfraError("co-simulation entry requires a quiescent target")
        sim.detached = set(banks)
        sim.detach_sink = self.plant.on_engine_request
        self.entered_at = cycle

    def step_cycle(self, cycle: int) -> None:
        """One aligned cycle: engine events first, then the plant."""
        self.sim.run_events_at(cycle)
        qrrc = self.plant.controller
        if qrrc is not None and qrrc.phase == PENDING and qrrc.due_for_reset(cycle):
            self.plant.start_recovery(cycle)
            self._recovering = True
        t_out, g_out = self.plant.step(cycle)
        if self.plant.golden_ready and not self._recovering and not self.plant.frozen:
            if t_out != g_out:
                if not self.erroneous_packet_seen:
                    self.erroneous_packet_seen = True
                    self.first_erroneous_cycle = cycle
                if self._gate_at is not None and cycle <= self._gate_at:
                    self.escaped_outputs += 1
        if self._recovering and not self.plant.recovery_busy() \
                and not self.plant.golden_busy():
            report = self.plant.compare()
            clean = report.kind in (MismatchKind.NO_MISMATCH,
                                    MismatchKind.FUNCTIONALLY_IRRELEVANT)
            self.recovery_stats = qrrc.finish_recovery(
                cycle, clean and not self.escaped_outputs)
            self.recovery_stats.suppressed_returns = getattr(
                self.plant, "suppressed_count", 0)
            self._recovering = False
            self._post_recovery_check = True

    # -- injection ----------------------------------------------------------------

    def inject(self, ff: FlipFlopId, cycle: int, parity_covered: bool) -> None:
        if self.injected_at is not None:
            raise InfraError("one injection per run")
        self.plant.fork_golden(cycle)
        self.plant.inject(ff)
        self.injected_at = cycle
        qrrc = self.plant.controller
        if qrrc is not None and parity_covered:
            qrrc.on_flip(cycle)
            if qrrc.parity.immediate_gating:
                self.plant.frozen = True
                self._gate_at = cycle
            else:
                self._gate_at = cycle + qrrc.parity.local_gate_delay

    def maybe_freeze(self, cycle: int) -> None:
        """Assert delayed gating for the non-immediate parity model.

        The component executes for local_gate_delay cycles after the flip
        before writes and valids gate: that window is where escapes happen.
        """
        qrrc = self.plant.controller
        if (qrrc is not None and qrrc.phase == PENDING and not self.plant.frozen
                and self._gate_at is not None and cycle > self._gate_at):
            self.plant.frozen = True

    # -- resolution ----------------------------------------------------------------

    def run_until_resolution(self, check_interval: int | None = None,
                             cap: int | None = None,
                             early_stop: bool = True) -> CosimResolution:
        """Step cycle by cycle, periodically compare, stop when resolvable."""
        sim = self.sim
        cfg = sim.cfg
        check = check_interval or cfg.check_interval
        cap = cap or cfg.cosim_cap
        start = self.injected_at
        if start is None:
            raise InfraError("inject before running to resolution")
        cycle = start
        would_stop = None
        while True:
            cycle += 1
            self.maybe_freeze(cycle)
            self.step_cycle(cycle)
            if sim.status != RUNNING:
                return self._finish(ResolutionKind.TERMINATED, cycle, [])
            if sim.budget is not None and cycle > sim.budget:
                sim.status = HANG
                sim.end_cycle = sim.budget
                return self._finish(ResolutionKind.TERMINATED, cycle, [])
            recovering = self._recovering or (
                self.plant.controller is not None and self.plant.controller.gating)
            if recovering:
                continue
            boundary = self._post_recovery_check or (cycle - start) % check == 0
            if not boundary:
                continue
            self._post_recovery_check = False
            report = self.plant.compare()
            kind = report.kind
            if kind in (MismatchKind.NO_MISMATCH, MismatchKind.FUNCTIONALLY_IRRELEVANT):
                if not self.erroneous_packet_seen:
                    if early_stop:
                        return self._finish(ResolutionKind.VANISHED_EARLY, cycle, [])
                    if would_stop is None:
                        would_stop = cycle
                    if self.plant.quiescent():
                        res = self._handoff(cycle)
                        res.would_stop_at = would_stop
                        return res
                    continue
                return self._drain_and_handoff(cycle, would_stop)
            if kind == MismatchKind.ARRAY_ONLY_HANDOFF:
                return self._drain_and_handoff(cycle, would_stop)
            if cycle - start >= cap:
                return self._finish(ResolutionKind.EXPIRED, cycle, [])

    def _drain_and_handoff(self, cycle: int, would_stop) -> CosimResolution:
        """Stop new target traffic, run both worlds dry, then hand back."""
        self.plant.hold_feed(True)
        sim = self.sim
        deadline = cycle + DRAIN_LIMIT
        while not self.plant.quiescent():
            cycle += 1
            self.step_cycle(cycle)
            if sim.status != RUNNING:
                return self._finish(ResolutionKind.TERMINATED, cycle, [])
            if cycle > deadline:
                raise InfraError("hand-off drain did not converge")
        res = self._handoff(cycle)
        res.would_stop_at = would_stop
        return res

    def _handoff(self, cycle: int) -> CosimResolution:
        report = self.plant.compare()
        if report.kind is MismatchKind.MICROARCH_PERSISTING:
            raise InfraError("hand-off reached with persisting micro-state error")
        words = [(w, a, b) for (w, a, b) in report.diff_words]
        return self._finish(ResolutionKind.HANDOFF, cycle, words)

    def _finish(self, kind: ResolutionKind, cycle: int, words) -> CosimResolution:
        res = CosimResolution(
            kind=kind,
            at_cycle=cycle,
            corrupted_words=words,
            erroneous_packet_seen=self.erroneous_packet_seen,
            first_erroneous_packet_cycle=self.first_erroneous_cycle,
            cosim_cycles=cycle - (self.injected_at if self.injected_at is not None
                                  else self.entered_at),
            recovery=self.recovery_stats,
            escaped_outputs=self.escaped_outputs,
        )
        if kind in (ResolutionKind.HANDOFF, ResolutionKind.TERMINATED):
            self.exit_to_accelerated(cycle)
        return res

    def exit_to_accelerated(self, cycle: int) -> None:
        """Transfer state back and resume the functional path."""
        sim = self.sim
        self.plant.merge_target_world()
        sim.detached = set()
        sim.detach_sink = None
        self.plant.hold_feed(False)
        self.plant.drain_leftovers(cycle)

    def abandon(self) -> None:
        """Expired or vanished-early: the episode ends without hand-off."""
        self.sim.detached = set()
        self.sim.detach_sink = None

    def run_transparent(self, n_cycles: int) -> int:
        """No-injection episode: step n cycles, drain, hand back.

        Mode switching itself must not change the application outcome; this
        is the path the transparency checks drive.  Returns the exit cycle.
        """
        sim = self.sim
        cycle = self.entered_at
        end = self.entered_at + n_cycles
        while cycle < end and sim.status == RUNNING:
            cycle += 1
            self.step_cycle(cycle)
        if sim.status != RUNNING:
            self.exit_to_accelerated(cycle)
            return cycle
        self.plant.hold_feed(True)
        deadline = cycle + DRAIN_LIMIT
        while not self.plant.quiescent() and sim.status == RUNNING:
            cycle += 1
            self.step_cycle(cycle)
            if cycle > deadline:
                raise InfraError("transparent drain did not converge")
        self.exit_to_accelerated(cycle)
        return cycle


# ---------------------------------------------------------------------------
# entry orchestration
# ---------------------------------------------------------------------------


def enter_cosim_at(sim: SocSim, entry_cycle: int, target: str | None = None) -> CosimContext:
    """Drive the run to a quiescent boundary at `entry_cycle` and enter.

    Traffic to the target is held HOLD_MARGIN cycles ahead so outstanding
    transactions drain; held packets are re-issued into the co-sim plant.
    """
    ctx = CosimContext(sim, target)
    banks = ctx.plant.banks_involved()
    sim.start()
    if entry_cycle <= HOLD_MARGIN:
        entry_cycle = 0  # too early for a clean hold window: enter at reset
    if entry_cycle > 0:
        hold_at = entry_cycle - HOLD_MARGIN
        sim.advance_until(hold_at)
        if sim.status != RUNNING:
            raise InfraError("run terminated before co-simulation entry")
        sim.hold_banks(banks)
        sim.advance_until(entry_cycle)
        if sim.status != RUNNING:
            raise InfraError("run terminated during the entry hold")
        if not sim.quiescent(banks):
            raise InfraError("target did not drain before co-simulation entry")
        ctx.enter(entry_cycle)
        held = banks & sim.held
        sim.held -= banks
        for b in sorted(held):
            parked, sim.parked[b] = sim.parked[b], []
            for req in parked:
                ctx.plant.on_engine_request(req, entry_cycle)
    else:
        ctx.enter(0)
        ctx.step_cycle(0)  # reset-time entry: cycle 0 belongs to the episode
    return ctx
