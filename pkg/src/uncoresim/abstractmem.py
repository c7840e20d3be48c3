"""Functional model of the memory side: L2 bank arrays, DRAM, MCU messages.

The fast path serves a request atomically at arrival (probe, evict, fill,
apply) and only the return is delayed, which keeps whole-run simulation
event-driven.  Functional values are exact; timing uses fixed hit/miss
latencies.  The split-transaction wrapper (TxnBank) exposes the same bank
arrays over an explicit fill/writeback message protocol for co-simulation
against a detailed memory controller, including the ack discipline that
quick-replay recovery relies on: a dirty victim stays valid in the arrays
until its writeback is acknowledged, so a reset can never lose dirty data.

DRAM is a sparse word-address -> word dict; unwritten words read as zero and
zero stores delete their key, so equal contents imply equal dicts.
"""

from __future__ import annotations

from dataclasses import dataclass

from .config import SimConfig
from .soc import STORE, RequestPacket, ReturnPacket

FILL, WRITEBACK = 0, 1
WB_ACK = 1


class MemView:
    """Copy-on-write overlay over a base DRAM dict.

    The golden twin's environment writes land in the overlay, leaving the
    run's real DRAM untouched; divergence checks only need to visit touched
    keys.  A zero write is recorded as None so the view keeps the canonical
    zero-is-absent reading of the base dict.
    """

    __slots__ = ("base", "overlay", "touched")

    def __init__(self, base: dict):
        self.base = base
        self.overlay: dict[int, int | None] = {}
        self.touched: set[int] = set()

    def get(self, key: int, default: int = 0):
        if key in self.overlay:
            v = self.overlay[key]
            return v if v is not None else default
        return self.base.get(key, default)

    def write(self, key: int, value: int) -> None:
        self.touched.add(key)
        self.overlay[key] = value if value else None


@dataclass(slots=True)
class McuOp:
    kind: int  # FILL or WRITEBACK
    line: int  # line address (addr >> line_offset_bits)
    data: tuple | None  # line words for writebacks
    src_bank: int


@dataclass(slots=True)
class McuResp:
    kind: int  # FILL or WB_ACK
    line: int
    data: tuple | None  # line words for fills
    dst_bank: int


def dram_write(dram, waddr: int, value: int) -> None:
    if type(dram) is MemView:
        dram.write(waddr, value)
    elif value:
        dram[waddr] = value
    else:
        dram.pop(waddr, None)


class BankState:
    """Set-associative write-allocate writeback arrays for one L2 bank.

    Tags hold full line addresses (globally unique), LRU order lives with the
    line-state array and is transferred between modes along with it.
    """

    def __init__(self, cfg: SimConfig, bank_id: int):
        self.bank_id = bank_id
        self.sets = cfg.sets
        self.ways = cfg.ways
        self.line_words = cfg.line_words
        self.n_banks = cfg.n_banks
        self.lob = cfg.line_offset_bits
        # geometry is power-of-two (enforced by the config): shift/mask math
        self._bank_shift = (cfg.n_banks - 1).bit_length()
        self._set_mask = cfg.sets - 1
        self._off_mask = cfg.line_words - 1
        self.tags = [[-1] * cfg.ways for _ in range(cfg.sets)]
        self.state = [[0] * cfg.ways for _ in range(cfg.sets)]  # 0=INV 1=CLEAN 2=DIRTY
        self.data = [[[0] * cfg.line_words for _ in range(cfg.ways)] for _ in range(cfg.sets)]
        self.lru = [list(range(cfg.ways)) for _ in range(cfg.sets)]  # front = MRU

    # -- geometry -----------------------------------------------------------

    def set_of(self, line: int) -> int:
        return (line >> self._bank_shift) & self._set_mask

    def probe(self, line: int) -> int | None:
        s = self.set_of(line)
        tags = self.tags[s]
        state = self.state[s]
        for w in range(self.ways):
            if state[w] and tags[w] == line:
                return w
        return None

    def touch(self, s: int, w: int) -> None:
        lru = self.lru[s]
        lru.remove(w)
        lru.insert(0, w)

    def choose_victim(self, s: int, reserved: set[int] | frozenset = frozenset()) -> int | None:
        state = self.state[s]
        for w in range(self.ways):
            if state[w] == 0 and w not in reserved:
                return w
        for w in reversed(self.lru[s]):
            if w not in reserved:
                return w
        return None

    # -- fast functional path -------------------------------------------------

    def service(self, pkt: RequestPacket, cycle: int, dram: dict,
                last_writer: dict, pending: dict, cfg: SimConfig,
                store_trace: list | None = None):
        """Serve one request atomically; returns (data_or_None, deliver_cycle).

        `pending` maps line -> fill completion cycle, used only to order
        returns behind an in-progress fill of the same line.
        """
        addr = pkt.addr
        line = addr >> self.lob
        s = (line >> self._bank_shift) & self._set_mask
        tags = self.tags[s]
        state = self.state[s]
        way = None
        for w in range(self.ways):
            if state[w] and tags[w] == line:
                way = w
                break
        base_ready = cycle
        if pending:
            p = pending.get(line)
            if p is not None:
                if p > cycle:
                    base_ready = p
                else:
                    del pending[line]
        ret_base = base_ready
        if way is None:
            way = self.choose_victim(s)
            if state[way] == 2:  # dirty victim: write back
                vbase = tags[way] * self.line_words
                vdata = self.data[s][way]
                for i in range(self.line_words):
                    dram_write(dram, vbase + i, vdata[i])
            lbase = line * self.line_words
            row = self.data[s][way]
            get = dram.get
            for i in range(self.line_words):
                row[i] = get(lbase + i, 0)
            tags[way] = line
            state[way] = 1
            fill_done = base_ready + cfg.miss_latency - cfg.hit_latency
            pending[line] = fill_done
            # stores are acknowledged early, at miss-buffer allocation time;
            # the fill continues in the background
            if pkt.kind != STORE:
                ret_base = fill_done
        lru = self.lru[s]
        if lru[0] != way:
            lru.remove(way)
            lru.insert(0, way)
        if pkt.kind == STORE:
            self.data[s][way][(addr >> 2) & self._off_mask] = pkt.data
            state[way] = 2
            waddr = addr >> 2
            last_writer[waddr] = cycle
            if store_trace is not None:
                store_trace.append((cycle, waddr, pkt.data))
            return None, ret_base + cfg.hit_latency
        return self.data[s][way][(addr >> 2) & self._off_mask], ret_base + cfg.hit_latency

    # -- functional views -----------------------------------------------------

    def dirty_words(self) -> dict[int, int]:
        out = {}
        lw = self.line_words
        for s in range(self.sets):
            for w in range(self.ways):
                if self.state[s][w] == 2:
                    base = self.tags[s][w] * lw
                    row = self.data[s][w]
                    for i in range(lw):
                        if row[i]:
                            out[base + i] = row[i]
        return out

    def lookup_word(self, waddr: int) -> int | None:
        """Value of a word if this bank holds its line, else None."""
        line = waddr // self.line_words
        w = self.probe(line)
        if w is None:
            return None
        return self.data[self.set_of(line)][w][waddr % self.line_words]

    def clean_lines_consistent(self, dram: dict) -> bool:
        lw = self.line_words
        for s in range(self.sets):
            for w in range(self.ways):
                if self.state[s][w] == 1:
                    base = self.tags[s][w] * lw
                    row = self.data[s][w]
                    if any(row[i] != dram.get(base + i, 0) for i in range(lw)):
                        return False
        return True

    # -- snapshot -------------------------------------------------------------

    def to_state(self):
        return {
            "tags": [row[:] for row in self.tags],
            "state": [row[:] for row in self.state],
            "data": [[line[:] for line in row] for row in self.data],
            "lru": [row[:] for row in self.lru],
        }

    def load_state(self, st) -> None:
        self.tags = [row[:] for row in st["tags"]]
        self.state = [row[:] for row in st["state"]]
        self.data = [[line[:] for line in row] for row in st["data"]]
        self.lru = [row[:] for row in st["lru"]]

    def arrays_equal(self, other: "BankState") -> bool:
        return (self.tags == other.tags and self.state == other.state
                and self.data == other.data)

    def clone(self, cfg: SimConfig) -> "BankState":
        c = BankState(cfg, self.bank_id)
        c.load_state(self.to_state())
        return c


class TxnBank:
    """Split-transaction view of a bank for co-simulation with a detailed MCU.

    Hits behave like the fast path; misses become explicit fill/writeback
    transactions so corrupted MCU state can corrupt fills and DRAM.  A dirty
    victim stays valid in the arrays until its writeback is acknowledged,
    making reset-and-replay recovery lossless.  Requests to a line with an
    in-flight transaction (or an in-flight victim writeback) are chained in
    arrival order.
    """

    def __init__(self, bank: BankState, cfg: SimConfig, dram, last_writer: dict,
                 record_table=None, store_trace: list | None = None):
        self.bank = bank
        self.cfg = cfg
        self.dram = dram
        self.last_writer = last_writer
        self.table = record_table
        self.store_trace = store_trace
        self.txns: dict[int, dict] = {}  # line -> transaction
        self.wb_lines: dict[int, dict] = {}  # victim line -> owning txn
        self.set_waiters: dict[int, list] = {}
        self.internal_hit = cfg.hit_latency - 2 * cfg.xbar_delay
        self.suppress_returns: set[int] = set()
        self.replaying = False
        # wired by the co-sim driver
        self.send_return = None  # cb(ReturnPacket, emit_cycle)
        self.send_op = None  # cb(McuOp, cycle)

    @property
    def busy(self) -> bool:
        return bool(self.txns or self.wb_lines or self.set_waiters)

    def on_request(self, pkt: RequestPacket, cycle: int) -> None:
        if self.table is not None and not self.replaying:
            self.table.record(pkt)
        line = pkt.addr >> self.bank.lob
        txn = self.txns.get(line)
        if txn is not None:
            txn["chain"].append(pkt)
            return
        wb_owner = self.wb_lines.get(line)
        if wb_owner is not None:
            wb_owner["blocked"].append(pkt)
            return
        way = self.bank.probe(line)
        if way is not None:
            self._apply(pkt, line, way, cycle)
            return
        self._start_miss(pkt, line, cycle)

    def _start_miss(self, pkt: RequestPacket, line: int, cycle: int) -> None:
        bank = self.bank
        s = bank.set_of(line)
        reserved = {t["way"] for t in self.txns.values() if t["set"] == s}
        victim = bank.choose_victim(s, reserved)
        if victim is None:
            self.set_waiters.setdefault(s, []).append(pkt)
            return
        txn = {"line": line, "set": s, "way": victim, "chain": [pkt],
               "fill_data": None, "wb_pending": False, "blocked": []}
        vstate = bank.state[s][victim]
        if vstate == 2:
            vline = bank.tags[s][victim]
            txn["wb_pending"] = True
            txn["victim_line"] = vline
            self.wb_lines[vline] = txn
            self.send_op(McuOp(WRITEBACK, vline, tuple(bank.data[s][victim]),
                               bank.bank_id), cycle)
        elif vstate == 1:
            bank.state[s][victim] = 0
            bank.tags[s][victim] = -1
        self.txns[line] = txn
        self.send_op(McuOp(FILL, line, None, bank.bank_id), cycle)
        if pkt.kind == STORE:  # early ack; the entry completes at fill install
            self._send_ret(pkt, None, cycle)

    def on_mcu_resp(self, resp: McuResp, cycle: int) -> None:
        if resp.kind == WB_ACK:
            txn = self.wb_lines.pop(resp.line, None)
            if txn is None:
                return  # orphan ack after a reset: writeback already safe
            s, w = txn["set"], txn["way"]
            self.bank.state[s][w] = 0
            self.bank.tags[s][w] = -1
            txn["wb_pending"] = False
            blocked = txn.pop("blocked")
            if txn["fill_data"] is not None:
                self._install(txn, cycle)
            for pkt in blocked:
                self.on_request(pkt, cycle)
            return
        txn = self.txns.get(resp.line)
        if txn is None:
            return  # orphan fill after a reset: dropped, replay refetches
        txn["fill_data"] = resp.data
        if not txn["wb_pending"]:
            self._install(txn, cycle)

    def _install(self, txn: dict, cycle: int) -> None:
        bank = self.bank
        s, w, line = txn["set"], txn["way"], txn["line"]
        bank.tags[s][w] = line
        bank.state[s][w] = 1
        row = bank.data[s][w]
        for i, v in enumerate(txn["fill_data"]):
            row[i] = v
        del self.txns[line]
        for i, pkt in enumerate(txn["chain"]):
            self._apply(pkt, line, w, cycle + i, early_acked=(i == 0 and pkt.kind == STORE))
        for pkt in txn.pop("blocked", []):
            self.on_request(pkt, cycle)
        waiters = self.set_waiters.pop(s, None)
        if waiters:
            for pkt in waiters:
                self.on_request(pkt, cycle)

    def _apply(self, pkt: RequestPacket, line: int, way: int, cycle: int,
               early_acked: bool = False) -> None:
        bank = self.bank
        s = bank.set_of(line)
        off = (pkt.addr >> 2) & (bank.line_words - 1)
        bank.touch(s, way)
        if pkt.kind == STORE:
            bank.data[s][way][off] = pkt.data
            bank.state[s][way] = 2
            waddr = pkt.addr >> 2
            self.last_writer[waddr] = cycle
            if self.store_trace is not None:
                self.store_trace.append((cycle, waddr, pkt.data))
            if self.table is not None:
                self.table.mark_miss_complete(pkt.req_id)
            if not early_acked:
                self._send_ret(pkt, None, cycle)
            return
        self._send_ret(pkt, bank.data[s][way][off], cycle)

    def _send_ret(self, pkt: RequestPacket, data, cycle: int) -> None:
        if pkt.req_id in self.suppress_returns:
            self.suppress_returns.discard(pkt.req_id)
            return
        self.send_return(ReturnPacket(pkt.req_id, pkt.core_id, pkt.kind, data),
                         cycle + self.internal_hit)
        # scheduling counts as sent: the packet has left the bank's port
        if self.table is not None:
            self.table.mark_return_sent(pkt.req_id)

    def reset_and_replay(self, cycle: int) -> list:
        """Drop transaction state and replay incomplete recorded requests.

        Returns the replayed packets in feed order.  Arrays are preserved;
        un-acked dirty victims are still valid there, so nothing is lost.
        """
        self.txns.clear()
        self.wb_lines.clear()
        self.set_waiters.clear()
        entries = self.table.incomplete_entries()
        self.suppress_returns = {e.packet.req_id for e in entries if e.return_sent}
        self.replaying = True
        fed = []
        for e in entries:
            fed.append(e.packet)
            self.on_request(e.packet, cycle)
        self.replaying = False
        return fed


class AbstractMcu:
    """Fixed-latency FIFO memory controller used as the co-sim environment.

    Fully pipelined: every op is acknowledged `latency` cycles after arrival,
    preserving arrival order.  Fills read DRAM at arrival (safe because a bank
    never issues a fill for a line with an outstanding writeback), writebacks
    apply at arrival.
    """

    def __init__(self, dram, latency: int, written: set | None = None):
        self.dram = dram
        self.latency = latency
        self.written = written  # optional log of written waddrs
        self.queue: list[tuple[int, McuResp]] = []  # (ready_cycle, resp)

    def submit(self, op: McuOp, cycle: int, line_words: int) -> None:
        base = op.line * line_words
        if op.kind == WRITEBACK:
            for i in range(line_words):
                dram_write(self.dram, base + i, op.data[i])
                if self.written is not None:
                    self.written.add(base + i)
            resp = McuResp(WB_ACK, op.line, None, op.src_bank)
        else:
            words = tuple(self.dram.get(base + i, 0) for i in range(line_words))
            resp = McuResp(FILL, op.line, words, op.src_bank)
        self.queue.append((cycle + self.latency, resp))

    def due(self, cycle: int) -> list[McuResp]:
        out = []
        while self.queue and self.queue[0][0] <= cycle:
            out.append(self.queue.pop(0)[1])
        return out

    @property
    def busy(self) -> bool:
        return bool(self.queue)
