"""Bit-level pipelined L2 bank controller.

Request path: input queue -> grant -> 3-stage tag pipeline -> hit (array
access, output queue) or miss (miss-buffer allocate, victim writeback, fill,
install, direct retry).  Returns leave through the output queue and a port
register; one MCU op per cycle leaves through the memory-side port.

Store misses are acknowledged early, at miss-buffer allocation; the entry
stays busy until the fill installs and the store is applied.  A dirty victim
stays valid in the arrays until its writeback is acknowledged, so a recovery
reset can never lose dirty data: replaying the recorded request re-evicts it.

Freed entries are zeroed and queues shift, so micro-state is a function of
recent traffic only; this is what makes warm-up reconstruction converge.
"""

from __future__ import annotations

from ..abstractmem import BankState, FILL, WRITEBACK, WB_ACK, McuOp, McuResp
from ..config import SimConfig
from ..soc import STORE, ReturnPacket
from .structs import Micro, bank_schema, L2C

# miss-buffer state field values
MB_WAIT = 1

# field indices (see bank_schema)
_V, _KIND, _CORE, _RID, _ADDR, _DATA = range(6)
_WAY, _STATE, _WBP, _FSENT, _TIMER, _VICT = 6, 7, 8, 9, 10, 11
_WB_LINE, _WB_ISSUED, _WB_DATA = 1, 2, 3
_FB_LINE, _FB_DATA = 1, 2


def pack_line(words) -> int:
    v = 0
    for i, w in enumerate(words):
        v |= w << (32 * i)
    return v


def unpack_line(value: int, n: int) -> list[int]:
    return [(value >> (32 * i)) & 0xFFFFFFFF for i in range(n)]


class DetailedBank:
    kind = L2C

    def __init__(self, cfg: SimConfig, bank_id: int, arrays: BankState):
        self.cfg = cfg
        self.bank_id = bank_id
        self.micro = Micro(bank_schema(cfg))
        self.micro.s["config_reg"][0][0] = (1 << cfg.ways) - 1
        self.arr = arrays
        self.lob = cfg.line_offset_bits
        self.lw = cfg.line_words
        self.last_writer: dict | None = None
        self.store_trace: list | None = None
        self.busy = 0  # valid entries across all queues/registers

    # -- lifecycle -----------------------------------------------------------

    def reset(self) -> None:
        """Clear every non-hardened flip-flop; arrays and config survive."""
        keep = self.micro.s["config_reg"][0][:]
        for name, entries, _ in self.micro.schema:
            if name == "config_reg":
                continue
            rows = self.micro.s[name]
            for e in range(entries):
                row = rows[e]
                for i in range(len(row)):
                    row[i] = 0
            self.micro.ever_filled[name] = [name in ("arbiter_fsm", "bist_chain")] * entries
        self.micro.s["config_reg"][0][:] = keep
        self.busy = 0

    # -- helpers --------------------------------------------------------------

    def _probe_enabled(self, line: int):
        arr = self.arr
        s = arr.set_of(line)
        tags, state = arr.tags[s], arr.state[s]
        for w in range(arr.ways):
            if state[w] and tags[w] == line:
                return s, w
        return s, None

    def _choose_victim(self, s: int) -> int | None:
        arr = self.arr
        enable = self.micro.s["config_reg"][0][0]
        reserved = set()
        for e in self.micro.s["miss_buffer"]:
            if e[_V] and arr.set_of(e[_ADDR] >> self.lob) == s:
                reserved.add(e[_WAY])
        for w in range(arr.ways):
            if arr.state[s][w] == 0 and w not in reserved and (enable >> w) & 1:
                return w
        for w in reversed(arr.lru[s]):
            if w not in reserved and (enable >> w) & 1:
                return w
        return None

    def _outq_push(self, kind: int, core: int, rid: int, data: int) -> bool:
        outq = self.micro.s["output_queue"]
        for i, row in enumerate(outq):
            if not row[_V]:
                row[0] = 1
                row[1] = kind
                row[2] = core
                row[3] = rid
                row[4] = data
                self.micro.ever_filled["output_queue"][i] = True
                self.busy += 1
                return True
        return False

    def _outq_full(self) -> bool:
        return bool(self.micro.s["output_queue"][-1][_V])

    # -- per-cycle step ---------------------------------------------------------

    def step(self, cycle: int, incoming, responses):
        """One cycle; returns (returns_out, mcu_ops_out, accepted, events,
        unconsumed_responses)."""
        outs: list[ReturnPacket] = []
        ops: list[McuOp] = []
        events: list[tuple] = []
        s = self.micro.s

        if self.busy == 0 and incoming is None and not responses:
            return outs, ops, False, events, ()

        # 1. port register emits one return per cycle
        port = s["port_reg"][0]
        if port[_V]:
            data = None if port[1] == STORE else port[4]
            outs.append(ReturnPacket(port[3], port[2], port[1], data))
            events.append(("return_sent", port[3]))
            for i in range(5):
                port[i] = 0
            self.busy -= 1

        # 2. output queue head moves into the port register
        outq = s["output_queue"]
        head = outq[0]
        if head[_V] and not port[_V]:
            port[:] = head
            self.micro.ever_filled["port_reg"][0] = True
            del outq[0]
            outq.append([0] * 5)

        # 3. memory-side responses
        leftover = []
        for r in responses:
            if not self._on_resp(r, cycle, events):
                leftover.append(r)

        # 4. one fill install + direct retry per cycle
        self._try_install(cycle, events)

        # 5. tag pipeline
        self._pipeline(cycle, events)

        # 6. one MCU op per cycle
        self._emit_op(ops)

        # 7. intake
        accepted = False
        if incoming is not None:
            accepted = self._intake(incoming)

        # 8. miss-buffer timers
        for e in s["miss_buffer"]:
            if e[_V]:
                e[_TIMER] = (e[_TIMER] + 1) & 1023

        return outs, ops, accepted, events, tuple(leftover)

    # -- step pieces --------------------------------------------------------------

    def _intake(self, pkt) -> bool:
        inq = self.micro.s["input_queue"]
        if inq[-1][_V]:
            return False
        for i, row in enumerate(inq):
            if not row[_V]:
                row[0] = 1
                row[1] = pkt.kind
                row[2] = pkt.core_id
                row[3] = pkt.req_id
                row[4] = pkt.addr
                row[5] = pkt.data if pkt.data is not None else 0
                self.micro.ever_filled["input_queue"][i] = True
                self.busy += 1
                return True
        return False

    def _head_blocked(self, head) -> bool:
        line = head[_ADDR] >> self.lob
        for e in self.micro.s["miss_buffer"]:
            if e[_V] and ((e[_ADDR] >> self.lob) == line or
                          (e[_WBP] and e[_VICT] == line)):
                return True
        for w in self.micro.s["wb_buffer"]:
            if w[_V] and w[_WB_LINE] == line:
                return True
        return False

    def _pipeline(self, cycle: int, events) -> None:
        pipe = self.micro.s["tag_pipe"]
        s3 = pipe[2]
        if s3[_V]:
            if not self._stage3(s3, cycle, events):
                return  # structural stall holds the whole pipeline
            for i in range(6):
                s3[i] = 0
            self.busy -= 1
        if pipe[1][_V]:
            pipe[2][:] = pipe[1]
            for i in range(6):
                pipe[1][i] = 0
        if pipe[0][_V]:
            pipe[1][:] = pipe[0]
            for i in range(6):
                pipe[0][i] = 0
        inq = self.micro.s["input_queue"]
        head = inq[0]
        if head[_V] and not self._head_blocked(head):
            pipe[0][:] = head
            self.micro.ever_filled["tag_pipe"][0] = True
            del inq[0]
            inq.append([0] * 6)

    def _stage3(self, row, cycle: int, events) -> bool:
        kind, core, rid, addr, data = row[1], row[2], row[3], row[4], row[5]
        arr = self.arr
        line = addr >> self.lob
        # requests that entered the pipeline right behind a same-line miss (or
        # behind a victim with its writeback still in flight) wait here until
        # that handling completes; this is what keeps same-line ordering total
        if self._head_blocked(row):
            return False
        s, way = self._probe_enabled(line)
        if way is not None:
            if self._outq_full():
                return False
            arr.touch(s, way)
            off = (addr >> 2) & (self.lw - 1)
            if kind == STORE:
                arr.data[s][way][off] = data
                arr.state[s][way] = 2
                if self.last_writer is not None:
                    self.last_writer[addr >> 2] = cycle
                if self.store_trace is not None:
                    self.store_trace.append((cycle, addr >> 2, data))
                events.append(("miss_complete", rid))
                self._outq_push(kind, core, rid, 0)
            else:
                self._outq_push(kind, core, rid, arr.data[s][way][off])
            return True

        # miss path
        mbq = self.micro.s["miss_buffer"]
        mb_i = next((i for i, e in enumerate(mbq) if not e[_V]), None)
        if mb_i is None:
            return False
        if kind == STORE and self._outq_full():
            return False
        victim = self._choose_victim(s)
        if victim is None:
            return False
        vstate = arr.state[s][victim]
        wb_pending = 0
        vline = 0
        if vstate == 2:
            wbq = self.micro.s["wb_buffer"]
            wb_i = next((i for i, e in enumerate(wbq) if not e[_V]), None)
            if wb_i is None:
                return False
            vline = arr.tags[s][victim]
            wbq[wb_i][0] = 1
            wbq[wb_i][_WB_LINE] = vline
            wbq[wb_i][_WB_ISSUED] = 0
            wbq[wb_i][_WB_DATA] = pack_line(arr.data[s][victim])
            self.micro.ever_filled["wb_buffer"][wb_i] = True
            self.busy += 1
            wb_pending = 1
            # victim stays valid in the arrays until the writeback is acked
        elif vstate == 1:
            arr.state[s][victim] = 0
            arr.tags[s][victim] = -1
        e = mbq[mb_i]
        e[0] = 1
        e[1] = kind
        e[2] = core
        e[3] = rid
        e[4] = addr
        e[5] = data
        e[_WAY] = victim
        e[_STATE] = MB_WAIT
        e[_WBP] = wb_pending
        e[_FSENT] = 0
        e[_TIMER] = 0
        e[_VICT] = vline
        self.micro.ever_filled["miss_buffer"][mb_i] = True
        self.busy += 1
        if kind == STORE:
            # early acknowledgement; the entry completes at fill install
            self._outq_push(kind, core, rid, 0)
        return True

    def _on_resp(self, r: McuResp, cycle: int, events) -> bool:
        if r.kind == WB_ACK:
            wbq = self.micro.s["wb_buffer"]
            for e in wbq:
                if e[_V] and e[_WB_ISSUED] and e[_WB_LINE] == r.line:
                    for i in range(4):
                        e[i] = 0
                    self.busy -= 1
                    break
            arr = self.arr
            for e in self.micro.s["miss_buffer"]:
                if e[_V] and e[_WBP] and e[_VICT] == r.line:
                    s = arr.set_of(r.line)
                    w = e[_WAY]
                    if arr.state[s][w] and arr.tags[s][w] == r.line:
                        arr.state[s][w] = 0
                        arr.tags[s][w] = -1
                    e[_WBP] = 0
                    break
            return True
        # fill response: park in the fill buffer, installed one per cycle
        fbq = self.micro.s["fill_buffer"]
        mb_match = any(e[_V] and e[_FSENT] and (e[_ADDR] >> self.lob) == r.line
                       for e in self.micro.s["miss_buffer"])
        if not mb_match:
            return True  # orphan fill after a reset: dropped (reads are idempotent)
        for i, e in enumerate(fbq):
            if not e[_V]:
                e[0] = 1
                e[_FB_LINE] = r.line
                e[_FB_DATA] = pack_line(r.data)
                self.micro.ever_filled["fill_buffer"][i] = True
                self.busy += 1
                return True
        return False  # fill buffer full: response retried next cycle

    def _try_install(self, cycle: int, events) -> None:
        fbq = self.micro.s["fill_buffer"]
        mbq = self.micro.s["miss_buffer"]
        arr = self.arr
        for f in fbq:
            if not f[_V]:
                continue
            line = f[_FB_LINE]
            entry = next((e for e in mbq
                          if e[_V] and e[_FSENT] and (e[_ADDR] >> self.lob) == line),
                         None)
            if entry is None:
                # owning miss-buffer entry was reset away: drop the fill
                for i in range(3):
                    f[i] = 0
                self.busy -= 1
                continue
            if entry[_WBP]:
                continue  # victim writeback not acked yet: way still occupied
            kind, core, rid, addr, data = entry[1], entry[2], entry[3], entry[4], entry[5]
            if kind != STORE and self._outq_full():
                continue  # retry next cycle
            s = arr.set_of(line)
            w = entry[_WAY]
            arr.tags[s][w] = line
            arr.state[s][w] = 1
            row = arr.data[s][w]
            packed = f[_FB_DATA]
            for i in range(self.lw):
                row[i] = (packed >> (32 * i)) & 0xFFFFFFFF
            # direct retry: apply the original request as a hit
            arr.touch(s, w)
            off = (addr >> 2) & (self.lw - 1)
            if kind == STORE:
                row[off] = data
                arr.state[s][w] = 2
                if self.last_writer is not None:
                    self.last_writer[addr >> 2] = cycle
                if self.store_trace is not None:
                    self.store_trace.append((cycle, addr >> 2, data))
                events.append(("miss_complete", rid))
            else:
                self._outq_push(kind, core, rid, row[off])
            for i in range(len(entry)):
                entry[i] = 0
            self.busy -= 1
            for i in range(3):
                f[i] = 0
            self.busy -= 1
            return  # one install per cycle

    def _emit_op(self, ops) -> None:
        wbq = self.micro.s["wb_buffer"]
        mbq = self.micro.s["miss_buffer"]
        arb = self.micro.s["arbiter_fsm"][0]
        wb_i = next((i for i, e in enumerate(wbq) if e[_V] and not e[_WB_ISSUED]), None)
        fill_i = next((i for i, e in enumerate(mbq)
                       if e[_V] and e[_STATE] == MB_WAIT and not e[_FSENT]), None)
        pick_wb = wb_i is not None and (fill_i is None or arb[0] == 0)
        if wb_i is not None and fill_i is not None:
            arb[0] ^= 1
        if pick_wb:
            e = wbq[wb_i]
            ops.append(McuOp(WRITEBACK, e[_WB_LINE],
                             tuple(unpack_line(e[_WB_DATA], self.lw)), self.bank_id))
            e[_WB_ISSUED] = 1
        elif fill_i is not None:
            e = mbq[fill_i]
            ops.append(McuOp(FILL, e[_ADDR] >> self.lob, None, self.bank_id))
            e[_FSENT] = 1

    # -- diagnostics ----------------------------------------------------------

    def recount_busy(self) -> int:
        s = self.micro.s
        n = sum(1 for e in s["input_queue"] if e[_V])
        n += sum(1 for e in s["tag_pipe"] if e[_V])
        n += sum(1 for e in s["miss_buffer"] if e[_V])
        n += sum(1 for e in s["wb_buffer"] if e[_V])
        n += sum(1 for e in s["fill_buffer"] if e[_V])
        n += sum(1 for e in s["output_queue"] if e[_V])
        n += sum(1 for e in s["port_reg"] if e[_V])
        return n
