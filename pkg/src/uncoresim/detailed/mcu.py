"""Bit-level memory controller: request queue, scheduler FSM, response port.

One op is in service at a time; the access timer models the DRAM round trip.
The DRAM side effect (line read or line write) happens at completion, so a
corrupted queue or scheduler register corrupts the fill data or the written
DRAM words, which is exactly the error surface the injection study needs.
"""

from __future__ import annotations

from ..abstractmem import FILL, WRITEBACK, WB_ACK, McuOp, McuResp, dram_write
from ..config import SimConfig
from .l2bank import pack_line, unpack_line
from .structs import Micro, mcu_schema, MCU

_V, _KIND, _LINE, _DATA, _SRC = range(5)
_FSM_STATE, _FSM_TIMER = 0, 1
IDLE, BUSY, WAIT_PORT = 0, 1, 2


class DetailedMcu:
    kind = MCU

    def __init__(self, cfg: SimConfig, mcu_id: int, dram):
        self.cfg = cfg
        self.mcu_id = mcu_id
        self.micro = Micro(mcu_schema(cfg))
        self.micro.s["config_reg"][0][0] = min(cfg.mcu_queue, 15)
        self.dram = dram
        self.lw = cfg.line_words
        self.access = cfg.mcu_access
        self.busy = 0

    def reset(self) -> None:
        keep = self.micro.s["config_reg"][0][:]
        for name, entries, _ in self.micro.schema:
            if name == "config_reg":
                continue
            rows = self.micro.s[name]
            for e in range(entries):
                row = rows[e]
                for i in range(len(row)):
                    row[i] = 0
            self.micro.ever_filled[name] = [name in ("sched_fsm", "bist_chain")] * entries
        self.micro.s["config_reg"][0][:] = keep
        self.busy = 0

    def step(self, cycle: int, incoming: McuOp | None):
        """One cycle; returns (responses_out, accepted)."""
        outs: list[McuResp] = []
        s = self.micro.s
        fsm = s["sched_fsm"][0]
        if self.busy == 0 and fsm[_FSM_STATE] == IDLE and incoming is None:
            return outs, False

        # 1. response port emits
        port = s["resp_port"][0]
        if port[_V]:
            if port[1] == WRITEBACK:
                outs.append(McuResp(WB_ACK, port[2], None, port[4]))
            else:
                outs.append(McuResp(FILL, port[2],
                                    tuple(unpack_line(port[3], self.lw)), port[4]))
            for i in range(5):
                port[i] = 0
            self.busy -= 1

        # 2. scheduler progress
        reg = s["sched_reg"][0]
        if fsm[_FSM_STATE] == BUSY:
            fsm[_FSM_TIMER] = (fsm[_FSM_TIMER] + 1) & 1023
            if fsm[_FSM_TIMER] >= self.access:
                fsm[_FSM_STATE] = WAIT_PORT
        if fsm[_FSM_STATE] == WAIT_PORT and not port[_V]:
            line = reg[_LINE]
            base = line * self.lw
            if reg[_KIND] == WRITEBACK:
                packed = reg[_DATA]
                for i in range(self.lw):
                    dram_write(self.dram, base + i, (packed >> (32 * i)) & 0xFFFFFFFF)
                port[0], port[1], port[2], port[3], port[4] = 1, WRITEBACK, line, 0, reg[_SRC]
            else:
                words = [self.dram.get(base + i, 0) for i in range(self.lw)]
                port[0], port[1], port[2], port[3], port[4] = \
                    1, FILL, line, pack_line(words), reg[_SRC]
            self.micro.ever_filled["resp_port"][0] = True
            self.busy += 1
            for i in range(5):
                reg[i] = 0
            self.busy -= 1
            fsm[_FSM_STATE] = IDLE
            fsm[_FSM_TIMER] = 0

        # 3. dispatch queue head
        queue = s["req_queue"]
        head = queue[0]
        if fsm[_FSM_STATE] == IDLE and head[_V]:
            reg[:] = head
            self.micro.ever_filled["sched_reg"][0] = True
            del queue[0]
            queue.append([0] * 5)
            fsm[_FSM_STATE] = BUSY
            fsm[_FSM_TIMER] = 0

        # 4. intake
        accepted = False
        if incoming is not None:
            limit = min(self.cfg.mcu_queue, self.micro.s["config_reg"][0][0] or 1)
            occupied = sum(1 for e in queue if e[_V])
            if occupied < limit and not queue[-1][_V]:
                for i, row in enumerate(queue):
                    if not row[_V]:
                        row[0] = 1
                        row[1] = incoming.kind
                        row[2] = incoming.line
                        row[3] = pack_line(incoming.data) if incoming.data else 0
                        row[4] = incoming.src_bank
                        self.micro.ever_filled["req_queue"][i] = True
                        self.busy += 1
                        accepted = True
                        break
        return outs, accepted

    def recount_busy(self) -> int:
        s = self.micro.s
        return (sum(1 for e in s["req_queue"] if e[_V])
                + sum(1 for e in s["sched_reg"] if e[_V])
                + sum(1 for e in s["resp_port"] if e[_V]))
