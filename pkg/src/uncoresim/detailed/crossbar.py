"""Bit-level crossbar: per-port registers with round-robin output arbitration.

Requests route by the bank bits of the address held in the port register, so
a corrupted address re-routes the packet consistently; returns route by the
core id field.  Each direction adds one register stage per side, matching the
two-cycle functional crossbar delay.
"""

from __future__ import annotations

from ..config import SimConfig
from ..soc import STORE, RequestPacket, ReturnPacket
from .structs import Micro, ccx_schema, CCX

_V, _KIND, _CORE, _RID, _ADDR, _DATA = range(6)


class DetailedCrossbar:
    kind = CCX

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.micro = Micro(ccx_schema(cfg))
        self.lob = cfg.line_offset_bits
        self.n_banks = cfg.n_banks
        self.n_cores = cfg.n_cores
        self.busy = 0

    def reset(self) -> None:
        for name, entries, _ in self.micro.schema:
            rows = self.micro.s[name]
            for e in range(entries):
                row = rows[e]
                for i in range(len(row)):
                    row[i] = 0
            self.micro.ever_filled[name] = \
                [name in ("req_arb", "ret_arb", "bist_chain")] * entries
        self.busy = 0

    def step(self, cycle: int, core_reqs, bank_rets):
        """One cycle.

        core_reqs: list of RequestPacket entering from cores this cycle.
        bank_rets: list of (bank, ReturnPacket) entering from banks.
        Returns (req_out: list[(bank, RequestPacket)],
                 ret_out: list[ReturnPacket],
                 rejected_reqs, rejected_rets) - rejected entries must be
        re-offered next cycle (ports were occupied: backpressure).
        """
        s = self.micro.s
        req_in, req_out = s["req_in"], s["req_out"]
        ret_in, ret_out = s["ret_in"], s["ret_out"]
        reqs_delivered = []
        rets_delivered = []

        # 1. output ports deliver and clear
        for b in range(self.n_banks):
            row = req_out[b]
            if row[_V]:
                data = row[_DATA] if row[_KIND] == STORE else None
                reqs_delivered.append(
                    (b, RequestPacket(row[_RID], row[_CORE], row[_KIND],
                                      row[_ADDR], data, cycle)))
                for i in range(6):
                    row[i] = 0
                self.busy -= 1
        for c in range(self.n_cores):
            row = ret_out[c]
            if row[_V]:
                data = None if row[1] == STORE else row[4]
                rets_delivered.append(ReturnPacket(row[3], row[2], row[1], data, cycle))
                for i in range(5):
                    row[i] = 0
                self.busy -= 1

        # 2. route requests: one grant per output port, round-robin over cores
        for b in range(self.n_banks):
            out = req_out[b]
            if out[_V]:
                continue
            rr = s["req_arb"][b][0]
            for k in range(self.n_cores):
                c = (rr + k) % self.n_cores
                row = req_in[c]
                if row[_V] and ((row[_ADDR] >> self.lob) % self.n_banks) == b:
                    out[:] = row
                    self.micro.ever_filled["req_out"][b] = True
                    for i in range(6):
                        row[i] = 0
                    s["req_arb"][b][0] = (c + 1) % self.n_cores
                    break

        # 3. route returns by core id field
        for c in range(self.n_cores):
            out = ret_out[c]
            if out[_V]:
                continue
            rr = s["ret_arb"][c][0]
            for k in range(self.n_banks):
                b = (rr + k) % self.n_banks
                row = ret_in[b]
                if row[_V] and (row[_CORE] % self.n_cores) == c:
                    out[:] = row
                    self.micro.ever_filled["ret_out"][c] = True
                    for i in range(5):
                        row[i] = 0
                    s["ret_arb"][c][0] = (b + 1) % self.n_banks
                    break

        # 4. intake
        rejected_reqs = []
        for pkt in core_reqs:
            row = req_in[pkt.core_id % self.n_cores]
            if row[_V]:
                rejected_reqs.append(pkt)
                continue
            row[0] = 1
            row[1] = pkt.kind
            row[2] = pkt.core_id
            row[3] = pkt.req_id
            row[4] = pkt.addr
            row[5] = pkt.data if pkt.data is not None else 0
            self.micro.ever_filled["req_in"][pkt.core_id % self.n_cores] = True
            self.busy += 1
        rejected_rets = []
        for bank, pkt in bank_rets:
            row = ret_in[bank % self.n_banks]
            if row[_V]:
                rejected_rets.append((bank, pkt))
                continue
            row[0] = 1
            row[1] = pkt.kind
            row[2] = pkt.core_id
            row[3] = pkt.req_id
            row[4] = pkt.data if pkt.data is not None else 0
            self.micro.ever_filled["ret_in"][bank % self.n_banks] = True
            self.busy += 1
        return reqs_delivered, rets_delivered, rejected_reqs, rejected_rets

    def recount_busy(self) -> int:
        s = self.micro.s
        return sum(sum(1 for e in s[n] if e[_V])
                   for n in ("req_in", "req_out", "ret_in", "ret_out"))
