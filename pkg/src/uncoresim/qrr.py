"""Quick replay recovery: record table, parity/gating model, residual rate.

The QRR controller of an L2 bank logs every request packet entering the bank
in a totally ordered record table and deletes an entry only when the bank is
completely done with it: the return was sent and, for stores, the miss
handling finished.  On a parity detection the controller gates array writes
and outbound valids, resets the component's non-hardened flip-flops, replays
the incomplete entries in recorded order (suppressing returns that were
already delivered), and then resumes normal intake.

The controller itself is radiation hardened and is never an injection target
under the default policy.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal

from .soc import STORE, RequestPacket


class QrrProtocolError(RuntimeError):
    """Retire for an unknown request id: the caller violated the protocol."""


@dataclass(slots=True)
class RecordEntry:
    seq: int
    packet: RequestPacket
    return_sent: bool = False
    miss_pending: bool = False


@dataclass(slots=True)
class RecoveryStats:
    detect_cycle: int
    gate_cycle: int
    entries_replayed: int = 0
    recovery_cycles: int = 0
    success: bool = False
    suppressed_returns: int = 0


@dataclass(frozen=True)
class ParityModel:
    aggregation_delay: int = 3  # flip -> recovery invocation
    local_gate_delay: int = 1  # flip -> write/valid gating
    immediate_gating: bool = True  # closed escape window


class RecordTable:
    """Totally ordered log of incomplete requests for one bank."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.entries: list[RecordEntry] = []
        self.next_seq = 0

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def full(self) -> bool:
        return len(self.entries) >= self.capacity

    def record(self, pkt: RequestPacket) -> RecordEntry:
        if self.full:
            raise QrrProtocolError("record table overflow: caller must backpressure")
        e = RecordEntry(self.next_seq, pkt, miss_pending=(pkt.kind == STORE))
        self.next_seq += 1
        self.entries.append(e)
        return e

    def _find(self, req_id: int) -> RecordEntry | None:
        for e in self.entries:
            if e.packet.req_id == req_id:
                return e
        return None

    def _maybe_retire(self, e: RecordEntry) -> None:
        if e.return_sent and not e.miss_pending:
            self.entries.remove(e)

    def mark_return_sent(self, req_id: int) -> bool:
        e = self._find(req_id)
        if e is None:
            return False
        e.return_sent = True
        self._maybe_retire(e)
        return True

    def mark_miss_complete(self, req_id: int) -> bool:
        e = self._find(req_id)
        if e is None:
            return False
        e.miss_pending = False
        self._maybe_retire(e)
        return True

    def incomplete_entries(self) -> list[RecordEntry]:
        return sorted(self.entries, key=lambda e: e.seq)


def record_request(table: RecordTable, pkt: RequestPacket) -> RecordEntry:
    return table.record(pkt)


def retire_entry(table: RecordTable, event: tuple[str, int]) -> None:
    """Strict retire API: event is ("return_sent"|"miss_complete", req_id)."""
    kind, req_id = event
    if kind == "return_sent":
        ok = table.mark_return_sent(req_id)
    elif kind == "miss_complete":
        ok = table.mark_miss_complete(req_id)
    else:
        raise ValueError(f"unknown retire event {kind!r}")
    if not ok:
        raise QrrProtocolError(f"retire for unknown req_id {req_id}")


# controller phases
NORMAL, PENDING, RECOVERING = 0, 1, 2


class QrrController:
    """Per-component recovery sequencer, driven one cycle at a time."""

    def __init__(self, table: RecordTable, parity: ParityModel):
        self.table = table
        self.parity = parity
        self.phase = NORMAL
        self.detect_at: int | None = None
        self.stats: RecoveryStats | None = None

    @property
    def gating(self) -> bool:
        return self.phase != NORMAL

    def on_flip(self, cycle: int) -> None:
        """A parity-covered bit flipped: schedule gating and recovery."""
        if self.phase != NORMAL:
            return
        self.phase = PENDING
        self.detect_at = cycle + self.parity.aggregation_delay
        self.stats = RecoveryStats(
            detect_cycle=cycle + self.parity.aggregation_delay,
            gate_cycle=cycle + self.parity.local_gate_delay,
        )

    def due_for_reset(self, cycle: int) -> bool:
        return self.phase == PENDING and cycle >= self.detect_at

    def begin_recovery(self) -> list[RecordEntry]:
        """Reset point reached: returns the entries to replay, in order."""
        self.phase = RECOVERING
        entries = self.table.incomplete_entries()
        self.stats.entries_replayed = len(entries)
        return entries

    def finish_recovery(self, cycle: int, success: bool) -> RecoveryStats:
        self.stats.recovery_cycles = cycle - self.stats.detect_cycle
        self.stats.success = success
        self.phase = NORMAL
        self.detect_at = None
        return self.stats


def residual_error_rate(frac_parity: float, frac_hardened: float,
                        frac_qrr_ctrl: float, hardening_factor: float) -> float:
    """Residual soft-error probability ratio of a QRR-protected component.

    Parity-covered flip-flops recover with probability one; hardened
    flip-flops (including the QRR controller's own, counted on top) fail at
    1/hardening_factor of the baseline rate.  Computed in decimal so the
    result is the correctly rounded float.
    """
    for name, v in (("frac_parity", frac_parity), ("frac_hardened", frac_hardened),
                    ("frac_qrr_ctrl", frac_qrr_ctrl)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must be within [0, 1], got {v}")
    if abs(frac_parity + frac_hardened - 1.0) > 1e-12:
        raise ValueError("frac_parity and frac_hardened must sum to 1")
    if hardening_factor < 1:
        raise ValueError("hardening_factor must be >= 1")
    hardened = Decimal(str(frac_hardened)) + Decimal(str(frac_qrr_ctrl))
    return float(hardened / Decimal(str(hardening_factor)))
