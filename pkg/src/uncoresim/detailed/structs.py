"""Bit-level storage schemas, the flip-flop registry, and state comparison.

Every storage bit of a detailed component instance is addressable through a
FlipFlopId (component kind, instance, structure, entry, field, bit).  The
registry enumerates them deterministically from the configuration, assigns a
protection class to each, and is the sampling population for injection
campaigns.  Divergence and golden comparison operate on the same schemas.

Queues are modelled as collapsing/shifting structures and entries are zeroed
when freed, so two instances that processed the same recent traffic converge
to bit-identical micro-state regardless of earlier history.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from ..config import SimConfig

L2C, MCU, CCX = "l2c", "mcu", "ccx"


class ProtectionClass(Enum):
    INJECTABLE = "injectable"
    PARITY_PROTECTED = "parity_protected"
    HARDENED = "hardened"
    INACTIVE = "inactive"


@dataclass(frozen=True, slots=True)
class FlipFlopId:
    component: str  # l2c / mcu / ccx
    instance: int
    structure: str
    entry: int
    field: str
    bit: int

    def __str__(self) -> str:
        return (f"{self.component}:{self.instance}.{self.structure}"
                f"[{self.entry}].{self.field}[{self.bit}]")

    @classmethod
    def parse(cls, text: str) -> "FlipFlopId":
        comp, rest = text.split(":", 1)
        inst, struct_part = rest.split(".", 1)
        sname, rest = struct_part.split("[", 1)
        entry, rest = rest.split("].", 1)
        fname, rest = rest.split("[", 1)
        bit = rest.rstrip("]")
        return cls(comp, int(inst), sname, int(entry), fname, int(bit))


def _core_bits(cfg: SimConfig) -> int:
    return max(1, (cfg.n_cores - 1).bit_length())


def _way_bits(cfg: SimConfig) -> int:
    return max(1, (cfg.ways - 1).bit_length())


def _bank_bits(cfg: SimConfig) -> int:
    return max(1, (cfg.n_banks - 1).bit_length())


LINE_ADDR_BITS = 26  # 32-bit byte address minus the smallest line offset


def bank_schema(cfg: SimConfig) -> list[tuple[str, int, list[tuple[str, int]]]]:
    cb, wb = _core_bits(cfg), _way_bits(cfg)
    lw_bits = 32 * cfg.line_words
    pkt = [("valid", 1), ("kind", 2), ("core", cb), ("req_id", 32),
           ("addr", 32), ("data", 32)]
    ret = [("valid", 1), ("kind", 2), ("core", cb), ("req_id", 32), ("data", 32)]
    return [
        ("input_queue", cfg.input_queue, pkt),
        ("tag_pipe", 3, pkt),
        ("miss_buffer", cfg.miss_buffer,
         [("valid", 1), ("kind", 2), ("core", cb), ("req_id", 32), ("addr", 32),
          ("data", 32), ("way", wb), ("state", 2), ("wb_pending", 1),
          ("fill_sent", 1), ("timer", 10), ("victim", LINE_ADDR_BITS)]),
        ("wb_buffer", cfg.wb_buffer,
         [("valid", 1), ("line", LINE_ADDR_BITS), ("issued", 1), ("data", lw_bits)]),
        ("fill_buffer", cfg.wb_buffer,
         [("valid", 1), ("line", LINE_ADDR_BITS), ("data", lw_bits)]),
        ("output_queue", cfg.output_queue, ret),
        ("port_reg", 1, ret),
        ("arbiter_fsm", 1, [("mcu_rr", 1)]),
        ("config_reg", 1, [("way_enable", cfg.ways)]),
        ("bist_chain", 1, [("shadow", 16)]),
    ]


def mcu_schema(cfg: SimConfig) -> list[tuple[str, int, list[tuple[str, int]]]]:
    bb = _bank_bits(cfg)
    lw_bits = 32 * cfg.line_words
    op = [("valid", 1), ("kind", 1), ("line", LINE_ADDR_BITS),
          ("data", lw_bits), ("src", bb)]
    return [
        ("req_queue", cfg.mcu_queue, op),
        ("sched_reg", 1, op),
        ("sched_fsm", 1, [("state", 2), ("timer", 10)]),
        ("resp_port", 1,
         [("valid", 1), ("kind", 1), ("line", LINE_ADDR_BITS),
          ("data", lw_bits), ("dst", bb)]),
        ("config_reg", 1, [("queue_limit", 4)]),
        ("bist_chain", 1, [("shadow", 16)]),
    ]


def ccx_schema(cfg: SimConfig) -> list[tuple[str, int, list[tuple[str, int]]]]:
    cb, bb = _core_bits(cfg), _bank_bits(cfg)
    req = [("valid", 1), ("kind", 2), ("core", cb), ("req_id", 32),
           ("addr", 32), ("data", 32)]
    ret = [("valid", 1), ("kind", 2), ("core", cb), ("req_id", 32), ("data", 32)]
    return [
        ("req_in", cfg.n_cores, req),
        ("req_out", cfg.n_banks, req),
        ("ret_in", cfg.n_banks, ret),
        ("ret_out", cfg.n_cores, ret),
        ("req_arb", cfg.n_banks, [("rr", cb)]),
        ("ret_arb", cfg.n_cores, [("rr", bb)]),
        ("bist_chain", 1, [("shadow", 16)]),
    ]


def schema_for(kind: str, cfg: SimConfig):
    if kind == L2C:
        return bank_schema(cfg)
    if kind == MCU:
        return mcu_schema(cfg)
    if kind == CCX:
        return ccx_schema(cfg)
    raise ValueError(f"unknown component kind {kind!r}")


def instance_count(kind: str, cfg: SimConfig) -> int:
    return {L2C: cfg.n_banks, MCU: cfg.n_mcus, CCX: 1}[kind]


class Micro:
    """Concrete contents of one instance's registered structures.

    Values are plain ints per field; `ever_filled` tracks, per entry, whether
    the valid flag was ever set since reset (divergence measurements exclude
    reference entries that were never filled).
    """

    __slots__ = ("schema", "s", "fields", "ever_filled")

    def __init__(self, schema):
        self.schema = schema
        self.s: dict[str, list[list[int]]] = {}
        self.fields: dict[str, dict[str, int]] = {}
        self.ever_filled: dict[str, list[bool]] = {}
        for name, entries, flds in schema:
            self.s[name] = [[0] * len(flds) for _ in range(entries)]
            self.fields[name] = {f: i for i, (f, _) in enumerate(flds)}
            # structures without a leading valid flag count as always-filled
            self.ever_filled[name] = [flds[0][0] != "valid"] * entries

    def mark_filled(self, struct: str, entry: int) -> None:
        self.ever_filled[struct][entry] = True

    def zero_entry(self, struct: str, entry: int) -> None:
        row = self.s[struct][entry]
        for i in range(len(row)):
            row[i] = 0

    def flip(self, ff: FlipFlopId) -> None:
        idx = self.fields[ff.structure][ff.field]
        self.s[ff.structure][ff.entry][idx] ^= (1 << ff.bit)

    def get_bit(self, ff: FlipFlopId) -> int:
        idx = self.fields[ff.structure][ff.field]
        return (self.s[ff.structure][ff.entry][idx] >> ff.bit) & 1

    def equals(self, other: "Micro") -> bool:
        return self.s == other.s

    def copy_into(self, other: "Micro") -> None:
        for name, entries in self.s.items():
            other.s[name] = [row[:] for row in entries]
            other.ever_filled[name] = list(self.ever_filled[name])

    def clone(self) -> "Micro":
        c = Micro(self.schema)
        self.copy_into(c)
        return c

    def total_bits(self) -> int:
        return sum(e * sum(w for _, w in flds) for _, e, flds in self.schema)


# -- registry -----------------------------------------------------------------


class FlipFlopRegistry:
    """Deterministic enumeration of every storage bit with protection class."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.entries: list[tuple[FlipFlopId, ProtectionClass]] = []
        self.by_class: dict[ProtectionClass, list[int]] = {c: [] for c in ProtectionClass}
        self._index: dict[FlipFlopId, int] = {}
        hardened_extra = set(cfg.hardened_extra)
        for kind in (L2C, MCU, CCX):
            schema = schema_for(kind, cfg)
            for inst in range(instance_count(kind, cfg)):
                for sname, n_entries, flds in schema:
                    base_class = self._classify(kind, sname, cfg)
                    for entry in range(n_entries):
                        for fname, width in flds:
                            cls = base_class
                            if (f"{kind}.{sname}" in hardened_extra or
                                    f"{kind}.{sname}.{fname}" in hardened_extra):
                                cls = ProtectionClass.HARDENED
                            for bit in range(width):
                                ff = FlipFlopId(kind, inst, sname, entry, fname, bit)
                                self._index[ff] = len(self.entries)
                                self.by_class[cls].append(len(self.entries))
                                self.entries.append((ff, cls))

    @staticmethod
    def _classify(kind: str, struct: str, cfg: SimConfig) -> ProtectionClass:
        if struct == "bist_chain":
            return ProtectionClass.INACTIVE
        if struct == "config_reg":
            return ProtectionClass.HARDENED
        if cfg.qrr_enabled and kind in (L2C, MCU):
            # QRR pairs logic parity with replay for every active, non-hardened
            # flip-flop of the components it covers
            return ProtectionClass.PARITY_PROTECTED
        return ProtectionClass.INJECTABLE

    def __len__(self) -> int:
        return len(self.entries)

    def class_of(self, ff: FlipFlopId) -> ProtectionClass:
        return self.entries[self._index[ff]][1]

    def contains(self, ff: FlipFlopId) -> bool:
        return ff in self._index

    def totals(self) -> dict[ProtectionClass, int]:
        return {c: len(v) for c, v in self.by_class.items()}

    def eligible_indices(self, classes, component: str | None = None,
                         instance: int | None = None) -> list[int]:
        out = []
        for cls in classes:
            for i in self.by_class[cls]:
                ff = self.entries[i][0]
                if component is not None and ff.component != component:
                    continue
                if instance is not None and ff.instance != instance:
                    continue
                out.append(i)
        out.sort()
        return out

    def dump(self, fh) -> None:
        """One line per flip-flop: `id<TAB>class` (audit / override format)."""
        for ff, cls in self.entries:
            fh.write(f"{ff}\t{cls.value}\n")


def enumerate_flipflops(cfg: SimConfig) -> FlipFlopRegistry:
    return FlipFlopRegistry(cfg)


# -- comparison ---------------------------------------------------------------


class MismatchKind(Enum):
    NO_MISMATCH = "no_mismatch"
    FUNCTIONALLY_IRRELEVANT = "functionally_irrelevant"
    ARRAY_ONLY_HANDOFF = "array_only_handoff"
    MICROARCH_PERSISTING = "microarch_persisting"


@dataclass
class MismatchReport:
    kind: MismatchKind
    diff_bits: list[FlipFlopId]
    irrelevant_bits: list[FlipFlopId]
    diff_words: list[tuple[int, int, int]]  # (word address, got, expected)


# Pure fairness state: round-robin pointers reorder grants between
# independent operations but never change any value the system produces
# (spot-checked by the randomized forcing tests).
SCHEDULING_ONLY = {"arbiter_fsm", "req_arb", "ret_arb"}


def micro_diff_bits(kind: str, inst: int, a: Micro, b: Micro):
    """Differing bits split into (relevant, irrelevant).

    A differing bit is functionally irrelevant when its entry's valid flag is
    clear on both sides (fields of an invalid entry are never consumed and
    every allocation overwrites them) or when it is pure scheduling-fairness
    state.
    """
    if a.schema is not b.schema and [x[:2] for x in a.schema] != [x[:2] for x in b.schema]:
        raise ValueError("structural shape mismatch between compared instances")
    relevant: list[FlipFlopId] = []
    irrelevant: list[FlipFlopId] = []
    for sname, n_entries, flds in a.schema:
        ea, eb = a.s[sname], b.s[sname]
        if ea == eb:
            continue
        has_valid = flds[0][0] == "valid"
        sched_only = sname in SCHEDULING_ONLY
        for e in range(n_entries):
            ra, rb = ea[e], eb[e]
            if ra == rb:
                continue
            invalid_both = has_valid and ra[0] == 0 and rb[0] == 0
            sink = irrelevant if (invalid_both or sched_only) else relevant
            for i, (fname, width) in enumerate(flds):
                x = ra[i] ^ rb[i]
                bit = 0
                while x:
                    if x & 1:
                        sink.append(FlipFlopId(kind, inst, sname, e, fname, bit))
                    x >>= 1
                    bit += 1
    return relevant, irrelevant


def state_divergence(kind: str, mixed: Micro, reference: Micro) -> float:
    """Fraction of differing bits, excluding never-filled reference entries."""
    total = 0
    diff = 0
    for sname, n_entries, flds in reference.schema:
        em, er = mixed.s[sname], reference.s[sname]
        filled = reference.ever_filled[sname]
        widths = [w for _, w in flds]
        entry_bits = sum(widths)
        for e in range(n_entries):
            if not filled[e]:
                continue
            total += entry_bits
            rm, rr = em[e], er[e]
            if rm == rr:
                continue
            for i in range(len(widths)):
                x = rm[i] ^ rr[i]
                if x:
                    diff += bin(x).count("1")
    if total == 0:
        return 0.0
    return diff / total
