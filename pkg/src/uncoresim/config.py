"""Simulator and campaign configuration.

A single SimConfig drives everything: SoC geometry, latencies, detailed-model
queue sizes, campaign parameters and QRR settings.  Configs can be loaded from
a TOML file (see docs/config.md) with CLI flags overriding file values.  The
config hash is embedded in snapshots and record files; any change to a
simulation-relevant field invalidates resumption.
"""

from __future__ import annotations

import dataclasses
import hashlib
import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

CONFIG_VERSION = 1

# Fields that do not affect simulated behaviour (excluded from the hash).
_NON_SEMANTIC = {"n_runs", "jobs", "out_dir"}


class ConfigError(ValueError):
    """Invalid configuration (CLI exit code 2)."""


@dataclass
class SimConfig:
    # Workload
    workload: str = "checksum_stream"
    workload_size: int = 256

    # SoC geometry
    n_cores: int = 4
    n_banks: int = 4
    n_mcus: int = 2
    sets: int = 64
    ways: int = 4
    line_words: int = 16
    max_outstanding: int = 1
    address_space: int = 1 << 20

    # Functional-mode latencies (cycles); dram_latency is calibrated so the
    # bit-level miss round trip equals miss_latency exactly
    hit_latency: int = 10
    miss_latency: int = 120
    xbar_delay: int = 2
    dram_latency: int = 109

    # Detailed-model structure sizes
    input_queue: int = 8
    miss_buffer: int = 8
    wb_buffer: int = 4
    output_queue: int = 8
    mcu_queue: int = 8
    mcu_access: int = 80

    # Injection workflow
    target: str = "l2c:0"
    snapshot_interval: int = 1_000_000
    warmup_min: int = 1_000
    warmup_extra_max: int = 2_000
    cosim_cap: int = 100_000
    check_interval: int = 100
    watchdog_window: int = 200_000
    budget_factor: int = 20

    # QRR
    qrr_enabled: bool = False
    qrr_capacity: int = 16
    qrr_detect_delay: int = 3
    qrr_gate_delay: int = 1
    qrr_immediate_gating: bool = True
    qrr_worst_op_latency: int = 250
    hardened_extra: tuple[str, ...] = ()

    # Campaign
    master_seed: int = 1
    n_runs: int = 100
    jobs: int = 1
    out_dir: str = "campaign_out"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        from .workload import BUILTIN_WORKLOADS
        if self.workload not in BUILTIN_WORKLOADS:
            raise ConfigError(
                f"unknown workload {self.workload!r} (built-ins: {BUILTIN_WORKLOADS})")
        if self.n_cores < 1 or self.n_cores > 16:
            raise ConfigError(f"n_cores must be in [1, 16], got {self.n_cores}")
        if self.n_banks < 1 or self.n_banks & (self.n_banks - 1):
            raise ConfigError("n_banks must be a power of two")
        if self.n_mcus < 1 or self.n_banks % self.n_mcus:
            raise ConfigError("n_mcus must divide n_banks")
        if self.line_words & (self.line_words - 1) or self.line_words < 4:
            raise ConfigError("line_words must be a power of two >= 4")
        if self.sets < 1 or self.sets & (self.sets - 1):
            raise ConfigError("sets must be a power of two")
        if self.ways < 1:
            raise ConfigError("ways must be positive")
        if self.max_outstanding != 1:
            raise ConfigError("only max_outstanding=1 is supported")
        if self.snapshot_interval <= 0:
            raise ConfigError("snapshot_interval must be positive")
        if self.warmup_min < 0 or self.warmup_extra_max < 0:
            raise ConfigError("warm-up cycle counts must be non-negative")
        if self.cosim_cap <= 0 or self.check_interval <= 0:
            raise ConfigError("cosim_cap and check_interval must be positive")
        if self.qrr_detect_delay < self.qrr_gate_delay:
            raise ConfigError("detect delay must be >= gate delay")
        for q in (self.input_queue, self.miss_buffer, self.output_queue, self.mcu_queue):
            if q < 1:
                raise ConfigError("detailed queue sizes must be >= 1")
        parse_target(self)  # raises on a malformed target

    # Derived geometry -----------------------------------------------------

    @property
    def line_bytes(self) -> int:
        return self.line_words * 4

    @property
    def line_offset_bits(self) -> int:
        return (self.line_bytes - 1).bit_length()

    @property
    def banks_per_mcu(self) -> int:
        return self.n_banks // self.n_mcus

    def bank_of(self, addr: int) -> int:
        return (addr >> self.line_offset_bits) % self.n_banks

    def mcu_of_bank(self, bank: int) -> int:
        return bank // self.banks_per_mcu

    # Hashing / serialization ----------------------------------------------

    def semantic_items(self) -> list[tuple[str, object]]:
        items = []
        for f in dataclasses.fields(self):
            if f.name in _NON_SEMANTIC:
                continue
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = list(v)
            items.append((f.name, v))
        return items

    def config_hash(self) -> str:
        text = "|".join(f"{k}={v!r}" for k, v in self.semantic_items())
        text = f"v{CONFIG_VERSION}|{text}"
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def replace(self, **kw) -> "SimConfig":
        return dataclasses.replace(self, **kw)


def parse_target(config: SimConfig) -> tuple[str, int]:
    """Split a target id like 'l2c:2' into (kind, instance), validating range."""
    t = config.target
    try:
        kind, _, idx = t.partition(":")
        inst = int(idx) if idx else 0
    except ValueError:
        raise ConfigError(f"malformed target id {t!r}") from None
    if kind == "l2c":
        if not 0 <= inst < config.n_banks:
            raise ConfigError(f"target {t!r}: bank index out of range")
    elif kind == "mcu":
        if not 0 <= inst < config.n_mcus:
            raise ConfigError(f"target {t!r}: mcu index out of range")
    elif kind == "ccx":
        if inst != 0:
            raise ConfigError("only one crossbar instance exists (ccx:0)")
    else:
        raise ConfigError(f"unknown target kind {kind!r} (expected l2c/mcu/ccx)")
    return kind, inst


def load_toml(path: str, **overrides) -> SimConfig:
    """Load a config file, apply overrides, and validate.

    Unknown keys are rejected so typos do not silently fall back to defaults.
    """
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    ver = raw.pop("config_version", CONFIG_VERSION)
    if ver != CONFIG_VERSION:
        raise ConfigError(f"unsupported config_version {ver} (expected {CONFIG_VERSION})")
    known = {f.name for f in dataclasses.fields(SimConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    raw.update({k: v for k, v in overrides.items() if v is not None})
    if "hardened_extra" in raw:
        raw["hardened_extra"] = tuple(raw["hardened_extra"])
    try:
        return SimConfig(**raw)
    except TypeError as e:
        raise ConfigError(str(e)) from None
