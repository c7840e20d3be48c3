"""Injection campaigns: sampling, single-run execution, classification.

One run = restore the nearest snapshot, run the functional mode to just
before the co-simulation window, switch modes at a quiescent boundary, warm
the bit-level target up on live traffic, flip exactly one flip-flop, run
co-simulation until the error vanishes / maps to high-level state / expires,
then (if needed) finish the application functionally and classify:

    UT   - any core trapped (highest precedence)
    HANG - watchdog, deadlock, or the 20x cycle budget fired
    OMM  - output region differs from the error-free reference
    ONA  - output correct although the error propagated (erroneous packet or
           corrupted hand-off state)
    VANISHED - output correct, no propagation observed
    EXPIRED  - micro-state error outlived the co-sim cap (tallied apart)

Every run is reproducible from (master seed, run id, config).
"""

from __future__ import annotations

import random
import time
from dataclasses import dataclass, field
from enum import Enum

from .config import SimConfig, parse_target
from .detailed.structs import (FlipFlopId, FlipFlopRegistry, ProtectionClass,
                               enumerate_flipflops, Micro)
from .engine import (SocSim, GoldenArtifacts, InfraError, prepare_golden,
                     run_accelerated_until, DONE, TRAP, HANG, RUNNING)
from .modeswitch import (CosimResolution, ResolutionKind, enter_cosim_at,
                         HOLD_MARGIN)
from .snapshot import snapshot_base_cycle
from .workload import get_workload


class Outcome(Enum):
    ONA = "ONA"
    OMM = "OMM"
    UT = "UT"
    HANG = "Hang"
    VANISHED = "Vanished"
    EXPIRED = "Expired"


OUTCOMES_REPORTED = (Outcome.ONA, Outcome.OMM, Outcome.UT, Outcome.HANG,
                     Outcome.VANISHED)


@dataclass(frozen=True)
class InjectionSpec:
    run_id: int
    seed: int
    target: str
    flipflop: FlipFlopId
    injection_cycle: int
    warmup_cycles: int


@dataclass
class RunRecord:
    spec: InjectionSpec
    outcome: Outcome
    erroneous_packet_seen: bool = False
    propagation_latency: int | None = None
    corrupted_words: list[tuple[int, int, int]] = field(default_factory=list)
    rollback_distance: int | None = None
    cosim_cycles: int = 0
    resolution: str = ""
    recovery: dict | None = None
    escaped_outputs: int = 0
    end_state_equal: bool | None = None  # full memory + architectural check
    wall_time: float = 0.0

    def check(self) -> None:
        if self.erroneous_packet_seen != (self.propagation_latency is not None):
            raise InfraError("propagation latency must accompany an erroneous packet")


def inject_bit(micro: Micro, ff: FlipFlopId, registry: FlipFlopRegistry) -> None:
    """Toggle exactly one registered bit (involution: applying twice undoes)."""
    if not registry.contains(ff):
        raise KeyError(f"unknown flip-flop id {ff}")
    micro.flip(ff)


class CampaignContext:
    """Per-configuration shared state: program, reference run, registry."""

    def __init__(self, cfg: SimConfig, with_store_trace: bool = False):
        self.cfg = cfg
        self.program = get_workload(cfg.workload, cfg.n_cores, cfg.workload_size)
        self.golden, self.store_trace = prepare_golden(
            cfg, self.program, with_store_trace=with_store_trace)
        self.registry = enumerate_flipflops(cfg)
        kind, inst = parse_target(cfg)
        classes = [ProtectionClass.PARITY_PROTECTED] if cfg.qrr_enabled and \
            kind in ("l2c", "mcu") else [ProtectionClass.INJECTABLE]
        self.eligible = self.registry.eligible_indices(classes, kind, inst)
        if not self.eligible:
            raise InfraError(f"no eligible flip-flops for target {cfg.target}")

    def sample_spec(self, run_id: int) -> InjectionSpec:
        rng = random.Random((self.cfg.master_seed << 20) ^ run_id)
        cycle = rng.randrange(self.golden.length)
        ff = self.registry.entries[rng.choice(self.eligible)][0]
        extra = rng.randrange(self.cfg.warmup_extra_max + 1) \
            if self.cfg.warmup_extra_max else 0
        return InjectionSpec(
            run_id=run_id,
            seed=self.cfg.master_seed,
            target=self.cfg.target,
            flipflop=ff,
            injection_cycle=cycle,
            warmup_cycles=self.cfg.warmup_min + extra,
        )


_CTX_CACHE: dict[str, CampaignContext] = {}


def campaign_context(cfg: SimConfig, with_store_trace: bool = False) -> CampaignContext:
    key = cfg.config_hash() + ("+trace" if with_store_trace else "")
    ctx = _CTX_CACHE.get(key)
    if ctx is None:
        if len(_CTX_CACHE) > 4:
            _CTX_CACHE.clear()
        ctx = _CTX_CACHE[key] = CampaignContext(cfg, with_store_trace)
    return ctx


def classify_outcome(sim: SocSim, golden: GoldenArtifacts,
                     resolution: CosimResolution | None) -> Outcome:
    """Taxonomy with a total precedence order: UT > Hang > output comparison."""
    if sim.status == TRAP:
        return Outcome.UT
    if sim.status == HANG:
        return Outcome.HANG
    if sim.status != DONE:
        raise InfraError(f"classification before termination (status={sim.status})")
    if sim.output_values() != golden.output:
        return Outcome.OMM
    propagated = resolution is not None and (
        resolution.erroneous_packet_seen or bool(resolution.corrupted_words))
    return Outcome.ONA if propagated else Outcome.VANISHED


def execute_run(spec: InjectionSpec, cfg: SimConfig,
                ctx: CampaignContext | None = None,
                early_stop: bool = True,
                full_detailed: bool = False,
                verify_end_state: bool = False) -> RunRecord:
    """Execute one complete injection experiment, deterministically.

    full_detailed runs the target at bit level from cycle 0 instead of
    restoring a snapshot and warming up (the accuracy-validation reference).
    verify_end_state additionally compares the run's final functional memory
    and per-core architectural results against the error-free reference
    (the recovery-verification campaigns demand full equality, not just a
    matching output region).
    """
    t0 = time.perf_counter()
    if ctx is None:
        ctx = campaign_context(cfg)
    golden = ctx.golden
    c_inject = spec.injection_cycle
    entry = 0 if full_detailed else max(0, c_inject - spec.warmup_cycles)
    if entry > 0 and entry <= HOLD_MARGIN:
        entry = 0  # too early for a clean hold window: enter at reset instead

    if entry > 0:
        base = snapshot_base_cycle(max(0, entry - HOLD_MARGIN), cfg.snapshot_interval)
        while base not in golden.snapshots and base > 0:
            base -= cfg.snapshot_interval
        sim = SocSim.restore_snapshot(cfg, ctx.program, golden.snapshots[base])
    else:
        sim = SocSim(cfg, ctx.program)
    sim.budget = golden.length * cfg.budget_factor

    cosim = enter_cosim_at(sim, entry, spec.target)
    # warm-up on live traffic up to the injection cycle
    cycle = entry
    while cycle < c_inject and sim.status == RUNNING:
        cycle += 1
        cosim.step_cycle(cycle)
    if sim.status != RUNNING:
        # the perturbed prelude ended the run before the injection landed
        cosim.exit_to_accelerated(cycle)
        outcome = classify_outcome(sim, golden, None)
        return _record(spec, outcome, None, t0)

    parity_covered = ctx.registry.class_of(spec.flipflop) is ProtectionClass.PARITY_PROTECTED
    cosim.inject(spec.flipflop, c_inject, parity_covered)
    res = cosim.run_until_resolution(early_stop=early_stop)

    if res.kind is ResolutionKind.VANISHED_EARLY:
        cosim.abandon()
        return _record(spec, Outcome.VANISHED, res, t0)
    if res.kind is ResolutionKind.EXPIRED:
        cosim.abandon()
        return _record(spec, Outcome.EXPIRED, res, t0)
    # rollback distances use the last-writer map as of the hand-off, before
    # the continuation adds later stores
    rollback = None
    if res.corrupted_words:
        lw = sim.last_writer
        rollback = max(res.at_cycle - lw.get(w, 0) for w, _, _ in res.corrupted_words)
    if res.kind is ResolutionKind.HANDOFF and sim.status == RUNNING:
        sim.run_to_end()
    outcome = classify_outcome(sim, golden, res)
    rec = _record(spec, outcome, res, t0)
    rec.rollback_distance = rollback
    if verify_end_state:
        rec.end_state_equal = (sim.status == DONE
                               and sim.output_values() == golden.output
                               and sim.memory_map() == golden.memory
                               and sim.arch_results() == golden.arch)
    return rec


def _record(spec: InjectionSpec, outcome: Outcome,
            res: CosimResolution | None, t0: float) -> RunRecord:
    rec = RunRecord(spec=spec, outcome=outcome)
    if res is not None:
        rec.erroneous_packet_seen = res.erroneous_packet_seen
        if res.erroneous_packet_seen:
            rec.propagation_latency = (res.first_erroneous_packet_cycle
                                       - spec.injection_cycle)
        rec.corrupted_words = list(res.corrupted_words)
        rec.cosim_cycles = res.cosim_cycles
        rec.resolution = res.kind.value
        rec.escaped_outputs = res.escaped_outputs
        if res.recovery is not None:
            rec.recovery = {
                "detect_cycle": res.recovery.detect_cycle,
                "gate_cycle": res.recovery.gate_cycle,
                "entries_replayed": res.recovery.entries_replayed,
                "recovery_cycles": res.recovery.recovery_cycles,
                "success": res.recovery.success,
                "suppressed_returns": res.recovery.suppressed_returns,
            }
    rec.wall_time = time.perf_counter() - t0
    rec.check()
    return rec


def run_campaign(cfg: SimConfig, n_runs: int, start_run: int = 0,
                 early_stop: bool = True, full_detailed: bool = False,
                 ctx: CampaignContext | None = None):
    """Yield RunRecords for runs [start_run, n_runs); resumable and ordered."""
    if n_runs <= start_run:
        return
    if ctx is None:
        ctx = campaign_context(cfg)
    for run_id in range(start_run, n_runs):
        spec = ctx.sample_spec(run_id)
        yield execute_run(spec, cfg, ctx, early_stop=early_stop,
                          full_detailed=full_detailed)
