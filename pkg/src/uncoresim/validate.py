"""Platform accuracy experiments.

Warm-up reconstruction: how closely does a reset-and-warmed target match a
bit-level reference that observed the same input trace from cycle 0?  The
reference is replayed open-loop: the recorded request arrivals drive a fresh
detailed bank with its own functional memory-controller environment, and the
divergence metric compares micro-state bits (entries the reference never
filled are excluded).

Outcome accuracy: mixed-mode campaigns versus campaigns whose target runs at
bit level from cycle 0, over identical injection specs; per-outcome rates
must agree within a ratio band or overlapping confidence intervals.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field

from .abstractmem import AbstractMcu, BankState
from .analysis import RateTable, compare_rate_tables, rate_table, RatioReport
from .config import SimConfig, parse_target
from .detailed.l2bank import DetailedBank
from .detailed.structs import state_divergence, L2C
from .engine import SocSim, InfraError, RUNNING
from .injector import CampaignContext, campaign_context, execute_run
from .modeswitch import enter_cosim_at, HOLD_MARGIN


@dataclass
class WarmupResult:
    run_id: int
    entry_cycle: int
    injection_cycle: int
    warmup_cycles: int
    divergence_end: float
    curve: list[tuple[int, float]] = field(default_factory=list)  # (offset, divergence)


class _ReferenceBank:
    """Open-loop replay of a request trace into a fresh detailed bank."""

    def __init__(self, cfg: SimConfig, bank_id: int, image_dram: dict):
        self.cfg = cfg
        self.bank = DetailedBank(cfg, bank_id, BankState(cfg, bank_id))
        self.bank.last_writer = {}
        self.dram = dict(image_dram)
        self.mcu = AbstractMcu(self.dram, cfg.dram_latency)
        self.queue: deque = deque()
        self.leftover: tuple = ()
        self.cycle = -1

    def feed(self, trace) -> None:
        self.queue.extend(trace)

    def step_to(self, cycle: int) -> None:
        while self.cycle < cycle:
            self.cycle += 1
            incoming = None
            if self.queue and self.queue[0][0] <= self.cycle:
                incoming = self.queue[0][1]
            resps = tuple(self.mcu.due(self.cycle)) + self.leftover
            _outs, ops, accepted, _ev, leftover = self.bank.step(
                self.cycle, incoming, resps)
            self.leftover = tuple(leftover)
            if accepted:
                self.queue.popleft()
            for op in ops:
                self.mcu.submit(op, self.cycle + 1, self.cfg.line_words)


def warmup_divergence(cfg: SimConfig, ctx: CampaignContext, run_id: int,
                      curve_offsets: tuple[int, ...] = ()) -> WarmupResult | None:
    """One warm-up reconstruction measurement; None when the sampled window
    starts at reset (reconstruction is exact by construction there)."""
    kind, inst = parse_target(cfg)
    if kind != L2C:
        raise InfraError("warm-up divergence evaluation targets an L2 bank")
    spec = ctx.sample_spec(run_id)
    entry = max(0, spec.injection_cycle - spec.warmup_cycles)
    if entry <= HOLD_MARGIN:
        return None

    sim = SocSim(cfg, ctx.program)
    sim.budget = ctx.golden.length * cfg.budget_factor
    tap: list = []
    sim.request_tap = {inst: tap}
    cosim = enter_cosim_at(sim, entry, spec.target)
    plant = cosim.plant
    plant_tap: list = []
    inner = plant.on_engine_request

    def tapped(pkt, cycle):
        plant_tap.append((cycle + cfg.xbar_delay, pkt))
        inner(pkt, cycle)

    sim.detach_sink = tapped
    # packets parked during the entry hold were re-fed before the wrap
    plant_tap.extend(plant.feed)

    ref = _ReferenceBank(cfg, inst, {a >> 2: w for a, w in ctx.program.image if w})
    ref.feed(tap)
    fed_upto = 0

    def sync_ref(cycle: int) -> None:
        nonlocal fed_upto
        ref.feed(plant_tap[fed_upto:])
        fed_upto = len(plant_tap)
        ref.step_to(cycle)

    curve = []
    offsets = sorted(set(curve_offsets))
    cycle = entry
    while cycle < spec.injection_cycle and sim.status == RUNNING:
        cycle += 1
        cosim.step_cycle(cycle)
        off = cycle - entry
        if offsets and off >= offsets[0]:
            sync_ref(cycle)
            curve.append((off, state_divergence(L2C, plant.target.micro, ref.bank.micro)))
            offsets.pop(0)
    if sim.status != RUNNING:
        return None
    sync_ref(cycle)
    end_div = state_divergence(L2C, plant.target.micro, ref.bank.micro)
    cosim.abandon()
    return WarmupResult(run_id, entry, spec.injection_cycle, spec.warmup_cycles,
                        end_div, curve)


def warmup_experiment(cfg: SimConfig, n_runs: int,
                      curve_offsets: tuple[int, ...] = ()) -> tuple[float, list[WarmupResult]]:
    """Mean end-of-warm-up divergence over n measurable runs."""
    ctx = campaign_context(cfg)
    results = []
    run_id = 0
    attempts = 0
    while len(results) < n_runs and attempts < n_runs * 20:
        r = warmup_divergence(cfg, ctx, run_id, curve_offsets)
        run_id += 1
        attempts += 1
        if r is not None:
            results.append(r)
    if not results:
        raise InfraError("no measurable warm-up windows (workload too short)")
    mean = sum(r.divergence_end for r in results) / len(results)
    return mean, results


# -- outcome-rate accuracy -----------------------------------------------------


@dataclass
class AccuracyResult:
    mixed: RateTable
    full: RateTable
    report: RatioReport
    mixed_records: list
    full_records: list


def _as_dict(rec, cfg: SimConfig) -> dict:
    return {
        "workload": cfg.workload,
        "target": rec.spec.target,
        "outcome": rec.outcome.value,
        "erroneous_packet_seen": rec.erroneous_packet_seen,
        "propagation_latency": rec.propagation_latency,
        "rollback_distance": rec.rollback_distance,
    }


def accuracy_experiment(cfg: SimConfig, n_runs: int,
                        band: tuple[float, float] = (0.9, 1.1),
                        progress=None) -> AccuracyResult:
    """Mixed-mode vs bit-level-from-cycle-0 campaigns on identical specs."""
    ctx = campaign_context(cfg)
    mixed_recs, full_recs = [], []
    for run_id in range(n_runs):
        spec = ctx.sample_spec(run_id)
        mixed_recs.append(_as_dict(execute_run(spec, cfg, ctx), cfg))
        full_recs.append(_as_dict(execute_run(spec, cfg, ctx, full_detailed=True), cfg))
        if progress is not None and (run_id + 1) % 200 == 0:
            progress(run_id + 1, n_runs)
    mixed = rate_table(mixed_recs)
    full = rate_table(full_recs)
    return AccuracyResult(mixed, full, compare_rate_tables(mixed, full, band),
                          mixed_recs, full_recs)


@dataclass
class CalibrationResult:
    app_cycles: int
    mixed_runs: int
    full_runs: int
    mixed_wall: float
    full_wall: float

    @property
    def mixed_cps(self) -> float:
        return self.app_cycles * self.mixed_runs / self.mixed_wall

    @property
    def full_cps(self) -> float:
        return self.app_cycles * self.full_runs / self.full_wall

    @property
    def speedup(self) -> float:
        return self.mixed_cps / self.full_cps


def calibration(cfg: SimConfig, mixed_runs: int = 20,
                full_runs: int = 6) -> CalibrationResult:
    """Effective injection-run throughput of the two modes, in cycles/second.

    Per-run cost in accelerated (mixed) mode is dominated by snapshot restore
    plus a short co-simulation episode and stays flat in the application
    length; the bit-level reference pays for every cycle up to the injection
    point, so its effective throughput is the application length over that.
    Both sides execute the same injection specs end to end.
    """
    ctx = campaign_context(cfg)
    t0 = time.perf_counter()
    for run_id in range(mixed_runs):
        execute_run(ctx.sample_spec(run_id), cfg, ctx)
    mixed_wall = time.perf_counter() - t0
    t0 = time.perf_counter()
    for run_id in range(full_runs):
        execute_run(ctx.sample_spec(run_id), cfg, ctx, full_detailed=True)
    full_wall = time.perf_counter() - t0
    return CalibrationResult(ctx.golden.length, mixed_runs, full_runs,
                             mixed_wall, full_wall)


def zero_injection_check(cfg: SimConfig, n_runs: int = 20) -> bool:
    """Both setups must classify every no-injection run as Vanished."""
    ctx = campaign_context(cfg)
    for run_id in range(n_runs):
        spec = ctx.sample_spec(run_id)
        for full in (False, True):
            sim = SocSim(cfg, ctx.program)
            sim.budget = ctx.golden.length * cfg.budget_factor
            entry = 0 if full else max(0, spec.injection_cycle - spec.warmup_cycles)
            if 0 < entry <= HOLD_MARGIN:
                entry = 0
            cosim = enter_cosim_at(sim, entry, spec.target)
            span = max(1, spec.injection_cycle - entry) + 200
            cosim.run_transparent(span)
            sim.run_to_end()
            if sim.status != "done" or sim.output_values() != ctx.golden.output:
                return False
    return True
