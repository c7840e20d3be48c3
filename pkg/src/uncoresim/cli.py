"""Operator surface: plan, run, validate, qrr-verify, report.

Exit codes: 0 success, 1 infrastructure failure, 2 configuration error,
3 acceptance-check failure (validate / qrr-verify thresholds).

Campaign execution appends JSON Lines records incrementally (resumable with
--resume), then writes the rate-table CSV and renders figures next to it.
Every command is deterministic given (config, seed) except wall-time fields.
"""

from __future__ import annotations

import argparse
import dataclasses
import multiprocessing
import os
import sys
import time

from . import analysis, records, report, validate
from .config import ConfigError, SimConfig, load_toml, parse_target
from .detailed.structs import enumerate_flipflops
from .engine import InfraError
from .injector import campaign_context, execute_run, run_campaign

EXIT_OK, EXIT_INFRA, EXIT_CONFIG, EXIT_CHECK = 0, 1, 2, 3


def _load_config(args) -> SimConfig:
    overrides = {}
    for name in ("workload", "workload_size", "target", "master_seed", "n_runs",
                 "jobs", "out_dir"):
        v = getattr(args, name, None)
        if v is not None:
            overrides[name] = v
    if getattr(args, "qrr", None):
        overrides["qrr_enabled"] = True
    if args.config:
        return load_toml(args.config, **overrides)
    return SimConfig(**overrides)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML config file (flags override)")
    p.add_argument("--workload", help="built-in workload name")
    p.add_argument("--workload-size", dest="workload_size", type=int)
    p.add_argument("--target", help="target component id, e.g. l2c:0 / mcu:1 / ccx:0")
    p.add_argument("--seed", dest="master_seed", type=int)
    p.add_argument("--out", dest="out_dir", help="output directory")


# -- plan -----------------------------------------------------------------------


def cmd_plan(args) -> int:
    cfg = _load_config(args)
    n = analysis.required_samples(args.rate, args.half_width, args.confidence)
    print(f"expected rate {args.rate:g} at +-{args.half_width:g} "
          f"({args.confidence:.0%} confidence): {n} runs")
    if args.dump_registry:
        reg = enumerate_flipflops(cfg)
        with open(args.dump_registry, "w") as fh:
            reg.dump(fh)
        totals = {c.value: v for c, v in reg.totals().items() if v}
        print(f"registry: {len(reg)} flip-flops -> {args.dump_registry} {totals}")
    if args.calibrate:
        ctx = campaign_context(cfg)
        t0 = time.perf_counter()
        for run_id in range(args.calibrate):
            execute_run(ctx.sample_spec(run_id), cfg, ctx)
        per_run = (time.perf_counter() - t0) / args.calibrate
        print(f"calibration: {per_run * 1e3:.1f} ms/run over {args.calibrate} runs "
              f"-> projected {n * per_run / 60:.1f} min for {n} runs")
    return EXIT_OK


# -- run ------------------------------------------------------------------------


_POOL_CFG: SimConfig | None = None


def _pool_init(cfg_fields: dict) -> None:
    global _POOL_CFG
    _POOL_CFG = SimConfig(**cfg_fields)


def _pool_run(run_id: int) -> dict:
    cfg = _POOL_CFG
    ctx = campaign_context(cfg)
    rec = execute_run(ctx.sample_spec(run_id), cfg, ctx)
    return records.record_to_dict(rec, cfg)


def _execute_campaign(cfg: SimConfig, n_runs: int, start: int, jsonl: str,
                      early_stop: bool = True) -> list[dict]:
    """Run [start, n_runs), appending records in run-id order."""
    new_dicts = []
    if cfg.jobs > 1:
        fields = dataclasses.asdict(cfg)
        with multiprocessing.Pool(cfg.jobs, _pool_init, (fields,)) as pool:
            for obj in pool.imap(_pool_run, range(start, n_runs), chunksize=8):
                records.append_records(jsonl, [obj])
                new_dicts.append(obj)
    else:
        ctx = campaign_context(cfg)
        for rec in run_campaign(cfg, n_runs, start_run=start, early_stop=early_stop,
                                ctx=ctx):
            obj = records.record_to_dict(rec, cfg)
            records.append_records(jsonl, [obj])
            new_dicts.append(obj)
    return new_dicts


def cmd_run(args) -> int:
    cfg = _load_config(args)
    os.makedirs(cfg.out_dir, exist_ok=True)
    jsonl = os.path.join(cfg.out_dir, "records.jsonl")
    start = 0
    if args.resume:
        start = records.resume_point(jsonl, cfg)
    elif os.path.exists(jsonl):
        os.remove(jsonl)
    if start < cfg.n_runs:
        _execute_campaign(cfg, cfg.n_runs, start, jsonl)
    all_recs = records.read_records(jsonl)
    paths = report.emit_campaign_report(all_recs, cfg.out_dir)
    done = len(all_recs)
    print(f"{done} records in {jsonl} (resumed at {start})" if args.resume
          else f"{done} records in {jsonl}")
    print(f"reports: {paths['rates_csv']}, figures alongside")
    return EXIT_OK


# -- validate ---------------------------------------------------------------------


def cmd_validate(args) -> int:
    cfg = _load_config(args)
    kind, _ = parse_target(cfg)
    if kind != "l2c":
        raise ConfigError("validation experiments target an L2 bank (l2c:N)")
    os.makedirs(cfg.out_dir, exist_ok=True)
    ok = True

    print(f"[1/3] warm-up reconstruction ({args.warmup_runs} runs)")
    offsets = (1, 10, 50, 100, 200, 500, 1000)
    mean, results = validate.warmup_experiment(cfg, args.warmup_runs, offsets)
    worst = max(r.divergence_end for r in results)
    print(f"      mean divergence {mean:.6f}, worst {worst:.6f} "
          f"(threshold {args.divergence_threshold})")
    ok &= mean <= args.divergence_threshold
    curve_path = os.path.join(cfg.out_dir, "warmup_divergence.png")
    curves = [(f"run {r.run_id}", r.curve) for r in results[:8]]
    report.render_curve_figure(curves, "micro-state divergence during warm-up",
                               "cycles into co-simulation", "divergence",
                               curve_path, hline=args.divergence_threshold)
    with open(os.path.join(cfg.out_dir, "warmup_divergence.csv"), "w") as fh:
        fh.write("run_id,entry_cycle,injection_cycle,divergence_end\n")
        for r in results:
            fh.write(f"{r.run_id},{r.entry_cycle},{r.injection_cycle},"
                     f"{repr(r.divergence_end)}\n")

    print(f"[2/3] outcome accuracy, mixed vs bit-level-from-0 "
          f"({args.accuracy_runs} spec pairs)")
    acc = validate.accuracy_experiment(
        cfg, args.accuracy_runs,
        progress=lambda i, n: print(f"      {i}/{n} spec pairs"))
    for row in acc.report.rows:
        wl, comp, outcome, ra, rb, ratio, row_ok = row
        ratio_s = f"{ratio:.3f}" if ratio is not None else "n/a"
        print(f"      {outcome:9s} mixed={ra if ra is None else round(ra, 5)} "
              f"full={rb if rb is None else round(rb, 5)} ratio={ratio_s} "
              f"{'ok' if row_ok else 'OUT OF BAND'}")
        ok &= row_ok
    report.write_rate_csv(acc.mixed, os.path.join(cfg.out_dir, "rates_mixed.csv"))
    report.write_rate_csv(acc.full, os.path.join(cfg.out_dir, "rates_full_detailed.csv"))

    print("[3/3] zero-injection transparency")
    zok = validate.zero_injection_check(cfg, args.zero_runs)
    print(f"      {'ok' if zok else 'FAILED'}")
    ok &= zok

    print("validation:", "PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_CHECK


# -- qrr-verify --------------------------------------------------------------------


def cmd_qrr_verify(args) -> int:
    cfg = _load_config(args)
    if not cfg.qrr_enabled:
        raise ConfigError("qrr-verify requires qrr_enabled = true")
    kind, _ = parse_target(cfg)
    if kind not in ("l2c", "mcu"):
        raise ConfigError("QRR covers L2 banks and memory controllers only")
    os.makedirs(cfg.out_dir, exist_ok=True)
    ctx = campaign_context(cfg)
    bound = cfg.qrr_capacity * cfg.qrr_worst_op_latency
    n = args.runs or cfg.n_runs
    recovered = 0
    escapes = 0
    bound_violations = []
    failures = []
    cycles_hist = []
    jsonl = os.path.join(cfg.out_dir, "qrr_records.jsonl")
    if os.path.exists(jsonl):
        os.remove(jsonl)
    for run_id in range(n):
        spec = ctx.sample_spec(run_id)
        rec = execute_run(spec, cfg, ctx, early_stop=False, verify_end_state=True)
        records.append_records(jsonl, [records.record_to_dict(rec, cfg)])
        rc = rec.recovery or {}
        good = bool(rc.get("success")) and bool(rec.end_state_equal)
        recovered += good
        escapes += rec.escaped_outputs
        if rc.get("recovery_cycles", 0) > bound:
            bound_violations.append(run_id)
        if rc:
            cycles_hist.append(rc["recovery_cycles"])
        if not good:
            failures.append((run_id, str(spec.flipflop), rec.outcome.value))
        if (run_id + 1) % 500 == 0:
            print(f"  {run_id + 1}/{n} runs, {recovered} recovered")
    rate = recovered / n if n else 0.0
    print(f"recovered {recovered}/{n} ({rate:.2%}); escaped outputs: {escapes}; "
          f"bound {bound} cycles, violations: {len(bound_violations)}")
    if cycles_hist:
        pts = analysis.cdf_points(cycles_hist)
        report.write_cdf_csv(pts, os.path.join(cfg.out_dir, "recovery_cycles_cdf.csv"))
        report.render_cdf_figure(pts, "recovery cycles", "cycles",
                                 os.path.join(cfg.out_dir, "recovery_cycles_cdf.png"))
    for f in failures[:20]:
        print("  UNRECOVERED run", f[0], "flip-flop", f[1], "outcome", f[2])
    ok = recovered == n and not bound_violations
    if cfg.qrr_immediate_gating:
        return EXIT_OK if ok else EXIT_CHECK
    # with delayed gating escapes are possible by design: report, don't fail
    return EXIT_OK


# -- report ------------------------------------------------------------------------


def cmd_report(args) -> int:
    recs = records.read_records(args.records)
    out_dir = args.out_dir or os.path.dirname(os.path.abspath(args.records))
    paths = report.emit_campaign_report(recs, out_dir)
    print(f"{len(recs)} records -> " + ", ".join(sorted(paths.values())))
    return EXIT_OK


# -- entry -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="uncoresim",
        description="soft-error injection campaigns for a small SoC memory subsystem")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="sample-size planning and calibration")
    _add_common(p)
    p.add_argument("--rate", type=float, default=0.01, help="expected outcome rate")
    p.add_argument("--half-width", dest="half_width", type=float, default=0.001)
    p.add_argument("--confidence", type=float, default=0.95)
    p.add_argument("--calibrate", type=int, metavar="N",
                   help="measure per-run cost over N runs")
    p.add_argument("--dump-registry", metavar="PATH",
                   help="write the flip-flop registry (id<TAB>class)")
    p.set_defaults(fn=cmd_plan)

    p = sub.add_parser("run", help="execute an injection campaign")
    _add_common(p)
    p.add_argument("--runs", dest="n_runs", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--resume", action="store_true",
                   help="continue an interrupted campaign")
    p.add_argument("--qrr", action="store_true", help="enable quick replay recovery")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("validate", help="warm-up and accuracy validation")
    _add_common(p)
    p.add_argument("--warmup-runs", type=int, default=200)
    p.add_argument("--accuracy-runs", type=int, default=500)
    p.add_argument("--zero-runs", type=int, default=10)
    p.add_argument("--divergence-threshold", type=float, default=0.002)
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("qrr-verify", help="recovery verification campaign")
    _add_common(p)
    p.add_argument("--runs", type=int)
    p.add_argument("--qrr", action="store_true", default=None,
                   help=argparse.SUPPRESS)
    p.set_defaults(fn=cmd_qrr_verify)

    p = sub.add_parser("report", help="rebuild reports from a records file")
    p.add_argument("--records", required=True)
    p.add_argument("--out", dest="out_dir")
    p.set_defaults(fn=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except records.RecordsError as e:
        print(f"records error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (InfraError, OSError) as e:
        print(f"infrastructure failure: {e}", file=sys.stderr)
        return EXIT_INFRA


if __name__ == "__main__":
    sys.exit(main())
