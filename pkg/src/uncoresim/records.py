"""Campaign record persistence: JSON Lines, one self-describing object per run.

Every record carries the schema version and the campaign's config hash, so a
resumed campaign refuses to append to records produced under a different
configuration.  Readers reject unknown major versions.  Apart from the wall
time field, records are deterministic functions of (config, master seed,
run id).
"""

from __future__ import annotations

import json
import os

from .config import SimConfig
from .injector import RunRecord

SCHEMA_VERSION = "1.0"


class RecordsError(ValueError):
    pass


def record_to_dict(rec: RunRecord, cfg: SimConfig) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "config_hash": cfg.config_hash(),
        "run_id": rec.spec.run_id,
        "seed": rec.spec.seed,
        "workload": cfg.workload,
        "target": rec.spec.target,
        "flipflop": str(rec.spec.flipflop),
        "injection_cycle": rec.spec.injection_cycle,
        "warmup_cycles": rec.spec.warmup_cycles,
        "outcome": rec.outcome.value,
        "resolution": rec.resolution,
        "erroneous_packet_seen": rec.erroneous_packet_seen,
        "propagation_latency": rec.propagation_latency,
        "corrupted_words": [list(w) for w in rec.corrupted_words],
        "rollback_distance": rec.rollback_distance,
        "cosim_cycles": rec.cosim_cycles,
        "escaped_outputs": rec.escaped_outputs,
        "recovery": rec.recovery,
        "end_state_equal": rec.end_state_equal,
        "wall_time_s": round(rec.wall_time, 6),
    }


def dump_line(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def append_records(path: str, dicts) -> None:
    with open(path, "a") as fh:
        for obj in dicts:
            fh.write(dump_line(obj) + "\n")


def read_records(path: str) -> list[dict]:
    out = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise RecordsError(f"{path}:{line_no}: bad record: {e}") from None
            ver = str(obj.get("schema_version", ""))
            if ver.split(".")[0] != SCHEMA_VERSION.split(".")[0]:
                raise RecordsError(
                    f"{path}:{line_no}: unsupported record schema {ver!r}")
            out.append(obj)
    return out


def resume_point(path: str, cfg: SimConfig) -> int:
    """Next run id to execute given an existing records file."""
    if not os.path.exists(path):
        return 0
    recs = read_records(path)
    if not recs:
        return 0
    h = cfg.config_hash()
    for r in recs:
        if r["config_hash"] != h:
            raise RecordsError(
                "records were produced under a different configuration; "
                "refusing to resume")
    return max(r["run_id"] for r in recs) + 1
