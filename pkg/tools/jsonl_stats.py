#!/usr/bin/env python3
"""Independent one-pass recomputation of campaign statistics from JSONL.

Reads a records file and rewrites the rate table and CDF reports without
importing the simulator package, as a cross-check that the shipped reports
are a pure function of the raw records.

    python3 tools/jsonl_stats.py records.jsonl OUT_DIR
"""

import json
import math
import os
import sys

OUTCOMES = ("ONA", "OMM", "UT", "Hang", "Vanished")


def inv_norm(p):
    a = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
         1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
    b = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
         6.680131188771972e+01, -1.328068155288572e+01)
    c = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
         -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
    d = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
         3.754408661907416e+00)
    plow = 0.02425
    if p < plow:
        q = math.sqrt(-2 * math.log(p))
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1)
    if p > 1 - plow:
        q = math.sqrt(-2 * math.log(1 - p))
        return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1)
    q = p - 0.5
    r = q * q
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q / \
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1)


def cdf(values):
    data = sorted(values)
    n = len(data)
    pts = []
    for i, v in enumerate(data, 1):
        if i == n or data[i] != v:
            pts.append((v, i / n))
    return pts


def main(records_path, out_dir):
    counts = {}
    expired = {}
    totals = {}
    latencies = []
    rollbacks = []
    with open(records_path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            r = json.loads(line)
            key = (r["workload"], r["target"].split(":")[0])
            counts.setdefault(key, {o: 0 for o in OUTCOMES})
            expired.setdefault(key, 0)
            totals.setdefault(key, 0)
            if r["outcome"] == "Expired":
                expired[key] += 1
            else:
                counts[key][r["outcome"]] += 1
                totals[key] += 1
            if r.get("erroneous_packet_seen") and r.get("propagation_latency") is not None:
                latencies.append(r["propagation_latency"])
            if r.get("rollback_distance") is not None:
                rollbacks.append(r["rollback_distance"])

    z = inv_norm(1 - (1 - 0.95) / 2)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "rates.csv"), "w") as fh:
        fh.write("workload,component,outcome,count,total,rate,ci_halfwidth\n")
        for key in sorted(counts):
            n = totals[key]
            for o in OUTCOMES:
                c = counts[key][o]
                if n > 0:
                    rate = c / n
                    ci = z * math.sqrt(rate * (1 - rate) / n)
                    fh.write(f"{key[0]},{key[1]},{o},{c},{n},{rate!r},{ci!r}\n")
                else:
                    fh.write(f"{key[0]},{key[1]},{o},{c},{n},{0.0!r},{0.0!r}\n")
            fh.write(f"{key[0]},{key[1]},Expired,{expired[key]},{n},,\n")

    for name, values in (("propagation_latency_cdf.csv", latencies),
                         ("rollback_distance_cdf.csv", rollbacks)):
        with open(os.path.join(out_dir, name), "w") as fh:
            fh.write("x,cum_fraction\n")
            for x, frac in cdf(values):
                fh.write(f"{x},{frac!r}\n")
    print(f"recomputed reports in {out_dir}")


if __name__ == "__main__":
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    main(sys.argv[1], sys.argv[2])
