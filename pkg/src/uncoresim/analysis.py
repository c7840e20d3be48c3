"""Campaign statistics and recovery-challenge metrics.

Sample planning and confidence intervals use the normal approximation of the
binomial; the two-sided quantile comes from a rational approximation of the
inverse normal CDF (absolute error below 1e-8, far inside the rounding of
every consumer here).  Rates are reported over the five application outcomes;
expired runs are tallied separately and never counted as erroneous outcomes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF (Acklam's rational approximation)."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"quantile argument must be in (0, 1), got {p}")
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


def two_sided_z(confidence: float) -> float:
    if not 0.0 < confidence < 1.0:
        raise ValueError(f"confidence must be in (0, 1), got {confidence}")
    return normal_quantile(1.0 - (1.0 - confidence) / 2.0)


def required_samples(p: float, half_width: float, confidence: float = 0.95) -> int:
    """Samples for a +-half_width estimate of a rate p at the given confidence.

    n = ceil(z^2 p (1-p) / h^2); zero for degenerate rates (no variance).
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"expected rate must be in [0, 1], got {p}")
    if half_width <= 0:
        raise ValueError(f"half-width must be positive, got {half_width}")
    if p in (0.0, 1.0):
        return 0
    z = two_sided_z(confidence)
    return math.ceil(z * z * p * (1.0 - p) / (half_width * half_width))


def ci_halfwidth(p_hat: float, n: int, confidence: float = 0.95) -> float:
    """Half-width of the normal-approximation CI around an observed rate."""
    if n <= 0:
        raise ValueError("sample count must be positive")
    if not 0.0 <= p_hat <= 1.0:
        raise ValueError(f"observed rate must be in [0, 1], got {p_hat}")
    z = two_sided_z(confidence)
    return z * math.sqrt(p_hat * (1.0 - p_hat) / n)


def throughput_estimate(app_cycles: float, fixed_seconds: float = 70.0,
                        tail_divisor: float = 4e6) -> float:
    """Effective cycles/second of one injection run over an app of length L.

    L / (fixed + L/tail_divisor): the fixed part covers restore, stepping to
    the injection point and co-simulation; the tail is the fraction of runs
    that must execute to completion.  Monotone in L, asymptote tail_divisor.
    """
    if app_cycles <= 0:
        raise ValueError("application length must be positive")
    return app_cycles / (fixed_seconds + app_cycles / tail_divisor)


# -- rate tables ----------------------------------------------------------------

OUTCOME_ORDER = ("ONA", "OMM", "UT", "Hang", "Vanished")


@dataclass
class RateCell:
    count: int = 0
    rate: float = 0.0
    ci: float = 0.0


@dataclass
class RateTable:
    """Per (workload, component) outcome rates with CI half-widths."""
    confidence: float = 0.95
    cells: dict[tuple[str, str], dict[str, RateCell]] = field(default_factory=dict)
    expired: dict[tuple[str, str], int] = field(default_factory=dict)
    totals: dict[tuple[str, str], int] = field(default_factory=dict)

    def add(self, workload: str, component: str, outcome: str) -> None:
        key = (workload, component)
        if outcome == "Expired":
            self.expired[key] = self.expired.get(key, 0) + 1
            self.cells.setdefault(key, {o: RateCell() for o in OUTCOME_ORDER})
            return
        cell = self.cells.setdefault(key, {o: RateCell() for o in OUTCOME_ORDER})
        cell[outcome].count += 1
        self.totals[key] = self.totals.get(key, 0) + 1

    def finalize(self) -> "RateTable":
        for key, outcomes in self.cells.items():
            n = self.totals.get(key, 0)
            for cell in outcomes.values():
                if n > 0:
                    cell.rate = cell.count / n
                    cell.ci = ci_halfwidth(cell.rate, n, self.confidence)
        return self

    def rows(self):
        for (workload, component) in sorted(self.cells):
            n = self.totals.get((workload, component), 0)
            for outcome in OUTCOME_ORDER:
                c = self.cells[(workload, component)][outcome]
                yield (workload, component, outcome, c.count, n, c.rate, c.ci)
            yield (workload, component, "Expired",
                   self.expired.get((workload, component), 0), n, None, None)


def rate_table(records, confidence: float = 0.95) -> RateTable:
    """Build the outcome-rate table from an iterable of record dicts."""
    t = RateTable(confidence=confidence)
    for r in records:
        t.add(r["workload"], r["target"].split(":")[0], r["outcome"])
    return t.finalize()


@dataclass
class RatioReport:
    rows: list[tuple]  # (workload, component, outcome, ra, rb, ratio, ok)
    band: tuple[float, float]

    @property
    def all_ok(self) -> bool:
        return all(row[-1] for row in self.rows)


def compare_rate_tables(a: RateTable, b: RateTable,
                        band: tuple[float, float] = (0.9, 1.1)) -> RatioReport:
    """Per-outcome rate ratios a/b with a band check rescued by CI overlap.

    Cells empty on both sides are skipped; cells observed on only one side
    are flagged when the CIs don't overlap.
    """
    rows = []
    keys = sorted(set(a.cells) | set(b.cells))
    for key in keys:
        ca = a.cells.get(key)
        cb = b.cells.get(key)
        if ca is None or cb is None:
            rows.append((key[0], key[1], "*", None, None, None, False))
            continue
        for outcome in OUTCOME_ORDER:
            ra, rb = ca[outcome], cb[outcome]
            if ra.count == 0 and rb.count == 0:
                continue
            ratio = (ra.rate / rb.rate) if rb.rate else None
            in_band = ratio is not None and band[0] <= ratio <= band[1]
            overlap = (abs(ra.rate - rb.rate) <= ra.ci + rb.ci)
            rows.append((key[0], key[1], outcome, ra.rate, rb.rate, ratio,
                         in_band or overlap))
    return RatioReport(rows=rows, band=band)


# -- distributions ----------------------------------------------------------------


def cdf_points(values) -> list[tuple[int, float]]:
    """Empirical CDF as (value, cumulative fraction) steps."""
    data = sorted(values)
    n = len(data)
    if n == 0:
        return []
    points = []
    for i, v in enumerate(data, 1):
        if i == n or data[i] != v:
            points.append((v, i / n))
    return points


def propagation_latency_cdf(records) -> list[tuple[int, float]]:
    """CDF of injection-to-first-erroneous-output latencies."""
    lats = [r["propagation_latency"] for r in records
            if r.get("erroneous_packet_seen") and r.get("propagation_latency") is not None]
    return cdf_points(lats)


def rollback_distance_cdf(records) -> list[tuple[int, float]]:
    dists = [r["rollback_distance"] for r in records
             if r.get("rollback_distance") is not None]
    return cdf_points(dists)


def rollback_distance(corruption_cycle: int, waddr: int,
                      last_writer: dict[int, int]) -> int:
    """Cycles a checkpoint must rewind to predate a corrupted word.

    A word no core ever wrote rolls back to program start (distance equals
    the corruption cycle: only the initial image is a safe basis).
    """
    return corruption_cycle - last_writer.get(waddr, 0)
