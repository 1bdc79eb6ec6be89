"""Donor mapping, proportional splicing, national alignment and informality reconciliation.

Panel slices are plain ``dict[RegionId, Series]`` mappings for one variable,
as returned by :meth:`Panel.slice`.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy import stats

from .errors import DegenerateError, DomainError, NoDonorError, ReconciliationCapacityError
from .panel import ConversionRule, Frequency, MonthKey, RegionId, Series, common_keys, format_date, month_range

log = logging.getLogger(__name__)

MIN_OVERLAP = 10
MAX_REDISTRIBUTION_ITERATIONS = 50


# --------------------------------------------------------------------------- donors


@dataclass(frozen=True)
class DonorMap:
    target: RegionId | None
    variable: str | None
    donor: RegionId
    spearman: float
    kendall: float
    overlap_n: int

    def __post_init__(self) -> None:
        if self.overlap_n < 1:
            raise DomainError("overlap_n must be positive")
        if self.target is not None and self.donor == self.target:
            raise DomainError("donor must differ from target")


def rank_correlations(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Spearman (average ranks) and Kendall tau-b; NaN when either side is constant."""
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return float("nan"), float("nan")
    rho = stats.spearmanr(a, b).statistic
    tau = stats.kendalltau(a, b, variant="b").statistic
    return float(rho), float(tau)


def donor_scan(
    target_series: Series,
    candidates: Mapping[RegionId, Series],
    min_overlap: int = MIN_OVERLAP,
    target: RegionId | None = None,
) -> list[DonorMap]:
    """Correlation table for every eligible candidate, best first."""
    rows: list[DonorMap] = []
    for region, cand in candidates.items():
        if target is not None and region == target:
            continue
        keys = common_keys([target_series, cand])
        if len(keys) < min_overlap:
            continue
        a = target_series.restrict(keys).values
        b = cand.restrict(keys).values
        rho, tau = rank_correlations(a, b)
        if not np.isfinite(rho):
            continue
        rows.append(DonorMap(target, target_series.meta.get("variable"), region, rho, tau, len(keys)))
    rows.sort(key=lambda d: (-d.spearman, -d.overlap_n, d.donor))
    return rows


def donor_map(
    target_series: Series,
    candidates: Mapping[RegionId, Series],
    min_overlap: int = MIN_OVERLAP,
    *,
    target: RegionId | None = None,
    variable: str | None = None,
) -> DonorMap:
    """Pick the candidate with the highest Spearman correlation over the common window.

    Candidates with fewer than ``min_overlap`` common months, or a constant
    overlap, are ineligible. Ties go to the larger overlap, then the lower code.
    """
    rows = donor_scan(target_series, candidates, min_overlap, target)
    if not rows:
        raise NoDonorError(f"no candidate has {min_overlap} or more usable overlapping observations")
    best = rows[0]
    if variable is not None:
        best = DonorMap(best.target, variable, best.donor, best.spearman, best.kendall, best.overlap_n)
    return best


def donors_csv(maps: list[DonorMap]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["target", "variable", "donor", "spearman", "kendall", "overlap_n"])
    for d in maps:
        w.writerow([
            "" if d.target is None else d.target.code,
            d.variable or "",
            d.donor.code,
            repr(d.spearman),
            repr(d.kendall),
            d.overlap_n,
        ])
    return buf.getvalue()


# --------------------------------------------------------------------------- splicing


@dataclass(frozen=True)
class SpliceAnchor:
    t_star: MonthKey
    anchor_value: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.anchor_value):
            raise DomainError("anchor value must be finite")

    @classmethod
    def earliest(cls, series: Series) -> SpliceAnchor:
        """Anchor on the first observation of ``series``."""
        if len(series) == 0:
            raise DomainError("cannot anchor on an empty series")
        return cls(series.first, float(series.values[0]))


def backward_splice(anchor: SpliceAnchor, proxy: Series, span: tuple[MonthKey, MonthKey]) -> Series:
    """Scale ``proxy`` so it passes through the anchor: ``y(t) = a * z(t) / z(t*)``."""
    start, end = span
    if anchor.t_star not in proxy:
        raise DomainError(f"proxy does not cover the anchor month {anchor.t_star}")
    keys = month_range(start, end) if proxy.frequency is Frequency.MONTHLY else [k for k in proxy.keys if start <= k <= end]
    missing = [k for k in keys if k not in proxy]
    if missing:
        raise DomainError(f"proxy does not cover the span; first missing month {missing[0]}")
    base = proxy[anchor.t_star]
    if base == 0:
        raise DegenerateError(f"proxy is zero at the anchor month {anchor.t_star}")
    out = proxy.restrict(keys).values * (anchor.anchor_value / base)
    points = dict(zip(keys, out))
    if anchor.t_star in points:
        points[anchor.t_star] = anchor.anchor_value
    return Series(proxy.frequency, points, {"spliced_from": str(anchor.t_star)})


def splice_extend(observed: Series, proxy: Series, start: MonthKey) -> Series:
    """Observed series extended back to ``start`` with the proxy's dynamics."""
    anchor = SpliceAnchor.earliest(observed)
    if start >= anchor.t_star:
        return observed
    back = backward_splice(anchor, proxy, (start, anchor.t_star))
    points = back.to_dict()
    points.update(observed.to_dict())
    return Series(observed.frequency, points, {**observed.meta, "spliced_from": str(anchor.t_star)})


def annual_splice(monthly_synthetic: Series, annual_benchmark: Series, rule: ConversionRule | str) -> Series:
    """Scale each benchmark year's twelve months so they aggregate to the benchmark.

    Months in years without a benchmark are returned unchanged.
    """
    rule = ConversionRule(rule)
    if monthly_synthetic.is_annual or not annual_benchmark.is_annual:
        raise DomainError("annual_splice needs a monthly synthetic and an annual benchmark")
    values = np.array(monthly_synthetic.values, dtype=float)
    years = np.array([k.year for k in monthly_synthetic.keys])
    for key, target in annual_benchmark.items():
        idx = np.flatnonzero(years == key.year)
        if len(idx) != 12:
            raise DomainError(f"benchmark year {key.year} is covered by {len(idx)} synthetic months, need 12")
        agg = values[idx].sum() if rule is ConversionRule.SUM else values[idx].mean()
        if agg == 0:
            raise DegenerateError(f"synthetic aggregate is zero in {key.year}")
        values[idx] = values[idx] * (target / agg)
    return monthly_synthetic.with_values(values, meta={**monthly_synthetic.meta, "benchmarked": rule.value})


# --------------------------------------------------------------------------- alignment


def national_align(members: Mapping[RegionId, Series], national: Series) -> dict[RegionId, Series]:
    """Rescale members month by month so they sum to ``national``.

    Months absent from ``national`` are left untouched.
    """
    if not members:
        raise DomainError("national_align needs at least one member")
    regions = sorted(members)
    nat = national.to_dict()
    points = {r: members[r].to_dict() for r in regions}
    for key, target in nat.items():
        missing = [r for r in regions if key not in points[r]]
        if missing:
            raise DomainError(f"member {missing[0]} has no value at {key}")
        vals = np.array([points[r][key] for r in regions])
        total = vals.sum()
        if total <= 0:
            raise DegenerateError(f"member sum is {total} at {key}")
        factor = target / total
        for r, v in zip(regions, vals):
            points[r][key] = v * factor
    return {r: Series(members[r].frequency, points[r], {**members[r].meta, "aligned": True}) for r in regions}


# --------------------------------------------------------------------------- informality


@dataclass(frozen=True)
class LambdaSchedule:
    values: Mapping[MonthKey, float]
    residual: Mapping[MonthKey, float]  # relative gap after clipping, per month

    def __post_init__(self) -> None:
        for k, v in self.values.items():
            if not (np.isfinite(v) and v > 0):
                raise DomainError(f"lambda at {k} must be finite and positive, got {v}")

    def series(self) -> Series:
        return Series(Frequency.MONTHLY, self.values)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["date", "lambda"])
        for k in sorted(self.values):
            w.writerow([format_date(k, Frequency.MONTHLY), repr(float(self.values[k]))])
        return buf.getvalue()


def _cap_and_redistribute(counts: np.ndarray, employment: np.ndarray) -> tuple[np.ndarray, int]:
    """Clip counts at employment, pushing the excess to unclipped regions by employment share."""
    counts = counts.copy()
    capped = np.zeros(len(counts), dtype=bool)
    for it in range(MAX_REDISTRIBUTION_ITERATIONS + 1):
        over = (counts > employment) & ~capped
        if not over.any():
            return counts, it
        excess = float((counts[over] - employment[over]).sum())
        counts[over] = employment[over]
        capped |= over
        if excess <= 1e-12 * employment.sum():  # rounding leftovers, not real overflow
            return counts, it + 1
        free = ~capped
        if not free.any() or employment[free].sum() <= 0:
            raise ReconciliationCapacityError(f"cannot place {excess:.6g} informal workers: every region is at capacity")
        counts[free] += excess * employment[free] / employment[free].sum()
    raise ReconciliationCapacityError("redistribution did not converge")


def reconcile_informality(
    rates: Mapping[RegionId, Series],
    employment: Mapping[RegionId, Series],
    national_rate: Series,
) -> tuple[LambdaSchedule, dict[RegionId, Series]]:
    """Scale implied informal counts so they match the national informality rate.

    For each month shared by every input, ``U = I * E`` per region and
    ``lambda = I_nat * sum(E) / sum(U)``. Calibrated rates above one are
    capped and the excess goes to uncapped regions in proportion to ``E``.
    """
    regions = sorted(set(rates) & set(employment))
    if not regions:
        raise DomainError("rates and employment share no regions")
    keys = common_keys([national_rate, *(rates[r] for r in regions), *(employment[r] for r in regions)])
    if not keys:
        raise DomainError("inputs share no months")
    lam: dict[MonthKey, float] = {}
    resid: dict[MonthKey, float] = {}
    out: dict[RegionId, dict[MonthKey, float]] = {r: {} for r in regions}
    for key in keys:
        rate = np.array([rates[r][key] for r in regions])
        emp = np.array([employment[r][key] for r in regions])
        nat = national_rate[key]
        if np.any((rate < 0) | (rate > 1)):
            raise DomainError(f"rates must lie in [0, 1] at {key}")
        if np.any(emp <= 0):
            raise DomainError(f"employment must be positive at {key}")
        if not 0 <= nat <= 1:
            raise DomainError(f"national rate must lie in [0, 1] at {key}")
        implied = rate * emp
        target = nat * emp.sum()
        total = implied.sum()
        if total == 0:
            if nat > 0:
                raise DegenerateError(f"no implied informal workers at {key} but national rate is {nat}")
            lam[key], resid[key] = 1.0, 0.0
            counts = implied
        else:
            lam[key] = target / total
            counts, n_iter = _cap_and_redistribute(lam[key] * implied, emp)
            if n_iter:
                log.debug("capped %d round(s) at %s", n_iter, key)
            resid[key] = abs(counts.sum() - target) / max(target, 1e-12)
        cal = np.minimum(counts / emp, 1.0)
        for r, v in zip(regions, cal):
            out[r][key] = v
    schedule = LambdaSchedule(lam, resid)
    return schedule, {r: Series(Frequency.MONTHLY, out[r], {"reconciled": True}) for r in regions}
