"""Employment quality index, quantile clustering, period rankings and shock windows.

Per indicator the monthly series is smoothed with a centered moving mean,
winsorized over all region-months, and converted to percentile ranks. Scores
are the ranks (positive orientation) or one minus the ranks (negative), and
the base index is ``100 * sum_m w_m * s_m``. An optional conflict penalty
``1 - lambda * r_a * r_b`` built from the raw ranks of two indicators
multiplies the base index.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import ClusterCoverageError, CoverageError, DomainError, PeriodError
from .interp import centered_mean, type7_quantile, winsorize
from .panel import Frequency, MonthKey, Panel, RegionId, Series, common_keys, format_date
from .regions import DEPARTMENT_NAMES, EQI_LABELS

log = logging.getLogger(__name__)


class Orientation(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


class RankScope(str, Enum):
    WITHIN_MONTH = "within_month"
    GLOBAL = "global"


@dataclass(frozen=True)
class IndicatorSpec:
    variable: str
    orientation: Orientation = Orientation.POSITIVE
    weight: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "orientation", Orientation(self.orientation))
        if not (np.isfinite(self.weight) and self.weight >= 0):
            raise DomainError("indicator weights must be finite and nonnegative")


@dataclass(frozen=True)
class PenaltySpec:
    a: str
    b: str
    lam: float

    def __post_init__(self) -> None:
        if not 0 <= self.lam <= 1:
            raise DomainError("penalty lambda must lie in [0, 1]")


DEFAULT_INDICATORS = (
    IndicatorSpec("employment_rate", Orientation.POSITIVE),
    IndicatorSpec("unemployment_rate", Orientation.NEGATIVE),
    IndicatorSpec("inactivity_rate", Orientation.NEGATIVE),
    IndicatorSpec("informality_rate", Orientation.NEGATIVE),
)


@dataclass(frozen=True)
class EqiSpec:
    indicators: tuple[IndicatorSpec, ...] = DEFAULT_INDICATORS
    window: int = 13
    winsor_alpha: float = 0.01
    rank_scope: RankScope = RankScope.WITHIN_MONTH
    penalty: PenaltySpec | None = None
    k_clusters: int = 5
    labels: tuple[str, ...] = EQI_LABELS

    def __post_init__(self) -> None:
        object.__setattr__(self, "indicators", tuple(self.indicators))
        object.__setattr__(self, "rank_scope", RankScope(self.rank_scope))
        object.__setattr__(self, "labels", tuple(self.labels))
        if not self.indicators:
            raise DomainError("at least one indicator is required")
        if self.window < 1 or self.window % 2 == 0:
            raise DomainError("window must be an odd integer >= 1")
        if sum(i.weight for i in self.indicators) <= 0:
            raise DomainError("indicator weights must not all be zero")
        if len(self.labels) != self.k_clusters:
            raise DomainError("one label per cluster is required")

    @property
    def weights(self) -> np.ndarray:
        w = np.array([i.weight for i in self.indicators], dtype=float)
        return w / w.sum()


@dataclass
class EqiResult:
    eqi: dict[RegionId, Series]
    long_run_mean: dict[RegionId, float]
    cluster: dict[RegionId, str]
    period_ranks: dict[tuple[int, int], list[RegionId]] = field(default_factory=dict)
    base: dict[RegionId, Series] = field(default_factory=dict)


def percentile_rank(values: Mapping, scope_size: int | None = None) -> dict:
    """Average 1-based ranks divided by the scope size."""
    if not values:
        raise DomainError("percentile_rank needs at least one value")
    keys = list(values)
    n = len(keys) if scope_size is None else scope_size
    ranks = rankdata([values[k] for k in keys], method="average") / n
    return dict(zip(keys, ranks.tolist()))


def _rank_matrix(M: np.ndarray, scope: RankScope) -> np.ndarray:
    """Percentile ranks of a (regions, months) matrix within each month or over all cells."""
    if scope is RankScope.WITHIN_MONTH:
        return rankdata(M, method="average", axis=0) / M.shape[0]
    return rankdata(M, method="average").reshape(M.shape) / M.size


def _prepared(panel: Panel, variable: str, regions: Sequence[RegionId], keys: list[MonthKey], spec: EqiSpec) -> np.ndarray:
    rows = []
    for r in regions:
        if not panel.has(r, variable):
            raise CoverageError(f"region {r} has no {variable!r} series")
        rows.append(centered_mean(np.asarray(panel.series(r, variable).restrict(keys).values), spec.window))
    M = np.vstack(rows)
    return winsorize(M.ravel(), spec.winsor_alpha).reshape(M.shape)


def eqi_compute(panel: Panel, spec: EqiSpec = EqiSpec(), regions: Sequence[RegionId] | None = None) -> EqiResult:
    """Index values in ``[0, 100]`` per region-month over the common monthly span."""
    variables = [i.variable for i in spec.indicators]
    if spec.penalty is not None:
        variables += [spec.penalty.a, spec.penalty.b]
    if regions is None:
        regions = sorted(set().union(*(panel.regions(v) for v in variables)))
    regions = sorted(regions)
    if not regions:
        raise CoverageError("no region carries the EQI indicators")
    for v in dict.fromkeys(variables):
        for r in regions:
            if not panel.has(r, v):
                raise CoverageError(f"region {r} has no {v!r} series")
    keys = common_keys(panel.series(r, v) for r in regions for v in dict.fromkeys(variables))
    if not keys:
        raise CoverageError("indicators share no months")
    if panel.series(regions[0], variables[0]).frequency is not Frequency.MONTHLY:
        raise DomainError("EQI needs monthly indicators")
    if keys[-1].ordinal - keys[0].ordinal + 1 != len(keys):
        raise CoverageError(f"common span {keys[0]}..{keys[-1]} has gaps")
    if spec.window > len(keys):
        raise DomainError(f"window {spec.window} exceeds the {len(keys)}-month common span")

    cache: dict[str, np.ndarray] = {}

    def raw_rank(variable: str) -> np.ndarray:
        if variable not in cache:
            cache[variable] = _rank_matrix(_prepared(panel, variable, regions, keys, spec), spec.rank_scope)
        return cache[variable]

    base = np.zeros((len(regions), len(keys)))
    for ind, w in zip(spec.indicators, spec.weights):
        r = raw_rank(ind.variable)
        base += w * (r if ind.orientation is Orientation.POSITIVE else 1.0 - r)
    base *= 100.0
    penalty = np.ones_like(base)
    if spec.penalty is not None:
        penalty = 1.0 - spec.penalty.lam * raw_rank(spec.penalty.a) * raw_rank(spec.penalty.b)
    index = np.clip(base * penalty, 0.0, 100.0)

    eqi = {r: Series.from_arrays(Frequency.MONTHLY, keys, index[i]) for i, r in enumerate(regions)}
    base_series = {r: Series.from_arrays(Frequency.MONTHLY, keys, base[i]) for i, r in enumerate(regions)}
    means = {r: float(index[i].mean()) for i, r in enumerate(regions)}
    clusters: dict[RegionId, str] = {}
    if len(regions) >= spec.k_clusters:
        clusters = cluster_by_quantiles(means, spec.k_clusters, spec.labels)
    else:
        log.warning("%d regions is fewer than %d clusters; clustering skipped", len(regions), spec.k_clusters)
    return EqiResult(eqi, means, clusters, {}, base_series)


def cluster_by_quantiles(long_run_means: Mapping, k: int, labels: Sequence[str]) -> dict:
    """Split at the ``j / k`` quantiles; a value equal to a cut point goes to the lower group."""
    if len(labels) != k:
        raise DomainError("one label per cluster is required")
    if k < 1 or k > len(long_run_means):
        raise DomainError(f"cannot form {k} groups from {len(long_run_means)} regions")
    keys = list(long_run_means)
    vals = np.array([long_run_means[r] for r in keys], dtype=float)
    cuts = np.atleast_1d(type7_quantile(vals, [j / k for j in range(1, k)])) if k > 1 else np.array([])
    groups = (vals[:, None] > cuts[None, :]).sum(axis=1)
    return {r: labels[g] for r, g in zip(keys, groups)}


def period_rankings(eqi: EqiResult | Mapping[RegionId, Series], periods: Sequence[tuple[int, int]]) -> dict:
    """Regions by mean EQI per ``(year_start, year_end)`` period, best first, ties by code."""
    series = eqi.eqi if isinstance(eqi, EqiResult) else eqi
    out: dict[tuple[int, int], list[RegionId]] = {}
    for start, end in periods:
        means = {}
        for r, s in series.items():
            window = s.between(MonthKey(start, 1), MonthKey(end, 12))
            if len(window):
                means[r] = float(window.values.mean())
        if not means:
            raise PeriodError(f"period {start}-{end} does not intersect the EQI span")
        out[(start, end)] = sorted(means, key=lambda r: (-means[r], r))
    if isinstance(eqi, EqiResult):
        eqi.period_ranks.update(out)
    return out


@dataclass(frozen=True)
class ShockSummary:
    before: float
    during: float
    after: float
    delta_during: float
    delta_after: float


def shock_summary(series: Series, windows: Sequence[tuple[MonthKey, MonthKey]]) -> ShockSummary:
    """Window means and their differences from the pre-shock mean."""
    if len(windows) != 3:
        raise DomainError("expected (before, during, after) windows")
    means = []
    for name, (start, end) in zip(("before", "during", "after"), windows):
        part = series.between(start, end)
        if len(part) == 0:
            raise DomainError(f"{name} window {start}..{end} holds no observations")
        means.append(float(np.mean(part.values)))
    b, d, a = means
    return ShockSummary(b, d, a, d - b, a - b)


# --------------------------------------------------------------------------- output


def eqi_csv(result: EqiResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["region", "date", "eqi"])
    for r in sorted(result.eqi):
        for k, v in result.eqi[r].items():
            w.writerow([r.code, format_date(k, Frequency.MONTHLY), repr(float(v))])
    return buf.getvalue()


def clusters_csv(clusters: Mapping[RegionId, str], labels: Sequence[str] = EQI_LABELS) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["dep_code", "dep_name", "cluster_name", "cluster_code"])
    order = {lab: i for i, lab in enumerate(labels)}
    for r in sorted(clusters, key=lambda r: (order.get(clusters[r], 0), r)):
        if clusters[r] not in order:
            raise ClusterCoverageError(f"label {clusters[r]!r} is not in the label list")
        w.writerow([r.code, DEPARTMENT_NAMES.get(r.code, r.code), clusters[r], order[clusters[r]] + 1])
    return buf.getvalue()


def rankings_csv(rankings: Mapping[tuple[int, int], Sequence[RegionId]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["period", "rank", "region"])
    for (start, end), regions in sorted(rankings.items()):
        for i, r in enumerate(regions, start=1):
            w.writerow([f"{start}-{end}", i, r.code])
    return buf.getvalue()
