"""Feature matrix assembly for the departmental estimator."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..errors import ClusterCoverageError, CoverageError, LeakageError
from ..estimator.shares import FeatureMatrix
from ..panel import NATIONAL, Frequency, MonthKey, Panel, RegionId, Series
from .synth import city_of

FORBIDDEN = ("population",)


@dataclass(frozen=True)
class FeatureSpec:
    macro: tuple[str, ...] = ("cpi", "trm", "ppi", "ipi")
    wage_base_year: int | None = None  # defaults to the first year of the CPI series
    city_signals: tuple[str, ...] = ("participation_rate", "unemployment_rate", "informality_rate")
    cluster_signals: tuple[str, ...] = ("participation_rate", "unemployment_rate")
    clusters: Mapping[str, str] = field(default_factory=dict)
    observed: tuple[str, ...] = ()
    exclude: tuple[str, ...] = FORBIDDEN
    extra: tuple[str, ...] = ()  # additional department-level columns taken from the panel


def deflated_wage(min_wage: Series, transport: Series, cpi: Series, base_year: int | None = None) -> Series:
    """``(min_wage + transport) / cpi``, rescaled so its base-year mean is 100."""
    keys = sorted(set(min_wage.keys) & set(transport.keys) & set(cpi.keys))
    if not keys:
        raise CoverageError("wage and price series share no months")
    nominal = min_wage.restrict(keys).values + transport.restrict(keys).values
    real = nominal / cpi.restrict(keys).values * 100.0
    base_year = keys[0].year if base_year is None else base_year
    in_base = np.array([k.year == base_year for k in keys])
    if not in_base.any():
        raise CoverageError(f"base year {base_year} is outside the wage series")
    return Series.from_arrays(Frequency.MONTHLY, keys, real * (100.0 / real[in_base].mean()), {"base_year": base_year})


def _guard(columns: Iterable[str], exclude: Sequence[str]) -> None:
    banned = set(exclude) | set(FORBIDDEN)
    for c in columns:
        if c in banned or any(c == b or c.endswith("_" + b) or c.startswith(b + "_") for b in banned):
            raise LeakageError(f"feature {c!r} would leak the divisor into the inputs")


def _values(series: Series, keys: list[MonthKey], what: str) -> np.ndarray:
    missing = [k for k in keys if k not in series]
    if missing:
        raise CoverageError(f"{what} is missing {missing[0]}")
    return np.asarray(series.restrict(keys).values)


def build_features(
    panel: Panel,
    spec: FeatureSpec = FeatureSpec(),
    regions: Sequence[RegionId] | None = None,
    months: Sequence[MonthKey] | None = None,
) -> FeatureMatrix:
    """One row per (department, month), ordered by region then month.

    ``panel`` must hold the national macro covariates (including ``min_wage``,
    ``transport_subsidy`` and ``cpi``), monthly ``pet`` and ``population`` per
    department, and city signals under each department's capital-city id.
    """
    _guard([*spec.macro, *spec.extra], spec.exclude)
    regions = sorted(regions if regions is not None else panel.regions("pet"))
    wage = deflated_wage(
        panel.series(NATIONAL, "min_wage"), panel.series(NATIONAL, "transport_subsidy"),
        panel.series(NATIONAL, "cpi"), spec.wage_base_year,
    )
    months = sorted(months if months is not None else wage.keys)

    macro_block = [_values(panel.series(NATIONAL, m), months, f"macro {m}") for m in spec.macro]
    wage_vals = _values(wage, months, "deflated wage")

    def city(code: str, v: str) -> np.ndarray:
        r = city_of(code)
        if not panel.has(r, v):
            raise CoverageError(f"city {r.code} has no {v!r} signal")
        return _values(panel.series(r, v), months, f"city {r.code} {v}")

    cluster_means: dict[tuple[str, str], np.ndarray] = {}
    if spec.cluster_signals:
        for r in regions:
            name = spec.clusters.get(r.code)
            if name is None:
                raise ClusterCoverageError(f"department {r.code} has no cluster assignment")
            members = sorted(c for c, n in spec.clusters.items() if n == name and c in spec.observed)
            if not members:
                raise ClusterCoverageError(f"cluster {name!r} has no observed member")
            for v in spec.cluster_signals:
                if (name, v) not in cluster_means:
                    cluster_means[(name, v)] = np.mean([city(c, v) for c in members], axis=0)

    columns = [*spec.macro, "deflated_wage", "pet_share", *(f"city_{v}" for v in spec.city_signals)]
    have_shares = {"participation_rate", "unemployment_rate"} <= set(spec.city_signals)
    if have_shares:
        columns += ["signal_employed_share", "signal_unemployed_share", "signal_pea_share", "signal_inactive_share"]
    columns += [f"cluster_{v}" for v in spec.cluster_signals]
    columns += list(spec.extra)
    _guard(columns, spec.exclude)

    blocks, groups, times = [], [], []
    for r in regions:
        pet = _values(panel.series(r, "pet"), months, f"{r.code} pet")
        pop = _values(panel.series(r, "population"), months, f"{r.code} population")
        pet_share = pet / pop
        cols = [*macro_block, wage_vals, pet_share]
        sig = {v: city(r.code, v) for v in spec.city_signals}
        cols += [sig[v] for v in spec.city_signals]
        if have_shares:
            part, ur = sig["participation_rate"], sig["unemployment_rate"]
            cols += [pet_share * part * (1 - ur), pet_share * part * ur, pet_share * part, pet_share * (1 - part)]
        cols += [cluster_means[(spec.clusters[r.code], v)] for v in spec.cluster_signals]
        cols += [_values(panel.series(r, v), months, f"{r.code} {v}") for v in spec.extra]
        blocks.append(np.column_stack(cols))
        groups += [r.code] * len(months)
        times += list(months)
    return FeatureMatrix(np.vstack(blocks), tuple(columns), np.array(groups), tuple(times))
