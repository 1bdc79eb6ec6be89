"""Core data model: month keys, regions, series and panels.

A :class:`Panel` maps ``(RegionId, variable)`` to a :class:`Series`. Every
object here is immutable after construction; operations return new objects.
Annual series are stored on December keys (``month == 12``).
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Any, BinaryIO, TextIO

import numpy as np

from .errors import (
    DomainError,
    DuplicateKeyError,
    FrequencyError,
    IdentityViolationError,
    IncompleteAccountsError,
    MisuseError,
    MissingSeriesError,
    SchemaError,
)
from .regions import DEPARTMENT_CODES

EPS = 1e-12

LEVEL_VARIABLES = ("employed", "unemployed", "inactive", "pea", "pet", "population")
RATE_VARIABLES = (
    "employment_rate",
    "unemployment_rate",
    "participation_rate",
    "inactivity_rate",
    "informality_rate",
)


# --------------------------------------------------------------------------- keys


@dataclass(frozen=True, order=True)
class MonthKey:
    year: int
    month: int

    def __post_init__(self) -> None:
        if not 1 <= self.month <= 12:
            raise DomainError(f"month must be in 1..12, got {self.month}")

    @property
    def ordinal(self) -> int:
        return self.year * 12 + self.month - 1

    @classmethod
    def from_ordinal(cls, ordinal: int) -> MonthKey:
        year, m0 = divmod(int(ordinal), 12)
        return cls(year, m0 + 1)

    @classmethod
    def parse(cls, text: str) -> MonthKey:
        """Parse ``YYYY-MM``; a bare ``YYYY`` gives the December sentinel."""
        text = text.strip()
        parts = text.split("-")
        if len(parts) == 1 and len(parts[0]) == 4:
            return cls(int(parts[0]), 12)
        if len(parts) == 2 and len(parts[0]) == 4:
            return cls(int(parts[0]), int(parts[1]))
        raise ValueError(f"unparseable date {text!r}")

    def shift(self, months: int) -> MonthKey:
        return MonthKey.from_ordinal(self.ordinal + months)

    def __str__(self) -> str:
        return f"{self.year:04d}-{self.month:02d}"


def month_range(start: MonthKey, end: MonthKey) -> list[MonthKey]:
    """Inclusive list of consecutive months."""
    return [MonthKey.from_ordinal(o) for o in range(start.ordinal, end.ordinal + 1)]


class RegionKind(str, Enum):
    NATIONAL = "national"
    DEPARTMENT = "department"
    CITY = "city"
    CLUSTER = "cluster"


@dataclass(frozen=True, order=True)
class RegionId:
    code: str
    kind: RegionKind = RegionKind.DEPARTMENT

    def __post_init__(self) -> None:
        if not self.code:
            raise DomainError("region code must be nonempty")
        if not isinstance(self.kind, RegionKind):
            object.__setattr__(self, "kind", RegionKind(self.kind))
        if self.kind is RegionKind.DEPARTMENT and self.code not in DEPARTMENT_CODES:
            raise DomainError(f"unknown department code {self.code!r}")

    def __str__(self) -> str:
        return self.code


def department(code: str) -> RegionId:
    return RegionId(code, RegionKind.DEPARTMENT)


NATIONAL = RegionId("00", RegionKind.NATIONAL)


class Frequency(str, Enum):
    MONTHLY = "monthly"
    ANNUAL = "annual"


class ConversionRule(str, Enum):
    """How twelve months map to one annual value."""

    SUM = "sum"
    AVERAGE = "average"


# --------------------------------------------------------------------------- series


class Series:
    """Ordered ``MonthKey -> float`` map with a frequency tag.

    Keys are strictly increasing; values are finite. Gaps are allowed.
    ``meta`` carries provenance notes (degraded methods, gap reports,
    certificates) and does not take part in equality.
    """

    __slots__ = ("frequency", "_keys", "_values", "_ordinals", "meta")

    def __init__(
        self,
        frequency: Frequency | str,
        points: Mapping[MonthKey, float] | Iterable[tuple[MonthKey, float]] = (),
        meta: Mapping[str, Any] | None = None,
    ):
        frequency = Frequency(frequency)
        items = list(points.items()) if isinstance(points, Mapping) else list(points)
        items.sort(key=lambda kv: kv[0])
        keys = tuple(k for k, _ in items)
        values = np.array([float(v) for _, v in items], dtype=float)
        for a, b in zip(keys, keys[1:]):
            if a == b:
                raise DuplicateKeyError(f"duplicate key {a}")
        if values.size and not np.all(np.isfinite(values)):
            raise DomainError("series values must be finite")
        if frequency is Frequency.ANNUAL and any(k.month != 12 for k in keys):
            raise FrequencyError("annual series must use December keys")
        values.setflags(write=False)
        ordinals = np.array([k.ordinal for k in keys], dtype=np.int64)
        ordinals.setflags(write=False)
        self.frequency = frequency
        self._keys = keys
        self._values = values
        self._ordinals = ordinals
        self.meta = MappingProxyType(dict(meta or {}))

    # construction helpers
    @classmethod
    def monthly(cls, start: MonthKey, values: Iterable[float], meta=None) -> Series:
        vals = list(values)
        return cls(Frequency.MONTHLY, zip(month_range(start, start.shift(len(vals) - 1)), vals), meta)

    @classmethod
    def annual(cls, start_year: int, values: Iterable[float], meta=None) -> Series:
        return cls(Frequency.ANNUAL, ((MonthKey(start_year + i, 12), v) for i, v in enumerate(values)), meta)

    @classmethod
    def from_arrays(cls, frequency, keys: Iterable[MonthKey], values: Iterable[float], meta=None) -> Series:
        return cls(frequency, zip(keys, values), meta)

    # accessors
    @property
    def keys(self) -> tuple[MonthKey, ...]:
        return self._keys

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def ordinals(self) -> np.ndarray:
        return self._ordinals

    @property
    def is_annual(self) -> bool:
        return self.frequency is Frequency.ANNUAL

    def __len__(self) -> int:
        return len(self._keys)

    def __iter__(self) -> Iterator[MonthKey]:
        return iter(self._keys)

    def __contains__(self, key: object) -> bool:
        return self._index(key) is not None if isinstance(key, MonthKey) else False

    def _index(self, key: MonthKey) -> int | None:
        i = int(np.searchsorted(self._ordinals, key.ordinal))
        if i < len(self._keys) and self._ordinals[i] == key.ordinal:
            return i
        return None

    def __getitem__(self, key: MonthKey) -> float:
        i = self._index(key)
        if i is None:
            raise KeyError(key)
        return float(self._values[i])

    def get(self, key: MonthKey, default: float | None = None) -> float | None:
        i = self._index(key)
        return default if i is None else float(self._values[i])

    def items(self) -> Iterator[tuple[MonthKey, float]]:
        return zip(self._keys, (float(v) for v in self._values))

    def to_dict(self) -> dict[MonthKey, float]:
        return dict(self.items())

    @property
    def first(self) -> MonthKey:
        return self._keys[0]

    @property
    def last(self) -> MonthKey:
        return self._keys[-1]

    def years(self) -> list[int]:
        return sorted({k.year for k in self._keys})

    def gaps(self) -> list[MonthKey]:
        """Months missing between the first and last key (monthly series only)."""
        if self.is_annual or len(self) < 2:
            return []
        present = set(self._ordinals.tolist())
        return [MonthKey.from_ordinal(o) for o in range(int(self._ordinals[0]), int(self._ordinals[-1]) + 1) if o not in present]

    def is_contiguous(self) -> bool:
        if len(self) < 2:
            return True
        step = 12 if self.is_annual else 1
        return bool(np.all(np.diff(self._ordinals) == step))

    # derivation
    def between(self, start: MonthKey | None = None, end: MonthKey | None = None) -> Series:
        lo = -math.inf if start is None else start.ordinal
        hi = math.inf if end is None else end.ordinal
        mask = (self._ordinals >= lo) & (self._ordinals <= hi)
        return Series.from_arrays(self.frequency, [k for k, m in zip(self._keys, mask) if m], self._values[mask])

    def restrict(self, keys: Iterable[MonthKey]) -> Series:
        wanted = {k.ordinal for k in keys}
        return Series(self.frequency, [(k, v) for k, v in self.items() if k.ordinal in wanted])

    def with_values(self, values: Iterable[float], meta=None) -> Series:
        vals = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=float)
        if vals.shape != self._values.shape:
            raise DomainError("value count does not match key count")
        return Series.from_arrays(self.frequency, self._keys, vals, meta if meta is not None else self.meta)

    def with_meta(self, **meta: Any) -> Series:
        merged = dict(self.meta)
        merged.update(meta)
        return Series.from_arrays(self.frequency, self._keys, self._values, merged)

    def map(self, fn) -> Series:
        return self.with_values(fn(np.array(self._values)))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Series):
            return NotImplemented
        return (
            self.frequency is other.frequency
            and self._keys == other._keys
            and bool(np.array_equal(self._values, other._values))
        )

    def __hash__(self) -> int:
        return hash((self.frequency, self._keys, self._values.tobytes()))

    def __repr__(self) -> str:
        if not self._keys:
            return f"Series({self.frequency.value}, empty)"
        return f"Series({self.frequency.value}, {self.first}..{self.last}, n={len(self)})"


def common_keys(series: Iterable[Series]) -> list[MonthKey]:
    """Sorted intersection of the key sets."""
    it = iter(series)
    try:
        first = next(it)
    except StopIteration:
        return []
    acc = set(first.keys)
    for s in it:
        acc &= set(s.keys)
    return sorted(acc)


# --------------------------------------------------------------------------- panel


class Panel(Mapping):
    """Immutable map ``(RegionId, variable) -> Series``."""

    def __init__(self, entries: Mapping[tuple[RegionId, str], Series] | Iterable = ()):
        data = dict(entries.items() if isinstance(entries, Mapping) else entries)
        freq: dict[str, Frequency] = {}
        for (region, variable), s in data.items():
            if not isinstance(region, RegionId) or not isinstance(s, Series):
                raise TypeError("panel entries must be (RegionId, str) -> Series")
            if len(s) == 0:
                continue
            prev = freq.setdefault(variable, s.frequency)
            if prev is not s.frequency:
                raise FrequencyError(f"variable {variable!r} mixes frequencies")
        self._data = MappingProxyType(data)

    def __getitem__(self, key: tuple[RegionId, str]) -> Series:
        return self._data[key]

    def __iter__(self):
        return iter(sorted(self._data, key=lambda k: (k[0], k[1])))

    def __len__(self) -> int:
        return len(self._data)

    def __repr__(self) -> str:
        return f"Panel({len(self.regions())} regions, {len(self.variables())} variables, {len(self)} series)"

    def regions(self, variable: str | None = None) -> list[RegionId]:
        return sorted({r for (r, v) in self._data if variable is None or v == variable})

    def variables(self) -> list[str]:
        return sorted({v for (_, v) in self._data})

    def series(self, region: RegionId, variable: str) -> Series:
        try:
            return self._data[(region, variable)]
        except KeyError:
            raise MissingSeriesError(f"panel has no {variable!r} series for {region}") from None

    def has(self, region: RegionId, variable: str) -> bool:
        return (region, variable) in self._data

    def slice(self, variable: str, regions: Iterable[RegionId] | None = None) -> dict[RegionId, Series]:
        wanted = None if regions is None else set(regions)
        return {
            r: s for (r, v), s in sorted(self._data.items(), key=lambda kv: kv[0])
            if v == variable and (wanted is None or r in wanted)
        }

    def with_series(self, updates: Mapping[tuple[RegionId, str], Series]) -> Panel:
        data = dict(self._data)
        data.update(updates)
        return Panel(data)

    def with_slice(self, variable: str, members: Mapping[RegionId, Series]) -> Panel:
        return self.with_series({(r, variable): s for r, s in members.items()})

    def merge(self, other: Panel) -> Panel:
        return self.with_series(dict(other.items()))

    def filter(self, regions: Iterable[RegionId] | None = None, variables: Iterable[str] | None = None) -> Panel:
        rs = None if regions is None else set(regions)
        vs = None if variables is None else set(variables)
        return Panel({
            k: s for k, s in self._data.items()
            if (rs is None or k[0] in rs) and (vs is None or k[1] in vs)
        })


# --------------------------------------------------------------------------- accounts


@dataclass(frozen=True)
class LaborAccounts:
    """One region-month of labor accounts (persons) plus derived rates."""

    employed: float
    unemployed: float
    inactive: float
    pea: float
    pet: float
    population: float | None = None
    employment: float | None = None
    unemployment: float | None = None
    participation: float | None = None
    inactivity: float | None = None

    def check(self, tolerance: float = 1e-3) -> None:
        for name in ("employed", "unemployed", "inactive", "pea", "pet"):
            if getattr(self, name) < 0:
                raise IdentityViolationError(f"{name} is negative")
        if abs(self.pea - self.employed - self.unemployed) > tolerance * max(self.pea, EPS):
            raise IdentityViolationError("pea != employed + unemployed")
        if abs(self.pet - self.pea - self.inactive) > tolerance * max(self.pet, EPS):
            raise IdentityViolationError("pet != pea + inactive")
        if self.population is not None and self.pet > self.population * (1 + tolerance):
            raise IdentityViolationError("pet exceeds population")


def derive_rates(accounts: LaborAccounts) -> LaborAccounts:
    """Fill the four standard rates; unemployment is 0 when ``pea == 0``."""
    if not accounts.pet > 0:
        raise DomainError("rates need pet > 0")
    pet = accounts.pet
    unemployment = accounts.unemployed / accounts.pea if accounts.pea > 0 else 0.0
    return LaborAccounts(
        employed=accounts.employed,
        unemployed=accounts.unemployed,
        inactive=accounts.inactive,
        pea=accounts.pea,
        pet=pet,
        population=accounts.population,
        employment=accounts.employed / pet,
        unemployment=unemployment,
        participation=accounts.pea / pet,
        inactivity=accounts.inactive / pet,
    )


def derive_rate_series(panel: Panel, regions: Iterable[RegionId] | None = None) -> Panel:
    """Vectorised :func:`derive_rates` over a closed panel; returns rate series only."""
    out: dict[tuple[RegionId, str], Series] = {}
    for region in regions if regions is not None else panel.regions("pet"):
        needed = [panel.series(region, v) for v in ("employed", "unemployed", "inactive", "pea", "pet")]
        keys = common_keys(needed)
        e, u, i, a, t = (s.restrict(keys).values for s in needed)
        if np.any(t <= 0):
            raise DomainError(f"pet must be positive for {region}")
        with np.errstate(invalid="ignore", divide="ignore"):
            ur = np.where(a > 0, u / np.where(a > 0, a, 1.0), 0.0)
        freq = needed[0].frequency
        out[(region, "employment_rate")] = Series.from_arrays(freq, keys, e / t)
        out[(region, "unemployment_rate")] = Series.from_arrays(freq, keys, ur)
        out[(region, "participation_rate")] = Series.from_arrays(freq, keys, a / t)
        out[(region, "inactivity_rate")] = Series.from_arrays(freq, keys, i / t)
    return Panel(out)


@dataclass(frozen=True)
class ResidualEntry:
    region: RegionId
    month: MonthKey
    pea_residual: float
    pet_residual: float


@dataclass(frozen=True)
class ResidualReport:
    """Relative identity residuals ``(lhs - rhs) / max(rhs, 1e-12)``."""

    entries: tuple[ResidualEntry, ...] = ()
    tolerance: float = 1e-3
    dropped: Mapping[str, list[str]] = field(default_factory=dict)

    @property
    def max_abs_relative(self) -> float:
        if not self.entries:
            return 0.0
        return max(max(abs(e.pea_residual), abs(e.pet_residual)) for e in self.entries)

    def exceedances(self, tolerance: float | None = None) -> list[ResidualEntry]:
        tol = self.tolerance if tolerance is None else tolerance
        return [e for e in self.entries if abs(e.pea_residual) > tol or abs(e.pet_residual) > tol]

    @property
    def passed(self) -> bool:
        return not self.exceedances()

    def to_records(self) -> list[dict[str, Any]]:
        return [
            {"region": e.region.code, "month": str(e.month), "pea_residual": e.pea_residual, "pet_residual": e.pet_residual}
            for e in self.entries
        ]

    def to_json(self) -> str:
        return json.dumps(
            {"tolerance": self.tolerance, "max_abs_relative": self.max_abs_relative, "residuals": self.to_records()},
            indent=2,
        )


def identity_residuals(panel: Panel, regions: Iterable[RegionId] | None = None, tolerance: float = 1e-3) -> ResidualReport:
    """Residuals of a panel that already carries all five account variables."""
    entries = []
    for region in regions if regions is not None else panel.regions("pet"):
        ss = [panel.series(region, v) for v in ("employed", "unemployed", "inactive", "pea", "pet")]
        keys = common_keys(ss)
        e, u, i, a, t = (s.restrict(keys).values for s in ss)
        pea_res = (e + u - a) / np.maximum(a, EPS)
        pet_res = (a + i - t) / np.maximum(t, EPS)
        entries.extend(ResidualEntry(region, k, float(x), float(y)) for k, x, y in zip(keys, pea_res, pet_res))
    return ResidualReport(tuple(entries), tolerance)


def close_identities(
    panel: Panel, tolerance: float = 1e-3, regions: Iterable[RegionId] | None = None
) -> tuple[Panel, ResidualReport]:
    """Rebuild unemployed and inactive from employed, pea and pet.

    ``unemployed = pea - employed`` and ``inactive = pet - pea``. An employed
    overshoot lifts pea to employed; a pea overshoot of pet scales employed
    and unemployed down proportionally so that pea equals pet. The report holds
    pre-closure residuals, using the clamped implied value for any of
    unemployed/inactive the panel does not carry. Only months where employed,
    pea and pet are all present survive in the five account series.
    """
    if tolerance <= 0:
        raise DomainError("tolerance must be positive")
    targets = list(regions) if regions is not None else sorted(
        {r for r in panel.regions() if any(panel.has(r, v) for v in ("employed", "pea", "pet"))}
    )
    updates: dict[tuple[RegionId, str], Series] = {}
    entries: list[ResidualEntry] = []
    dropped: dict[str, list[str]] = {}
    for region in targets:
        missing = [v for v in ("employed", "pea", "pet") if not panel.has(region, v)]
        if missing:
            raise IncompleteAccountsError(f"region {region} lacks {', '.join(missing)}")
        base = [panel.series(region, v) for v in ("employed", "pea", "pet")]
        keys = common_keys(base)
        union = sorted(set().union(*(s.keys for s in base)))
        if len(union) != len(keys):
            dropped[region.code] = [str(k) for k in union if k not in set(keys)]
        freq = base[0].frequency
        e, a, t = (s.restrict(keys).values.astype(float) for s in base)

        def optional(var: str) -> np.ndarray:
            out = np.full(len(keys), np.nan)
            if panel.has(region, var):
                s = panel.series(region, var)
                for j, k in enumerate(keys):
                    val = s.get(k)
                    if val is not None:
                        out[j] = val
            return out

        u_in, i_in, pop = optional("unemployed"), optional("inactive"), optional("population")
        bad = np.where(~np.isnan(pop) & (t > pop * (1.0 + tolerance)))[0]
        if bad.size:
            k = keys[int(bad[0])]
            raise IdentityViolationError(
                f"pet exceeds population for region {region} at {k}", region=region.code, month=str(k)
            )

        u_used = np.where(np.isnan(u_in), np.maximum(a - e, 0.0), u_in)
        i_used = np.where(np.isnan(i_in), np.maximum(t - a, 0.0), i_in)
        pea_res = (e + u_used - a) / np.maximum(a, EPS)
        pet_res = (a + i_used - t) / np.maximum(t, EPS)
        entries.extend(ResidualEntry(region, k, float(x), float(y)) for k, x, y in zip(keys, pea_res, pet_res))

        a1 = np.maximum(a, e)
        over = a1 > t
        scale = np.divide(t, a1, out=np.ones_like(a1), where=over)  # over implies a1 > t >= 0
        a2 = np.where(over, t, a1)
        e2 = np.minimum(np.where(over, e * scale, e), a2)  # rounding must not push employed past pea
        u2 = a2 - e2
        i2 = t - a2
        for var, vals in (("employed", e2), ("unemployed", u2), ("pea", a2), ("pet", t), ("inactive", i2)):
            updates[(region, var)] = Series.from_arrays(freq, keys, vals)
    return panel.with_series(updates), ResidualReport(tuple(entries), tolerance, dropped)


# --------------------------------------------------------------------------- aggregation


def aggregate_regions(panel: Panel, variable: str, members: Iterable[RegionId]) -> Series:
    """Pointwise sum of a level variable over members on their common months.

    Months present in some but not all members are listed in ``meta["gaps"]``.
    """
    if variable in RATE_VARIABLES or variable.endswith("_rate"):
        raise MisuseError(f"{variable!r} is a rate; aggregate levels and re-derive")
    members = sorted(set(members))
    series = [panel[(m, variable)] if panel.has(m, variable) else Series("monthly") for m in members]
    for s in series:
        if len(s) and s.frequency is not Frequency.MONTHLY:
            raise FrequencyError("aggregate_regions expects monthly series")
    if not series:
        return Series(Frequency.MONTHLY, meta={"gaps": []})
    keys = common_keys(series)
    union = sorted(set().union(*(s.keys for s in series)))
    gaps = [str(k) for k in union if k not in set(keys)]
    stacked = np.vstack([s.restrict(keys).values for s in series]) if keys else np.zeros((len(series), 0))
    total = stacked.sum(axis=0)
    return Series.from_arrays(Frequency.MONTHLY, keys, total, meta={"gaps": gaps})


def annualize(series: Series, rule: ConversionRule | str) -> Series:
    """Average or sum each complete calendar year.

    Years with fewer than twelve months are dropped and listed in
    ``meta["partial_years"]``.
    """
    rule = ConversionRule(rule)
    if series.is_annual:
        raise FrequencyError("annualize expects a monthly series")
    by_year: dict[int, list[float]] = {}
    for k, v in series.items():
        by_year.setdefault(k.year, []).append(v)
    out, partial = [], []
    for year in sorted(by_year):
        vals = by_year[year]
        if len(vals) != 12:
            partial.append(year)
            continue
        arr = np.array(vals)
        out.append((MonthKey(year, 12), float(arr.sum() if rule is ConversionRule.SUM else arr.mean())))
    return Series(Frequency.ANNUAL, out, meta={"partial_years": partial})


def extend_annual(series: Series) -> Series:
    """Monthly step series holding each annual value for all twelve months."""
    if not series.is_annual:
        raise FrequencyError("extend_annual expects an annual series")
    pts = [(MonthKey(k.year, m), v) for k, v in series.items() for m in range(1, 13)]
    return Series(Frequency.MONTHLY, pts)


# --------------------------------------------------------------------------- CSV


@dataclass(frozen=True)
class SchemaSpec:
    """Column names for CSV ingestion.

    ``layout="long"`` expects one value per row. ``layout="wide"`` treats every
    column other than region/kind/date as a variable; blank cells are missing.
    """

    region: str = "region_code"
    kind: str = "region_kind"
    date: str = "date"
    variable: str = "variable"
    value: str = "value"
    layout: str = "long"
    default_kind: RegionKind = RegionKind.DEPARTMENT


@dataclass(frozen=True)
class Reject:
    line: int
    reason: str
    raw: tuple[str, ...]


@dataclass(frozen=True)
class IngestResult:
    panel: Panel
    rejects: tuple[Reject, ...]


def _text_stream(stream: BinaryIO | TextIO | str | bytes) -> TextIO:
    if isinstance(stream, bytes):
        return io.StringIO(stream.decode("utf-8-sig"))
    if isinstance(stream, str):
        return io.StringIO(stream)
    if isinstance(stream, io.TextIOBase):
        return stream
    return io.TextIOWrapper(stream, encoding="utf-8-sig", newline="")


def ingest_csv(stream: BinaryIO | TextIO | str | bytes, schema: SchemaSpec = SchemaSpec()) -> IngestResult:
    """Parse a long- or wide-format CSV into a :class:`Panel`.

    Rows whose value or date cannot be parsed go to ``rejects`` with their
    1-based line number (header is line 1).
    """
    reader = csv.reader(_text_stream(stream))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SchemaError("CSV has no header") from None
    index = {name: i for i, name in enumerate(header)}
    required = [schema.region, schema.date] + ([schema.variable, schema.value] if schema.layout == "long" else [])
    missing = [c for c in required if c not in index]
    if missing:
        raise SchemaError(f"missing required column(s): {', '.join(missing)}")
    if schema.layout not in ("long", "wide"):
        raise SchemaError(f"unknown layout {schema.layout!r}")
    fixed = {schema.region, schema.kind, schema.date}
    var_cols = [c for c in header if c not in fixed] if schema.layout == "wide" else []

    points: dict[tuple[RegionId, str], dict[MonthKey, tuple[float, int]]] = {}
    freqs: dict[tuple[RegionId, str], Frequency] = {}
    rejects: list[Reject] = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        raw = tuple(row)
        if len(row) < len(header):
            rejects.append(Reject(lineno, "short row", raw))
            continue
        try:
            kind = RegionKind(row[index[schema.kind]].strip()) if schema.kind in index else schema.default_kind
            region = RegionId(row[index[schema.region]].strip(), kind)
            date_text = row[index[schema.date]].strip()
            key = MonthKey.parse(date_text)
            freq = Frequency.ANNUAL if len(date_text) == 4 else Frequency.MONTHLY
        except (ValueError, DomainError) as exc:
            rejects.append(Reject(lineno, f"bad key: {exc}", raw))
            continue
        if schema.layout == "long":
            cells = [(row[index[schema.variable]].strip(), row[index[schema.value]])]
        else:
            cells = [(c, row[index[c]]) for c in var_cols if row[index[c]].strip()]
        for variable, text in cells:
            try:
                value = float(text)
                if not math.isfinite(value):
                    raise ValueError("non-finite")
            except ValueError:
                rejects.append(Reject(lineno, f"unparseable value {text!r} for {variable}", raw))
                continue
            pk = (region, variable)
            if freqs.setdefault(pk, freq) is not freq:
                raise FrequencyError(f"{region}/{variable} mixes annual and monthly dates (line {lineno})")
            bucket = points.setdefault(pk, {})
            if key in bucket:
                raise DuplicateKeyError(
                    f"duplicate ({region.code}, {variable}, {date_text}) at lines {bucket[key][1]} and {lineno}"
                )
            bucket[key] = (value, lineno)
    panel = Panel({
        pk: Series(freqs[pk], {k: v for k, (v, _) in bucket.items()}) for pk, bucket in points.items()
    })
    return IngestResult(panel, tuple(rejects))


def read_csv(path, schema: SchemaSpec = SchemaSpec()) -> IngestResult:
    with open(path, "rb") as fh:
        return ingest_csv(fh, schema)


def format_date(key: MonthKey, frequency: Frequency) -> str:
    return f"{key.year:04d}" if frequency is Frequency.ANNUAL else str(key)


def emit_csv(panel: Panel, stream: TextIO) -> None:
    """Write the canonical long CSV sorted by region, variable, date."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["region_code", "region_kind", "date", "variable", "value"])
    for region, variable in panel:
        s = panel[(region, variable)]
        for k, v in s.items():
            writer.writerow([region.code, region.kind.value, format_date(k, s.frequency), variable, repr(float(v))])


def panel_to_csv(panel: Panel) -> str:
    buf = io.StringIO()
    emit_csv(panel, buf)
    return buf.getvalue()


def write_csv(panel: Panel, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        emit_csv(panel, fh)
