"""Synthetic regional labor panel with known monthly truth.

The generator draws smooth latent paths per department (population,
working-age share, participation, unemployment and informality rates driven by
a common business cycle plus seasonality), derives identity-consistent
levels, and then produces the fragmentary "observed" inputs the pipeline
consumes: annual national benchmarks, a recent window of national monthly
rates, macro covariates, noisy city signals (some with short spans), partial
departmental survey data and annual demographic projections.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..panel import (
    NATIONAL,
    ConversionRule,
    Frequency,
    MonthKey,
    Panel,
    RegionId,
    RegionKind,
    Series,
    annualize,
    department,
    month_range,
    write_csv,
)

log = logging.getLogger(__name__)

DEFAULT_REGIONS = ("05", "08", "11", "13", "27", "50")
DEFAULT_OBSERVED = ("05", "11", "13", "50")
DEFAULT_CLUSTERS = {"05": "A", "08": "A", "11": "A", "13": "B", "27": "B", "50": "B"}
CITY_RATES = ("participation_rate", "unemployment_rate", "informality_rate")


def city_of(code: str) -> RegionId:
    """Capital-city id for a department code."""
    return RegionId(code + "001", RegionKind.CITY)


@dataclass(frozen=True)
class SynthSpec:
    regions: tuple[str, ...] = DEFAULT_REGIONS
    observed: tuple[str, ...] = DEFAULT_OBSERVED
    start_year: int = 2010
    years: int = 10
    seed: int = 0
    national_monthly_years: int = 5  # trailing years with national monthly rates
    department_years: int = 7  # trailing years of departmental survey data
    short_city_years: int = 7  # span of the short city series
    short_cities: int = 2
    city_noise: float = 0.01
    survey_noise: float = 0.003
    national_noise: float = 0.002

    def __post_init__(self) -> None:
        object.__setattr__(self, "regions", tuple(self.regions))
        object.__setattr__(self, "observed", tuple(self.observed))
        if not set(self.observed) <= set(self.regions):
            raise ValueError("observed regions must be a subset of the regions")
        for name in ("national_monthly_years", "department_years", "short_city_years"):
            if not 1 <= getattr(self, name) <= self.years:
                raise ValueError(f"{name} must lie in [1, years]")


@dataclass
class SyntheticFixture:
    spec: SynthSpec
    truth: Panel  # monthly department levels and informality rates
    national_truth: Panel
    national_annual: Panel
    national_monthly: Panel
    macro: Panel
    cities: Panel
    departments: Panel
    projections: Panel
    clusters: dict[str, str] = field(default_factory=dict)

    def inputs(self) -> dict[str, Panel]:
        return {
            "national_annual": self.national_annual,
            "national_monthly": self.national_monthly,
            "macro": self.macro,
            "cities": self.cities,
            "departments": self.departments,
            "projections": self.projections,
        }


def _cycle(tau: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    p1, p2 = rng.uniform(0, 2 * np.pi, 2)
    return 0.6 * np.sin(2 * np.pi * tau / 5.0 + p1) + 0.4 * np.sin(2 * np.pi * tau / 3.3 + p2)


def generate_synthetic_panel(spec: SynthSpec = SynthSpec()) -> SyntheticFixture:
    rng = np.random.default_rng(spec.seed)
    start = MonthKey(spec.start_year, 1)
    keys = month_range(start, MonthKey(spec.start_year + spec.years - 1, 12))
    n = len(keys)
    tau = np.arange(n) / 12.0
    month = np.array([k.month for k in keys])
    season = np.sin(2 * np.pi * (month - 1) / 12.0)
    cycle = _cycle(tau, rng)

    truth: dict = {}
    levels: dict[str, dict[str, np.ndarray]] = {}
    for code in spec.regions:
        pop0 = rng.uniform(0.5e6, 8e6)
        growth = rng.uniform(0.008, 0.018)
        pop = pop0 * np.exp(growth * tau)
        pet_share = rng.uniform(0.74, 0.80) + 0.004 * tau
        part = rng.uniform(0.55, 0.68) + 0.015 * cycle + 0.004 * season + 0.002 * tau
        urate = rng.uniform(0.07, 0.14) - 0.015 * cycle - 0.004 * season
        inf = rng.uniform(0.40, 0.70) - 0.01 * cycle - 0.003 * tau
        pet = pop * pet_share
        pea = pet * part
        unemployed = pea * urate
        employed = pea - unemployed
        lv = {
            "population": pop, "pet": pet, "pea": pea, "employed": employed,
            "unemployed": unemployed, "inactive": pet - pea, "informality_rate": inf,
        }
        levels[code] = lv
        for var, vals in lv.items():
            truth[(department(code), var)] = Series.from_arrays(Frequency.MONTHLY, keys, vals)

    tot = {v: sum(levels[c][v] for c in spec.regions) for v in ("population", "pet", "pea", "employed", "unemployed", "inactive")}
    informal = sum(levels[c]["informality_rate"] * levels[c]["employed"] for c in spec.regions)
    nat_rates = {
        "participation_rate": tot["pea"] / tot["pet"],
        "unemployment_rate": tot["unemployed"] / tot["pea"],
        "informality_rate": informal / tot["employed"],
    }
    national_truth = Panel({
        **{(NATIONAL, v): Series.from_arrays(Frequency.MONTHLY, keys, x) for v, x in tot.items()},
        **{(NATIONAL, v): Series.from_arrays(Frequency.MONTHLY, keys, x) for v, x in nat_rates.items()},
    })

    # annual national benchmarks: every year, stocks and rates averaged
    nat_annual = {}
    for v in ("participation_rate", "unemployment_rate", "pet", "population"):
        nat_annual[(NATIONAL, v)] = annualize(national_truth.series(NATIONAL, v), ConversionRule.AVERAGE)
    national_annual = Panel(nat_annual)

    # national monthly survey rates for the trailing window; informality for the whole span
    recent = keys[n - 12 * spec.national_monthly_years :]
    nat_monthly = {}
    for v in ("participation_rate", "unemployment_rate"):
        vals = nat_rates[v][n - len(recent) :] * (1 + spec.national_noise * rng.standard_normal(len(recent)))
        nat_monthly[(NATIONAL, v)] = Series.from_arrays(Frequency.MONTHLY, recent, vals)
    nat_monthly[(NATIONAL, "informality_rate")] = Series.from_arrays(Frequency.MONTHLY, keys, nat_rates["informality_rate"])
    national_monthly = Panel(nat_monthly)

    year_idx = np.array([k.year - spec.start_year for k in keys])
    macro_vals = {
        "ipi": 100 + 8 * cycle + 3 * season + 1.5 * tau + 0.3 * rng.standard_normal(n),
        "cpi": 100 * np.exp(0.04 * tau + 0.002 * np.cumsum(rng.standard_normal(n))),
        "trm": 2000 * np.exp(0.02 * np.cumsum(rng.standard_normal(n))),
        "ppi": 100 * np.exp(0.03 * tau + 0.01 * np.cumsum(rng.standard_normal(n))),
        "min_wage": 500_000 * 1.05**year_idx,
        "transport_subsidy": 60_000 * 1.04**year_idx,
    }
    macro = Panel({(NATIONAL, v): Series.from_arrays(Frequency.MONTHLY, keys, x) for v, x in macro_vals.items()})

    # city signals: noisy copies of the department rates; the last few cities start late
    short = set(spec.regions[-spec.short_cities :]) if spec.short_cities else set()
    city_start = n - 12 * spec.short_city_years
    cities = {}
    for code in spec.regions:
        lo = city_start if code in short else 0
        for v in CITY_RATES:
            src = levels[code]["pea"] / levels[code]["pet"] if v == "participation_rate" else (
                levels[code]["unemployed"] / levels[code]["pea"] if v == "unemployment_rate" else levels[code]["informality_rate"]
            )
            vals = src[lo:] * (1 + spec.city_noise * rng.standard_normal(n - lo))
            cities[(city_of(code), v)] = Series.from_arrays(Frequency.MONTHLY, keys[lo:], vals)

    # departmental survey levels for observed departments over the trailing window
    dep_lo = n - 12 * spec.department_years
    deps = {}
    for code in spec.observed:
        lv = levels[code]
        m = n - dep_lo
        emp = lv["employed"][dep_lo:] * (1 + spec.survey_noise * rng.standard_normal(m))
        une = lv["unemployed"][dep_lo:] * (1 + spec.survey_noise * rng.standard_normal(m))
        pet = lv["pet"][dep_lo:]
        inf = lv["informality_rate"][dep_lo:] * (1 + spec.survey_noise * rng.standard_normal(m))
        region = department(code)
        for v, x in (("employed", emp), ("unemployed", une), ("pea", emp + une), ("inactive", pet - emp - une),
                     ("pet", pet), ("population", lv["population"][dep_lo:]), ("informality_rate", inf)):
            deps[(region, v)] = Series.from_arrays(Frequency.MONTHLY, keys[dep_lo:], x)

    projections = Panel({
        (department(code), v): annualize(truth[(department(code), v)], ConversionRule.AVERAGE)
        for code in spec.regions for v in ("population", "pet")
    })

    log.info("synthetic fixture: %d regions x %d months, %d observed", len(spec.regions), n, len(spec.observed))
    return SyntheticFixture(
        spec=spec,
        truth=Panel(truth),
        national_truth=national_truth,
        national_annual=national_annual,
        national_monthly=national_monthly,
        macro=macro,
        cities=Panel(cities),
        departments=Panel(deps),
        projections=projections,
        clusters={c: DEFAULT_CLUSTERS.get(c, "A") for c in spec.regions},
    )


FIXTURE_CONFIG = """\
# Pipeline configuration for the bundled synthetic fixture.
[run]
seed = {seed}

[inputs]
national_annual = "national_annual.csv"
national_monthly = "national_monthly.csv"
macro = "macro.csv"
cities = "cities.csv"
departments = "departments.csv"
projections = "projections.csv"

[national]
ratios = ["participation_rate", "unemployment_rate"]
candidates = ["cpi", "trm", "ppi", "ipi", "deflated_wage"]
anchor_month = 7

[disagg]
rho_min = 0.0

[cities]
variables = ["participation_rate", "unemployment_rate", "informality_rate"]
min_overlap = 10

[departments]
gate = 0.95
splice_variables = ["employed", "unemployed", "informality_rate"]

[features]
macro = ["cpi", "trm", "ppi", "ipi"]
wage_base_year = {start_year}

[clusters]
{clusters}

[estimator]
kind = "mlp"
targets = ["employed", "unemployed", "pea", "inactive", "pet"]
validation = ["holdout_stratified"]
hidden_dim = 64
blocks = 2
dropout = 0.0
loss = "huber_logit"
lr = 0.003
min_delta = 0.0
patience = 30
offset_feature = "signal_{{target}}_share"

[eqi]
window = 13
winsor_alpha = 0.01
rank_scope = "within_month"
k_clusters = 5
"""


def write_fixture(fixture: SyntheticFixture, out_dir: Path | str) -> Path:
    """Write the observed inputs, the hidden truth and a ready-to-run config; return the config path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, panel in fixture.inputs().items():
        write_csv(panel, out / f"{name}.csv")
    write_csv(fixture.truth, out / "truth.csv")
    write_csv(fixture.national_truth, out / "national_truth.csv")
    clusters = "\n".join(f'"{code}" = "{name}"' for code, name in sorted(fixture.clusters.items()))
    path = out / "config.toml"
    path.write_text(FIXTURE_CONFIG.format(seed=fixture.spec.seed, start_year=fixture.spec.start_year, clusters=clusters), encoding="utf-8")
    return path
