"""End-to-end reconstruction pipeline with a deterministic run manifest."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .. import __version__
from ..eqi import clusters_csv, eqi_compute, eqi_csv, period_rankings, rankings_csv
from ..errors import CoverageError, StageError
from ..estimator.models import MlpEstimator, RidgeEstimator
from ..estimator.shares import FeatureMatrix, calibrate_to_national, to_shares
from ..estimator.validation import ValidationScheme, run_validation
from ..interp import interpolate_values
from ..panel import (
    NATIONAL,
    ConversionRule,
    Frequency,
    MonthKey,
    Panel,
    RegionId,
    Series,
    aggregate_regions,
    annualize,
    close_identities,
    derive_rate_series,
    identity_residuals,
    month_range,
    panel_to_csv,
    read_csv,
)
from ..splice import annual_splice, donor_map, donors_csv, reconcile_informality, splice_extend
from ..tempdisagg import DisaggBase, DisaggProblem, disaggregate, rmse_table_csv, select_indicator
from .config import STAGES, PipelineConfig, eqi_spec_from_table, preflight
from .features import FeatureSpec, build_features, deflated_wage
from .synth import city_of

log = logging.getLogger(__name__)

AGGREGATION_TOL = 1e-6
IDENTITY_TOL = 1e-10
CONSERVATION_TOL = 1e-10


@dataclass(frozen=True)
class Certificate:
    stage: str
    name: str
    value: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.tolerance)

    def to_dict(self) -> dict:
        return {"stage": self.stage, "name": self.name, "value": self.value, "tolerance": self.tolerance, "passed": self.passed}


@dataclass
class RunManifest:
    config_hash: str
    tool_version: str = __version__
    input_digests: dict[str, str] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)
    certificates: list[Certificate] = field(default_factory=list)
    output_digests: dict[str, str] = field(default_factory=dict)
    stages_completed: list[str] = field(default_factory=list)
    notes: dict[str, Any] = field(default_factory=dict)
    artifacts: dict[str, Any] = field(default_factory=dict, repr=False)  # in-memory results, not serialized

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.certificates)

    def certify(self, stage: str, name: str, value: float, tolerance: float) -> Certificate:
        cert = Certificate(stage, name, float(value), tolerance)
        self.certificates.append(cert)
        if not cert.passed:
            log.error("certificate %s/%s failed: %.3g > %.3g", stage, name, value, tolerance)
        return cert

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "tool_version": self.tool_version,
            "input_digests": self.input_digests,
            "timings": self.timings,
            "certificates": [c.to_dict() for c in self.certificates],
            "all_certificates_passed": self.passed,
            "output_digests": self.output_digests,
            "stages_completed": self.stages_completed,
            "notes": self.notes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


# --------------------------------------------------------------------------- helpers


def monthly_from_annual(annual: Series, anchor_month: int = 7) -> Series:
    """Monthly path through annual averages placed at ``anchor_month``.

    Akima interpolation between anchors, linear continuation of the end
    segments to fill the first and last year, then proportional splicing so
    every year averages to its annual value.
    """
    years = annual.years()
    months = month_range(MonthKey(years[0], 1), MonthKey(years[-1], 12))
    x = np.array([MonthKey(y, anchor_month).ordinal for y in years], dtype=float)
    y = np.asarray(annual.values, dtype=float)
    xq = np.array([k.ordinal for k in months], dtype=float)
    out = np.empty(len(xq))
    inside = (xq >= x[0]) & (xq <= x[-1])
    if len(x) >= 2:
        out[inside], _ = interpolate_values(x, y, xq[inside], "akima")
        lo, hi = xq < x[0], xq > x[-1]
        out[lo] = y[0] + (y[1] - y[0]) / (x[1] - x[0]) * (xq[lo] - x[0])
        out[hi] = y[-1] + (y[-1] - y[-2]) / (x[-1] - x[-2]) * (xq[hi] - x[-1])
    else:
        out[:] = y[0]
    return annual_splice(Series.from_arrays(Frequency.MONTHLY, months, out), annual, ConversionRule.AVERAGE)


def _write(out_dir: Path | None, manifest: RunManifest, name: str, text: str) -> None:
    data = text.encode("utf-8")
    manifest.output_digests[name] = sha256_bytes(data)
    if out_dir is not None:
        (out_dir / name).write_bytes(data)


def _max_identity_residual(panel: Panel, regions) -> float:
    report = identity_residuals(panel, regions)
    return report.max_abs_relative if report.entries else 0.0


def _alignment_gap(members: dict[RegionId, Series], national: Series) -> float:
    keys = [k for k in national.keys]
    total = np.sum([members[r].restrict(keys).values for r in members], axis=0)
    nat = national.restrict(keys).values
    return float(np.max(np.abs(total - nat) / np.maximum(np.abs(nat), 1e-12)))


# --------------------------------------------------------------------------- stages


@dataclass
class _State:
    inputs: dict[str, Panel]
    months: list[MonthKey] = field(default_factory=list)
    macro: Panel | None = None
    national: dict[str, Series] = field(default_factory=dict)
    selection: dict[str, str] = field(default_factory=dict)
    cities: dict[RegionId, dict[str, Series]] = field(default_factory=dict)
    demography: dict[RegionId, dict[str, Series]] = field(default_factory=dict)
    departments: Panel | None = None
    observed: list[str] = field(default_factory=list)
    final: Panel | None = None
    features: FeatureMatrix | None = None
    have: np.ndarray | None = None


def _national_baseline(cfg: PipelineConfig, st: _State, man: RunManifest, out: Path | None) -> None:
    ann = st.inputs["national_annual"]
    monthly = st.inputs["national_monthly"]
    pet_annual = ann.series(NATIONAL, "pet")
    years = pet_annual.years()
    st.months = month_range(MonthKey(years[0], 1), MonthKey(years[-1], 12))
    for v in ("pet", "population"):
        s = monthly_from_annual(ann.series(NATIONAL, v), cfg.anchor_month)
        man.certify("national_baseline", f"{v}_annual_average", _annual_gap(s, ann.series(NATIONAL, v)), AGGREGATION_TOL)
        st.national[v] = s
    macro = st.inputs["macro"]
    wage = deflated_wage(
        macro.series(NATIONAL, "min_wage"), macro.series(NATIONAL, "transport_subsidy"),
        macro.series(NATIONAL, "cpi"), cfg.wage_base_year,
    )
    st.macro = macro.with_series({(NATIONAL, "deflated_wage"): wage})
    tables = {}
    for ratio in cfg.ratios:
        candidates = {c: st.macro.series(NATIONAL, c) for c in cfg.candidates}
        base = DisaggBase(ann.series(NATIONAL, ratio), ConversionRule.AVERAGE, cfg.rho_grid)
        best, table = select_indicator(base, candidates, monthly.series(NATIONAL, ratio))
        st.selection[ratio] = best
        tables[ratio] = table
        log.info("national %s: best indicator %s (relative RMSE %.4g)", ratio, best, table[best])
    _write(out, man, "indicator_selection.csv", rmse_table_csv(tables))
    man.notes["selected_indicators"] = dict(st.selection)


def _annual_gap(monthly: Series, annual: Series) -> float:
    agg = annualize(monthly, ConversionRule.AVERAGE)
    keys = [k for k in annual.keys if k in agg]
    a = np.array([annual[k] for k in keys])
    b = np.array([agg[k] for k in keys])
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), 1e-12))


def _national_disaggregation(cfg: PipelineConfig, st: _State, man: RunManifest, out: Path | None) -> None:
    ann = st.inputs["national_annual"]
    observed = st.inputs["national_monthly"]
    rates: dict[str, Series] = {}
    for ratio in cfg.ratios:
        ind = st.selection[ratio]
        problem = DisaggProblem.from_series(ann.series(NATIONAL, ratio), {ind: st.macro.series(NATIONAL, ind)}, rho_grid=cfg.rho_grid)
        fit, path = disaggregate(problem)
        man.certify("national_disaggregation", f"{ratio}_aggregation", fit.certificate, AGGREGATION_TOL)
        # survey months replace the reconstruction where available
        points = path.to_dict()
        points.update(observed.series(NATIONAL, ratio).to_dict())
        rates[ratio] = Series(Frequency.MONTHLY, {k: points[k] for k in st.months})
    pet = st.national["pet"]
    part = rates["participation_rate"].restrict(st.months).values
    urate = rates["unemployment_rate"].restrict(st.months).values
    pet_v = pet.restrict(st.months).values
    pea = pet_v * part
    unemployed = pea * urate
    panel = Panel({
        (NATIONAL, "pet"): pet,
        (NATIONAL, "population"): st.national["population"],
        (NATIONAL, "pea"): Series.from_arrays(Frequency.MONTHLY, st.months, pea),
        (NATIONAL, "employed"): Series.from_arrays(Frequency.MONTHLY, st.months, pea - unemployed),
        (NATIONAL, "unemployed"): Series.from_arrays(Frequency.MONTHLY, st.months, unemployed),
    })
    closed, _ = close_identities(panel)
    man.certify("national_disaggregation", "identity_residual", _max_identity_residual(closed, [NATIONAL]), IDENTITY_TOL)
    for v in ("employed", "unemployed", "pea", "inactive", "pet"):
        st.national[v] = closed.series(NATIONAL, v)
    for ratio, s in rates.items():
        st.national[ratio] = s
    inf = observed.series(NATIONAL, "informality_rate") if observed.has(NATIONAL, "informality_rate") else None
    if inf is not None:
        st.national["informality_rate"] = inf
    _write(out, man, "national_monthly.csv", panel_to_csv(Panel({(NATIONAL, v): s for v, s in st.national.items()})))


def _city_signals(cfg: PipelineConfig, st: _State, man: RunManifest, out: Path | None) -> None:
    cities = st.inputs["cities"]
    start = st.months[0]
    maps = []
    extended: dict[RegionId, dict[str, Series]] = {}
    for v in cfg.city_variables:
        members = cities.slice(v)
        full = {r: s for r, s in members.items() if s.first <= start and s.last >= st.months[-1]}
        for r, s in members.items():
            if s.first <= start:
                extended.setdefault(r, {})[v] = s.between(start, st.months[-1])
                continue
            override = cfg.donor_overrides.get(r.code)
            if override is not None:
                donor = next(d for d in members if d.code == override)
            else:
                dm = donor_map(s, {d: x for d, x in full.items() if d != r}, cfg.min_overlap, target=r, variable=v)
                maps.append(dm)
                donor = dm.donor
            extended.setdefault(r, {})[v] = splice_extend(s, members[donor], start).between(start, st.months[-1])
            log.info("city %s %s extended back to %s from donor %s", r.code, v, start, donor.code)
    st.cities = extended
    _write(out, man, "donors.csv", donors_csv(maps))


def _city_alignment(cfg: PipelineConfig, st: _State, man: RunManifest, out: Path | None) -> None:
    aligned: dict[RegionId, dict[str, Series]] = {}
    worst = 0.0
    for r, by_var in sorted(st.cities.items()):
        for v, s in by_var.items():
            annual = annualize(s, ConversionRule.AVERAGE)
            indicator = st.national.get(v)
            if indicator is None:
                raise CoverageError(f"no national {v!r} series to guide city alignment")
            fit, path = disaggregate(DisaggProblem.from_series(annual, {v: indicator}, rho_grid=cfg.rho_grid))
            worst = max(worst, fit.certificate)
            aligned.setdefault(r, {})[v] = path
    man.certify("city_alignment", "aggregation", worst, AGGREGATION_TOL)
    st.cities = aligned
    _write(out, man, "cities_aligned.csv", panel_to_csv(Panel({(r, v): s for r, d in aligned.items() for v, s in d.items()})))


def _city_proxy(st: _State, code: str, variable: str) -> Series:
    sig = st.cities[city_of(code)]
    pet = st.demography[RegionId(code)]["pet"].restrict(st.months).values
    if variable == "informality_rate":
        return sig["informality_rate"]
    part = sig["participation_rate"].restrict(st.months).values
    ur = sig["unemployment_rate"].restrict(st.months).values
    vals = {"employed": pet * part * (1 - ur), "unemployed": pet * part * ur, "pea": pet * part}[variable]
    return Series.from_arrays(Frequency.MONTHLY, st.months, vals)


def _departmental_reconstruction(cfg: PipelineConfig, st: _State, man: RunManifest, out: Path | None) -> None:
    proj = st.inputs["projections"]
    deps = st.inputs["departments"]
    worst = 0.0
    for r in proj.regions("pet"):
        st.demography[r] = {}
        for v in ("pet", "population"):
            s = monthly_from_annual(proj.series(r, v), cfg.anchor_month)
            worst = max(worst, _annual_gap(s, proj.series(r, v)))
            st.demography[r][v] = s
    man.certify("departmental_reconstruction", "demography_annual_average", worst, AGGREGATION_TOL)

    st.observed = sorted(r.code for r in deps.regions("employed"))
    entries: dict[tuple[RegionId, str], Series] = {}
    gate_report = []
    maps = []
    for r in deps.regions("employed"):
        pet_proj = st.demography[r]["pet"]
        series: dict[str, Series] = {}
        for v in cfg.splice_variables:
            if not deps.has(r, v):
                continue
            obs = deps.series(r, v)
            candidates = {city_of(c.code): _city_proxy(st, c.code, v) for c in st.demography}
            dm = donor_map(obs, candidates, cfg.min_overlap, target=r, variable=v)
            maps.append(dm)
            if dm.spearman >= cfg.gate and obs.first > st.months[0]:
                series[v] = splice_extend(obs, candidates[dm.donor], st.months[0])
                gate_report.append({"region": r.code, "variable": v, "donor": dm.donor.code, "spearman": dm.spearman, "extended": True})
            else:
                series[v] = obs
                gate_report.append({"region": r.code, "variable": v, "donor": dm.donor.code, "spearman": dm.spearman, "extended": False})
        keys = sorted(set(series["employed"].keys) & set(series["unemployed"].keys))
        e = series["employed"].restrict(keys).values
        u = series["unemployed"].restrict(keys).values
        obs_pet = deps.series(r, "pet") if deps.has(r, "pet") else Series(Frequency.MONTHLY)
        pet = np.array([obs_pet.get(k, pet_proj.get(k)) for k in keys])
        pop = st.demography[r]["population"].restrict(keys).values
        for v, vals in (("employed", e), ("unemployed", u), ("pea", e + u), ("inactive", pet - e - u), ("pet", pet), ("population", pop)):
            entries[(r, v)] = Series.from_arrays(Frequency.MONTHLY, keys, vals)
        if "informality_rate" in series:
            entries[(r, "informality_rate")] = series["informality_rate"]
    panel, report = close_identities(Panel(entries), tolerance=1e-3)
    man.certify("departmental_reconstruction", "identity_residual", _max_identity_residual(panel, panel.regions("pet")), IDENTITY_TOL)
    man.notes["splice_gate"] = gate_report
    st.departments = panel
    _write(out, man, "department_donors.csv", donors_csv(maps))
    _write(out, man, "departments_observed.csv", panel_to_csv(panel))


def _feature_panel(cfg: PipelineConfig, st: _State) -> tuple[Panel, FeatureSpec]:
    entries = {k: s for k, s in st.macro.items()}
    for r, d in st.demography.items():
        for v, s in d.items():
            entries[(r, v)] = s
    for r, d in st.cities.items():
        for v, s in d.items():
            entries[(r, v)] = s
    clusters = cfg.clusters or {}
    spec = FeatureSpec(
        macro=cfg.macro_features, wage_base_year=cfg.wage_base_year,
        city_signals=tuple(cfg.city_variables), clusters=clusters,
        observed=tuple(st.observed), exclude=cfg.exclude_features,
    )
    return Panel(entries), spec


def _estimator(cfg: PipelineConfig):
    return RidgeEstimator(cfg.ridge_alpha) if cfg.estimator_kind == "ridge" else MlpEstimator(cfg.mlp)


def _estimation(cfg: PipelineConfig, st: _State, man: RunManifest, out: Path | None) -> None:
    fpanel, fspec = _feature_panel(cfg, st)
    regions = sorted(st.demography)
    X = build_features(fpanel, fspec, regions, st.months)
    man.notes["feature_columns"] = list(X.columns)
    dep = st.departments
    have = np.array([dep.has(RegionId(g), "employed") and t in dep.series(RegionId(g), "employed") for g, t in zip(X.groups, X.times)])
    rows = np.flatnonzero(have)
    pop = np.array([st.demography[RegionId(g)]["population"][t] for g, t in zip(X.groups, X.times)])
    levels = np.column_stack([
        [dep.series(RegionId(X.groups[i]), v)[X.times[i]] for i in rows] for v in cfg.targets
    ])
    block = to_shares(levels, pop[rows], cfg.targets)
    man.notes["share_clamps"] = block.clamp_count
    Xtr = X.take(rows)
    estimator = _estimator(cfg)
    reports = []
    for name in cfg.validation:
        rep = run_validation(Xtr, block, estimator, ValidationScheme.from_name(name, cfg.seed))
        reports.append(rep.to_csv())
        man.notes.setdefault("validation_share_mape", {})[name] = {t: rep.mean(t, "share").mape for t in cfg.targets}
    if reports:
        header = reports[0].splitlines()[0]
        body = [line for rep in reports for line in rep.splitlines()[1:]]
        _write(out, man, "metrics.csv", "\n".join([header, *body]) + "\n")

    predicted: dict[str, np.ndarray] = {}
    for v in ("employed", "unemployed"):
        fitted = estimator.fit(Xtr, block.target(v), target=v)
        predicted[v] = fitted.predict(X) * pop
        if hasattr(fitted, "model"):
            _write(out, man, f"model_{v}.json", fitted.model.to_json())

    # observed (or spliced) cells win; the model fills the rest
    levels_all: dict[str, dict[RegionId, dict[MonthKey, float]]] = {v: {} for v in ("employed", "unemployed", "pet")}
    for i, (g, t) in enumerate(zip(X.groups, X.times)):
        r = RegionId(g)
        for v in ("employed", "unemployed"):
            val = dep.series(r, v)[t] if have[i] else predicted[v][i]
            levels_all[v].setdefault(r, {})[t] = val
        pet = dep.series(r, "pet")[t] if have[i] else st.demography[r]["pet"][t]
        levels_all["pet"].setdefault(r, {})[t] = pet
    man.notes["predicted_cells"] = int((~have).sum())

    calibrated: dict[str, dict[RegionId, Series]] = {}
    worst = 0.0
    for v in ("employed", "unemployed", "pet"):
        members = {r: Series(Frequency.MONTHLY, pts) for r, pts in levels_all[v].items()}
        national = st.national[v].restrict(st.months)
        calibrated[v] = calibrate_to_national(members, national)
        worst = max(worst, _alignment_gap(calibrated[v], national))
    man.certify("estimator", "national_alignment", worst, CONSERVATION_TOL)

    entries: dict[tuple[RegionId, str], Series] = {}
    for r in regions:
        e = calibrated["employed"][r].values
        u = calibrated["unemployed"][r].values
        pet = calibrated["pet"][r].values
        keys = calibrated["employed"][r].keys
        for v, vals in (("employed", e), ("unemployed", u), ("pea", e + u), ("inactive", pet - e - u), ("pet", pet)):
            entries[(r, v)] = Series.from_arrays(Frequency.MONTHLY, keys, vals)
        entries[(r, "population")] = st.demography[r]["population"].restrict(keys)
    closed, report = close_identities(Panel(entries), tolerance=1e-3)
    man.certify("estimator", "identity_residual", _max_identity_residual(closed, regions), IDENTITY_TOL)
    man.notes["pre_closure_identity_residual"] = report.max_abs_relative
    st.final = closed
    st.features = X
    st.have = have


def _informality(cfg: PipelineConfig, st: _State, man: RunManifest, out: Path | None) -> None:
    if not cfg.informality or "informality_rate" not in st.national:
        man.notes["informality"] = "skipped"
        return
    X = st.features
    dep = st.departments
    have = np.array([dep.has(RegionId(g), "informality_rate") and t in dep.series(RegionId(g), "informality_rate") for g, t in zip(X.groups, X.times)])
    rows = np.flatnonzero(have)
    rates_obs = np.array([dep.series(RegionId(X.groups[i]), "informality_rate")[X.times[i]] for i in rows])
    fitted = _estimator(cfg).fit(X.take(rows), np.clip(rates_obs, 1e-6, 1 - 1e-6), target="informality_rate")
    pred = fitted.predict(X)
    if hasattr(fitted, "model"):
        _write(out, man, "model_informality_rate.json", fitted.model.to_json())
    rates: dict[RegionId, dict[MonthKey, float]] = {}
    for i, (g, t) in enumerate(zip(X.groups, X.times)):
        val = dep.series(RegionId(g), "informality_rate")[t] if have[i] else pred[i]
        rates.setdefault(RegionId(g), {})[t] = float(np.clip(val, 0.0, 1.0))
    rate_slice = {r: Series(Frequency.MONTHLY, pts) for r, pts in rates.items()}
    employment = st.final.slice("employed")
    schedule, calibrated = reconcile_informality(rate_slice, employment, st.national["informality_rate"])
    keys = sorted(schedule.values)
    informal = np.sum([calibrated[r].restrict(keys).values * employment[r].restrict(keys).values for r in calibrated], axis=0)
    total_e = np.sum([employment[r].restrict(keys).values for r in calibrated], axis=0)
    target = st.national["informality_rate"].restrict(keys).values * total_e
    man.certify("informality", "conservation", float(np.max(np.abs(informal - target) / target)), CONSERVATION_TOL)
    man.notes["lambda_range"] = [min(schedule.values.values()), max(schedule.values.values())]
    st.final = st.final.with_slice("informality_rate", calibrated)
    _write(out, man, "lambda.csv", schedule.to_csv())


def _consolidation(cfg: PipelineConfig, st: _State, man: RunManifest, out: Path | None) -> None:
    final = st.final
    regions = final.regions("pet")
    rates = derive_rate_series(final, regions)
    full = final.merge(rates)
    man.certify("consolidation", "identity_residual", _max_identity_residual(full, regions), IDENTITY_TOL)
    for v in ("employed", "unemployed", "pet"):
        total = aggregate_regions(full, v, regions)
        man.certify("consolidation", f"{v}_national_total", _alignment_gap({NATIONAL: total}, st.national[v].restrict(total.keys)), CONSERVATION_TOL)
    spec, periods = eqi_spec_from_table(cfg.eqi, full.has(regions[0], "informality_rate"))
    result = eqi_compute(full, spec, regions)
    lo = min(float(s.values.min()) for s in result.eqi.values())
    hi = max(float(s.values.max()) for s in result.eqi.values())
    man.certify("consolidation", "eqi_bounds", max(0.0 - lo, hi - 100.0, 0.0), 0.0)
    if not periods:
        years = sorted({k.year for k in st.months})
        mid = years[len(years) // 2]
        periods = [(years[0], mid - 1), (mid, years[-1])]
    ranks = period_rankings(result, periods)
    st.final = full
    man.artifacts["eqi"] = result
    _write(out, man, "departments.csv", panel_to_csv(full))
    _write(out, man, "eqi.csv", eqi_csv(result))
    if result.cluster:
        _write(out, man, "clusters.csv", clusters_csv(result.cluster, spec.labels))
    _write(out, man, "rankings.csv", rankings_csv(ranks))
    _write(out, man, "residuals.json", identity_residuals(full, regions).to_json())


_STAGE_FUNCS: dict[str, Callable] = {
    "national_baseline": _national_baseline,
    "national_disaggregation": _national_disaggregation,
    "city_signals": _city_signals,
    "city_alignment": _city_alignment,
    "departmental_reconstruction": _departmental_reconstruction,
    "estimator": _estimation,
    "informality": _informality,
    "consolidation": _consolidation,
}


def load_inputs(cfg: PipelineConfig, man: RunManifest | None = None) -> dict[str, Panel]:
    preflight(cfg)
    panels = {}
    for name, path in sorted(cfg.inputs.items()):
        data = path.read_bytes()
        if man is not None:
            man.input_digests[name] = sha256_bytes(data)
        result = read_csv(path)
        if result.rejects:
            log.warning("%s: %d rejected rows (first: line %d, %s)", path, len(result.rejects), result.rejects[0].line, result.rejects[0].reason)
            if man is not None:
                man.notes.setdefault("rejects", {})[name] = len(result.rejects)
        panels[name] = result.panel
    return panels


def run_pipeline(
    config: PipelineConfig,
    out_dir: Path | str | None = None,
    inputs: dict[str, Panel] | None = None,
) -> RunManifest:
    """Run every configured stage in order and return the manifest.

    Inputs are read from the configured CSV paths unless ``inputs`` supplies
    the panels directly. When ``out_dir`` (or the configured one) is set, all
    outputs and ``manifest.json`` are written there. A failing stage raises
    :class:`StageError` carrying the partial manifest; failed certificates are
    recorded and reported through ``manifest.passed``.
    """
    man = RunManifest(config.digest)
    out = Path(out_dir) if out_dir is not None else config.out_dir
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    if inputs is None:
        inputs = load_inputs(config, man)
    else:
        for name, p in sorted(inputs.items()):
            man.input_digests[name] = sha256_bytes(panel_to_csv(p).encode())
    inputs_digest = sha256_bytes(json.dumps(man.input_digests, sort_keys=True).encode())
    st = _State(inputs)
    for stage in STAGES:
        if stage not in config.stages:
            continue
        t0 = time.perf_counter()
        try:
            _STAGE_FUNCS[stage](config, st, man, out)
        except Exception as exc:  # noqa: BLE001 - rewrapped with stage context
            man.timings[stage] = round(time.perf_counter() - t0, 6)
            raise StageError(stage, exc, inputs_digest, man) from exc
        man.timings[stage] = round(time.perf_counter() - t0, 6)
        man.stages_completed.append(stage)
        log.info("stage %s done in %.2fs", stage, man.timings[stage])
    if st.final is not None:
        man.artifacts["departments"] = st.final
    man.artifacts["national"] = dict(st.national)
    if out is not None:
        (out / "manifest.json").write_text(man.to_json() + "\n", encoding="utf-8")
    return man
