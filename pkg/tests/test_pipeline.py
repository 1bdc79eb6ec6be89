from __future__ import annotations

import json

import numpy as np
import pytest

from panelrecon.errors import ClusterCoverageError, ConfigError, LeakageError, StageError
from panelrecon.panel import (
    NATIONAL,
    ConversionRule,
    Frequency,
    MonthKey,
    Panel,
    Series,
    annualize,
    department,
    month_range,
    panel_to_csv,
    write_csv,
)
from panelrecon.pipeline import (
    STAGES,
    FeatureSpec,
    SynthSpec,
    build_features,
    city_of,
    deflated_wage,
    generate_synthetic_panel,
    load_config,
    monthly_from_annual,
    parse_config,
    preflight,
    run_pipeline,
)
from panelrecon.pipeline.cli import main

INPUTS = {k: f"{k}.csv" for k in ("national_annual", "national_monthly", "macro", "cities", "departments", "projections")}


def _raw(**tables):
    raw = {"inputs": dict(INPUTS)}
    raw.update(tables)
    return raw


# --------------------------------------------------------------------------- config


def test_config_defaults(tmp_path):
    cfg = parse_config(_raw(), tmp_path)
    assert cfg.stages == STAGES
    assert cfg.inputs["macro"] == tmp_path / "macro.csv"
    assert cfg.rho_grid[0] == -0.99 and cfg.rho_grid[-1] == 0.99 and len(cfg.rho_grid) == 199


def test_config_rho_min_grid(tmp_path):
    cfg = parse_config(_raw(disagg={"rho_min": 0.0}), tmp_path)
    assert cfg.rho_grid == tuple(round(i * 0.01, 2) for i in range(0, 100))
    with pytest.raises(ConfigError):
        parse_config(_raw(disagg={"rho_min": 1.0}), tmp_path)


@pytest.mark.parametrize(
    "raw",
    [
        {},
        {"inputs": {"macro": "m.csv"}},
        _raw(run={"stages": ["national_baseline", "bogus"]}),
        _raw(run={"stages": ["estimator", "national_baseline"]}),
        _raw(estimator={"kind": "forest"}),
        _raw(estimator={"targets": ["employed", "pea"]}),
        _raw(estimator={"hidden_dim": 0}),
        _raw(estimator={"no_such_field": 1}),
    ],
)
def test_config_errors(raw, tmp_path):
    with pytest.raises(ConfigError):
        parse_config(raw, tmp_path)


def test_config_seed_override_and_digest(tmp_path):
    a = parse_config(_raw(run={"seed": 3}), tmp_path)
    b = parse_config(_raw(run={"seed": 3}), tmp_path, seed=9)
    assert a.seed == 3 and a.mlp.seed == 3
    assert b.seed == 9 and b.mlp.seed == 9
    assert a.digest == b.digest
    assert a.digest != parse_config(_raw(run={"seed": 4}), tmp_path).digest


def test_bad_toml_is_config_error(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("[inputs\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(p)


def test_preflight_names_missing_input(tmp_path):
    for name in INPUTS:
        (tmp_path / f"{name}.csv").write_text("region_code,date\n", encoding="utf-8")
    cfg = parse_config(_raw(), tmp_path)
    preflight(cfg)
    (tmp_path / "cities.csv").unlink()
    with pytest.raises(FileNotFoundError, match="cities"):
        preflight(cfg)


# --------------------------------------------------------------------------- features


def _monthly(keys, values):
    return Series.from_arrays(Frequency.MONTHLY, keys, np.asarray(values, dtype=float))


def test_deflated_wage_base_is_100():
    keys = month_range(MonthKey(2015, 1), MonthKey(2017, 12))
    year = np.array([k.year - 2015 for k in keys])
    wage = deflated_wage(_monthly(keys, 1000 * 1.05**year), _monthly(keys, 100 * 1.04**year),
                         _monthly(keys, 100 * np.exp(0.003 * np.arange(36))), 2016)
    in_base = [wage[k] for k in keys if k.year == 2016]
    assert np.mean(in_base) == pytest.approx(100.0, abs=1e-12)


def test_deflated_wage_flat_base_year_is_exactly_100():
    keys = month_range(MonthKey(2015, 1), MonthKey(2016, 12))
    flat = _monthly(keys, np.ones(24))
    wage = deflated_wage(flat, flat, _monthly(keys, [1.0] * 12 + [2.0] * 12))
    assert all(wage[k] == 100.0 for k in keys if k.year == 2015)
    assert all(wage[k] == pytest.approx(50.0) for k in keys if k.year == 2016)


@pytest.fixture(scope="module")
def small_fixture():
    fx = generate_synthetic_panel(SynthSpec(seed=1, years=3, national_monthly_years=2, department_years=2,
                                            short_city_years=3))
    months = fx.truth.series(department("05"), "pet").keys
    panel = fx.macro.merge(fx.cities).merge(fx.truth.filter(variables=["pet", "population"]))
    return fx, panel, months


def test_features_exclude_population(small_fixture):
    fx, panel, _ = small_fixture
    X = build_features(panel, FeatureSpec(clusters=fx.clusters, observed=fx.spec.observed))
    assert not any("population" in c for c in X.columns)
    assert X.n_rows == len(fx.spec.regions) * 36
    for bad in (FeatureSpec(extra=("population",), clusters=fx.clusters, observed=fx.spec.observed),
                FeatureSpec(macro=("cpi", "population"), clusters=fx.clusters, observed=fx.spec.observed),
                FeatureSpec(extra=("pet",), exclude=("pet",), clusters=fx.clusters, observed=fx.spec.observed)):
        with pytest.raises(LeakageError):
            build_features(panel, bad)


def test_cluster_coverage_errors(small_fixture):
    fx, panel, _ = small_fixture
    unassigned = {c: n for c, n in fx.clusters.items() if c != "27"}
    with pytest.raises(ClusterCoverageError, match="27"):
        build_features(panel, FeatureSpec(clusters=unassigned, observed=fx.spec.observed))
    orphan = dict(fx.clusters, **{"08": "Z"})
    with pytest.raises(ClusterCoverageError, match="Z"):
        build_features(panel, FeatureSpec(clusters=orphan, observed=fx.spec.observed))


def test_single_member_cluster_mean_equals_member(small_fixture):
    fx, panel, months = small_fixture
    clusters = dict(fx.clusters, **{"08": "S", "05": "S"})
    X = build_features(panel, FeatureSpec(clusters=clusters, observed=("05", "11", "13", "50")))
    rows = X.groups == "08"
    col = X.columns.index("cluster_participation_rate")
    own = panel.series(city_of("05"), "participation_rate").restrict(months).values
    np.testing.assert_array_equal(X.values[rows, col], own)


def test_cluster_mean_uses_observed_members_only(small_fixture):
    fx, panel, months = small_fixture
    X = build_features(panel, FeatureSpec(clusters=fx.clusters, observed=fx.spec.observed))
    members = [c for c, n in fx.clusters.items() if n == "A" and c in fx.spec.observed]
    expect = np.mean([panel.series(city_of(c), "unemployment_rate").restrict(months).values for c in members], axis=0)
    col = X.columns.index("cluster_unemployment_rate")
    np.testing.assert_allclose(X.values[X.groups == "08", col], expect, rtol=0, atol=1e-15)


def test_monthly_from_annual_reproduces_averages():
    annual = Series.from_arrays(Frequency.ANNUAL, [MonthKey(y, 12) for y in (2010, 2011, 2012)], np.array([10.0, 13.0, 12.0]))
    monthly = monthly_from_annual(annual)
    back = annualize(monthly, ConversionRule.AVERAGE)
    np.testing.assert_allclose(back.values, annual.values, rtol=1e-12)


# --------------------------------------------------------------------------- synthetic fixture


def test_synth_deterministic():
    a = generate_synthetic_panel(SynthSpec(seed=5, years=3, national_monthly_years=2, department_years=2, short_city_years=3))
    b = generate_synthetic_panel(SynthSpec(seed=5, years=3, national_monthly_years=2, department_years=2, short_city_years=3))
    c = generate_synthetic_panel(SynthSpec(seed=6, years=3, national_monthly_years=2, department_years=2, short_city_years=3))
    for name in a.inputs():
        assert panel_to_csv(a.inputs()[name]) == panel_to_csv(b.inputs()[name])
    assert panel_to_csv(a.truth) == panel_to_csv(b.truth)
    assert panel_to_csv(a.truth) != panel_to_csv(c.truth)


def test_synth_truth_consistent_with_benchmarks():
    fx = generate_synthetic_panel(SynthSpec(seed=2, years=4, national_monthly_years=2, department_years=3, short_city_years=3))
    for v in ("pet", "population"):
        np.testing.assert_array_equal(
            annualize(fx.national_truth.series(NATIONAL, v), ConversionRule.AVERAGE).values,
            fx.national_annual.series(NATIONAL, v).values,
        )
        for code in fx.spec.regions:
            np.testing.assert_array_equal(
                annualize(fx.truth.series(department(code), v), ConversionRule.AVERAGE).values,
                fx.projections.series(department(code), v).values,
            )
    for code in fx.spec.regions:
        t = {v: fx.truth.series(department(code), v).values for v in ("employed", "unemployed", "pea", "pet", "inactive")}
        np.testing.assert_allclose(t["employed"] + t["unemployed"], t["pea"], rtol=1e-12)
        np.testing.assert_allclose(t["pea"] + t["inactive"], t["pet"], rtol=1e-12)


def test_synth_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec(regions=("05", "08"), observed=("11",))
    with pytest.raises(ValueError):
        SynthSpec(years=3)


# --------------------------------------------------------------------------- runner


def test_fixture_run_passes_all_certificates(fixture_run):
    _, cfg_path, _, man, _ = fixture_run
    failed = [(c.stage, c.name, c.value) for c in man.certificates if not c.passed]
    assert not failed
    assert man.stages_completed == list(STAGES)
    out = cfg_path.parent / "out"
    saved = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert saved["output_digests"] == man.output_digests
    assert set(saved["input_digests"]) == set(INPUTS)
    assert all((out / name).is_file() for name in man.output_digests)


def test_identical_rerun_identical_outputs(fixture_run, tmp_path):
    _, _, cfg, man, _ = fixture_run
    again = run_pipeline(cfg, tmp_path / "again")
    assert again.output_digests == man.output_digests
    assert again.input_digests == man.input_digests


def test_stage_error_carries_partial_manifest(fixture_run):
    fx, _, cfg, _, _ = fixture_run
    inputs = fx.inputs()
    inputs["cities"] = Panel({k: s for k, s in fx.cities.items() if k[0] != city_of("08")})
    with pytest.raises(StageError) as info:
        run_pipeline(cfg, None, inputs)
    err = info.value
    assert err.stage in STAGES
    assert err.manifest is not None
    assert err.manifest.stages_completed == list(STAGES[: STAGES.index(err.stage)])
    assert err.stage in err.manifest.timings
    assert len(err.inputs_digest) == 64


def test_configured_stage_subset(fixture_run, tmp_path):
    fx, _, cfg, _, _ = fixture_run
    from dataclasses import replace

    sub = replace(cfg, stages=STAGES[:2])
    man = run_pipeline(sub, None, fx.inputs())
    assert man.stages_completed == list(STAGES[:2])
    assert man.passed


# --------------------------------------------------------------------------- CLI


def test_cli_exit_codes(tmp_path, capsys):
    fixture = tmp_path / "fx"
    assert main(["synth", "--out-dir", str(fixture), "--years", "4", "--regions", "05,08,11"]) == 0
    cfg = fixture / "config.toml"
    assert cfg.is_file()

    # missing input file: I/O failure
    assert main(["close", str(tmp_path / "nope.csv"), "--out-dir", str(tmp_path / "o1")]) == 1
    # missing series: validation failure
    assert main(["align", str(fixture / "departments.csv"), "--variable", "wages", "--out-dir", str(tmp_path / "o2")]) == 2
    # bad configuration
    bad = tmp_path / "bad.toml"
    bad.write_text("[run]\nseed = 1\n", encoding="utf-8")
    assert main(["pipeline", "--config", str(bad), "--out-dir", str(tmp_path / "o3")]) == 2
    # configured input missing on disk: I/O failure
    (fixture / "cities.csv").rename(fixture / "cities.bak")
    assert main(["pipeline", "--config", str(cfg), "--out-dir", str(tmp_path / "o4")]) == 1
    capsys.readouterr()


def test_cli_ingest_strict(tmp_path):
    src = tmp_path / "in.csv"
    src.write_text("region_code,date,variable,value\n05,2020-01,employed,10\n05,2020-02,employed,abc\n", encoding="utf-8")
    assert main(["ingest", str(src), "--out-dir", str(tmp_path / "a")]) == 0
    assert (tmp_path / "a" / "panel.csv").is_file()
    assert "abc" not in (tmp_path / "a" / "panel.csv").read_text()
    assert main(["ingest", str(src), "--strict", "--out-dir", str(tmp_path / "b")]) == 2


def test_cli_close_align_reconcile_eqi(tmp_path):
    keys = month_range(MonthKey(2020, 1), MonthKey(2021, 12))
    ones = np.ones(24)
    entries = {}
    for code, scale, inf in (("05", 1.0, 0.5), ("11", 2.0, 0.4), ("13", 1.5, 0.6)):
        r = department(code)
        entries[(r, "employed")] = _monthly(keys, 90 * scale * ones)
        entries[(r, "unemployed")] = _monthly(keys, 10 * scale * ones)
        entries[(r, "pea")] = _monthly(keys, 100 * scale * ones)
        entries[(r, "inactive")] = _monthly(keys, 60 * scale * ones)
        entries[(r, "pet")] = _monthly(keys, 160 * scale * ones)
        entries[(r, "informality_rate")] = _monthly(keys, inf * ones + 0.01 * np.arange(24) * scale)
    entries[(NATIONAL, "employed")] = _monthly(keys, 450 * ones)
    entries[(NATIONAL, "informality_rate")] = _monthly(keys, 0.45 * ones)
    src = tmp_path / "panel.csv"
    write_csv(Panel(entries), src)
    regional = tmp_path / "regional.csv"
    write_csv(Panel({k: s for k, s in entries.items() if k[0] != NATIONAL}), regional)

    assert main(["close", str(regional), "--out-dir", str(tmp_path / "c")]) == 0
    assert main(["align", str(src), "--variable", "employed", "--out-dir", str(tmp_path / "a")]) == 0
    assert main(["reconcile", str(src), "--out-dir", str(tmp_path / "r")]) == 0
    assert (tmp_path / "r" / "lambda.csv").is_file()
    assert main(["eqi", str(regional), "--out-dir", str(tmp_path / "e")]) == 0
    assert (tmp_path / "e" / "eqi.csv").is_file()


def test_cli_disagg(tmp_path):
    months = month_range(MonthKey(2015, 1), MonthKey(2018, 12))
    ind = 100 + np.arange(48) + 5 * np.sin(np.arange(48))
    annual = annualize(_monthly(months, 2 * ind + 3), ConversionRule.AVERAGE)
    src = tmp_path / "d.csv"
    write_csv(Panel({(NATIONAL, "target"): annual, (NATIONAL, "ind"): _monthly(months, ind)}), src)
    for method in ("chowlin", "denton"):
        out = tmp_path / method
        assert main(["disagg", str(src), "--target", "target", "--indicators", "ind", "--method", method,
                     "--out-dir", str(out)]) == 0
        info = json.loads((out / "disagg_fit.json").read_text())
        assert info["aggregation_deviation"] <= 1e-8


def test_cli_train_predict(tmp_path):
    rng = np.random.default_rng(0)
    keys = month_range(MonthKey(2018, 1), MonthKey(2020, 12))
    lines = ["region_code,date,x0,x1,pet,employed"]
    for code in ("05", "08", "11", "13"):
        for k in keys:
            x0, x1 = rng.uniform(0, 1, 2)
            pet = 1000.0
            lines.append(f"{code},{k},{float(x0)!r},{float(x1)!r},{pet!r},{float(pet * (0.2 + 0.5 * x0))!r}")
    src = tmp_path / "table.csv"
    src.write_text("\n".join(lines) + "\n", encoding="utf-8")
    cfg = tmp_path / "c.toml"
    cfg.write_text("[estimator]\nhidden_dim = 8\nblocks = 1\nmax_epochs = 50\n", encoding="utf-8")
    out = tmp_path / "m"
    assert main(["train", str(src), "--target", "employed", "--divisor", "pet", "--config", str(cfg),
                 "--validation", "logo", "--out-dir", str(out)]) == 0
    assert (out / "metrics.csv").is_file()
    assert main(["predict", str(src), "--model", str(out / "model.json"), "--divisor", "pet", "--out-dir", str(out)]) == 0
    rows = (out / "predictions.csv").read_text().splitlines()
    assert rows[0] == "region_code,date,share,level" and len(rows) == 1 + 4 * 36
    # levels without a divisor are rejected
    assert main(["train", str(src), "--target", "employed", "--out-dir", str(out)]) == 2
