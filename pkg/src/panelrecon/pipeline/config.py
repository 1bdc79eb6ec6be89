"""Pipeline configuration read from TOML.

Layout (every table optional except ``[inputs]``)::

    [run]            seed, out_dir, stages (must follow STAGES order)
    [inputs]         name -> CSV path, relative to the config file
    [national]       ratios, candidates, anchor_month
    [disagg]         rho_min (lower end of the 0.01-step AR(1) grid, default -0.99)
    [cities]         variables, min_overlap
    [departments]    gate, splice_variables
    [features]       macro, wage_base_year, exclude
    [clusters]       department code -> cluster name
    [donor_overrides] target city code -> donor city code
    [estimator]      kind, targets, validation, plus MlpConfig fields
    [informality]    enabled
    [eqi]            window, winsor_alpha, rank_scope, k_clusters, labels, periods, penalty
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..eqi import EqiSpec, IndicatorSpec, PenaltySpec
from ..errors import ConfigError, DomainError
from ..estimator.mlp import MlpConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

STAGES = (
    "national_baseline",
    "national_disaggregation",
    "city_signals",
    "city_alignment",
    "departmental_reconstruction",
    "estimator",
    "informality",
    "consolidation",
)

REQUIRED_INPUTS = ("national_annual", "national_monthly", "macro", "cities", "departments", "projections")


@dataclass(frozen=True)
class PipelineConfig:
    raw: dict[str, Any]
    base_dir: Path
    inputs: dict[str, Path]
    seed: int = 0
    out_dir: Path | None = None
    stages: tuple[str, ...] = STAGES
    ratios: tuple[str, ...] = ("participation_rate", "unemployment_rate")
    candidates: tuple[str, ...] = ("cpi", "trm", "ppi", "ipi", "deflated_wage")
    anchor_month: int = 7
    rho_min: float = -0.99
    city_variables: tuple[str, ...] = ("participation_rate", "unemployment_rate", "informality_rate")
    min_overlap: int = 10
    gate: float = 0.95
    splice_variables: tuple[str, ...] = ("employed", "unemployed", "informality_rate")
    macro_features: tuple[str, ...] = ("cpi", "trm", "ppi", "ipi")
    wage_base_year: int | None = None
    exclude_features: tuple[str, ...] = ("population",)
    clusters: dict[str, str] = field(default_factory=dict)
    donor_overrides: dict[str, str] = field(default_factory=dict)
    estimator_kind: str = "mlp"
    targets: tuple[str, ...] = ("employed", "unemployed", "pea", "inactive", "pet")
    validation: tuple[str, ...] = ("holdout_stratified",)
    mlp: MlpConfig = MlpConfig()
    ridge_alpha: float = 1.0
    informality: bool = True
    eqi: dict[str, Any] = field(default_factory=dict)

    @property
    def rho_grid(self) -> tuple[float, ...]:
        start = int(round(self.rho_min * 100))
        return tuple(round(i * 0.01, 2) for i in range(start, 100))

    @property
    def digest(self) -> str:
        """SHA-256 of the canonical JSON form of the parsed TOML."""
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True, default=str).encode()).hexdigest()


def _tuple(value, name: str) -> tuple:
    if not isinstance(value, (list, tuple)):
        raise ConfigError(f"{name} must be a list")
    return tuple(value)


def parse_config(raw: dict[str, Any], base_dir: Path | str = ".", seed: int | None = None) -> PipelineConfig:
    base_dir = Path(base_dir)
    run = raw.get("run", {})
    inputs_raw = raw.get("inputs")
    if not isinstance(inputs_raw, dict):
        raise ConfigError("the [inputs] table is required")
    missing = [k for k in REQUIRED_INPUTS if k not in inputs_raw]
    if missing:
        raise ConfigError(f"[inputs] lacks {', '.join(missing)}")
    inputs = {k: (base_dir / v) for k, v in inputs_raw.items()}

    stages = _tuple(run.get("stages", list(STAGES)), "run.stages")
    unknown = [s for s in stages if s not in STAGES]
    if unknown:
        raise ConfigError(f"unknown stages: {unknown}")
    if list(stages) != sorted(stages, key=STAGES.index):
        raise ConfigError("stages must follow the pipeline order " + " -> ".join(STAGES))

    nat = raw.get("national", {})
    cit = raw.get("cities", {})
    dep = raw.get("departments", {})
    feat = raw.get("features", {})
    est = dict(raw.get("estimator", {}))
    kw: dict[str, Any] = {}
    for key in ("ratios", "candidates"):
        if key in nat:
            kw[key] = _tuple(nat[key], f"national.{key}")
    rho_min = float(raw.get("disagg", {}).get("rho_min", -0.99))
    if not -0.99 <= rho_min <= 0.99:
        raise ConfigError("disagg.rho_min must lie in [-0.99, 0.99]")
    kw["rho_min"] = rho_min
    if "anchor_month" in nat:
        kw["anchor_month"] = int(nat["anchor_month"])
    if "variables" in cit:
        kw["city_variables"] = _tuple(cit["variables"], "cities.variables")
    if "min_overlap" in cit:
        kw["min_overlap"] = int(cit["min_overlap"])
    if "gate" in dep:
        kw["gate"] = float(dep["gate"])
    if "splice_variables" in dep:
        kw["splice_variables"] = _tuple(dep["splice_variables"], "departments.splice_variables")
    if "macro" in feat:
        kw["macro_features"] = _tuple(feat["macro"], "features.macro")
    if "wage_base_year" in feat:
        kw["wage_base_year"] = int(feat["wage_base_year"])
    if "exclude" in feat:
        kw["exclude_features"] = _tuple(feat["exclude"], "features.exclude")

    kind = est.pop("kind", "mlp")
    if kind not in ("mlp", "ridge"):
        raise ConfigError(f"unknown estimator kind {kind!r}")
    targets = _tuple(est.pop("targets", list(PipelineConfig.targets)), "estimator.targets")
    for needed in ("employed", "unemployed"):
        if needed not in targets:
            raise ConfigError(f"estimator.targets must include {needed!r}")
    validation = _tuple(est.pop("validation", list(PipelineConfig.validation)), "estimator.validation")
    ridge_alpha = float(est.pop("alpha", 1.0))
    mlp = mlp_config_from_table(est, seed if seed is not None else run.get("seed", 0))

    clusters = {str(k): str(v) for k, v in raw.get("clusters", {}).items()}
    overrides = {str(k): str(v) for k, v in raw.get("donor_overrides", {}).items()}
    out_dir = run.get("out_dir")
    return PipelineConfig(
        raw=raw,
        base_dir=base_dir,
        inputs=inputs,
        seed=int(seed if seed is not None else run.get("seed", 0)),
        out_dir=(base_dir / out_dir) if out_dir else None,
        stages=stages,
        clusters=clusters,
        donor_overrides=overrides,
        estimator_kind=kind,
        targets=targets,
        validation=validation,
        mlp=mlp,
        ridge_alpha=ridge_alpha,
        informality=bool(raw.get("informality", {}).get("enabled", True)),
        eqi=dict(raw.get("eqi", {})),
        **kw,
    )


def mlp_config_from_table(table: dict[str, Any], seed: int = 0) -> MlpConfig:
    """``MlpConfig`` from an ``[estimator]`` table; a ``seed`` key in the table wins."""
    est = {k: v for k, v in table.items() if k not in ("kind", "targets", "validation", "alpha")}
    table_seed = est.pop("seed", None)
    try:
        return MlpConfig(**est, seed=int(table_seed if table_seed is not None else seed))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad [estimator] table: {exc}") from exc


def eqi_spec_from_table(table: dict[str, Any], has_informality: bool = True) -> tuple[EqiSpec, list[tuple[int, int]]]:
    """``EqiSpec`` and ranking periods from an ``[eqi]`` table.

    Without an explicit ``indicators`` list the default set is used, minus
    informality when the panel does not carry it.
    """
    e = dict(table)
    periods = [tuple(int(y) for y in p) for p in e.pop("periods", [])]
    indicators = e.pop("indicators", None)
    try:
        if indicators is not None:
            inds = tuple(
                IndicatorSpec(i["variable"], i.get("orientation", "positive"), float(i.get("weight", 1.0))) for i in indicators
            )
        else:
            inds = tuple(i for i in EqiSpec().indicators if has_informality or i.variable != "informality_rate")
        penalty = e.pop("penalty", None)
        pen = PenaltySpec(penalty["a"], penalty["b"], float(penalty["lambda"])) if penalty else None
        if "labels" in e:
            e["labels"] = tuple(e["labels"])
        return EqiSpec(indicators=inds, penalty=pen, **e), periods
    except (TypeError, KeyError, ValueError, DomainError) as exc:
        raise ConfigError(f"bad [eqi] table: {exc}") from exc


def load_toml(path: Path | str) -> dict[str, Any]:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def load_config(path: Path | str, seed: int | None = None) -> PipelineConfig:
    path = Path(path)
    return parse_config(load_toml(path), path.parent, seed)


def preflight(config: PipelineConfig) -> None:
    """Fail early, naming the first declared input that does not exist."""
    for name, path in config.inputs.items():
        if not path.is_file():
            raise FileNotFoundError(f"input {name!r} not found: {path}")
