"""Temporal disaggregation of annual targets to monthly series.

Chow-Lin regression with AR(1) residuals, estimated by maximising the
profiled Gaussian likelihood over a fixed rho grid, plus a proportional
first-difference Denton fallback.
"""

from __future__ import annotations

import csv
import io
import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CertificationError, DomainError, FrequencyError, NumericalError, OverlapError, RankError
from .panel import ConversionRule, Frequency, MonthKey, Series, month_range

log = logging.getLogger(__name__)

DEFAULT_RHO_GRID: tuple[float, ...] = tuple(np.round(np.arange(-0.99, 0.99 + 1e-9, 0.01), 2).tolist())
CERT_TOLERANCE = 1e-6
COND_WARN = 1e10


def conversion_matrix(n_years: int, rule: ConversionRule | str) -> np.ndarray:
    """Block-diagonal ``n_years x 12*n_years`` aggregation matrix."""
    if n_years < 1:
        raise DomainError("n_years must be >= 1")
    rule = ConversionRule(rule)
    w = 1.0 if rule is ConversionRule.SUM else 1.0 / 12.0
    return np.kron(np.eye(n_years), np.full((1, 12), w))


def ar1_covariance(n: int, rho: float, lags: np.ndarray | None = None) -> np.ndarray:
    """Stationary AR(1) covariance with unit innovation variance."""
    if lags is None:
        lags = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    powers = np.power(rho, np.arange(n, dtype=float)) / (1.0 - rho * rho)
    return powers[lags]


@dataclass(frozen=True)
class DisaggProblem:
    """Annual target, aligned monthly indicators and aggregation rule.

    ``indicators`` has ``12 * len(annual_target)`` rows, one column per
    indicator; the intercept is added by the fitter.
    """

    annual_target: Series
    indicators: np.ndarray
    rule: ConversionRule = ConversionRule.AVERAGE
    rho_grid: tuple[float, ...] = DEFAULT_RHO_GRID
    indicator_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.annual_target.is_annual:
            raise FrequencyError("annual_target must be an annual series")
        if not self.annual_target.is_contiguous():
            raise DomainError("annual_target must cover consecutive years")
        x = np.asarray(self.indicators, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        object.__setattr__(self, "indicators", x)
        object.__setattr__(self, "rule", ConversionRule(self.rule))
        n = len(self.annual_target)
        if n < 1:
            raise DomainError("annual_target is empty")
        if x.shape[0] != 12 * n:
            raise DomainError(f"indicators need {12 * n} monthly rows, got {x.shape[0]}")
        if not np.all(np.isfinite(x)):
            raise DomainError("indicators contain missing or non-finite values")
        grid = tuple(float(r) for r in self.rho_grid)
        if not grid or any(not -0.99 <= r <= 0.99 for r in grid):
            raise DomainError("rho grid values must lie in [-0.99, 0.99]")
        object.__setattr__(self, "rho_grid", grid)

    @classmethod
    def from_series(
        cls,
        annual_target: Series,
        indicators: Mapping[str, Series],
        rule: ConversionRule | str = ConversionRule.AVERAGE,
        rho_grid: Sequence[float] = DEFAULT_RHO_GRID,
    ) -> DisaggProblem:
        """Align monthly indicator series to the years of ``annual_target``."""
        months = self_months(annual_target)
        names = tuple(sorted(indicators))
        cols = []
        for name in names:
            s = indicators[name]
            vals = [s.get(k) for k in months]
            missing = [str(k) for k, v in zip(months, vals) if v is None]
            if missing:
                raise DomainError(f"indicator {name!r} misses months {missing[:3]}{'...' if len(missing) > 3 else ''}")
            cols.append(vals)
        x = np.array(cols, dtype=float).T if cols else np.zeros((len(months), 0))
        return cls(annual_target, x, ConversionRule(rule), tuple(rho_grid), names)

    @property
    def months(self) -> list[MonthKey]:
        return self_months(self.annual_target)


def self_months(annual: Series) -> list[MonthKey]:
    years = annual.years()
    return month_range(MonthKey(years[0], 1), MonthKey(years[-1], 12)) if years else []


@dataclass(frozen=True)
class ChowLinFit:
    beta: np.ndarray
    rho: float
    sigma2: float
    loglik: float
    distribution: Series
    loglik_grid: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))
    kept_columns: tuple[int, ...] = ()
    condition_number: float = float("nan")
    certificate: float | None = None


def _design(problem: DisaggProblem) -> tuple[np.ndarray, tuple[int, ...]]:
    x = problem.indicators
    # constant indicators are collinear with the intercept and carry no intra-year signal
    keep = tuple(j for j in range(x.shape[1]) if np.ptp(x[:, j]) > 1e-12 * max(1.0, np.abs(x[:, j]).max()))
    design = np.column_stack([np.ones(x.shape[0])] + [x[:, j] for j in keep])
    return design, keep


def _profile(c, X, y, rho, lags):
    """GLS fit at one rho. Returns (beta, sigma2, loglik, sigma_ct, cho, resid, xtwx)."""
    n = len(y)
    sigma = ar1_covariance(X.shape[0], rho, lags)
    sigma_ct = sigma @ c.T
    sigma_l = c @ sigma_ct
    try:
        cho = sla.cho_factor(sigma_l, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"aggregated covariance not positive definite at rho={rho}") from exc
    cx = c @ X
    # whitened least squares: QR keeps the conditioning of cx instead of squaring it
    a = sla.solve_triangular(cho[0], cx, lower=True, check_finite=False)
    b = sla.solve_triangular(cho[0], y, lower=True, check_finite=False)
    beta = np.linalg.lstsq(a, b, rcond=None)[0]
    xtwx = a.T @ a
    resid = y - cx @ beta
    q = float(resid @ sla.cho_solve(cho, resid))
    sigma2 = max(q / n, np.finfo(float).tiny)
    logdet = 2.0 * float(np.sum(np.log(np.diag(cho[0]))))
    loglik = -0.5 * n * (np.log(2 * np.pi) + np.log(sigma2) + 1.0) - 0.5 * logdet
    return beta, sigma2, loglik, sigma_ct, cho, resid, xtwx


def chowlin_fit(problem: DisaggProblem) -> ChowLinFit:
    """Maximum-likelihood Chow-Lin fit over ``problem.rho_grid``.

    The monthly path is ``X b + S C' (C S C')^-1 (y - C X b)`` at the selected
    rho, which re-aggregates to the annual target exactly.
    """
    y = np.asarray(problem.annual_target.values, dtype=float)
    n = len(y)
    if n < 3:
        log.info("Chow-Lin with %d annual observation(s); rho is weakly identified", n)
    X, keep = _design(problem)
    c = conversion_matrix(n, problem.rule)
    cx = c @ X
    if np.linalg.matrix_rank(cx) < X.shape[1]:
        raise RankError(f"aggregated design has rank < {X.shape[1]} (n_years={n})")

    lags = np.abs(np.subtract.outer(np.arange(12 * n), np.arange(12 * n)))
    lls = np.full(len(problem.rho_grid), -np.inf)
    best = None
    for i, rho in enumerate(problem.rho_grid):
        try:
            res = _profile(c, X, y, rho, lags)
        except (NumericalError, np.linalg.LinAlgError):
            continue
        lls[i] = res[2]
        if np.isfinite(res[2]) and (best is None or res[2] > best[1][2]):
            best = (rho, res)
    if best is None:
        raise NumericalError("likelihood non-finite for every rho", diagnostics={"rho_grid": problem.rho_grid})
    rho, (beta, sigma2, loglik, sigma_ct, cho, resid, xtwx) = best
    cond = float(np.linalg.cond(xtwx))
    if cond > COND_WARN:
        log.warning("Chow-Lin GLS system is ill-conditioned (cond=%.3g)", cond)
    path = X @ beta + sigma_ct @ sla.cho_solve(cho, resid)
    dist = Series.from_arrays(Frequency.MONTHLY, problem.months, path, meta={"method": "chow-lin", "rho": rho})
    full_beta = np.full(problem.indicators.shape[1] + 1, 0.0)
    full_beta[0] = beta[0]
    for j, col in enumerate(keep):
        full_beta[col + 1] = beta[j + 1]
    return ChowLinFit(
        beta=full_beta,
        rho=float(rho),
        sigma2=float(sigma2),
        loglik=float(loglik),
        distribution=dist,
        loglik_grid=lls,
        kept_columns=keep,
        condition_number=cond,
    )


def aggregation_deviation(monthly: np.ndarray, annual: np.ndarray, rule: ConversionRule) -> float:
    """``max|C m - y| / max|y|`` (absolute when the target is all zeros)."""
    c = conversion_matrix(len(annual), rule)
    scale = np.max(np.abs(annual))
    dev = np.max(np.abs(c @ monthly - annual))
    return float(dev / scale) if scale > 0 else float(dev)


def distribute(fit: ChowLinFit, problem: DisaggProblem, tolerance: float = CERT_TOLERANCE) -> Series:
    """Return the fitted monthly path after certifying it re-aggregates to the target."""
    monthly = np.asarray(fit.distribution.values, dtype=float)
    if monthly.shape[0] != 12 * len(problem.annual_target):
        raise CertificationError("distribution length does not match the problem")
    dev = aggregation_deviation(monthly, np.asarray(problem.annual_target.values), problem.rule)
    if not dev <= tolerance:
        raise CertificationError(f"re-aggregation deviation {dev:.3g} exceeds {tolerance:g}", deviation=dev)
    return fit.distribution.with_meta(aggregation_deviation=dev)


def disaggregate(problem: DisaggProblem) -> tuple[ChowLinFit, Series]:
    fit = chowlin_fit(problem)
    series = distribute(fit, problem)
    return replace(fit, certificate=series.meta["aggregation_deviation"]), series


def denton_pfd(annual_target: Series, indicator: Series, rule: ConversionRule | str = ConversionRule.SUM) -> Series:
    """Proportional first-difference Denton benchmarking.

    Minimises the squared changes of ``benchmarked / indicator`` between
    consecutive months subject to exact annual aggregation, via the sparse
    KKT system.
    """
    rule = ConversionRule(rule)
    if not annual_target.is_annual:
        raise FrequencyError("annual_target must be annual")
    months = self_months(annual_target)
    vals = [indicator.get(k) for k in months]
    if any(v is None for v in vals):
        raise DomainError("indicator must cover every month of the target years")
    x = np.array(vals, dtype=float)
    if np.any(x <= 0):
        raise DomainError("Denton PFD requires a strictly positive indicator")
    y = np.asarray(annual_target.values, dtype=float)
    n, T = len(y), len(x)
    c = sp.csr_matrix(conversion_matrix(n, rule))
    diff = sp.diags([-np.ones(T - 1), np.ones(T - 1)], [0, 1], shape=(T - 1, T))
    q = (diff.T @ diff).tocsc()
    a = c @ sp.diags(x)
    kkt = sp.bmat([[q, a.T], [a, None]], format="csc")
    rhs = np.concatenate([np.zeros(T), y])
    sol = spla.spsolve(kkt, rhs)
    ratio = sol[:T]
    out = x * ratio
    dev = aggregation_deviation(out, y, rule)
    return Series.from_arrays(Frequency.MONTHLY, months, out, meta={"method": "denton-pfd", "aggregation_deviation": dev})


# --------------------------------------------------------------------------- indicator selection


@dataclass(frozen=True)
class DisaggBase:
    """A disaggregation problem without its indicators."""

    annual_target: Series
    rule: ConversionRule = ConversionRule.AVERAGE
    rho_grid: tuple[float, ...] = DEFAULT_RHO_GRID


def relative_rmse(estimate: Series, benchmark: Series, min_overlap: int = 12) -> float:
    keys = sorted(set(estimate.keys) & set(benchmark.keys))
    if len(keys) < min_overlap:
        raise OverlapError(f"only {len(keys)} overlapping months (need {min_overlap})")
    e = np.array([estimate[k] for k in keys])
    b = np.array([benchmark[k] for k in keys])
    mean = b.mean()
    if mean == 0:
        raise DomainError("benchmark mean is zero")
    return float(np.sqrt(np.mean((e - b) ** 2)) / abs(mean))


def select_indicator(
    base: DisaggBase, candidates: Mapping[str, Series], benchmark: Series, min_overlap: int = 12
) -> tuple[str, dict[str, float]]:
    """Pick the candidate whose disaggregation best tracks ``benchmark``.

    The score is RMSE over the overlap divided by the benchmark mean. Ties go
    to the candidate whose name sorts first.
    """
    if not candidates:
        raise DomainError("no candidate indicators")
    table: dict[str, float] = {}
    for name in sorted(candidates):
        problem = DisaggProblem.from_series(base.annual_target, {name: candidates[name]}, base.rule, base.rho_grid)
        _, monthly = disaggregate(problem)
        table[name] = relative_rmse(monthly, benchmark, min_overlap)
    best = min(sorted(table), key=lambda k: table[k])
    return best, table


def rmse_table_csv(tables: Mapping[str, Mapping[str, float]]) -> str:
    """Ratio-by-indicator relative-RMSE table with a best-indicator column."""
    indicators = sorted({name for t in tables.values() for name in t})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["ratio", *indicators, "best_indicator"])
    for ratio in sorted(tables):
        t = tables[ratio]
        best = min(sorted(t), key=lambda k: t[k])
        w.writerow([ratio, *(f"{t[i]:.6g}" if i in t else "" for i in indicators), best])
    return buf.getvalue()
