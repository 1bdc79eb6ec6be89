"""Interpolation and smoothing primitives.

Anchors are placed on the month axis at their own keys (annual anchors sit
on December), so a grid must stay inside the anchor span.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import (
    DegenerateError,
    DomainError,
    ExtrapolationError,
    FrequencyError,
    InsufficientDataError,
    WindowError,
)
from .panel import Frequency, MonthKey, Series

_MIN_ANCHORS = {"akima": 5, "pchip": 3, "linear": 2}


class InterpMethod(str, Enum):
    AKIMA = "akima"
    PCHIP = "pchip"
    LINEAR = "linear"


@dataclass(frozen=True)
class SmoothSpec:
    window: int = 13
    edge_rule: str = "nearest-fill"

    def __post_init__(self) -> None:
        if self.window < 1 or self.window % 2 == 0:
            raise WindowError(f"window must be an odd integer >= 1, got {self.window}")
        if self.edge_rule != "nearest-fill":
            raise DomainError(f"unsupported edge rule {self.edge_rule!r}")


# --------------------------------------------------------------------------- Hermite


def _secants(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    h = np.diff(x)
    return h, np.diff(y) / h


def akima_slopes(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Node derivatives from Akima's 1970 weighting.

    Two ghost secants are extrapolated linearly at each end. When both weights
    vanish the derivative is the mean of the two adjacent secants.
    """
    _, m = _secants(x, y)
    n = len(m)
    mm = np.empty(n + 4)
    mm[2:-2] = m
    mm[1] = 2.0 * mm[2] - mm[3]
    mm[0] = 2.0 * mm[1] - mm[2]
    mm[-2] = 2.0 * mm[-3] - mm[-4]
    mm[-1] = 2.0 * mm[-2] - mm[-3]
    dm = np.abs(np.diff(mm))
    w1 = dm[2:]  # |m_{i+1} - m_i|
    w2 = dm[:-2]  # |m_{i-1} - m_{i-2}|
    left, right = mm[1:-2], mm[2:-1]  # m_{i-1}, m_i
    denom = w1 + w2
    # weights vanish (locally collinear points): fall back to the secant mean
    safe = denom > 1e-9 * denom.max() if denom.max() > 0 else np.zeros_like(denom, dtype=bool)
    return np.where(safe, (w1 * left + w2 * right) / np.where(safe, denom, 1.0), 0.5 * (left + right))


def pchip_slopes(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Shape-preserving node derivatives (Fritsch–Carlson with Brodlie weights).

    Interior derivatives are weighted harmonic means of neighbouring secants
    and vanish at local extrema; end derivatives use the one-sided three-point
    formula limited to keep monotonicity.
    """
    h, m = _secants(x, y)
    n = len(x)
    d = np.zeros(n)
    if n == 2:
        d[:] = m[0]
        return d
    for k in range(1, n - 1):
        if m[k - 1] * m[k] <= 0:
            d[k] = 0.0
        else:
            w1 = 2 * h[k] + h[k - 1]
            w2 = h[k] + 2 * h[k - 1]
            d[k] = (w1 + w2) / (w1 / m[k - 1] + w2 / m[k])
    d[0] = _pchip_end(h[0], h[1], m[0], m[1])
    d[-1] = _pchip_end(h[-1], h[-2], m[-1], m[-2])
    return d


def _pchip_end(h0: float, h1: float, m0: float, m1: float) -> float:
    d = ((2 * h0 + h1) * m0 - h0 * m1) / (h0 + h1)
    if np.sign(d) != np.sign(m0):
        return 0.0
    if np.sign(m0) != np.sign(m1) and abs(d) > abs(3 * m0):
        return 3 * m0
    return d


def hermite_eval(x: np.ndarray, y: np.ndarray, d: np.ndarray, xq: np.ndarray) -> np.ndarray:
    """Evaluate the piecewise cubic Hermite interpolant at ``xq`` (inside ``[x0, xn]``)."""
    idx = np.clip(np.searchsorted(x, xq, side="right") - 1, 0, len(x) - 2)
    x0, x1 = x[idx], x[idx + 1]
    h = x1 - x0
    t = (xq - x0) / h
    t2, t3 = t * t, t * t * t
    h00 = 2 * t3 - 3 * t2 + 1
    h10 = t3 - 2 * t2 + t
    h01 = -2 * t3 + 3 * t2
    h11 = t3 - t2
    out = h00 * y[idx] + h10 * h * d[idx] + h01 * y[idx + 1] + h11 * h * d[idx + 1]
    # reproduce anchors bit-exactly
    hit = np.searchsorted(x, xq)
    hit = np.clip(hit, 0, len(x) - 1)
    exact = x[hit] == xq
    out[exact] = y[hit[exact]]
    return out


def interpolate_values(x, y, xq, method: InterpMethod | str) -> tuple[np.ndarray, InterpMethod]:
    """Array-level interpolation with graceful degradation on few anchors."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xq = np.asarray(xq, dtype=float)
    method = InterpMethod(method)
    if len(x) < 2:
        raise InsufficientDataError("interpolation needs at least 2 anchors")
    if np.any(np.diff(x) <= 0):
        raise DomainError("anchor positions must be strictly increasing")
    if xq.size and (xq.min() < x[0] or xq.max() > x[-1]):
        raise ExtrapolationError("grid extends beyond the anchor span")
    used = method
    for candidate in (InterpMethod.AKIMA, InterpMethod.PCHIP, InterpMethod.LINEAR):
        if used is candidate and len(x) < _MIN_ANCHORS[candidate.value]:
            used = InterpMethod.PCHIP if candidate is InterpMethod.AKIMA else InterpMethod.LINEAR
    if used is InterpMethod.LINEAR:
        return np.interp(xq, x, y), used
    d = akima_slopes(x, y) if used is InterpMethod.AKIMA else pchip_slopes(x, y)
    return hermite_eval(x, y, d, xq), used


def interpolate(anchors: Series, grid: list[MonthKey], method: InterpMethod | str = InterpMethod.AKIMA) -> Series:
    """Monthly series through ``anchors`` on ``grid``.

    Akima needs 5 anchors and PCHIP 3; with fewer the method degrades (Akima to
    PCHIP to linear) and the method actually used is stored in
    ``meta["method"]``.
    """
    method = InterpMethod(method)
    grid = sorted(grid)
    values, used = interpolate_values(anchors.ordinals, anchors.values, [k.ordinal for k in grid], method)
    meta = {"method": used.value, "requested_method": method.value}
    return Series.from_arrays(Frequency.MONTHLY, grid, values, meta)


# --------------------------------------------------------------------------- smoothing


def _require_monthly_contiguous(series: Series, what: str) -> None:
    if series.is_annual:
        raise FrequencyError(f"{what} expects a monthly series")
    if not series.is_contiguous():
        raise DomainError(f"{what} expects a series without gaps")


def centered_mean(values: np.ndarray, window: int) -> np.ndarray:
    """Centered moving mean with nearest-value fill at both edges."""
    n = len(values)
    if window > n:
        raise WindowError(f"window {window} exceeds series length {n}")
    half = window // 2
    inner = np.lib.stride_tricks.sliding_window_view(values, window).mean(axis=1)
    out = np.empty(n)
    out[half : n - half] = inner
    out[:half] = inner[0]
    out[n - half :] = inner[-1]
    return out


def moving_average(series: Series, spec: SmoothSpec = SmoothSpec()) -> Series:
    _require_monthly_contiguous(series, "moving_average")
    return series.with_values(centered_mean(np.asarray(series.values), spec.window))


def type7_quantile(values, q):
    """Quantile by linear interpolation between order statistics."""
    return np.quantile(np.asarray(values, dtype=float), q, method="linear")


def winsorize(values, alpha: float = 0.01) -> np.ndarray:
    """Clamp to the ``alpha`` and ``1 - alpha`` quantiles, keeping input order."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise DomainError("winsorize needs a nonempty input")
    if not 0 <= alpha < 0.5:
        raise DomainError("alpha must be in [0, 0.5)")
    if alpha == 0:
        return arr.copy()
    lo, hi = type7_quantile(arr, [alpha, 1 - alpha])
    return np.clip(arr, lo, hi)


def lower_median(values) -> float:
    return float(np.quantile(np.asarray(values, dtype=float), 0.5, method="lower"))


def participation_rescale(series: Series, reference_ratio: Series, stable_span: tuple[MonthKey, MonthKey]) -> Series:
    """Rescale ``series`` so its median over ``stable_span`` matches the reference median."""
    start, end = stable_span
    s = series.between(start, end)
    r = reference_ratio.between(start, end)
    if len(s) == 0 or len(r) == 0:
        raise DomainError("both series must cover the stable span")
    ref_med = lower_median(r.values)
    own_med = lower_median(s.values)
    if own_med == 0 or ref_med == 0:
        raise DegenerateError("zero median in the stable span")
    factor = ref_med / own_med
    return series.with_values(np.asarray(series.values) * factor, meta={**series.meta, "scale": factor})


# --------------------------------------------------------------------------- seasonal


@dataclass(frozen=True)
class SeasonalDecomposition:
    """Classical additive split ``x = trend + seasonal + irregular``.

    ``trend`` is the 2x12 centered mean shifted by the mean of the raw
    month-of-year effects, and is NaN on the six months at each edge.
    """

    adjusted: Series
    seasonal: Series
    trend: np.ndarray
    irregular: np.ndarray
    factors: np.ndarray  # 12 month-of-year effects, Jan..Dec, summing to zero


def _two_by_twelve(values: np.ndarray) -> np.ndarray:
    w = np.r_[0.5, np.ones(11), 0.5] / 12.0
    out = np.full(len(values), np.nan)
    out[6:-6] = np.convolve(values, w, mode="valid")
    return out


def seasonal_decompose(series: Series) -> SeasonalDecomposition:
    _require_monthly_contiguous(series, "seasonal_adjust")
    if len(series) < 24:
        raise InsufficientDataError("seasonal adjustment needs at least 24 months")
    x = np.asarray(series.values, dtype=float)
    months = np.array([k.month for k in series.keys])
    trend = _two_by_twelve(x)
    detr = x - trend
    raw = np.array([np.nanmean(detr[months == m]) for m in range(1, 13)])
    level = raw.mean()
    factors = raw - level
    seasonal = factors[months - 1]
    adjusted = x - seasonal
    trend_out = trend + level
    irregular = x - trend_out - seasonal
    return SeasonalDecomposition(
        adjusted=series.with_values(adjusted, meta={**series.meta, "seasonal_adjusted": True}),
        seasonal=series.with_values(seasonal, meta={}),
        trend=trend_out,
        irregular=irregular,
        factors=factors,
    )


def seasonal_adjust(series: Series) -> Series:
    """Remove month-of-year effects estimated against a 2x12 centered trend."""
    return seasonal_decompose(series).adjusted
