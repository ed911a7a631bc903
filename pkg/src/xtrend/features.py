"""Model input features: normalized multi-horizon returns and MACD indicators.

The feature vector has a fixed 8-column layout:
    [nr1, nr21, nr63, nr126, nr252, macd_8_24, macd_16_28, macd_32_96]
where nr{h} is the h-day return normalized by sigma_t * sqrt(h) and the MACD
columns are normalized moving-average crossover indicators at the three
conventional (short, long) timescale pairs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientHistoryError, ValidationError
from .market_data import FEATURE_WARMUP_DAYS, PriceSeries, ReturnsSeries

RETURN_HORIZONS = (1, 21, 63, 126, 252)
MACD_SPECS = ((8, 24), (16, 28), (32, 96))
FEATURE_NAMES = tuple(
    [f"nr{h}" for h in RETURN_HORIZONS] + [f"macd_{s}_{l}" for s, l in MACD_SPECS]
)
N_FEATURES = len(FEATURE_NAMES)

#: Rolling window (days) for the MACD price normalizer; 63 trading days is a
#: quarter. Exposed as a knob because the convention varies by one line of
#: history in the source material.
MACD_PRICE_STD_WINDOW = 63
MACD_SIGNAL_STD_WINDOW = 252
ROLLING_STD_MIN_OBS = 10
_STD_FLOOR = 1e-12


@dataclass(frozen=True)
class MacdSpec:
    short: int
    long: int

    def __post_init__(self):
        if not (1 < self.short < self.long):
            raise ValidationError(f"need 1 < short < long, got {self.short}, {self.long}")


def ewma(series: np.ndarray, timescale: float) -> np.ndarray:
    """EWMA with decay (1 - 1/timescale), initialized at the first observation."""
    if timescale <= 1:
        raise ValidationError("timescale must exceed 1")
    x = np.asarray(series, dtype=np.float64)
    if x.size == 0:
        raise ValidationError("empty series")
    decay = 1.0 - 1.0 / timescale
    out = np.empty_like(x)
    out[0] = x[0]
    for i in range(1, len(x)):
        out[i] = decay * out[i - 1] + (1.0 - decay) * x[i]
    return out


def rolling_std(x: np.ndarray, window: int, min_obs: int = ROLLING_STD_MIN_OBS) -> np.ndarray:
    """Trailing rolling std (n-1 denominator); shorter warm-up windows use all
    available points with a minimum of `min_obs` (NaN before that)."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    out = np.full(n, np.nan)
    csum = np.concatenate(([0.0], np.cumsum(x)))
    csum2 = np.concatenate(([0.0], np.cumsum(x * x)))
    for i in range(n):
        lo = max(0, i - window + 1)
        m = i - lo + 1
        if m < min_obs:
            continue
        s = csum[i + 1] - csum[lo]
        s2 = csum2[i + 1] - csum2[lo]
        var = (s2 - s * s / m) / (m - 1)
        out[i] = np.sqrt(max(var, 0.0))
    return out


def macd_series(p: PriceSeries, spec: MacdSpec) -> np.ndarray:
    """Normalized MACD over the whole series (NaN where undefined).

    m_t = (EWMA(p, S) - EWMA(p, L)) / rolling_std(p, 63); the indicator is
    m_t / rolling_std(m, 252). Zero stds are floored at 1e-12.
    """
    close = p.close
    fast = ewma(close, spec.short)
    slow = ewma(close, spec.long)
    price_std = rolling_std(close, MACD_PRICE_STD_WINDOW)
    m = (fast - slow) / np.maximum(price_std, _STD_FLOOR)
    # m is NaN exactly while price_std is warming up; the signal std ignores
    # that prefix so its own min-obs count starts at the first valid m.
    first_m = int(np.argmax(~np.isnan(m))) if np.any(~np.isnan(m)) else len(m)
    m_std = _rolling_std_nanaware(m, MACD_SIGNAL_STD_WINDOW, first_m)
    out = m / np.maximum(m_std, _STD_FLOOR)
    out[np.isnan(m_std)] = np.nan
    return out


def _rolling_std_nanaware(x: np.ndarray, window: int, first_valid: int) -> np.ndarray:
    """Rolling std ignoring the NaN prefix before `first_valid`."""
    n = len(x)
    out = np.full(n, np.nan)
    if first_valid >= n:
        return out
    tail = rolling_std(x[first_valid:], window)
    out[first_valid:] = tail
    return out


def macd_indicator(p: PriceSeries, spec: MacdSpec, t: int) -> float:
    """Normalized MACD at index `t`; requires >= 252 prior observations."""
    if t < FEATURE_WARMUP_DAYS:
        raise InsufficientHistoryError(
            f"{p.ticker}: MACD at index {t} needs {FEATURE_WARMUP_DAYS} prior days"
        )
    return float(macd_series(p, spec)[t])


def response_function(y: float) -> float:
    """Map a MACD-style signal to a position: y * exp(-y^2/4) / 0.89."""
    y = np.asarray(y, dtype=np.float64)
    out = y * np.exp(-(y**2) / 4.0) / 0.89
    return out if out.ndim else float(out)


def normalized_return(r_window: float, sigma_t: float, horizon: int) -> float:
    """Return over `horizon` days normalized to daily-vol units: r / (sigma * sqrt(h))."""
    return float(r_window / (sigma_t * np.sqrt(horizon)))


@dataclass(frozen=True)
class FeatureMatrix:
    """Per-date feature rows for one asset (fixed 8-column layout)."""

    ticker: str
    dates: np.ndarray          # datetime64[D], one per row
    values: np.ndarray         # (n, 8) float64
    price_index: np.ndarray    # row -> index into the source PriceSeries

    def __len__(self) -> int:
        return len(self.dates)


def build_feature_matrix(p: PriceSeries, r: ReturnsSeries) -> FeatureMatrix:
    """Assemble the 8-feature input rows for every eligible date.

    Rows start after the 252-day warm-up so every momentum horizon and the
    MACD normalizers are fully formed. Raises if any emitted entry is
    non-finite, identifying the date and feature.
    """
    n = len(p)
    if n < FEATURE_WARMUP_DAYS + 1:
        raise InsufficientHistoryError(
            f"{p.ticker}: need more than {FEATURE_WARMUP_DAYS} days, have {n}"
        )
    # sigma aligned to price index: sigma at price index i is r.sigma[i-1]
    sigma = np.full(n, np.nan)
    sigma[1:] = r.sigma

    start = FEATURE_WARMUP_DAYS
    idx = np.arange(start, n)
    cols = []
    for h in RETURN_HORIZONS:
        ret = p.close[idx] / p.close[idx - h] - 1.0
        cols.append(ret / (sigma[idx] * np.sqrt(h)))
    for s, l in MACD_SPECS:
        cols.append(macd_series(p, MacdSpec(s, l))[idx])
    values = np.stack(cols, axis=1)
    bad = ~np.isfinite(values)
    if np.any(bad):
        i, j = np.argwhere(bad)[0]
        raise ValidationError(
            f"{p.ticker}: non-finite feature {FEATURE_NAMES[j]} at {p.dates[idx[i]]}"
        )
    values.flags.writeable = False
    return FeatureMatrix(p.ticker, p.dates[idx], values, idx)
