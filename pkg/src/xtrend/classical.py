"""Reference strategies (Long, TSMOM, blended, MACD), portfolio construction
with volatility targeting, and the performance metrics shared by every
strategy in the engine.

Position/return timing convention: a position decided at date t (using data
up to and including t) is credited with the asset return realized at the next
date in the series. The annualized volatility target is converted to daily
units inside the leverage factor, so a well-estimated ex-ante vol makes the
realized per-asset strategy vol come out near the target.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .features import MACD_SPECS, MacdSpec, macd_series, response_function
from .market_data import (
    SIGMA_TGT_DEFAULT,
    TRADING_DAYS_PER_YEAR,
    PriceSeries,
    ReturnsSeries,
)

BLENDED_HORIZONS = (21, 63, 126, 252)


@dataclass(frozen=True)
class PositionSeries:
    """Daily positions z_t in [-1, 1] for one asset."""

    ticker: str
    dates: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=np.float64)
        if np.any(np.abs(z) > 1.0 + 1e-12):
            raise ValidationError(f"{self.ticker}: |z| > 1")
        object.__setattr__(self, "dates", np.asarray(self.dates, dtype="datetime64[D]"))
        object.__setattr__(self, "z", z)

    def __len__(self) -> int:
        return len(self.dates)


@dataclass(frozen=True)
class PortfolioParams:
    sigma_tgt: float = SIGMA_TGT_DEFAULT  # annualized
    cost: float = 0.0                     # per-asset transaction cost C

    def __post_init__(self):
        if self.sigma_tgt <= 0:
            raise ValidationError("sigma_tgt must be positive")
        if self.cost < 0:
            raise ValidationError("cost must be non-negative")


def long_signal(ticker: str, dates: np.ndarray) -> PositionSeries:
    """Full long position at every date."""
    return PositionSeries(ticker, dates, np.ones(len(dates)))


def _compound(r: np.ndarray, horizon: int) -> np.ndarray:
    """Trailing compound return over `horizon` daily returns (NaN in warm-up)."""
    log1p = np.log1p(r)
    c = np.concatenate(([0.0], np.cumsum(log1p)))
    out = np.full(len(r), np.nan)
    out[horizon - 1:] = np.expm1(c[horizon:] - c[:-horizon])
    return out


def tsmom_signal(r: ReturnsSeries, horizon: int = 252) -> PositionSeries:
    """Sign of the trailing `horizon`-day return; dates without history skipped."""
    comp = _compound(r.r, horizon)
    valid = ~np.isnan(comp)
    return PositionSeries(r.ticker, r.dates[valid], np.sign(comp[valid]))


def blended_tsmom_signal(
    r: ReturnsSeries, weights: dict[int, float] | None = None
) -> PositionSeries:
    """Weighted sum of momentum signs over several horizons, clipped to [-1, 1]."""
    if weights is None:
        weights = {h: 0.25 for h in BLENDED_HORIZONS}
    for h, w in weights.items():
        if not 0.0 <= w <= 1.0:
            raise ValidationError(f"weight for horizon {h} outside [0, 1]")
    horizons = sorted(weights)
    signals = {h: _compound(r.r, h) for h in horizons}
    valid = ~np.isnan(signals[max(horizons)])
    z = np.zeros(int(valid.sum()))
    for h in horizons:
        z += weights[h] * np.sign(signals[h][valid])
    return PositionSeries(r.ticker, r.dates[valid], np.clip(z, -1.0, 1.0))


def macd_signal(p: PriceSeries) -> PositionSeries:
    """Mean response-function position over the three MACD timescale pairs."""
    indicators = np.stack(
        [macd_series(p, MacdSpec(s, l)) for s, l in MACD_SPECS], axis=1
    )
    positions = response_function(indicators).mean(axis=1)
    valid = ~np.isnan(positions)
    return PositionSeries(p.ticker, p.dates[valid], positions[valid])


@dataclass(frozen=True)
class PortfolioReturns:
    """Daily portfolio returns (mean over assets active that day)."""

    dates: np.ndarray
    values: np.ndarray
    n_assets: np.ndarray  # contributors per day


def portfolio_returns(
    positions: dict[str, PositionSeries],
    returns: dict[str, ReturnsSeries],
    params: PortfolioParams = PortfolioParams(),
) -> PortfolioReturns:
    """Volatility-targeted portfolio returns with a strict one-day lag.

    Per asset: R_{t+1} = z_t * (tgt_daily / sigma_t) * r_{t+1}
                         - cost * tgt_daily * |z_t/sigma_t - z_{t-1}/sigma_{t-1}|
    and the portfolio return at t+1 averages over assets with a valid
    position, sigma and next-day return. Days with no active asset are
    dropped.
    """
    tgt_daily = params.sigma_tgt / math.sqrt(TRADING_DAYS_PER_YEAR)
    buckets: dict[np.datetime64, list[float]] = {}
    for ticker, pos in positions.items():
        r = returns[ticker]
        date_to_idx = {d: i for i, d in enumerate(r.dates)}
        prev_scaled = 0.0  # z_{t-1} / sigma_{t-1}, starting flat
        for date, z in zip(pos.dates, pos.z):
            i = date_to_idx.get(date)
            if i is None or i + 1 >= len(r):
                continue
            sigma = r.sigma[i]
            if np.isnan(sigma):
                continue
            scaled = z / sigma
            ret = scaled * tgt_daily * r.r[i + 1]
            if params.cost > 0.0:
                ret -= params.cost * tgt_daily * abs(scaled - prev_scaled)
            prev_scaled = scaled
            buckets.setdefault(r.dates[i + 1], []).append(ret)
    if not buckets:
        return PortfolioReturns(
            np.array([], dtype="datetime64[D]"), np.array([]), np.array([], dtype=int)
        )
    dates = np.array(sorted(buckets), dtype="datetime64[D]")
    values = np.array([float(np.mean(buckets[d])) for d in dates])
    counts = np.array([len(buckets[d]) for d in dates])
    return PortfolioReturns(dates, values, counts)


def annualized_sharpe(daily: np.ndarray) -> float:
    """sqrt(252) * mean / std with the population std convention.

    A zero-std series returns signed infinity (0.0 when the mean is also
    zero) rather than NaN, as an explicit out-of-band value.
    """
    daily = np.asarray(daily, dtype=np.float64)
    if len(daily) < 2:
        raise ValidationError("need at least 2 observations")
    mean = float(np.mean(daily))
    std = float(np.std(daily))
    # a constant series leaves rounding residue in std; treat it as zero
    if std <= abs(mean) * 1e-12:
        return math.copysign(math.inf, mean) if mean != 0.0 else 0.0
    return math.sqrt(TRADING_DAYS_PER_YEAR) * mean / std


def max_drawdown(equity: np.ndarray) -> tuple[float, int]:
    """Maximum peak-to-trough fraction and longest peak-to-recovery duration.

    An unrecovered drawdown at the end of the series counts its duration up
    to the final observation.
    """
    eq = np.asarray(equity, dtype=np.float64)
    if np.any(eq <= 0):
        raise ValidationError("equity must be positive")
    peak_idx = 0
    mdd = 0.0
    longest = 0
    for i in range(1, len(eq)):
        if eq[i] >= eq[peak_idx]:
            longest = max(longest, i - peak_idx if eq[i - 1] < eq[peak_idx] else 0)
            peak_idx = i
        else:
            mdd = max(mdd, 1.0 - eq[i] / eq[peak_idx])
            longest = max(longest, i - peak_idx)
    return mdd, longest


def rescale_to_target_vol(daily: np.ndarray, target: float = SIGMA_TGT_DEFAULT) -> np.ndarray:
    """Ex-post scaling of a daily return series to an annualized target vol.

    Reporting-only convenience (Sharpe is invariant under it).
    """
    daily = np.asarray(daily, dtype=np.float64)
    realized = float(np.std(daily)) * math.sqrt(TRADING_DAYS_PER_YEAR)
    if realized == 0.0:
        raise ValidationError("cannot rescale a zero-volatility series")
    return daily * (target / realized)


@dataclass(frozen=True)
class StrategyReport:
    dates: np.ndarray
    daily_returns: np.ndarray
    equity_curve: np.ndarray = field(init=False)
    annualized_sharpe: float = field(init=False)
    max_drawdown: float = field(init=False)
    drawdown_days: int = field(init=False)

    def __post_init__(self):
        dr = np.asarray(self.daily_returns, dtype=np.float64)
        equity = np.cumprod(1.0 + dr)
        mdd, days = max_drawdown(equity)
        object.__setattr__(self, "daily_returns", dr)
        object.__setattr__(self, "equity_curve", equity)
        object.__setattr__(self, "annualized_sharpe", annualized_sharpe(dr))
        object.__setattr__(self, "max_drawdown", mdd)
        object.__setattr__(self, "drawdown_days", days)

    @property
    def n_days(self) -> int:
        return len(self.daily_returns)

    def to_dict(self) -> dict:
        return {
            "sharpe": self.annualized_sharpe,
            "mdd": self.max_drawdown,
            "mdd_days": int(self.drawdown_days),
            "n_days": int(self.n_days),
        }
