"""Price-series loading, returns, ex-ante volatility, splits, and synthetic data.

All series are immutable after construction (arrays are set read-only), so
they can be shared freely across workers. Dates are numpy ``datetime64[D]``.
"""
from __future__ import annotations

import csv
import datetime as _dt
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import yaml

from .errors import InsufficientHistoryError, ParseError, ValidationError

ASSET_CLASSES = ("CM", "EQ", "FI", "FX")

#: Annualized volatility target used for position sizing (fraction).
SIGMA_TGT_DEFAULT = 0.15
#: Daily ex-ante volatility floor.
SIGMA_FLOOR = 1e-4
#: EWM span for the ex-ante volatility estimator.
VOL_SPAN = 60
#: Minimum observations before the volatility estimate is emitted.
VOL_MIN_OBS = 10
#: Observed days excluded from target sampling (longest momentum horizon).
FEATURE_WARMUP_DAYS = 252

TRADING_DAYS_PER_YEAR = 252


@dataclass(frozen=True)
class AssetMeta:
    ticker: str
    name: str
    asset_class: str

    def __post_init__(self):
        if self.asset_class not in ASSET_CLASSES:
            raise ValidationError(
                f"unknown asset class {self.asset_class!r} for {self.ticker}"
            )


def load_universe(path=None) -> dict[str, AssetMeta]:
    """Load the asset-metadata catalog (bundled 50-contract universe by default).

    Returns a dict ticker -> AssetMeta. Entries may carry a ``group`` key
    (train/test) which is exposed via :func:`universe_groups`.
    """
    if path is None:
        text = resources.files("xtrend").joinpath("data/universe.yaml").read_text()
    else:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    raw = yaml.safe_load(text)
    catalog: dict[str, AssetMeta] = {}
    for entry in raw["assets"]:
        meta = AssetMeta(entry["ticker"], entry["name"], entry["asset_class"])
        if meta.ticker in catalog:
            raise ValidationError(f"duplicate ticker {meta.ticker} in universe")
        catalog[meta.ticker] = meta
    return catalog


def universe_groups(path=None) -> tuple[frozenset[str], frozenset[str]]:
    """Return the bundled (train, test) ticker groups of the universe file."""
    if path is None:
        text = resources.files("xtrend").joinpath("data/universe.yaml").read_text()
    else:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    raw = yaml.safe_load(text)
    train = frozenset(e["ticker"] for e in raw["assets"] if e.get("group") == "train")
    test = frozenset(e["ticker"] for e in raw["assets"] if e.get("group") == "test")
    return train, test


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class PriceSeries:
    """Daily close prices for one asset; dates strictly increasing, prices > 0."""

    ticker: str
    dates: np.ndarray  # datetime64[D]
    close: np.ndarray  # float64

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        close = np.asarray(self.close, dtype=np.float64)
        if dates.shape != close.shape or dates.ndim != 1:
            raise ValidationError(f"{self.ticker}: dates/close shape mismatch")
        if len(dates) > 1 and not np.all(dates[1:] > dates[:-1]):
            raise ValidationError(f"{self.ticker}: dates not strictly increasing")
        if not np.all(np.isfinite(close)) or np.any(close <= 0):
            raise ValidationError(f"{self.ticker}: prices must be finite and > 0")
        object.__setattr__(self, "dates", _freeze(dates))
        object.__setattr__(self, "close", _freeze(close))

    def __len__(self) -> int:
        return len(self.dates)


@dataclass(frozen=True)
class ReturnsSeries:
    """Daily simple returns and ex-ante volatility, aligned on dates.

    The first price date is dropped; ``sigma`` is NaN during the volatility
    warm-up and floored at SIGMA_FLOOR afterwards.
    """

    ticker: str
    dates: np.ndarray
    r: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        r = np.asarray(self.r, dtype=np.float64)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if not (dates.shape == r.shape == sigma.shape):
            raise ValidationError(f"{self.ticker}: returns fields misaligned")
        valid = ~np.isnan(sigma)
        if np.any(sigma[valid] < SIGMA_FLOOR):
            raise ValidationError(f"{self.ticker}: sigma below floor")
        for name, arr in (("dates", dates), ("r", r), ("sigma", sigma)):
            object.__setattr__(self, name, _freeze(arr))

    def __len__(self) -> int:
        return len(self.dates)


def load_price_csv(path, meta: dict[str, AssetMeta]) -> list[PriceSeries]:
    """Load a `date,ticker,close` CSV into one PriceSeries per ticker.

    Rows are sorted by date per ticker; unknown tickers, non-positive prices
    and duplicate (date, ticker) rows are rejected.
    """
    per_ticker: dict[str, dict[np.datetime64, float]] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["date", "ticker", "close"]:
            raise ParseError("expected header 'date,ticker,close'", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise ParseError(f"expected 3 fields, got {len(row)}", line=lineno)
            date_s, ticker, close_s = (f.strip() for f in row)
            try:
                date = np.datetime64(_dt.date.fromisoformat(date_s), "D")
            except ValueError:
                raise ParseError(f"bad date {date_s!r}", line=lineno) from None
            if ticker not in meta:
                raise ParseError(f"unknown ticker {ticker!r}", line=lineno)
            try:
                close = float(close_s)
            except ValueError:
                raise ParseError(f"bad price {close_s!r}", line=lineno) from None
            if not np.isfinite(close) or close <= 0:
                raise ValidationError(
                    f"line {lineno}: non-positive price {close} for {ticker}"
                )
            bucket = per_ticker.setdefault(ticker, {})
            if date in bucket:
                raise ValidationError(
                    f"line {lineno}: duplicate date {date_s} for {ticker}"
                )
            bucket[date] = close
    out = []
    for ticker in sorted(per_ticker):
        dates = np.array(sorted(per_ticker[ticker]), dtype="datetime64[D]")
        close = np.array([per_ticker[ticker][d] for d in dates])
        out.append(PriceSeries(ticker, dates, close))
    return out


def write_price_csv(path, series: list[PriceSeries]) -> None:
    """Write PriceSeries out in the canonical `date,ticker,close` schema."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date", "ticker", "close"])
        for p in series:
            for d, c in zip(p.dates, p.close):
                writer.writerow([str(d), p.ticker, f"{c:.10g}"])


def compute_return(p: PriceSeries, t: int, horizon: int) -> float:
    """Return over `horizon` days ending at index `t`: (p_t - p_{t-h}) / p_{t-h}."""
    if horizon <= 0:
        raise ValidationError("horizon must be positive")
    if t - horizon < 0 or t >= len(p):
        raise InsufficientHistoryError(
            f"{p.ticker}: return at index {t} needs {horizon} days of history"
        )
    prev = p.close[t - horizon]
    return float((p.close[t] - prev) / prev)


def ex_ante_volatility(
    r: np.ndarray,
    span: int = VOL_SPAN,
    sigma_floor: float = SIGMA_FLOOR,
    min_obs: int = VOL_MIN_OBS,
) -> np.ndarray:
    """Exponentially weighted moving std of daily returns.

    Weight on the observation `k` steps in the past is (1-alpha)^k with
    alpha = 2/(span+1); variance is the weighted population variance over the
    full history. The first `min_obs - 1` outputs are NaN; the rest are
    floored at `sigma_floor`.
    """
    r = np.asarray(r, dtype=np.float64)
    alpha = 2.0 / (span + 1.0)
    decay = 1.0 - alpha
    out = np.full(len(r), np.nan)
    w_sum = a_sum = b_sum = 0.0  # running sum of weights, w*x, w*x^2
    for i, x in enumerate(r):
        w_sum = 1.0 + decay * w_sum
        a_sum = x + decay * a_sum
        b_sum = x * x + decay * b_sum
        if i + 1 >= min_obs:
            mean = a_sum / w_sum
            var = b_sum / w_sum - mean * mean
            out[i] = max(np.sqrt(max(var, 0.0)), sigma_floor)
    return out


def compute_returns(p: PriceSeries) -> ReturnsSeries:
    """Daily returns and ex-ante volatility from a price series."""
    if len(p) < 2:
        raise InsufficientHistoryError(f"{p.ticker}: need at least 2 prices")
    r = p.close[1:] / p.close[:-1] - 1.0
    sigma = ex_ante_volatility(r)
    return ReturnsSeries(p.ticker, p.dates[1:], r, sigma)


def scaled_next_day_returns(
    r: ReturnsSeries, sigma_tgt: float = SIGMA_TGT_DEFAULT
) -> np.ndarray:
    """Volatility-scaled next-day return aligned to the decision date.

    Element t is (sigma_tgt_daily / sigma_t) * r_{t+1}; the final element is
    NaN (no next-day return), as is any element without a valid sigma.
    """
    out = np.full(len(r), np.nan)
    lev = (sigma_tgt / np.sqrt(TRADING_DAYS_PER_YEAR)) / r.sigma[:-1]
    out[:-1] = lev * r.r[1:]
    return out


# ---------------------------------------------------------------------------
# Train/test splits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitWindow:
    train_start: np.datetime64
    train_end: np.datetime64
    test_start: np.datetime64
    test_end: np.datetime64

    def __post_init__(self):
        if self.test_start != self.train_end:
            raise ValidationError("test_start must equal train_end")
        if not (self.train_start < self.train_end < self.test_end):
            raise ValidationError("window dates must be increasing")

    def key(self) -> str:
        return f"{self.test_start}__{self.test_end}"


@dataclass(frozen=True)
class SplitPlan:
    windows: tuple[SplitWindow, ...]
    train_assets: frozenset[str]
    test_assets: frozenset[str]
    mode: str  # "few_shot" | "zero_shot"

    def __post_init__(self):
        if self.mode not in ("few_shot", "zero_shot"):
            raise ValidationError(f"unknown split mode {self.mode!r}")
        if self.mode == "zero_shot" and self.train_assets & self.test_assets:
            raise ValidationError("zero-shot split requires disjoint asset sets")
        if self.mode == "few_shot" and self.train_assets != self.test_assets:
            raise ValidationError("few-shot split requires identical asset sets")
        spans = sorted((w.test_start, w.test_end) for w in self.windows)
        for (s0, e0), (s1, _) in zip(spans, spans[1:]):
            if s1 < e0:
                raise ValidationError("test windows overlap")


def _year_date(year: int) -> np.datetime64:
    return np.datetime64(f"{year:04d}-01-01", "D")


def make_expanding_windows(start: int, end: int, step: int) -> tuple[SplitWindow, ...]:
    """Expanding-window walk-forward plan over calendar years.

    Window k trains on [start, start + k*step] and tests on the following
    `step` years (the last window is truncated at `end`).
    """
    if step <= 0:
        raise ValidationError("step must be positive")
    if end - start < 2 * step:
        raise ValidationError("range must cover at least one train and one test step")
    windows = []
    k = 1
    while start + k * step < end:
        boundary = start + k * step
        test_end = min(boundary + step, end)
        windows.append(
            SplitWindow(_year_date(start), _year_date(boundary),
                        _year_date(boundary), _year_date(test_end))
        )
        k += 1
    return tuple(windows)


def make_zero_shot_split(
    universe: dict[str, AssetMeta],
    n_test: int,
    seed: int,
    windows: tuple[SplitWindow, ...] = (),
    exclude_test_class: str | None = None,
) -> SplitPlan:
    """Randomly hold out `n_test` assets as the zero-shot test set.

    Deterministic given `seed`. `exclude_test_class` keeps one asset class
    (e.g. fixed income) entirely on the training side.
    """
    tickers = sorted(universe)
    if n_test >= len(tickers):
        raise ValidationError(f"n_test={n_test} must be < universe size {len(tickers)}")
    eligible = [
        t for t in tickers
        if exclude_test_class is None or universe[t].asset_class != exclude_test_class
    ]
    if n_test > len(eligible):
        raise ValidationError("not enough eligible assets outside the excluded class")
    rng = np.random.default_rng(seed)
    test = frozenset(rng.choice(eligible, size=n_test, replace=False).tolist())
    train = frozenset(t for t in tickers if t not in test)
    return SplitPlan(tuple(windows), train, test, "zero_shot")


def make_few_shot_split(
    universe: dict[str, AssetMeta], windows: tuple[SplitWindow, ...] = ()
) -> SplitPlan:
    assets = frozenset(universe)
    return SplitPlan(tuple(windows), assets, assets, "few_shot")


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GpDrawParams:
    n: int = 100
    dx: float = 0.1
    lengthscale: float = 0.4
    noise_var: float = 1.0
    amplitude: float = 1.0


@dataclass(frozen=True)
class TrendRegimesParams:
    n_days: int = 1000
    daily_vol: float = 0.01
    drift_scale: float = 1.0      # regime |drift| in units of daily_vol
    regime_len_lo: int = 60
    regime_len_hi: int = 180
    start_date: str = "2000-01-03"


@dataclass(frozen=True)
class WhiteNoiseParams:
    n_days: int = 1000
    daily_vol: float = 0.01
    start_date: str = "2000-01-03"


@dataclass(frozen=True)
class SyntheticSeries:
    prices: PriceSeries
    change_points: tuple[int, ...] = ()   # price-index of each regime start
    drifts: tuple[float, ...] = ()        # per-regime daily drift


def _trading_dates(start_date: str, n: int) -> np.ndarray:
    """n consecutive weekdays starting at (or after) start_date."""
    start = np.datetime64(start_date, "D")
    approx = np.arange(start, start + np.timedelta64(int(n * 1.6) + 7, "D"))
    weekdays = approx[np.is_busday(approx)]
    return weekdays[:n]


def gen_gp_draw(params: GpDrawParams, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Sample a GP path on a regular grid: RBF kernel plus observation noise.

    Returns (x, y). Cholesky jitter escalates on failure; persistent failure
    raises NumericalError.
    """
    from .errors import NumericalError

    rng = np.random.default_rng(seed)
    x = np.arange(params.n) * params.dx
    d2 = (x[:, None] - x[None, :]) ** 2
    cov = params.amplitude**2 * np.exp(-0.5 * d2 / params.lengthscale**2)
    cov[np.diag_indices_from(cov)] += params.noise_var
    jitter = 1e-10
    for _ in range(6):
        try:
            chol = np.linalg.cholesky(cov + jitter * np.eye(len(x)))
            break
        except np.linalg.LinAlgError:
            jitter *= 100.0
    else:
        raise NumericalError("GP covariance not positive definite after jitter")
    y = chol @ rng.standard_normal(len(x))
    return x, y


def gen_trend_regimes(params: TrendRegimesParams, seed: int, ticker: str = "SYN") -> SyntheticSeries:
    """Piecewise-drift log-price path with known change points.

    Each regime draws a length uniformly from [regime_len_lo, regime_len_hi]
    and a drift of magnitude drift_scale * daily_vol whose sign alternates
    (starting sign random), giving persistent trends with clean reversals.
    """
    rng = np.random.default_rng(seed)
    n = params.n_days
    change_points = [0]
    drifts = []
    sign = 1.0 if rng.random() < 0.5 else -1.0
    pos = 0
    while pos < n:
        length = int(rng.integers(params.regime_len_lo, params.regime_len_hi + 1))
        mag = params.drift_scale * params.daily_vol * (0.5 + rng.random())
        drifts.append(sign * mag)
        sign = -sign
        pos += length
        if pos < n:
            change_points.append(pos)
    drift_per_day = np.empty(n)
    bounds = change_points + [n]
    for k in range(len(change_points)):
        drift_per_day[bounds[k]:bounds[k + 1]] = drifts[k]
    log_ret = drift_per_day + params.daily_vol * rng.standard_normal(n)
    log_price = np.cumsum(log_ret)
    close = 100.0 * np.exp(log_price - log_price[0])
    prices = PriceSeries(ticker, _trading_dates(params.start_date, n), close)
    return SyntheticSeries(prices, tuple(change_points), tuple(drifts))


def gen_white_noise(params: WhiteNoiseParams, seed: int, ticker: str = "SYN") -> SyntheticSeries:
    """Geometric random walk with i.i.d. Gaussian log returns and zero drift."""
    rng = np.random.default_rng(seed)
    log_ret = params.daily_vol * rng.standard_normal(params.n_days)
    close = 100.0 * np.exp(np.cumsum(log_ret) - log_ret[0])
    prices = PriceSeries(ticker, _trading_dates(params.start_date, params.n_days), close)
    return SyntheticSeries(prices)


def gen_synthetic(kind: str, params, seed: int, ticker: str = "SYN"):
    """Dispatcher over the three synthetic generators (CLI entry point)."""
    kind = kind.lower()
    if kind == "gpdraw":
        return gen_gp_draw(params, seed)
    if kind == "trendregimes":
        return gen_trend_regimes(params, seed, ticker)
    if kind == "whitenoise":
        return gen_white_noise(params, seed, ticker)
    raise ValidationError(f"unknown synthetic kind {kind!r}")
