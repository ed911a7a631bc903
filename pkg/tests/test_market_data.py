"""Tests for loading, returns, ex-ante volatility, splits, and synthetic data."""
import numpy as np
import pytest

from xtrend import market_data as md
from xtrend.errors import InsufficientHistoryError, ParseError, ValidationError


def _dates(n, start="2000-01-03"):
    return md._trading_dates(start, n)


def _series(prices, ticker="ZC"):
    return md.PriceSeries(ticker, _dates(len(prices)), np.asarray(prices, float))


# ---------------------------------------------------------------------------
# CSV loading
# ---------------------------------------------------------------------------

def test_load_price_csv_basic(tmp_path):
    f = tmp_path / "p.csv"
    f.write_text("date,ticker,close\n2000-01-03,ZC,100\n2000-01-04,ZC,101\n2000-01-05,ZC,102\n")
    series = md.load_price_csv(f, md.load_universe())
    assert len(series) == 1
    assert series[0].ticker == "ZC"
    assert len(series[0]) == 3
    assert series[0].close[2] == 102.0


def test_load_price_csv_negative_price(tmp_path):
    f = tmp_path / "p.csv"
    f.write_text("date,ticker,close\n2000-01-03,ZC,-1\n")
    with pytest.raises(ValidationError):
        md.load_price_csv(f, md.load_universe())


def test_load_price_csv_shuffled_dates_sorted(tmp_path):
    f1 = tmp_path / "a.csv"
    f1.write_text("date,ticker,close\n2000-01-05,ZC,102\n2000-01-03,ZC,100\n2000-01-04,ZC,101\n")
    f2 = tmp_path / "b.csv"
    f2.write_text("date,ticker,close\n2000-01-03,ZC,100\n2000-01-04,ZC,101\n2000-01-05,ZC,102\n")
    a = md.load_price_csv(f1, md.load_universe())[0]
    b = md.load_price_csv(f2, md.load_universe())[0]
    assert np.array_equal(a.dates, b.dates)
    assert np.array_equal(a.close, b.close)


def test_load_price_csv_duplicate_date(tmp_path):
    f = tmp_path / "p.csv"
    f.write_text("date,ticker,close\n2000-01-03,ZC,100\n2000-01-03,ZC,101\n")
    with pytest.raises(ValidationError):
        md.load_price_csv(f, md.load_universe())


def test_load_price_csv_parse_error_has_line(tmp_path):
    f = tmp_path / "p.csv"
    f.write_text("date,ticker,close\n2000-01-03,ZC,100\nnot-a-date,ZC,100\n")
    with pytest.raises(ParseError) as exc:
        md.load_price_csv(f, md.load_universe())
    assert exc.value.line == 3


def test_load_price_csv_unknown_ticker(tmp_path):
    f = tmp_path / "p.csv"
    f.write_text("date,ticker,close\n2000-01-03,QQ,100\n")
    with pytest.raises(ParseError):
        md.load_price_csv(f, md.load_universe())


# ---------------------------------------------------------------------------
# Returns
# ---------------------------------------------------------------------------

def test_compute_return_direct():
    p = _series([100.0, 110.0])
    assert md.compute_return(p, 1, 1) == pytest.approx(0.10, abs=1e-15)


def test_compute_return_constant_zero():
    p = _series([50.0] * 10)
    for h in (1, 3, 9):
        assert md.compute_return(p, 9, h) == 0.0


def test_compute_return_negative():
    p = _series([100.0, 95.0])
    assert md.compute_return(p, 1, 1) == pytest.approx(-0.05, abs=1e-15)


def test_compute_return_insufficient_history():
    p = _series([100.0, 110.0])
    with pytest.raises(InsufficientHistoryError):
        md.compute_return(p, 1, 2)


def test_compute_return_composes_over_adjacent_horizons():
    rng = np.random.default_rng(0)
    p = _series(100 * np.exp(np.cumsum(0.01 * rng.standard_normal(40))))
    for t, a, b in [(30, 5, 7), (39, 1, 21), (20, 10, 3)]:
        ra = md.compute_return(p, t - b, a)
        rb = md.compute_return(p, t, b)
        combined = (1 + ra) * (1 + rb) - 1
        assert md.compute_return(p, t, a + b) == pytest.approx(combined, abs=1e-12)


# ---------------------------------------------------------------------------
# Ex-ante volatility
# ---------------------------------------------------------------------------

def _ewm_std_oracle(r, span=60):
    """Direct weighted-variance summation over the full history."""
    alpha = 2.0 / (span + 1.0)
    out = np.full(len(r), np.nan)
    for t in range(len(r)):
        w = (1 - alpha) ** np.arange(t, -1, -1)
        mu = np.sum(w * r[: t + 1]) / np.sum(w)
        var = np.sum(w * (r[: t + 1] - mu) ** 2) / np.sum(w)
        out[t] = np.sqrt(var)
    return out


def test_ex_ante_volatility_matches_direct_summation():
    rng = np.random.default_rng(3)
    r = 0.01 * rng.standard_normal(300)
    ours = md.ex_ante_volatility(r)
    oracle = _ewm_std_oracle(r)
    np.testing.assert_allclose(ours[10:], oracle[10:], rtol=1e-10)


def test_ex_ante_volatility_iid_terminal_band():
    rng = np.random.default_rng(7)
    r = rng.standard_normal(2000)
    r = r / r.std() * 0.01  # sample std exactly 0.01
    sigma = md.ex_ante_volatility(r)
    assert 0.008 <= sigma[-1] <= 0.012
    assert sigma[-1] == pytest.approx(_ewm_std_oracle(r)[-1], rel=1e-10)


def test_ex_ante_volatility_constant_is_floored():
    sigma = md.ex_ante_volatility(np.full(100, 0.005))
    assert np.all(np.isnan(sigma[:9]))
    assert np.all(sigma[9:] == md.SIGMA_FLOOR)


def test_ex_ante_volatility_spike_decays_monotonically():
    r = np.zeros(200)
    r[50] = 0.05
    sigma = md.ex_ante_volatility(r)
    tail = sigma[51:]
    assert np.all(np.diff(tail) <= 1e-15)


def test_ex_ante_volatility_old_history_invariance():
    rng = np.random.default_rng(11)
    recent = 0.01 * rng.standard_normal(700)  # > 10 spans of 60
    old = 0.05 * rng.standard_normal(100)
    a = md.ex_ante_volatility(recent)
    b = md.ex_ante_volatility(np.concatenate([old, recent]))
    assert abs(a[-1] - b[-1]) < 1e-9


def test_scaled_next_day_returns_alignment():
    s = md.gen_white_noise(md.WhiteNoiseParams(n_days=100), seed=0)
    r = md.compute_returns(s.prices)
    rt = md.scaled_next_day_returns(r, sigma_tgt=0.15)
    assert np.isnan(rt[-1])
    t = 50
    expected = (0.15 / np.sqrt(252)) / r.sigma[t] * r.r[t + 1]
    assert rt[t] == pytest.approx(expected, rel=1e-12)


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

def test_expanding_windows_five_year_cadence():
    w = md.make_expanding_windows(1990, 2005, 5)
    assert len(w) == 2
    assert str(w[0].train_start) == "1990-01-01"
    assert str(w[0].train_end) == "1995-01-01"
    assert str(w[0].test_end) == "2000-01-01"
    assert str(w[1].train_end) == "2000-01-01"
    assert str(w[1].test_end) == "2005-01-01"


def test_expanding_windows_single_pair():
    w = md.make_expanding_windows(2000, 2010, 5)
    assert len(w) == 1
    assert str(w[0].train_end) == "2005-01-01"


def test_expanding_windows_degenerate_range():
    with pytest.raises(ValidationError):
        md.make_expanding_windows(2000, 2004, 5)


def test_expanding_windows_test_after_train_end():
    for w in md.make_expanding_windows(1990, 2015, 5):
        assert w.test_start == w.train_end
        assert w.test_end > w.train_end


def test_zero_shot_split_sizes_and_disjoint():
    u = md.load_universe()
    plan = md.make_zero_shot_split(u, 20, seed=42, exclude_test_class="FI")
    assert len(plan.train_assets) == 30
    assert len(plan.test_assets) == 20
    assert not plan.train_assets & plan.test_assets
    assert all(u[t].asset_class != "FI" for t in plan.test_assets)


def test_zero_shot_split_deterministic():
    u = md.load_universe()
    a = md.make_zero_shot_split(u, 20, seed=7)
    b = md.make_zero_shot_split(u, 20, seed=7)
    assert a.test_assets == b.test_assets


def test_zero_shot_split_empty_test():
    u = md.load_universe()
    plan = md.make_zero_shot_split(u, 0, seed=1)
    assert plan.test_assets == frozenset()
    assert len(plan.train_assets) == len(u)


def test_zero_shot_split_too_large():
    u = md.load_universe()
    with pytest.raises(ValidationError):
        md.make_zero_shot_split(u, len(u), seed=1)


# ---------------------------------------------------------------------------
# Synthetic generators
# ---------------------------------------------------------------------------

def test_gp_draw_single_point_marginal():
    draws = [md.gen_gp_draw(md.GpDrawParams(n=1, noise_var=0.0), seed=s)[1][0]
             for s in range(500)]
    # y ~ N(0, k(0,0)) = N(0, 1)
    assert abs(np.mean(draws)) < 0.15
    assert abs(np.std(draws) - 1.0) < 0.15


def test_gp_draw_empirical_variance():
    vals = []
    for s in range(25):
        _, y = md.gen_gp_draw(md.GpDrawParams(n=400), seed=s)
        vals.append(y)
    var = np.var(np.concatenate(vals))
    assert abs(var - 2.0) / 2.0 < 0.05  # k(0,0) + noise = 1 + 1


def test_trend_regimes_zero_drift_reduces_to_white_noise():
    p = md.TrendRegimesParams(n_days=300, drift_scale=0.0)
    a = md.gen_trend_regimes(p, seed=5)
    log_ret = np.diff(np.log(a.prices.close))
    assert abs(np.mean(log_ret)) < 0.002
    assert abs(np.std(log_ret) - 0.01) < 0.002


def test_trend_regimes_ground_truth_shapes():
    s = md.gen_trend_regimes(md.TrendRegimesParams(n_days=500), seed=9)
    assert s.change_points[0] == 0
    assert len(s.drifts) == len(s.change_points)
    assert all(0 <= c < 500 for c in s.change_points)
    signs = np.sign(s.drifts)
    assert np.all(signs[1:] == -signs[:-1])  # alternating trends


def test_synthetic_bit_reproducible():
    for kind, params in [
        ("trendregimes", md.TrendRegimesParams(n_days=200)),
        ("whitenoise", md.WhiteNoiseParams(n_days=200)),
    ]:
        a = md.gen_synthetic(kind, params, seed=123)
        b = md.gen_synthetic(kind, params, seed=123)
        assert np.array_equal(a.prices.close, b.prices.close)
    xa, ya = md.gen_synthetic("gpdraw", md.GpDrawParams(n=50), seed=123)
    xb, yb = md.gen_synthetic("gpdraw", md.GpDrawParams(n=50), seed=123)
    assert np.array_equal(ya, yb)


def test_price_series_invariants():
    with pytest.raises(ValidationError):
        md.PriceSeries("ZC", _dates(3), np.array([1.0, -1.0, 2.0]))
    dates = _dates(3)
    with pytest.raises(ValidationError):
        md.PriceSeries("ZC", dates[[0, 0, 1]], np.array([1.0, 2.0, 3.0]))
    p = _series([1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        p.close[0] = 5.0  # immutable
