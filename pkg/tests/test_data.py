import datetime as dt
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lstm_gcn import data, graph
from lstm_gcn.graph import Edge


def D(s):
    return dt.date.fromisoformat(s)


def table(close, start="2020-01-01", tickers=None):
    close = np.asarray(close, dtype=float)
    if close.ndim == 1:
        close = close[:, None]
    dates = [D(start) + dt.timedelta(days=k) for k in range(close.shape[0])]
    tickers = tickers or [f"T{i}" for i in range(close.shape[1])]
    return data.PriceTable(dates, tickers, close)


def returns_matrix(T, n, seed=0, start="2020-01-01"):
    rng = np.random.default_rng(seed)
    dates = [D(start) + dt.timedelta(days=k) for k in range(T)]
    return data.ReturnsMatrix(dates, [f"T{i}" for i in range(n)], rng.normal(0, 0.01, (T, n)))


IDENT = graph.NormalizedAdjacency(np.eye(3))


# --------------------------------------------------------------- returns


def test_return_examples():
    r = data.compute_returns(table([100.0, 110.0]))
    np.testing.assert_allclose(r.values, [[0.10]], rtol=1e-15)
    assert r.dates == [D("2020-01-02")]
    np.testing.assert_array_equal(data.compute_returns(table([100.0, np.nan])).values, [[0.0]])
    np.testing.assert_array_equal(data.compute_returns(table([5.0] * 6)).values, 0.0)


def test_return_errors():
    with pytest.raises(data.DataError):
        data.compute_returns(table([100.0]))
    with pytest.raises(data.DataError):
        data.compute_returns(table([100.0, -1.0]))


def test_price_table_invariants():
    with pytest.raises(data.DataError):
        data.PriceTable([D("2020-01-02"), D("2020-01-01")], ["a"], [[1.0], [1.0]])
    with pytest.raises(data.DataError):
        data.PriceTable([D("2020-01-01")], ["a", "a"], [[1.0, 1.0]])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_returns_finite_and_zero_where_missing(seed):
    rng = np.random.default_rng(seed)
    close = rng.uniform(1, 200, (20, 4))
    close[rng.random(close.shape) < 0.2] = np.nan
    r = data.compute_returns(table(close)).values
    assert np.all(np.isfinite(r))
    missing = np.isnan(close[1:]) | np.isnan(close[:-1])
    assert np.all(r[missing] == 0.0)


# --------------------------------------------------------------- filters


def test_sparse_day_dropped():
    close = np.ones((3, 60))
    close[1, 1:] = np.nan
    out, mask = data.apply_filters(table(close), min_prices_per_day=50)
    assert len(out.dates) == 2 and D("2020-01-02") not in out.dates
    assert mask.all()


def test_short_ticker_is_input_only():
    close = np.ones((10, 3))
    close[:6, 2] = np.nan
    out, mask = data.apply_filters(table(close), min_trading_days=3, min_output_history=8)
    assert out.tickers == ["T0", "T1", "T2"]
    np.testing.assert_array_equal(mask, [True, True, False])
    out, _ = data.apply_filters(table(close), min_trading_days=5)
    assert out.tickers == ["T0", "T1"]


def test_universe_restricts_outputs():
    _, mask = data.apply_filters(table(np.ones((4, 3))), output_universe={"T1"})
    np.testing.assert_array_equal(mask, [False, True, False])


def test_zero_thresholds_are_identity():
    close = np.random.default_rng(0).uniform(1, 2, (8, 3))
    close[2, 1] = np.nan
    src = table(close)
    out, mask = data.apply_filters(src)
    assert out.dates == src.dates and out.tickers == src.tickers
    np.testing.assert_array_equal(out.close, src.close)
    assert mask.all()


def test_filter_errors():
    with pytest.raises(data.DataError):
        data.apply_filters(table(np.ones((4, 2))), min_trading_days=10)
    with pytest.raises(ValueError):
        data.apply_filters(table(np.ones((4, 2))), min_prices_per_day=-1)


# --------------------------------------------------------------- windows


def test_window_count_and_indexing():
    r = returns_matrix(100, 3)
    samples = data.build_windows(r, IDENT, 60)
    assert len(samples) == 41
    s0 = samples[0]
    assert s0.target_date == r.dates[59] and s0.feature_end == r.dates[58]
    np.testing.assert_array_equal(s0.features, r.values[:59])
    np.testing.assert_array_equal(s0.target, r.values[59])
    assert samples[-1].target_date == r.dates[-1]


def test_window_errors():
    r = returns_matrix(10, 3)
    with pytest.raises(data.DataError):
        data.build_windows(r, IDENT, 11)
    with pytest.raises(data.DataError):
        data.build_windows(r, IDENT, 5, output_mask=[False] * 3)


def test_output_mask_selects_targets():
    r = returns_matrix(12, 3)
    s = data.build_windows(r, IDENT, 5, output_mask=[True, False, True])[0]
    np.testing.assert_array_equal(s.target, r.values[4, [0, 2]])
    assert s.features.shape == (4, 3)


def test_future_edge_excluded_from_window_graph():
    r = returns_matrix(10, 3)
    late = r.dates[6]
    edges = [Edge("T0", "T1", 1.0, r.dates[0]), Edge("T1", "T2", 1.0, late)]
    tl = graph.GraphTimeline(edges, r.tickers)
    samples = data.build_windows(r, tl, 5)
    for s in samples:
        m = s.graph.matrix
        assert m[0, 1] > 0
        assert (m[1, 2] > 0) == (late <= s.feature_end)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 60), st.integers(0, 40), st.integers(0, 2**32 - 1))
def test_no_look_ahead(d, extra, seed):
    rng = np.random.default_rng(seed)
    r = returns_matrix(d + extra, 3, seed)
    edges = [Edge("T0", "T1", 1.0, r.dates[int(rng.integers(len(r.dates)))]),
             Edge("T0", "T2", 0.5, r.dates[int(rng.integers(len(r.dates)))])]
    samples = data.build_windows(r, graph.GraphTimeline(edges, r.tickers), d)
    assert len(samples) == len(r.dates) - d + 1
    pos = {day: k for k, day in enumerate(r.dates)}
    for s in samples:
        k = pos[s.target_date]
        assert s.feature_end < s.target_date
        np.testing.assert_array_equal(s.features, r.values[k - d + 1:k])
        for e in edges:
            i, j = r.tickers.index(e.source), r.tickers.index(e.target)
            if s.graph.matrix[i, j] > 0:
                assert e.valid_from <= s.feature_end


# ----------------------------------------------------------------- split


def test_split_examples():
    r = returns_matrix(100, 2)
    train, test = data.chronological_split(data.build_windows(r, IDENT, 60))
    assert (len(train), len(test)) == (32, 9)
    assert max(s.target_date for s in train) < min(s.target_date for s in test)
    train, test = data.chronological_split(list(range(10)), 0.8)
    assert (train, test) == (list(range(8)), [8, 9])


def test_split_errors():
    with pytest.raises(ValueError):
        data.chronological_split(list(range(10)), 1.0)
    with pytest.raises(data.DataError):
        data.chronological_split([1, 2], 0.4)


@given(st.integers(2, 500), st.floats(0.01, 0.99))
def test_split_is_ordered_partition(n, frac):
    items = list(range(n))
    try:
        train, test = data.chronological_split(items, frac)
    except data.DataError:
        return
    assert train + test == items
    assert not set(train) & set(test)


# ------------------------------------------------------------- synthetic


def test_ring_recurrence():
    spec = data.SyntheticSpec(n_nodes=4, edge_model="ring", beta=0.9, sigma=0.01, horizon=2000, seed=3)
    syn = data.generate_synthetic(spec)
    r = syn.returns.values
    pred = 0.9 * (np.roll(r, 1, axis=1) + np.roll(r, -1, axis=1))[:-1] / 2
    resid = r[1:] - pred
    # what remains after the recomputed spillover is the Gaussian noise alone
    assert resid.std() == pytest.approx(0.01, rel=0.05)
    assert abs(resid.mean()) < 1e-3
    for j in range(4):
        assert abs(np.corrcoef(resid[:, j], r[:-1, j])[0, 1]) < 0.1
        assert abs(np.corrcoef(resid[:, j], r[:-1, (j + 1) % 4])[0, 1]) < 0.1
    assert r[1:].std() > 1.5 * resid.std()
    expected = np.array([[0, 1, 0, 1], [1, 0, 1, 0], [0, 1, 0, 1], [1, 0, 1, 0]], float)
    np.testing.assert_array_equal(syn.adjacency, expected)


def test_synthetic_prices_match_returns():
    syn = data.generate_synthetic(data.SyntheticSpec(n_nodes=5, horizon=30, seed=1))
    np.testing.assert_allclose(data.compute_returns(syn.prices).values, syn.returns.values, rtol=0, atol=1e-12)
    assert all(e.confidence == 1.0 and e.valid_from < syn.prices.dates[0] for e in syn.edges)
    assert all(d.weekday() < 5 for d in syn.prices.dates)


def test_synthetic_deterministic():
    spec = data.SyntheticSpec(n_nodes=6, horizon=40, seed=9)
    a, b = data.generate_synthetic(spec), data.generate_synthetic(spec)
    np.testing.assert_array_equal(a.returns.values, b.returns.values)
    np.testing.assert_array_equal(a.prices.close, b.prices.close)
    assert a.edges == b.edges
    c = data.generate_synthetic(data.SyntheticSpec(n_nodes=6, horizon=40, seed=10))
    assert not np.array_equal(a.returns.values, c.returns.values)


@pytest.mark.parametrize("kw", [dict(beta=1.0), dict(beta=-0.1), dict(sigma=0.0), dict(n_nodes=1),
                                dict(edge_model="star"), dict(p=1.5)])
def test_synthetic_spec_errors(kw):
    with pytest.raises(ValueError):
        data.SyntheticSpec(**kw)


def test_no_edge_warning():
    with pytest.warns(UserWarning, match="no edges"):
        data.generate_synthetic(data.SyntheticSpec(n_nodes=3, edge_model="er", p=0.0, horizon=5))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        data.generate_synthetic(data.SyntheticSpec(n_nodes=3, horizon=5))


def test_zero_beta_is_noise():
    syn = data.generate_synthetic(data.SyntheticSpec(n_nodes=4, beta=0.0, sigma=0.01, horizon=3000, seed=0))
    r = syn.returns.values
    lag = np.corrcoef(r[:-1].ravel(), r[1:].ravel())[0, 1]
    assert abs(lag) < 0.05
    assert r.std() == pytest.approx(0.01, rel=0.05)


# ------------------------------------------------------------------- I/O


def test_price_csv_roundtrip(tmp_path):
    close = np.random.default_rng(0).uniform(1, 100, (5, 3))
    close[2, 1] = np.nan
    src = table(close, tickers=["AAA", "BBB", "CCC"])
    data.write_prices_csv(tmp_path / "p.csv", src)
    back = data.read_prices_csv(tmp_path / "p.csv")
    assert back.dates == src.dates and back.tickers == src.tickers
    np.testing.assert_array_equal(back.close, src.close)


def test_price_csv_sorted_merge(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("date,ticker,close\n2020-01-02,B,2\n2020-01-01,B,1\n2020-01-01,A,5\n")
    t = data.read_prices_csv(path)
    assert t.dates == [D("2020-01-01"), D("2020-01-02")] and t.tickers == ["A", "B"]
    np.testing.assert_array_equal(t.close, [[5, 1], [np.nan, 2]])


def test_price_csv_errors(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("day,ticker,close\n")
    with pytest.raises(data.DataError):
        data.read_prices_csv(path)
    path.write_text("date,ticker,close\n2020-01-01,A,abc\n")
    with pytest.raises(data.DataError, match="abc"):
        data.read_prices_csv(path)


def test_universe(tmp_path):
    u = data.Universe({"A": [(D("2020-01-01"), D("2020-01-31"))], "B": [(D("2020-01-15"), None)]})
    np.testing.assert_array_equal(u.mask(["A", "B", "C"], "2020-01-20"), [True, True, False])
    np.testing.assert_array_equal(u.mask(["A", "B"], "2020-02-01"), [False, True])
    assert u.contains("A", "2020-01-31") and not u.contains("B", "2020-01-14")
    data.write_universe_csv(tmp_path / "u.csv", u)
    assert data.read_universe_csv(tmp_path / "u.csv") == u
