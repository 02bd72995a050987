import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from lstm_gcn import data, evaluation as ev, graph, models, numerics as nx
from lstm_gcn.models import Model, ModelConfig


def student_upper_tail(t, df):
    """P(T > t) through the regularized incomplete beta function."""
    t, df = mpmath.mpf(t), mpmath.mpf(df)
    tail = mpmath.betainc(df / 2, mpmath.mpf(1) / 2, 0, df / (df + t * t), regularized=True) / 2
    return float(tail if t >= 0 else 1 - tail)


def noise_samples(n_nodes=4, horizon=300, window=12, beta=0.0, seed=0):
    syn = data.generate_synthetic(data.SyntheticSpec(n_nodes=n_nodes, beta=beta, horizon=horizon, seed=seed))
    return data.build_windows(syn.returns, graph.NormalizedAdjacency(np.eye(n_nodes)), window)


def oracle_predictions(samples):
    return np.array([s.target for s in samples])


# -------------------------------------------------------------- r_squared


def test_r_squared_examples():
    y = np.array([0.01, -0.02, 0.03, 0.0, -0.01])
    assert ev.r_squared(y, y) == 1.0
    assert ev.r_squared(np.full(5, y.mean()), y) == 0.0
    assert ev.r_squared(np.zeros(3), np.ones(3)) is None
    with pytest.raises(ValueError):
        ev.r_squared([1.0], [1.0])


def test_r_squared_zero_prediction_brute_force():
    y = np.random.default_rng(0).normal(0.001, 0.01, 50)
    mean = sum(y) / len(y)
    ss_res = sum(v * v for v in y)
    ss_tot = sum((v - mean) ** 2 for v in y)
    got = ev.r_squared(np.zeros(50), y)
    assert got == pytest.approx(1 - ss_res / ss_tot, rel=1e-12)
    assert got < 0


series = hnp.arrays(np.float64, st.integers(2, 40), elements=st.floats(-1, 1), unique=True)


@given(series)
def test_r_squared_invariants(y):
    assert ev.r_squared(y, y) == 1.0
    assert ev.r_squared(np.full(y.shape, y.mean()), y) == 0.0
    # a zero forecast never beats the series' own mean
    assert ev.r_squared(np.zeros_like(y), y) <= 0.0


@given(series, st.integers(0, 2**32 - 1))
def test_zero_errors_iff_exact(y, seed):
    m = ev.metrics_from_predictions(y[:, None], y[:, None])
    assert m.mse == 0.0 and m.mae == 0.0
    k = int(np.random.default_rng(seed).integers(y.size))
    p = y.copy()
    p[k] += 1e-6
    m = ev.metrics_from_predictions(p[:, None], y[:, None])
    assert m.mse > 0 and m.mae > 0


# ------------------------------------------------------------ correctness


def test_correctness_examples():
    assert ev.directional_correctness([0.1, -0.2, 0.3], [0.2, -0.1, 0.0]) == 100.0
    y = np.array([0.1, -0.3, 0.2, -0.05])
    assert ev.directional_correctness(-y, y) == 0.0
    assert ev.directional_correctness([1.0, 2.0], [0.0, 0.0]) is None


def test_correctness_random_signs():
    rng = np.random.default_rng(2024)
    p, y = rng.standard_normal(200_000), rng.standard_normal(200_000)
    assert abs(ev.directional_correctness(p, y) - 50.0) < 0.5


@given(hnp.arrays(np.float64, st.integers(1, 30), elements=st.floats(-1, 1)),
       hnp.arrays(np.float64, st.integers(1, 30), elements=st.floats(-1, 1)))
def test_correctness_bounds(p, y):
    k = min(p.size, y.size)
    c = ev.directional_correctness(p[:k], y[:k])
    assert c is None or 0.0 <= c <= 100.0


# ----------------------------------------------------------------- t-test


def test_ttest_examples():
    t, p = ev.r2_ttest([1.0, -1.0])
    assert t == 0.0 and p == 0.5
    x = [0.1, 0.2, 0.1, 0.15, 0.05]
    t, p = ev.r2_ttest(x)
    mean = mpmath.mpf(sum(x)) / 5
    sd = mpmath.sqrt(sum((mpmath.mpf(v) - mean) ** 2 for v in x) / 4)
    t_ref = float(mean / (sd / mpmath.sqrt(5)))
    assert t == pytest.approx(t_ref, abs=1e-6)
    assert p == pytest.approx(student_upper_tail(t_ref, 4), abs=1e-6)
    t, p = ev.r2_ttest([-0.1, -0.3, -0.2])
    assert t < 0 and p > 0.5


def test_ttest_errors():
    with pytest.raises(ValueError):
        ev.r2_ttest([0.1])
    with pytest.raises(ZeroDivisionError):
        ev.r2_ttest([0.2, 0.2, 0.2])
    with pytest.raises(ZeroDivisionError):
        ev.r2_ttest([0.0, 1e-300])


@settings(max_examples=50)
@given(hnp.arrays(np.float64, st.integers(2, 30), elements=st.floats(-1, 1), unique=True))
def test_ttest_antisymmetric(x):
    if x.std(ddof=1) == 0.0:
        with pytest.raises(ZeroDivisionError):
            ev.r2_ttest(x)
        return
    t, p = ev.r2_ttest(x)
    tn, pn = ev.r2_ttest(-x)
    assert tn == -t
    assert pn == pytest.approx(1 - p, abs=1e-12)
    assert 0.0 <= p <= 1.0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_ttest_matches_incomplete_beta(seed):
    x = np.random.default_rng(seed).normal(0.01, 0.05, int(np.random.default_rng(seed).integers(2, 40)))
    t, p = ev.r2_ttest(x)
    assert p == pytest.approx(student_upper_tail(t, x.size - 1), abs=1e-9)


# --------------------------------------------------------------- evaluate


def test_evaluate_oracle_and_zero():
    samples = noise_samples()
    truth = oracle_predictions(samples)
    m = ev.metrics_from_predictions(truth, truth)
    assert (m.mse, m.mae, m.r2_mean, m.correctness_pct) == (0.0, 0.0, 1.0, 100.0)
    zero = Model(ModelConfig("zero", 4, 11, [0, 1, 2, 3]))
    report, preds = ev.evaluate(zero, samples)
    np.testing.assert_array_equal(preds, 0.0)
    centered = truth - truth.mean(axis=0)
    assert all(r <= 0 for r in ev.metrics_from_predictions(np.zeros_like(centered), centered).r2_per_node)
    assert all(r <= 0 for r in report.r2_per_node)
    again, _ = ev.evaluate(zero, samples)
    assert again.to_dict() == report.to_dict()


def test_metrics_report_json_keys():
    y = np.random.default_rng(0).normal(size=(10, 3))
    d = ev.metrics_from_predictions(y * 0.5, y).to_dict()
    assert list(d) == ["mae", "mse", "r2_mean", "r2_per_node", "correctness_pct", "t_stat", "p_value"]
    assert len(d["r2_per_node"]) == 3


def test_evaluate_empty():
    with pytest.raises(ValueError):
        ev.evaluate(Model(ModelConfig("zero", 4, 11, [0])), [])


# ------------------------------------------------------------------- Adam


def test_adam_matches_reference_recursion():
    rng = np.random.default_rng(0)
    w = nx.Tensor(rng.uniform(-1, 1, 3), requires_grad=True)
    opt = ev.Adam([w], lr=0.1, beta1=0.8, beta2=0.9, eps=1e-8)
    ref, m, v = w.values.copy(), np.zeros(3), np.zeros(3)
    for t in range(1, 6):
        g = rng.standard_normal(3)
        w.grad = g.copy()
        opt.step()
        m = 0.8 * m + 0.2 * g
        v = 0.9 * v + 0.1 * g * g
        ref = ref - 0.1 * (m / (1 - 0.8 ** t)) / (np.sqrt(v / (1 - 0.9 ** t)) + 1e-8)
        np.testing.assert_allclose(w.values, ref, rtol=1e-13, atol=1e-15)


def test_adam_zero_gradient_is_noop():
    w = nx.Tensor(np.arange(4.0).reshape(2, 2), requires_grad=True)
    before = w.values.copy()
    opt = ev.Adam([w], lr=0.5)
    for _ in range(3):
        w.grad = np.zeros((2, 2))
        opt.step()
    np.testing.assert_array_equal(w.values, before)


def test_train_config_errors():
    with pytest.raises(ValueError):
        ev.TrainConfig(learning_rate=-1e-3)
    with pytest.raises(ValueError):
        ev.TrainConfig(beta1=1.0)


# ------------------------------------------------------------------ train


def test_zero_learning_rate_leaves_parameters():
    samples = noise_samples(horizon=60)
    m = Model(ModelConfig("lstm", 4, 11, [0, 1, 2, 3], seed=3))
    before = [p.values.copy() for p in m.parameters()]
    m, trace = ev.train(m, samples, ev.TrainConfig(epochs=2, learning_rate=0.0))
    assert len(trace) == 2
    for b, p in zip(before, m.parameters()):
        np.testing.assert_array_equal(p.values, b)


@pytest.mark.parametrize("variant", ["fcl", "gcn", "lstm"])
def test_single_sample_overfit(variant):
    samples = noise_samples()[:1]
    m = Model(ModelConfig(variant, 4, 11, [0, 1, 2, 3], seed=1, fcl_days=5))
    _, trace = ev.train(m, samples, ev.TrainConfig(epochs=300, learning_rate=1e-2))
    assert trace[-1] < 1e-6


def test_zero_signal_loss_near_target_variance():
    samples = noise_samples(horizon=1500)
    train, test = data.chronological_split(samples)
    m = Model(ModelConfig("gcn", 4, 11, [0, 1, 2, 3], seed=1))
    m, trace = ev.train(m, train, ev.TrainConfig(epochs=3, learning_rate=1e-3))
    y = np.array([s.target for s in train]) / m.scale
    assert trace[-1] == pytest.approx(np.mean(y ** 2), rel=0.05)
    report, _ = ev.evaluate(m, test)
    assert report.r2_mean < 0.01


def test_training_bitwise_reproducible():
    samples = noise_samples(horizon=80, beta=0.5)

    def run():
        m = Model(ModelConfig("lstm-gcn", 4, 11, [0, 1, 2, 3], seed=7, hidden=3))
        m, trace = ev.train(m, samples, ev.TrainConfig(epochs=2, seed=7))
        return m, trace

    (m1, t1), (m2, t2) = run(), run()
    assert t1 == t2
    for a, b in zip(m1.parameters(), m2.parameters()):
        np.testing.assert_array_equal(a.values, b.values)


def test_nan_loss_aborts():
    samples = noise_samples(horizon=40)
    bad = samples[3]
    samples[3] = data.RollingWindowSample(bad.features, bad.graph, np.full_like(bad.target, np.nan),
                                          bad.target_date, bad.feature_end, bad.index)
    m = Model(ModelConfig("gcn", 4, 11, [0, 1, 2, 3], standardize=False))
    with pytest.raises(ev.NumericalError, match="epoch 0"):
        ev.train(m, samples, ev.TrainConfig(epochs=1))


def test_train_empty():
    with pytest.raises(ValueError):
        ev.train(Model(ModelConfig("gcn", 4, 11, [0])), [], ev.TrainConfig())


def test_carried_state_reaches_evaluation():
    samples = noise_samples(horizon=60)
    m = Model(ModelConfig("lstm", 4, 11, [0, 1, 2, 3], seed=3))
    m, _ = ev.train(m, samples[:30], ev.TrainConfig(epochs=1))
    assert m.state is not None
    rolled = None
    for s in samples[:30]:
        _, rolled = m.predict(s.graph, s.features, rolled)
    for a, b in zip(m.state, rolled):
        np.testing.assert_array_equal(a.h.values, b.h.values)
    first, _ = m.predict(samples[30].graph, samples[30].features, m.state)
    np.testing.assert_array_equal(ev.predict_all(m, samples[30:31])[0], first)


# ------------------------------------------------------------------ sweep


def test_sweep_windows():
    assert ev.sweep_windows(60) == [40, 50, 60, 70, 80]
    with pytest.raises(ValueError):
        ev.sweep_windows(10)


def test_robustness_sweep_order_and_columns():
    y = np.random.default_rng(0).normal(size=(20, 3))
    report = ev.metrics_from_predictions(0.5 * y, y)

    class Perf:
        ann_return_pct, sharpe, sortino = 3.0, 1.2, 1.5

    seen = []

    def one(w):
        seen.append(w)
        return ev.SweepResult(w, report, Perf())

    serial = ev.robustness_sweep(one, 60)
    assert [r.window for r in serial] == [40, 50, 60, 70, 80]
    parallel = ev.robustness_sweep(one, 60, workers=3)
    assert [r.window for r in parallel] == [40, 50, 60, 70, 80]
    rows = [ev.robustness_row(r.window, r.metrics, r.performance) for r in serial]
    text = ev.rows_to_csv(ev.ROBUSTNESS_COLUMNS, rows)
    lines = text.splitlines()
    assert lines[0] == ("length of rolling window,ann. Return (%),ann. Sharpe Ratio,"
                        "ann. Sortino Ratio,R^2,t-statistic,p-value")
    assert [ln.split(",")[0] for ln in lines[1:]] == ["40", "50", "60", "70", "80"]
    assert lines[1].split(",")[4] == repr(report.r2_mean)


def test_comparison_row_layout():
    y = np.random.default_rng(1).normal(size=(20, 3))
    report = ev.metrics_from_predictions(0.5 * y, y)
    row = ev.comparison_row("zero", report, None)
    assert len(row) == len(ev.COMPARISON_COLUMNS) and row[0] == "zero" and row[-1] == ""
    assert math.isclose(float(row[3]), report.r2_mean)
