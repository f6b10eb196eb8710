import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from variance_tts.errors import DataError
from variance_tts.metrics import (
    EvalReport, ProsodySample, dtw_distance, energy_mae, evaluate_corpus, pitch_moments,
)


def brute_moments(x):
    n = len(x)
    mean = sum(x) / n
    m2 = sum((v - mean) ** 2 for v in x) / n
    m3 = sum((v - mean) ** 3 for v in x) / n
    m4 = sum((v - mean) ** 4 for v in x) / n
    sigma = math.sqrt(sum((v - mean) ** 2 for v in x) / (n - 1))
    g1 = m3 / m2**1.5
    g2 = m4 / m2**2 - 3
    G1 = math.sqrt(n * (n - 1)) / (n - 2) * g1
    G2 = (n - 1) / ((n - 2) * (n - 3)) * ((n + 1) * g2 + 6)
    return sigma, G1, G2


def test_moments_fixture_matches_brute_force():
    x = list(np.random.default_rng(0).gamma(3.0, 20.0, 20) + 80)
    m = pitch_moments(x)
    s, g, k = brute_moments(x)
    assert abs(m.sigma - s) <= 1e-9 and abs(m.gamma - g) <= 1e-9 and abs(m.kappa - k) <= 1e-9


def test_moments_constant_sequence():
    m = pitch_moments([120.0] * 6)
    assert m.sigma == 0.0 and m.gamma is None and m.kappa is None


def test_moments_symmetric_has_zero_skew():
    assert pitch_moments([1, 2, 3, 4, 5]).gamma == pytest.approx(0.0, abs=1e-15)


def test_moments_insufficient_samples():
    assert pitch_moments([100.0]).sigma is None
    m2 = pitch_moments([100.0, 110.0])
    assert m2.sigma is not None and m2.gamma is None
    m3 = pitch_moments([100.0, 110.0, 130.0])
    assert m3.gamma is not None and m3.kappa is None


def test_moments_log_domain():
    x = [100.0, 120.0, 150.0, 90.0]
    assert pitch_moments(x, "log").sigma == pytest.approx(np.std(np.log(x), ddof=1), rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(60, 400), min_size=4, max_size=30), st.floats(-50, 50), st.floats(0.1, 5))
def test_moments_translation_and_scale(values, shift, c):
    x = np.array(values)
    base = pitch_moments(x)
    if base.gamma is None or base.sigma < 1e-3:
        return
    moved = pitch_moments(c * x + shift)
    assert moved.sigma == pytest.approx(c * base.sigma, rel=1e-7)
    assert moved.gamma == pytest.approx(base.gamma, rel=1e-6, abs=1e-8)
    assert moved.kappa == pytest.approx(base.kappa, rel=1e-6, abs=1e-8)


# --- DTW --------------------------------------------------------------------


def brute_dtw(a, b):
    """Enumerate every monotone path; min total cost, ties broken by the shorter path."""
    n, m = len(a), len(b)
    best = None

    def walk(i, j, cost, length):
        nonlocal best
        cost += abs(a[i] - b[j])
        length += 1
        if i == n - 1 and j == m - 1:
            if best is None or (cost, length) < best:
                best = (cost, length)
            return
        for di, dj in ((1, 0), (0, 1), (1, 1)):
            if i + di < n and j + dj < m:
                walk(i + di, j + dj, cost, length)

    walk(0, 0, 0.0, 0)
    return best[0] / best[1]


def test_dtw_trivial_cases():
    assert dtw_distance([1, 2, 3], [1, 2, 3]) == 0.0
    assert dtw_distance([4.0], [1.5]) == 2.5
    assert dtw_distance([1, 2, 3], [1, 3]) == brute_dtw([1, 2, 3], [1, 3])


def test_dtw_empty_rejected():
    with pytest.raises(DataError):
        dtw_distance([], [1.0])


@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(-5, 5), min_size=1, max_size=6), st.lists(st.integers(-5, 5), min_size=1, max_size=6))
def test_dtw_matches_brute_force(a, b):
    assert dtw_distance(a, b) == brute_dtw(a, b)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=12), st.lists(st.floats(-10, 10), min_size=1, max_size=12))
def test_dtw_symmetric(a, b):
    assert dtw_distance(a, b) == dtw_distance(b, a)


def test_dtw_all_pairs_of_short_binary_sequences():
    for n, m in itertools.product(range(1, 4), repeat=2):
        for a in itertools.product([0, 2], repeat=n):
            for b in itertools.product([0, 1], repeat=m):
                assert dtw_distance(a, b) == brute_dtw(a, b)


# --- energy / corpus --------------------------------------------------------


def test_energy_mae():
    x = np.random.default_rng(1).random(10)
    assert energy_mae(x, x) == 0.0
    assert energy_mae(x + 0.25, x) == pytest.approx(0.25, abs=1e-12)
    y = np.random.default_rng(2).random(10)
    assert abs(energy_mae(x, y) - sum(abs(a - b) for a, b in zip(x, y)) / 10) <= 1e-12
    assert energy_mae(x, y) == energy_mae(y, x)
    with pytest.raises(DataError):
        energy_mae(x, y[:9])


def sample(rng, T=30):
    f0 = rng.uniform(90, 200, T)
    f0[rng.random(T) < 0.3] = 0
    return ProsodySample(f0, rng.uniform(0, 10, T))


def test_corpus_self_comparison():
    rng = np.random.default_rng(3)
    ref = {f"u{i}": sample(rng) for i in range(3)}
    rep = evaluate_corpus(ref, ref, (0.0, 10.0))
    assert rep.count == 3 and rep.mean_dtw == 0.0 and rep.mean_energy_mae == 0.0
    assert all(r.pred == r.ref for r in rep.rows)


def test_corpus_means_are_hand_averages():
    rng = np.random.default_rng(4)
    ref = {"a": sample(rng), "b": sample(rng)}
    pred = {"a": sample(rng), "b": sample(rng)}
    rep = evaluate_corpus(pred, ref, (0.0, 10.0))
    assert rep.mean_dtw == pytest.approx((rep.rows[0].dtw + rep.rows[1].dtw) / 2, rel=1e-15)
    assert rep.mean_moments("pred").sigma == pytest.approx((rep.rows[0].pred.sigma + rep.rows[1].pred.sigma) / 2)
    single = evaluate_corpus({"a": pred["a"]}, {"a": ref["a"]}, (0.0, 10.0))
    assert single.mean_energy_mae == single.rows[0].energy_mae


def test_corpus_energy_is_min_max_scaled():
    ref = {"a": ProsodySample(np.array([100.0, 110, 120]), np.array([0.0, 5.0, 10.0]))}
    pred = {"a": ProsodySample(np.array([100.0, 110, 120]), np.array([2.0, 7.0, 12.0]))}
    assert evaluate_corpus(pred, ref, (0.0, 10.0)).rows[0].energy_mae == pytest.approx(0.2)


def test_corpus_unmatched_ids_listed():
    rng = np.random.default_rng(5)
    with pytest.raises(DataError, match="'b'"):
        evaluate_corpus({"a": sample(rng)}, {"a": sample(rng), "b": sample(rng)}, (0.0, 1.0))


def test_report_formats():
    rng = np.random.default_rng(6)
    ref = {f"u{i}": sample(rng) for i in range(2)}
    rep = evaluate_corpus(ref, ref, (0.0, 10.0))
    lines = rep.to_csv().strip().splitlines()
    assert lines[0].split(",") == list(EvalReport.HEADER)
    assert len(lines) == 1 + 2 + 1 and lines[-1].startswith("mean,")
    assert "utterances: 2" in rep.to_text()
    with pytest.raises(DataError):
        EvalReport([])
