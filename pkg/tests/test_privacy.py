import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hashcomb.privacy import (
    DEFAULT_ALPHAS,
    EmpiricalDistribution,
    adjacent_divergence,
    adjacent_divergence_report,
    divergence_cap,
    epsilon_from_pmax,
    max_log_ratio,
    quantized_distribution,
    renyi_divergence,
)
from hashcomb.quantization import QuantizationScheme, channel_indices

UNIT = QuantizationScheme(-1.0, 1.0, 0.0)


def dist(freqs):
    f = np.asarray(freqs, dtype=np.float64)
    return EmpiricalDistribution(f, np.arange(f.size, dtype=np.float64), 0)


def naive_renyi(p, q, alpha):
    return math.log(sum(pi**alpha * qi ** (1 - alpha) for pi, qi in zip(p, q) if pi > 0)) / (alpha - 1)


def test_quantized_distribution_example():
    d = quantized_distribution([0.3, 0.3, -0.7], UNIT, 1)
    assert d.bins == 2
    assert list(d.support) == [-0.5, 0.5]
    assert list(d.frequencies) == [1 / 3, 2 / 3]


def test_quantized_distribution_uniform_concentration():
    n = 100_000
    d = quantized_distribution(np.random.default_rng(0).uniform(-1, 1, n), UNIT, 4)
    se = math.sqrt((1 / 16) * (15 / 16) / n)
    assert np.all(np.abs(d.frequencies - 1 / 16) <= 3 * se)


def test_singleton_sample():
    d = quantized_distribution([0.1], UNIT, 3)
    assert d.p_max == 1.0 and np.count_nonzero(d.frequencies) == 1


def test_out_of_range_sample():
    with pytest.raises(ValueError):
        quantized_distribution([2.0], UNIT, 3)


def test_distribution_validation():
    with pytest.raises(ValueError):
        dist([0.5, 0.6])
    with pytest.raises(ValueError):
        dist([1.5, -0.5])


def test_renyi_hand_value():
    value = renyi_divergence(dist([0.5, 0.5]), dist([0.75, 0.25]), 2)
    assert value == pytest.approx(math.log(0.25 / 0.75 + 0.25 / 0.25), rel=1e-15)
    assert value == pytest.approx(0.28768, abs=1e-5)


def test_renyi_infinite_on_missing_support():
    assert renyi_divergence(dist([0.5, 0.5]), dist([1.0, 0.0]), 2) == math.inf
    assert max_log_ratio(dist([0.5, 0.5]), dist([1.0, 0.0])) == math.inf


def test_renyi_zero_mass_in_p_is_skipped():
    p, q = dist([1.0, 0.0]), dist([0.5, 0.5])
    assert renyi_divergence(p, q, 2) == pytest.approx(math.log(2), rel=1e-15)


def test_support_mismatch():
    with pytest.raises(ValueError):
        renyi_divergence(dist([0.5, 0.5]), dist([1.0]), 2)
    with pytest.raises(ValueError):
        renyi_divergence(dist([0.5, 0.5]), dist([0.5, 0.5]), 1)


@settings(max_examples=200, deadline=None)
@given(
    weights=st.lists(st.floats(0.0, 1.0), min_size=1, max_size=40).filter(lambda w: sum(w) > 1e-3),
    alpha=st.sampled_from(DEFAULT_ALPHAS + (0.5,)),
)
def test_self_divergence_zero(weights, alpha):
    f = np.array(weights) / math.fsum(weights)
    f = f / math.fsum(f)
    if abs(math.fsum(f) - 1) > 1e-12:
        return
    assert abs(renyi_divergence(dist(f), dist(f), alpha)) <= 1e-12


def test_monotone_in_alpha():
    rng = np.random.default_rng(1)
    for _ in range(100):
        k = int(rng.integers(2, 30))
        p, q = rng.random(k) + 1e-3, rng.random(k) + 1e-3
        P, Q = dist(p / p.sum()), dist(q / q.sum())
        values = [renyi_divergence(P, Q, a) for a in (1.5, 2, 4, 8, 32)]
        assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))


def test_generic_form_matches_naive_sum():
    rng = np.random.default_rng(2)
    for _ in range(50):
        p, q = rng.random(12) + 0.01, rng.random(12) + 0.01
        p, q = p / p.sum(), q / q.sum()
        for a in (1.5, 2.0, 4.0):
            assert renyi_divergence(dist(p), dist(q), a) == pytest.approx(naive_renyi(p, q, a), rel=1e-10)


def _adjacent_pair(rng, n=200, level=6):
    sample = rng.uniform(-1, 1, n)
    j = int(rng.integers(n))
    neighbour = sample.copy()
    neighbour[j] = rng.uniform(-1, 1)
    P = quantized_distribution(sample, UNIT, level)
    Q = quantized_distribution(neighbour, UNIT, level)
    r = int(channel_indices([sample[j]], UNIT, level)[0])
    s = int(channel_indices([neighbour[j]], UNIT, level)[0])
    return P, Q, r, s


def test_restricted_form_equals_generic_exactly():
    rng = np.random.default_rng(3)
    for _ in range(200):
        P, Q, r, s = _adjacent_pair(rng)
        for alpha in DEFAULT_ALPHAS:
            assert adjacent_divergence(P, Q, r, s, alpha) == renyi_divergence(P, Q, alpha)


def test_restricted_form_rejects_non_adjacent():
    with pytest.raises(ValueError):
        adjacent_divergence(dist([0.5, 0.3, 0.2]), dist([0.3, 0.3, 0.4]), 1, 2, 2.0)


def test_cap_plug_in():
    assert divergence_cap(2, 4, 0.5) == pytest.approx(-math.log(2), rel=1e-15)
    with pytest.raises(ValueError):
        divergence_cap(1, 4, 0.5)


def test_epsilon_summary_verbatim_sign():
    assert epsilon_from_pmax(0.5) == 2 * math.log(0.5) < 0
    assert epsilon_from_pmax(1.0) == 0.0


def test_pmax_shrinks_with_finer_channels():
    x = np.random.default_rng(4).uniform(-1, 1, 5000)
    pmax = [quantized_distribution(x, UNIT, level).p_max for level in range(2, 11)]
    assert all(b < a for a, b in zip(pmax, pmax[1:]))


def test_report_same_channel_is_zero():
    sample = np.array([0.30, -0.5, 0.8, 0.1])
    report = adjacent_divergence_report(sample, 0, 0.3001, UNIT, level=4)
    assert report["replaced_bin"] == report["replacement_bin"]
    assert report["d_inf"] == 0.0
    assert all(rec["divergence"] == 0.0 for rec in report["records"])


def test_report_fields():
    sample = np.random.default_rng(5).uniform(-1, 1, 400)
    report = adjacent_divergence_report(sample, 3, 0.99, UNIT, level=6)
    assert {"level", "bins", "replaced_bin", "replacement_bin", "d_inf", "epsilon_abs", "records"} <= set(report)
    assert [rec["alpha"] for rec in report["records"]] == list(DEFAULT_ALPHAS)
    for rec in report["records"]:
        assert {"alpha", "divergence", "cap", "p_max", "n", "epsilon_eq12"} <= set(rec)
        assert rec["n"] == 400
        assert rec["divergence"] == rec["divergence_restricted"]
        assert rec["cap"] == divergence_cap(rec["alpha"], 400, rec["p_max"])
    assert report["epsilon_abs"] == abs(report["records"][0]["epsilon_eq12"])
    large = report["records"][-1]["divergence"]
    assert large <= report["d_inf"] + 1e-12


def test_report_rejects_bad_index():
    with pytest.raises(IndexError):
        adjacent_divergence_report([0.1, 0.2], 5, 0.0, UNIT)
