import math
import warnings

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from aflf.code_sim import message_count
from aflf.dmc import (
    Channel,
    Distribution,
    TiltedPair,
    c1_and_extremal_inputs,
    capacity,
    kl_divergence,
    mutual_information,
    tilted_distribution,
)
from aflf.exponents import (
    AflfParams,
    aflf_lower_bound,
    burnashev_exponent,
    random_coding_exponent,
    sphere_packing_exponent,
)
from aflf.ht import (
    HtPair,
    afl_region,
    chernoff_exponent,
    fl_region_boundary,
    gamma_exponents,
    region_contains,
    tilt_divergences,
)
from aflf.ht_sim import TwoPhaseTestConfig, exact_binary_oracle, wilson_interval

FAST = settings(max_examples=40, deadline=None)
SLOW = settings(max_examples=15, deadline=None)

prob = st.floats(0.02, 0.98)
lam = st.floats(0.0, 1.0)


@st.composite
def simplex(draw, size=None):
    k = size or draw(st.integers(2, 5))
    w = np.array(draw(st.lists(st.floats(0.05, 1.0), min_size=k, max_size=k)))
    return Distribution(w / w.sum())


@st.composite
def channels(draw):
    nx = draw(st.integers(2, 3))
    ny = draw(st.integers(2, 4))
    rows = [draw(simplex(ny)).probs for _ in range(nx)]
    return Channel(np.array(rows))


@st.composite
def distinct_bernoulli_pairs(draw):
    a, b = draw(prob), draw(prob)
    assume(abs(a - b) > 0.1)
    return HtPair.bernoulli(a, b)


@FAST
@given(st.integers(2, 5).flatmap(lambda k: st.tuples(simplex(k), simplex(k))))
def test_kl_is_non_negative(pq):
    p, q = pq
    assert kl_divergence(p, q) >= 0.0
    assert kl_divergence(p, p) == pytest.approx(0.0, abs=1e-12)


@FAST
@given(st.integers(2, 4).flatmap(lambda k: st.tuples(simplex(k), simplex(k))), lam)
def test_tilt_is_a_distribution(pq, t):
    tilt = tilted_distribution(TiltedPair(*pq), t)
    assert tilt.probs.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(tilt.probs >= 0)


@FAST
@given(distinct_bernoulli_pairs(), lam, lam)
def test_tilt_divergences_are_monotone(pair, a, b):
    lo, hi = sorted((a, b))
    d1_lo, d2_lo = tilt_divergences(pair, lo)
    d1_hi, d2_hi = tilt_divergences(pair, hi)
    assert d1_hi >= d1_lo - 1e-12
    assert d2_hi <= d2_lo + 1e-12


@FAST
@given(channels(), st.data())
def test_capacity_bounds_every_input(ch, data):
    c = capacity(ch)
    assert -1e-12 <= c <= math.log2(min(ch.matrix.shape)) + 1e-12
    q = data.draw(simplex(ch.n_inputs))
    assert mutual_information(q, ch) <= c + 1e-8


@FAST
@given(channels())
def test_c1_dominates_row_divergences(ch):
    res = c1_and_extremal_inputs(ch)
    for i in range(ch.n_inputs):
        for j in range(ch.n_inputs):
            assert kl_divergence(ch.row(i), ch.row(j)) <= res.c1 + 1e-12


@SLOW
@given(st.floats(0.01, 0.4), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_random_coding_exponent_monotone_and_below_others(p, u, v):
    ch = Channel.bsc(p)
    c = capacity(ch)
    r1, r2 = sorted((u * c, v * c))
    e1, e2 = random_coding_exponent(ch, r1), random_coding_exponent(ch, r2)
    assert e2 <= e1 + 1e-12
    assert e1 <= burnashev_exponent(ch, r1) + 1e-12
    if r2 > 0:
        assert e2 <= sphere_packing_exponent(ch, r2) + 1e-12


@SLOW
@given(st.floats(0.01, 0.99), st.floats(1e-4, 0.15), st.integers(2, 12))
def test_aflf_bound_is_sandwiched(u, gamma, k):
    ch = Channel.bsc(0.2)
    r = u * capacity(ch)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        val = aflf_lower_bound(ch, r, AflfParams(gamma, k))
    assert random_coding_exponent(ch, r) - 1e-12 <= val <= burnashev_exponent(ch, r) + 1e-12


@FAST
@given(distinct_bernoulli_pairs(), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_gamma_exponents_trade_off(pair, u, v):
    d_star = chernoff_exponent(pair).d_star
    g1, g2 = sorted((u * d_star, v * d_star))
    a, b = gamma_exponents(pair, g1), gamma_exponents(pair, g2)
    assert b.e1 <= a.e1 + 1e-9
    assert b.e2 <= a.e2 + 1e-9
    assert a.e1 >= d_star - 1e-9 and a.e2 >= d_star - 1e-9


@SLOW
@given(distinct_bernoulli_pairs(), st.floats(0.0, 1.2), st.integers(1, 6))
def test_afl_region_sandwich_and_nesting(pair, frac, k):
    gamma = frac * chernoff_exponent(pair).d_star
    fl = fl_region_boundary(pair, 128)
    small = afl_region(pair, gamma, k, 128)
    big = afl_region(pair, gamma, k + 1, 128)
    xs = np.linspace(0, pair.d21 * (k + 1), 200)
    fl_up = fl.upper(xs)
    assert np.all(small.upper(xs) >= fl_up - 1e-9)
    assert np.all(small.upper(xs) <= k * fl.upper(xs / k) + 1e-9)
    assert np.all(big.upper(xs) >= small.upper(xs) - 1e-9)


@FAST
@given(distinct_bernoulli_pairs(), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_region_membership_is_downward_closed(pair, u, v):
    fl = fl_region_boundary(pair, 64)
    e1 = u * pair.d21
    e2 = fl.upper(e1)
    assert region_contains(fl, e1, e2)
    assert region_contains(fl, e1 * v, e2 * v)


@SLOW
@given(distinct_bernoulli_pairs(), st.floats(0.0, 1.0), st.integers(2, 4), st.integers(1, 25))
def test_exact_oracle_conserves_mass(pair, frac, k, n):
    gamma = frac * chernoff_exponent(pair).d_star
    ex = exact_binary_oracle(TwoPhaseTestConfig(pair, gamma, k, n))
    assert ex.total_mass(1) == pytest.approx(1.0, abs=1e-12)
    assert ex.total_mass(2) == pytest.approx(1.0, abs=1e-12)
    assert 0.0 <= ex.p1_continue <= 1.0 + 1e-12


@FAST
@given(st.integers(1, 10_000), st.data())
def test_wilson_interval_contains_frequency(trials, data):
    count = data.draw(st.integers(0, trials))
    lo, hi = wilson_interval(count, trials, 3.0)
    assert lo <= count / trials <= hi
    assert 0.0 <= lo <= hi <= 1.0


@FAST
@given(st.integers(4, 128), st.floats(0.01, 0.1))
def test_message_count_covers_rate(ell, rate):
    m = message_count(ell, rate)
    assert m >= 2.0 ** (ell * rate) * (1 - 1e-9)
    assert m - 1 < 2.0 ** (ell * rate)
