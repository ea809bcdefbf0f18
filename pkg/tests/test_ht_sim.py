import math
from itertools import product

import numpy as np
import pytest

from aflf.ht import HtPair, chernoff_exponent, gamma_exponents, threshold_at
from aflf.ht_sim import (
    EmpiricalExponentWarning,
    TwoPhaseTestConfig,
    block_rng,
    empirical_exponent,
    exact_binary_oracle,
    mean_llr,
    monte_carlo_ht,
    phase1_decision,
    predicted_error_exponents,
    run_fixed_length_test,
    run_sprt,
    run_two_phase_test,
    simulate_sprt,
    wilson_interval,
)

PAIR = HtPair.bernoulli(0.9, 0.2)
L1, L0 = math.log2(4.5), math.log2(0.125)


def test_mean_llr_from_counts():
    counts = np.array([[3, 7], [10, 0]])
    assert mean_llr(counts, PAIR.llr(), 10) == pytest.approx([(3 * L0 + 7 * L1) / 10, L0])


def test_phase1_decision_and_overlap():
    assert phase1_decision([2.0, 0.0, -2.0], 1.0, -1.0).tolist() == [1, 0, 2]
    assert phase1_decision([0.5], 0.5, 0.5).tolist() == [1]


def test_fixed_length_test():
    assert run_fixed_length_test(PAIR, 4, 0.0, [1, 1, 1, 0]) == 1
    assert run_fixed_length_test(PAIR, 4, 0.0, [0, 0, 1, 0]) == 2
    with pytest.raises(ValueError):
        run_fixed_length_test(PAIR, 4, 0.0, [1, 1, 1])
    with pytest.raises(ValueError):
        run_fixed_length_test(PAIR, 2, 0.0, [1, 2])


def test_sprt_stops_at_threshold():
    # upper threshold (d12 - 0.5) * 3 is about 3.46, reached on the second one
    out = run_sprt(PAIR, 3, 0.5, iter([1, 1, 1, 1]))
    assert out == (1, 2, False)
    out = run_sprt(PAIR, 3, 0.5, iter([0, 0, 0]))
    assert out.decision == 2 and out.tau == 2


def test_sprt_cap_and_exhaustion():
    out = run_sprt(PAIR, 100, 0.0, iter([1, 0] * 50), cap=10)
    assert out == (None, 10, True)
    with pytest.raises(ValueError):
        run_sprt(PAIR, 100, 0.0, iter([1, 0]))


def test_sprt_vectorised_matches_scalar_rule():
    dec, tau = simulate_sprt(PAIR, 10, 0.2, 1, 2000, seed=3)
    assert set(np.unique(dec)) <= {1, 2}
    assert np.all(tau >= 1)
    # reaching (d12 - 0.2) * 10 needs at least ceil(14.5 / 2.17) samples
    assert tau.min() >= math.ceil((PAIR.d12 - 0.2) * 10 / L1 - 1e-12)
    assert np.mean(dec == 2) < 0.01


def test_config_thresholds():
    cfg = TwoPhaseTestConfig(PAIR, 0.25, 2, 10)
    ge = gamma_exponents(PAIR, 0.25)
    assert cfg.alpha1 == pytest.approx(ge.e2 - 0.25)
    assert cfg.beta1 == pytest.approx(0.25 - ge.e1)
    cp = chernoff_exponent(PAIR)
    assert cfg.alpha_phase2 == pytest.approx(threshold_at(PAIR, cp.lambda_star))
    assert cfg.phase2_reachable


def test_config_above_chernoff_is_fixed_length():
    cfg = TwoPhaseTestConfig(PAIR, 0.6, 2, 10)
    assert cfg.alpha1 == cfg.beta1 == cfg.alpha_phase2
    assert not cfg.phase2_reachable
    ex = exact_binary_oracle(cfg)
    assert ex.p1_continue == 0.0 and ex.p2_continue == 0.0


def test_config_validation():
    with pytest.raises(ValueError):
        TwoPhaseTestConfig(PAIR, -0.1, 2, 10)
    with pytest.raises(ValueError):
        TwoPhaseTestConfig(PAIR, 0.1, 1, 10)
    with pytest.raises(ValueError):
        TwoPhaseTestConfig(PAIR, 0.1, 2, 0)
    with pytest.raises(ValueError):
        TwoPhaseTestConfig(PAIR, 0.1, 2, 10, lambda_phase2=1.5)


def test_run_two_phase_test():
    cfg = TwoPhaseTestConfig(PAIR, 0.25, 3, 4)
    assert run_two_phase_test(cfg, iter([1] * 12)) == (1, 4)
    assert run_two_phase_test(cfg, iter([0] * 12)) == (2, 4)
    # two ones in four samples: mean LLR about -0.42 lies strictly inside
    stat = (2 * L1 + 2 * L0) / 4
    assert cfg.beta1 < stat < cfg.alpha1
    dec, tau = run_two_phase_test(cfg, iter([1, 0, 1, 0] + [1] * 8))
    assert (dec, tau) == (1, 12)


def _brute_force(cfg):
    """Probabilities by enumerating every binary sequence of length K n."""
    n, k = cfg.n, cfg.k
    out = {1: [0.0, 0.0], 2: [0.0, 0.0]}
    for seq in product((0, 1), repeat=k * n):
        dec, tau = run_two_phase_test(cfg, iter(seq))
        ones = sum(seq)
        for h, p in ((1, 0.9), (2, 0.2)):
            pr = p ** ones * (1 - p) ** (k * n - ones)
            if dec != h:
                out[h][0] += pr
            if tau > n:
                out[h][1] += pr
    return out


@pytest.mark.parametrize("gamma,k,n", [(0.25, 2, 5), (0.1, 3, 4), (0.45, 2, 6)])
def test_exact_oracle_matches_sequence_enumeration(gamma, k, n):
    cfg = TwoPhaseTestConfig(PAIR, gamma, k, n)
    ex = exact_binary_oracle(cfg)
    ref = _brute_force(cfg)
    assert ex.p1_err == pytest.approx(ref[1][0], rel=1e-10, abs=1e-300)
    assert ex.p2_err == pytest.approx(ref[2][0], rel=1e-10, abs=1e-300)
    assert ex.p1_continue == pytest.approx(ref[1][1], rel=1e-10, abs=1e-300)
    assert ex.p2_continue == pytest.approx(ref[2][1], rel=1e-10, abs=1e-300)


def test_exact_oracle_frozen_values():
    ex = exact_binary_oracle(TwoPhaseTestConfig(PAIR, 0.2, 2, 10))
    assert ex.p1_err == pytest.approx(1.926e-4, rel=1e-3)
    assert ex.p2_err == pytest.approx(1.616e-4, rel=1e-3)
    assert ex.p1_continue == pytest.approx(0.07004, rel=1e-3)
    assert ex.p2_continue == pytest.approx(0.032716, rel=1e-3)
    assert ex.total_mass(1) == pytest.approx(1.0, abs=1e-14)
    assert ex.total_mass(2) == pytest.approx(1.0, abs=1e-14)
    assert ex.log2("p1_err") == pytest.approx(math.log2(ex.p1_err))


def test_exact_oracle_rejects_larger_alphabets():
    pair = HtPair.from_spec("0.2,0.3,0.5;0.5,0.3,0.2")
    with pytest.raises(ValueError):
        exact_binary_oracle(TwoPhaseTestConfig(pair, 0.05, 2, 5))


def test_monte_carlo_agrees_with_oracle():
    cfg = TwoPhaseTestConfig(PAIR, 0.2, 2, 10)
    rep = monte_carlo_ht(cfg, 200_000, seed=5)
    assert all(rep.agrees_with(exact_binary_oracle(cfg)).values())
    assert rep.mean_tau(1) == pytest.approx(10 * (1 + rep.p_tau_exceeds_n[0]))


def test_monte_carlo_is_reproducible_and_thread_independent(monkeypatch):
    cfg = TwoPhaseTestConfig(PAIR, 0.2, 2, 10)
    trials = 3 * (1 << 16) + 17
    a = monte_carlo_ht(cfg, trials, seed=9)
    monkeypatch.setenv("AFLF_THREADS", "4")
    b = monte_carlo_ht(cfg, trials, seed=9)
    assert a == b
    assert monte_carlo_ht(cfg, trials, seed=10) != a


def test_block_rng_streams_are_keyed():
    a = block_rng(1, 2, 3).random(4)
    assert np.array_equal(a, block_rng(1, 2, 3).random(4))
    assert not np.array_equal(a, block_rng(1, 2, 4).random(4))


def test_wilson_interval():
    lo, hi = wilson_interval(0, 100, 1.0)
    assert lo == 0.0 and hi == pytest.approx(1 / 101)
    lo, hi = wilson_interval(50, 100, 1.96)
    assert (lo, hi) == pytest.approx((0.4038, 0.5962), abs=1e-4)
    with pytest.raises(ValueError):
        wilson_interval(0, 0)


def test_empirical_exponent():
    pts = [(n, 2.0 ** (-0.7 * n + 1)) for n in (10, 20, 30, 40)]
    assert empirical_exponent(pts) == pytest.approx(0.7)
    logs = [(n, -0.7 * n) for n in (10, 20, 30)]
    assert empirical_exponent(logs, log2_input=True) == pytest.approx(0.7)
    with pytest.warns(EmpiricalExponentWarning):
        assert empirical_exponent(pts + [(50, 0.0)]) == pytest.approx(0.7)
    with pytest.raises(ValueError):
        empirical_exponent(pts[:2])


def test_predicted_exponents():
    cfg = TwoPhaseTestConfig(PAIR, 0.25, 2, 10)
    e1, e2 = predicted_error_exponents(cfg)
    d_star = chernoff_exponent(PAIR).d_star
    ge = gamma_exponents(PAIR, 0.25)
    assert e1 == pytest.approx(min(ge.e1, 2 * d_star), abs=1e-9)
    assert e2 == pytest.approx(min(ge.e2, 2 * d_star), abs=1e-9)
