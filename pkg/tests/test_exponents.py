import math
import warnings

import numpy as np
import pytest

from aflf.dmc import Channel, Distribution, capacity
from aflf.exponents import (
    AflfParams,
    ExponentCurve,
    FeasibilityWarning,
    PartialBoundWarning,
    UnsupportedChannelError,
    aflf_lower_bound,
    aflf_lower_bound_gamma0,
    alpha_star,
    burnashev_exponent,
    corollary_bounds,
    critical_rate,
    er_table,
    exponent_curve,
    gallager_e0,
    haroutunian_exponent,
    k_star_channel,
    optimize_two_phase,
    random_coding_exponent,
    sphere_packing_exponent,
    structural_converse,
)
from aflf.verification import brute_force_two_phase

BSC = Channel.bsc(0.2)
C = capacity(BSC)
UNIFORM = Distribution.uniform(2)

# brute-force maximum over a 1e-4 rho grid and a 0.01 Q grid
ER_01_GRID = 0.05396678750328082
# alpha solving alpha E_r(0.1/alpha) = 0.02, from a 1e-5 alpha scan
ALPHA_STAR_SCAN = 0.70941


def test_e0_values():
    assert gallager_e0(BSC, UNIFORM, 0.0) == pytest.approx(0.0, abs=1e-15)
    assert gallager_e0(BSC, UNIFORM, 1.0) == pytest.approx(1 - math.log2(1.8), abs=1e-12)
    assert gallager_e0(Channel.bsc(0.5), UNIFORM, 1.0) == pytest.approx(0.0, abs=1e-15)


def test_random_coding_exponent_values():
    assert random_coding_exponent(BSC, C) == 0.0
    assert random_coding_exponent(BSC, 0.0) == pytest.approx(0.152003, abs=1e-6)
    assert random_coding_exponent(BSC, 0.1) == pytest.approx(ER_01_GRID, abs=1e-5)


def test_random_coding_exponent_domain():
    with pytest.raises(ValueError):
        random_coding_exponent(BSC, C + 1e-3)


def test_sphere_packing_values():
    assert sphere_packing_exponent(BSC, C) == 0.0
    rc = critical_rate(BSC)
    assert sphere_packing_exponent(BSC, rc) == pytest.approx(random_coding_exponent(BSC, rc), abs=1e-9)
    for r in np.linspace(rc, C, 12)[1:-1]:
        assert sphere_packing_exponent(BSC, r) >= random_coding_exponent(BSC, r)
    with pytest.raises(ValueError):
        sphere_packing_exponent(BSC, 0.0)


def test_sphere_packing_finite_for_erasure_infinite_for_noiseless():
    # on the BEC E0(rho) stays below log2(1/eps), so any positive rate gives a finite value
    assert math.isfinite(sphere_packing_exponent(Channel.bec(0.3), 0.05))
    # for the noiseless channel E0(rho) = rho, so the objective grows without bound
    assert sphere_packing_exponent(Channel(np.eye(2)), 0.5) == math.inf


def test_haroutunian():
    assert haroutunian_exponent(BSC, 0.15) == sphere_packing_exponent(BSC, 0.15)
    assert haroutunian_exponent(Channel.bec(0.3), 0.7) == 0.0
    with pytest.raises(UnsupportedChannelError):
        haroutunian_exponent(Channel.z_channel(0.3), 0.1)


def test_burnashev():
    assert burnashev_exponent(BSC, 0.0) == pytest.approx(1.2, abs=1e-12)
    assert burnashev_exponent(BSC, C) == 0.0
    assert burnashev_exponent(BSC, C / 2) == pytest.approx(0.6, abs=1e-12)
    assert burnashev_exponent(Channel.z_channel(0.3), 0.1) == math.inf


def test_k_star_channel():
    assert k_star_channel(BSC) == pytest.approx(1 + 1.2 / 0.152003093445, abs=1e-9)
    assert k_star_channel(BSC) == pytest.approx(8.894576, abs=1e-6)
    assert k_star_channel(Channel(np.eye(2))) == math.inf
    p = 0.45
    c1 = (1 - 2 * p) * math.log2((1 - p) / p)
    er0 = 1 - math.log2(1 + 2 * math.sqrt(p * (1 - p)))
    assert k_star_channel(Channel.bsc(p)) == pytest.approx(1 + c1 / er0, rel=1e-9)
    with pytest.raises(UnsupportedChannelError):
        k_star_channel(Channel.bsc(0.5))


def test_gamma0_bound():
    assert aflf_lower_bound_gamma0(BSC, 0.1, 9) == pytest.approx(1.2 * (1 - 0.1 / C), abs=1e-12)
    assert aflf_lower_bound_gamma0(BSC, C, 4) == 0.0
    expected = min(burnashev_exponent(BSC, 0.1), random_coding_exponent(BSC, 0.1))
    assert aflf_lower_bound_gamma0(BSC, 0.1, 2) == pytest.approx(expected, abs=1e-12)


def test_gamma0_bound_retransmission_term_vanishes_above_capacity():
    # R / (K - 1) > C only if R > C, so use the raw term through K = 2 at R = C
    assert aflf_lower_bound_gamma0(BSC, C, 2) == 0.0


def test_alpha_star():
    a = alpha_star(BSC, 0.1, 0.02)
    assert a == pytest.approx(ALPHA_STAR_SCAN, abs=2e-5)
    assert a * random_coding_exponent(BSC, 0.1 / a) == pytest.approx(0.02, abs=1e-8)


def test_alpha_star_limits():
    assert alpha_star(BSC, 0.1, 1e-9) == pytest.approx(0.1 / C, rel=1e-3)
    er = random_coding_exponent(BSC, 0.1)
    assert alpha_star(BSC, 0.1, er * (1 - 1e-9)) == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(ValueError):
        alpha_star(BSC, 0.1, er)


def test_aflf_bound_large_gamma_is_random_coding():
    er = random_coding_exponent(BSC, 0.25)
    assert aflf_lower_bound(BSC, 0.25, AflfParams(0.2, 9)) == pytest.approx(er, abs=1e-10)


def test_aflf_bound_small_gamma_approaches_burnashev():
    # the gap closes linearly in gamma
    for r in np.linspace(0.01, C - 0.01, 15):
        gaps = [burnashev_exponent(BSC, r) - aflf_lower_bound(BSC, r, AflfParams(g, 9)) for g in (1e-7, 1e-9)]
        assert 0.0 <= gaps[1] < 2e-4
        assert gaps[1] < gaps[0] / 5


@pytest.mark.parametrize("rate,gamma", [(0.1, 0.02), (0.05, 0.05), (0.15, 0.01)])
def test_aflf_bound_matches_grid(rate, gamma):
    ref = brute_force_two_phase(BSC, rate, gamma, 9)[0]
    assert aflf_lower_bound(BSC, rate, AflfParams(gamma, 9)) == pytest.approx(ref, abs=1e-4)


def test_aflf_bound_infeasible_falls_back_with_warning():
    # at R = 0.1 the tail budget gamma = 0.05 leaves no admissible (alpha, lambda)
    er = random_coding_exponent(BSC, 0.1)
    with pytest.warns(FeasibilityWarning):
        val = aflf_lower_bound(BSC, 0.1, AflfParams(0.05, 9))
    assert val == pytest.approx(er, abs=1e-10)
    assert optimize_two_phase(BSC, 0.1, 0.05) is None


def test_aflf_params_validation():
    with pytest.raises(ValueError):
        AflfParams(-0.1, 4)
    with pytest.raises(ValueError):
        AflfParams(0.1, 1)


def test_rate_sandwich_bounds():
    lo, hi = corollary_bounds(BSC, 0.0)
    assert lo == pytest.approx(0.152003, abs=1e-6)
    assert hi == pytest.approx(1.2, abs=1e-12)
    assert corollary_bounds(BSC, C) == (0.0, 0.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for r in np.linspace(0.0, C, 9):
            lo, hi = corollary_bounds(BSC, r)
            val = aflf_lower_bound(BSC, r, AflfParams(0.03, 9))
            assert lo - 1e-12 <= val <= hi + 1e-12


def test_structural_converse():
    params = AflfParams(0.05, 4)
    k_term = 4 * sphere_packing_exponent(BSC, 0.1 / 4)
    assert structural_converse(BSC, 0.1, params, lambda r, g: math.inf) == pytest.approx(k_term)
    composed = structural_converse(BSC, 0.1, params, lambda r, g: burnashev_exponent(BSC, r))
    assert composed == pytest.approx(min(burnashev_exponent(BSC, 0.1), k_term))
    assert structural_converse(BSC, C, params, lambda r, g: burnashev_exponent(BSC, r)) == 0.0
    with pytest.warns(PartialBoundWarning):
        assert structural_converse(BSC, 0.1, params) == pytest.approx(k_term)
    with pytest.raises(UnsupportedChannelError):
        structural_converse(Channel.z_channel(0.3), 0.1, params, lambda r, g: 0.0)


def test_er_table_matches_pointwise():
    table = er_table(BSC)
    rates = np.linspace(0.0, C, 301)
    exact = np.array([random_coding_exponent(BSC, r) for r in rates])
    assert np.max(np.abs(table(rates) - exact)) < 1e-10


def test_non_symmetric_random_coding_exponent_against_grid():
    ch = Channel.z_channel(0.3)
    w = ch.matrix
    rho = np.linspace(0, 1, 2001)
    best = -1.0
    for q in np.linspace(0, 1, 401):
        qq = np.array([1 - q, q])
        s = 1 / (1 + rho)
        with np.errstate(divide="ignore"):
            a = (qq[:, None, None] * np.where(w > 0, w, 0)[:, :, None] ** s).sum(0)
        e0 = -np.log2((a ** (1 + rho)).sum(0))
        best = max(best, float(np.max(e0 - rho * 0.1)))
    assert random_coding_exponent(ch, 0.1) == pytest.approx(best, abs=1e-5)
    assert random_coding_exponent(ch, 0.1) >= best - 1e-12


def test_exponent_curve_validation():
    curve = exponent_curve("rc", [0.0, 0.1], [0.15, 0.05])
    assert curve.rates.tolist() == [0.0, 0.1]
    with pytest.raises(ValueError):
        ExponentCurve("bad", ((0.1, 0.1), (0.1, 0.05)))
    with pytest.raises(ValueError):
        ExponentCurve("bad", ((0.0, -1.0),))
