"""Self-checks behind ``aflf verify`` and the acceptance tests.

Each ``check_*`` function reproduces one numbered acceptance criterion against
an independent reference (closed forms, brute-force grids, exact enumeration)
and returns a :class:`CheckResult`. ``slack`` scales every tolerance; passing a
negative value makes every comparison fail, which is how the harness tests
itself.
"""

from __future__ import annotations

import io
import math
import time
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .code_sim import CodeConfig, monte_carlo_code, run_flf_baseline, select_parameters
from .dmc import (
    Channel,
    Distribution,
    TiltedPair,
    c1_and_extremal_inputs,
    capacity,
    kl_divergence,
    tilted_distribution,
)
from .exponents import (
    AflfParams,
    aflf_lower_bound,
    aflf_lower_bound_gamma0,
    burnashev_exponent,
    critical_rate,
    k_star_channel,
    random_coding_exponent,
    sphere_packing_exponent,
)
from .ht import (
    HtPair,
    afl_region,
    chernoff_exponent,
    fl_region_boundary,
    k_star_ht,
    seq_region,
    tilt_divergences,
)
from .ht_sim import (
    TwoPhaseTestConfig,
    empirical_exponent,
    exact_binary_oracle,
    monte_carlo_ht,
    predicted_error_exponents,
)

REFERENCE_CHANNEL = "bsc:0.2"
REFERENCE_PAIR = (0.9, 0.2)
TWO_PHASE_PROBES = (
    (0.02, 0.02), (0.05, 0.02), (0.1, 0.02), (0.05, 0.05), (0.02, 0.1),
    (0.15, 0.01), (0.2, 0.005), (0.1, 0.04), (0.0, 0.05),
)


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float
    budget: float

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.number:2d} {self.name}: {self.detail} ({self.seconds:.2f}s / {self.budget:g}s)"


def _run(number: int, name: str, budget: float, body: Callable[[], tuple[bool, str]]) -> CheckResult:
    t0 = time.perf_counter()
    try:
        ok, detail = body()
    except Exception as exc:  # a crash is a failure, reported rather than raised
        ok, detail = False, f"error: {exc!r}"
    dt = time.perf_counter() - t0
    if dt > budget:
        ok, detail = False, detail + "; over time budget"
    return CheckResult(number, name, ok, detail, dt, budget)


def _bsc() -> Channel:
    return Channel.from_spec(REFERENCE_CHANNEL)


def _pair() -> HtPair:
    return HtPair.bernoulli(*REFERENCE_PAIR)


# ------------------------------------------------------------------ 1..3


def check_constants(slack: float = 1.0) -> CheckResult:
    def body():
        ch = _bsc()
        c = capacity(ch)
        c1 = c1_and_extremal_inputs(ch).c1
        er0 = random_coding_exponent(ch, 0.0)
        c_closed = 1 + 0.2 * math.log2(0.2) + 0.8 * math.log2(0.8)
        errs = {
            "capacity": (abs(c - 0.278072), 1e-6),
            "capacity_closed": (abs(c - c_closed), 1e-6),
            "C1": (abs(c1 - 1.2), 1e-9),
            "E_r(0)": (abs(er0 - 0.152003), 1e-6),
            "E_r(0)_closed": (abs(er0 - (1 - math.log2(1.8))), 1e-6),
        }
        ok = all(e <= tol * slack for e, tol in errs.values())
        ok &= burnashev_exponent(ch, 0.0) == c1 and burnashev_exponent(ch, c) == 0.0
        ok &= slack >= 0
        worst = max(errs, key=lambda k: errs[k][0] / errs[k][1])
        return ok, f"C={c:.9f} C1={c1:.12f} E_r(0)={er0:.9f}; smallest margin on {worst}"

    return _run(1, "closed-form constants", 1.0, body)


def check_gamma0_collapse(slack: float = 1.0) -> CheckResult:
    def body():
        ch = _bsc()
        c = capacity(ch)
        k = 9
        kstar = k_star_channel(ch)
        rates = np.linspace(0.0, c, 100)
        gap = max(abs(aflf_lower_bound_gamma0(ch, r, k) - burnashev_exponent(ch, r)) for r in rates)
        ok = k >= kstar and gap <= 1e-9 * slack
        return ok, f"K*={kstar:.6f}, max gap {gap:.2e} on 100 rates"

    return _run(2, "gamma=0 collapse to the variable-length exponent", 5.0, body)


def check_bound_ordering(slack: float = 1.0) -> CheckResult:
    def body():
        ch = _bsc()
        c = capacity(ch)
        rc = critical_rate(ch)
        rates = np.linspace(0.0, c, 102)[1:-1]
        order_ok = True
        eq_gap = 0.0
        for r in rates:
            er = random_coding_exponent(ch, r)
            esp = sphere_packing_exponent(ch, r)
            evlf = burnashev_exponent(ch, r)
            order_ok &= er <= esp < evlf
            if r >= rc:
                eq_gap = max(eq_gap, abs(esp - er))
        ok = bool(order_ok) and eq_gap <= 1e-6 * slack
        return ok, f"ordering {'holds' if order_ok else 'violated'}; |E_sp-E_r| above R_crit <= {eq_gap:.1e}"

    return _run(3, "E_r <= E_sp < E_VLF ordering", 60.0, body)


# -------------------------------------------------------------------- 4


def brute_force_two_phase(ch: Channel, rate: float, gamma: float, k: int,
                          step: float = 1e-3) -> tuple[float, float, float]:
    """Grid maximisation of the two-phase error-erasure exponent.

    Returns (bound, alpha, lambda): the maximum capped by the retransmission
    term, and the grid point attaining the uncapped maximum.

    alpha runs over alpha* + j step up to 1 and lambda over a uniform grid of the
    same step. Because the tail constraint binds at the optimum, each alpha also
    gets the exact boundary lambda where the constraint holds with equality;
    without it a pure grid misses the constrained optimum by O(step).
    Only dmc primitives and the pointwise random-coding exponent are used.
    """
    res = c1_and_extremal_inputs(ch)
    wx, wxp = ch.row(res.x), ch.row(res.x_prime)
    pair = TiltedPair(wx, wxp)

    def divs(lam):
        t = tilted_distribution(pair, lam)
        return kl_divergence(t, wx), kl_divergence(t, wxp)

    lams = np.linspace(0.0, 1.0, int(round(1 / step)) + 1)
    table = np.array([divs(l) for l in lams])
    d_ack, d_nack = table[:, 0], table[:, 1]
    d_max = kl_divergence(wxp, wx)
    c = capacity(ch)
    if rate == 0:
        a_star = gamma / random_coding_exponent(ch, 0.0)
    else:
        a_star = brentq(lambda a: a * random_coding_exponent(ch, min(rate / a, c)) - gamma,
                        rate / c, 1.0, xtol=1e-14)
    alphas = np.append(np.arange(a_star, 1.0, step), 1.0)
    best, arg = -math.inf, (math.nan, math.nan)
    for a in alphas:
        need = gamma / (1 - a) if a < 1 else math.inf
        if need > d_max:
            continue
        er = random_coding_exponent(ch, rate / a)
        feas = (1 - a) * d_ack >= gamma
        cand_l = list(lams[feas])
        cand_v = list(d_nack[feas])
        lam_b = brentq(lambda l: divs(l)[0] - need, 0.0, 1.0, xtol=1e-15) if need > 0 else 0.0
        cand_l.append(lam_b)
        cand_v.append(divs(lam_b)[1])
        j = int(np.argmax(cand_v))
        val = a * er + (1 - a) * cand_v[j]
        if val > best:
            best, arg = val, (float(a), float(cand_l[j]))
    r2 = rate / (k - 1)
    retrans = (k - 1) * random_coding_exponent(ch, r2) if r2 <= c else 0.0
    return float(min(best, retrans)), arg[0], arg[1]


def check_two_phase_optimizer(slack: float = 1.0) -> CheckResult:
    def body():
        ch = _bsc()
        worst = 0.0
        for r, g in TWO_PHASE_PROBES:
            got = aflf_lower_bound(ch, r, AflfParams(g, 9))
            ref = brute_force_two_phase(ch, r, g, 9)[0]
            worst = max(worst, abs(got - ref))
        return worst <= 1e-4 * slack, f"max |optimiser - grid| = {worst:.2e} over {len(TWO_PHASE_PROBES)} probes"

    return _run(4, "two-phase optimiser vs brute-force grid", 120.0, body)


# ---------------------------------------------------------------- 5, 6


def check_chernoff(slack: float = 1.0) -> CheckResult:
    def body():
        pair = _pair()
        cp = chernoff_exponent(pair)
        p1, p2 = pair.p1.probs, pair.p2.probs
        # balance: sum_x Q(x) log(P2(x)/P1(x)) = 0 for Q = Ber(q)
        a, b = math.log2(p2[1] / p1[1]), math.log2(p2[0] / p1[0])
        q = b / (b - a)
        d_closed = kl_divergence(Distribution.bernoulli(q), pair.p1)
        d1, d2 = tilt_divergences(pair, cp.lambda_star)
        ks = k_star_ht(pair)
        checks = [
            abs(cp.d_star - d_closed) <= 1e-4 * slack,
            abs(cp.d_star - 0.501150) <= 1e-4 * slack,
            abs(d1 - d2) < 1e-9 * slack,
            abs(ks - 3.923) <= 1e-3 * slack,
            math.ceil(ks) == 4,
        ]
        return all(checks), (f"D*={cp.d_star:.9f} (closed form {d_closed:.9f}), "
                             f"residual {abs(d1 - d2):.1e}, K*={ks:.6f}")

    return _run(5, "Chernoff exponent and K*", 5.0, body)


def check_region_geometry(slack: float = 1.0) -> CheckResult:
    def body():
        pair = _pair()
        d_star = chernoff_exponent(pair).d_star
        fl = fl_region_boundary(pair)
        seq = seq_region(pair)
        tol = 1e-12 * slack
        gammas = [0.0, 0.1, 0.3, d_star]
        ok = True
        worst = 0.0
        for k in (2, 4):
            regions = [afl_region(pair, g, k) for g in gammas]
            xs = np.unique(np.concatenate([fl.e1, seq.e1] + [r.e1 for r in regions]))
            xs = np.concatenate([xs, np.linspace(0, pair.d21, 2001)])
            f, s = fl.upper(xs), seq.upper(xs)
            prev = None
            for reg in regions:
                u = reg.upper(xs)
                worst = max(worst, float(np.max(f - u)), float(np.max(u - s)))
                ok &= bool(np.all(f <= u + tol) and np.all(u <= s + tol))
                if prev is not None:
                    ok &= bool(np.all(u <= prev + tol))
                prev = u
            for g in (d_star * (1 + 1e-9), 0.6, 1.0):
                reg = afl_region(pair, g, k)
                ok &= reg.boundary.shape == fl.boundary.shape and bool(np.array_equal(reg.boundary, fl.boundary))
        ok &= slack >= 0
        return ok, f"sandwich/nesting worst violation {max(worst, 0.0):.1e}; gamma > D* equals R_FL"

    return _run(6, "AFL region geometry", 10.0, body)


# ---------------------------------------------------------------- 7, 8


def check_oracle_vs_mc(slack: float = 1.0, trials: int = 10**6, seed: int = 20240601) -> CheckResult:
    def body():
        cfg = TwoPhaseTestConfig(_pair(), 0.2, 2, 10)
        exact = exact_binary_oracle(cfg)
        rep = monte_carlo_ht(cfg, trials, seed)
        agree = rep.agrees_with(exact, z=3.0 * slack) if slack >= 0 else {"x": False}
        return all(agree.values()), ", ".join(f"{k}:{'ok' if v else 'out'}" for k, v in agree.items())

    return _run(7, "exact oracle vs Monte Carlo", 60.0, body)


def check_tail_exponents(slack: float = 1.0) -> CheckResult:
    def body():
        pair = _pair()
        ns = list(range(100, 501, 50))
        ok = True
        notes = []
        for g in (0.1, 0.3):
            cfgs = [TwoPhaseTestConfig(pair, g, 2, n) for n in ns]
            ex = [exact_binary_oracle(c) for c in cfgs]
            pred = predicted_error_exponents(cfgs[0])
            for h in (1, 2):
                s_c = empirical_exponent([(n, e.log2(f"p{h}_continue")) for n, e in zip(ns, ex)],
                                         log2_input=True)
                s_e = empirical_exponent([(n, e.log2(f"p{h}_err")) for n, e in zip(ns, ex)],
                                         log2_input=True)
                ok &= abs(s_c - g) <= 0.05 * g * slack
                ok &= s_e >= pred[h - 1] * (1 - 0.05 * slack)
                notes.append(f"g={g} H{h}: tail {s_c / g:.3f}g, err {s_e / pred[h - 1]:.3f}x pred")
        return bool(ok), "; ".join(notes)

    return _run(8, "tail and error exponents from exact oracle", 120.0, body)


# -------------------------------------------------------------------- 9


def check_code_simulation(slack: float = 1.0, trials: int = 10**5, seed: int = 20240601) -> CheckResult:
    def body():
        ch = _bsc()
        rate, gamma, k = 0.05, 0.05, 9
        ells = (20, 40, 60, 80)
        alpha, lam = select_parameters(ch, rate, gamma)
        reps, bases = [], []
        ok = True
        for ell in ells:
            cfg = CodeConfig(ch, rate, ell, alpha, lam, k, seed=seed)
            ok &= cfg.messages <= 16
            rep = monte_carlo_code(cfg, trials)
            reps.append(rep)
            bases.append(run_flf_baseline(ch, rate, ell, None, trials, seed))
            ok &= rep.tau_support <= {ell, k * ell}
            acks, nacks = rep.ack_stops, rep.retransmit_count
            ok &= rep.tau_sum == ell * acks + k * ell * nacks
            p = rep.retransmit_freq
            ok &= ell * (1 - p) <= rep.mean_tau <= ell + k * ell * p
            ok &= rep.error_count == rep.ack_given_wrong_count + rep.phase2_error_count
        for a, b in zip(reps, reps[1:]):
            for name in ("error_count", "retransmit_count"):
                fa, fb = getattr(a, name) / a.trials, getattr(b, name) / b.trials
                sig = math.hypot(a.sigma(getattr(a, name)), b.sigma(getattr(b, name)))
                ok &= fb <= fa + 3 * sig * slack
        slope = empirical_exponent([(r.ell, r.err_freq) for r in bases])
        er = random_coding_exponent(ch, rate)
        ok &= slope >= er * (1 - 0.3 * slack)
        err = ", ".join(f"{r.err_freq:.1e}" for r in reps)
        ret = ", ".join(f"{r.retransmit_freq:.3f}" for r in reps)
        return bool(ok), f"err [{err}], retransmit [{ret}], FLF slope {slope:.4f} vs E_r {er:.4f}"

    return _run(9, "two-phase code simulation", 600.0, body)


# ------------------------------------------------------------------- 10


DETERMINISM_RUNS = (
    ["exponents", "--channel", "bsc:0.2", "--gammas", "0,0.01,0.05", "--k", "9", "--rates", "41"],
    ["ht-region", "--pair", "0.9,0.2", "--gammas", "0,0.1,0.3,dstar", "--k", "2", "--grid", "128"],
    ["ht-sim", "--pair", "0.9,0.2", "--gamma", "0.2", "--k", "2", "--n", "10,20,30",
     "--trials", "20000", "--seed", "7"],
    ["code-sim", "--channel", "bsc:0.2", "--rate", "0.05", "--ells", "20,40", "--gamma", "0.05",
     "--k", "9", "--trials", "2000", "--seed", "7", "--baseline"],
)


def check_determinism(slack: float = 1.0) -> CheckResult:
    def body():
        from .cli import run_to_string

        same = []
        for argv in DETERMINISM_RUNS:
            a = run_to_string(argv)
            b = run_to_string(argv)
            same.append(a == b and len(a) > 0)
        ok = all(same) and slack >= 0
        return ok, f"{sum(same)}/{len(same)} commands byte-identical on rerun"

    return _run(10, "byte-identical reruns", 120.0, body)


CHECKS = (
    check_constants,
    check_gamma0_collapse,
    check_bound_ordering,
    check_two_phase_optimizer,
    check_chernoff,
    check_region_geometry,
    check_oracle_vs_mc,
    check_tail_exponents,
    check_code_simulation,
    check_determinism,
)


def run_all(selected=None, slack: float = 1.0, stream: io.TextIOBase | None = None) -> list[CheckResult]:
    out = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for i, fn in enumerate(CHECKS, start=1):
            if selected and i not in selected:
                continue
            res = fn(slack=slack)
            out.append(res)
            if stream is not None:
                print(res.line(), file=stream, flush=True)
    return out
