"""Simulation and exact evaluation of fixed-length, sequential and two-phase tests.

Decisions are reported as ``1`` (choose H1) and ``2`` (choose H2). All test
statistics are empirical means of the per-sample log-likelihood ratio
log2(P1(x) / P2(x)), evaluated from symbol counts so that simulation and exact
enumeration classify identical sample types identically.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional

import numpy as np
from scipy.special import logsumexp
from scipy.stats import binom

from .ht import HtPair, chernoff_exponent, gamma_exponents, threshold_at, tilt_divergences

TIE_TOL = 1e-9
SPRT_CAP = 1_000_000
MC_BLOCK = 1 << 16
LN2 = math.log(2.0)


def worker_count() -> int:
    """Thread count from ``AFLF_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("AFLF_THREADS", "1")))
    except ValueError:
        return 1


def block_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent Philox stream for one (seed, key...) cell.

    Streams depend only on their key, so blocks can run in any order or in
    parallel and still reproduce the same numbers.
    """
    ss = np.random.SeedSequence(int(seed) & ((1 << 64) - 1), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


# ---------------------------------------------------------------- statistics


def mean_llr(counts: np.ndarray, llr: np.ndarray, n: int) -> np.ndarray:
    """Empirical mean LLR from symbol counts (last axis indexes symbols)."""
    c = np.asarray(counts)
    safe = np.where(np.isnan(llr), 0.0, llr)
    return (c @ safe) / n


def phase1_decision(stat, alpha1: float, beta1: float):
    """1 (choose H1), 2 (choose H2) or 0 (continue); '>=' wins on overlap."""
    stat = np.asarray(stat)
    out = np.where(stat <= beta1 + TIE_TOL, 2, 0)
    out = np.where(stat >= alpha1 - TIE_TOL, 1, out)
    return out


def final_decision(stat, alpha: float):
    return np.where(np.asarray(stat) >= alpha - TIE_TOL, 1, 2)


def _check_symbols(pair: HtPair, samples) -> np.ndarray:
    x = np.asarray(list(samples) if not isinstance(samples, np.ndarray) else samples)
    if x.size and (x.min() < 0 or x.max() >= pair.p1.size or not np.issubdtype(x.dtype, np.integer)):
        raise ValueError("sample outside the alphabet")
    if x.size and np.any(~pair.p1.support[x]):
        raise ValueError("sample has zero probability under both hypotheses")
    return x


# ---------------------------------------------------------------- single tests


def run_fixed_length_test(pair: HtPair, n: int, alpha: float, samples) -> int:
    """Choose H1 iff the n-sample mean LLR is at least ``alpha``."""
    x = _check_symbols(pair, samples)
    if x.size != n:
        raise ValueError(f"expected {n} samples, got {x.size}")
    counts = np.bincount(x, minlength=pair.p1.size)
    return int(final_decision(mean_llr(counts, pair.llr(), n), alpha))


class SprtOutcome(NamedTuple):
    decision: Optional[int]
    tau: int
    capped: bool


def sprt_thresholds(pair: HtPair, n: int, delta: float, delta2: Optional[float] = None):
    """Upper/lower cumulative-LLR thresholds (D12 - delta) n and -(D21 - delta2) n."""
    d2 = delta if delta2 is None else delta2
    return (pair.d12 - delta) * n, -(pair.d21 - d2) * n


def run_sprt(pair: HtPair, n: int, delta: float, stream: Iterable[int],
             delta2: Optional[float] = None, cap: int = SPRT_CAP) -> SprtOutcome:
    """Sequential test on a lazily consumed sample stream.

    Stops at the first time the cumulative LLR reaches the upper threshold
    (choose H1) or falls to the lower one (choose H2). Hitting ``cap`` samples
    returns a flagged outcome with ``decision=None``.
    """
    upper, lower = sprt_thresholds(pair, n, delta, delta2)
    llr = pair.llr()
    s = 0.0
    t = 0
    for t, x in enumerate(stream, start=1):
        if x < 0 or x >= llr.size or math.isnan(llr[x]):
            raise ValueError("sample outside the alphabet")
        s += llr[x]
        if s >= upper - TIE_TOL:
            return SprtOutcome(1, t, False)
        if s <= lower + TIE_TOL:
            return SprtOutcome(2, t, False)
        if t >= cap:
            return SprtOutcome(None, t, True)
    raise ValueError("sample stream ended before the test stopped")


def simulate_sprt(pair: HtPair, n: int, delta: float, hypothesis: int, trials: int,
                  seed: int, delta2: Optional[float] = None, chunk: int = 256,
                  cap: int = SPRT_CAP):
    """Vectorised SPRT runs; returns (decisions, taus) arrays, decision 0 if capped."""
    upper, lower = sprt_thresholds(pair, n, delta, delta2)
    law = (pair.p1 if hypothesis == 1 else pair.p2).probs
    llr = np.where(np.isnan(pair.llr()), 0.0, pair.llr())
    dec = np.zeros(trials, dtype=np.int8)
    tau = np.zeros(trials, dtype=np.int64)
    s = np.zeros(trials)
    active = np.arange(trials)
    rng = block_rng(seed, 7, hypothesis)
    t0 = 0
    while active.size and t0 < cap:
        steps = min(chunk, cap - t0)
        x = rng.choice(law.size, size=(active.size, steps), p=law)
        path = s[active, None] + np.cumsum(llr[x], axis=1)
        hit_u = path >= upper - TIE_TOL
        hit_l = path <= lower + TIE_TOL
        hit = hit_u | hit_l
        any_hit = hit.any(axis=1)
        first = np.argmax(hit, axis=1)
        rows = np.flatnonzero(any_hit)
        idx = active[rows]
        dec[idx] = np.where(hit_u[rows, first[rows]], 1, 2)
        tau[idx] = t0 + first[rows] + 1
        s[active] = path[:, -1]
        active = active[~any_hit]
        t0 += steps
    tau[active] = cap
    return dec, tau


# ------------------------------------------------------------------ two-phase


@dataclass(frozen=True)
class TwoPhaseTestConfig:
    """Two-phase almost-fixed-length test.

    Phase I looks at ``n`` samples and stops unless the mean LLR lies strictly
    between ``beta1`` and ``alpha1``. Phase II draws ``(k - 1) n`` more samples
    and compares the mean LLR of all ``k n`` samples with ``alpha_phase2``.
    For ``gamma`` above the Chernoff exponent both Phase-I thresholds collapse
    onto the Phase-II one, which is a plain fixed-length test.
    """

    pair: HtPair
    gamma: float
    k: int
    n: int
    lambda_phase2: Optional[float] = None
    alpha1: float = field(init=False)
    beta1: float = field(init=False)
    alpha_phase2: float = field(init=False)
    lambda1: float = field(init=False)
    lambda2: float = field(init=False)

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if int(self.k) != self.k or self.k < 2:
            raise ValueError("k must be an integer >= 2")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("n must be a positive integer")
        cp = chernoff_exponent(self.pair)
        lam = cp.lambda_star if self.lambda_phase2 is None else float(self.lambda_phase2)
        if not 0.0 <= lam <= 1.0:
            raise ValueError("lambda_phase2 must lie in [0, 1]")
        object.__setattr__(self, "lambda_phase2", lam)
        alpha = threshold_at(self.pair, lam)
        object.__setattr__(self, "alpha_phase2", alpha)
        if self.gamma > cp.d_star:
            a1 = b1 = alpha
            l1 = l2 = lam
        else:
            ge = gamma_exponents(self.pair, self.gamma)
            l1, l2 = ge.lambda1, ge.lambda2
            a1 = ge.e2 - self.gamma if self.gamma > 0 else self.pair.d12
            b1 = self.gamma - ge.e1 if self.gamma > 0 else -self.pair.d21
            if self.gamma == cp.d_star:
                a1 = b1 = threshold_at(self.pair, cp.lambda_star)
        if b1 > a1 + TIE_TOL:
            raise ValueError("inconsistent thresholds: beta1 > alpha1")
        object.__setattr__(self, "alpha1", float(a1))
        object.__setattr__(self, "beta1", float(b1))
        object.__setattr__(self, "lambda1", float(l1))
        object.__setattr__(self, "lambda2", float(l2))

    @property
    def phase2_reachable(self) -> bool:
        return self.alpha1 - self.beta1 > 2 * TIE_TOL


def run_two_phase_test(config: TwoPhaseTestConfig, stream: Iterable[int]) -> tuple[int, int]:
    """Run the test on a sample stream; returns (decision, tau) with tau in {n, k n}."""
    pair, n, k = config.pair, config.n, config.k
    it = iter(stream)
    llr = pair.llr()
    first = _check_symbols(pair, [next(it) for _ in range(n)])
    c1 = np.bincount(first, minlength=pair.p1.size)
    d = int(phase1_decision(mean_llr(c1, llr, n), config.alpha1, config.beta1))
    if d:
        return d, n
    rest = _check_symbols(pair, [next(it) for _ in range((k - 1) * n)])
    c_all = c1 + np.bincount(rest, minlength=pair.p1.size)
    return int(final_decision(mean_llr(c_all, llr, k * n), config.alpha_phase2)), k * n


# ------------------------------------------------------------- exact oracle


@dataclass(frozen=True)
class ExactResult:
    """Exact error and continuation probabilities, also kept as natural logs.

    ``p1_err`` = P1(choose H2), ``p2_err`` = P2(choose H1), ``p*_continue`` =
    P(tau > n) under each hypothesis.
    """

    log_p1_err: float
    log_p2_err: float
    log_p1_continue: float
    log_p2_continue: float
    log_p1_ok: float
    log_p2_ok: float

    @property
    def p1_err(self) -> float:
        return math.exp(self.log_p1_err)

    @property
    def p2_err(self) -> float:
        return math.exp(self.log_p2_err)

    @property
    def p1_continue(self) -> float:
        return math.exp(self.log_p1_continue)

    @property
    def p2_continue(self) -> float:
        return math.exp(self.log_p2_continue)

    def total_mass(self, hypothesis: int) -> float:
        if hypothesis == 1:
            return math.exp(np.logaddexp(self.log_p1_err, self.log_p1_ok))
        return math.exp(np.logaddexp(self.log_p2_err, self.log_p2_ok))

    def log2(self, name: str) -> float:
        return getattr(self, "log_" + name) / LN2


def _lse(x: np.ndarray) -> float:
    return float(logsumexp(x)) if x.size else -math.inf


def exact_binary_oracle(config: TwoPhaseTestConfig) -> ExactResult:
    """Exact probabilities for Bernoulli hypotheses.

    Enumerates k1 = ones among the first n samples and k2 = ones among the
    remaining (k - 1) n samples; each (k1, k2) cell carries the product of two
    binomial masses and is classified with the same statistics the simulator
    uses. Sums are done in the log domain.
    """
    pair = config.pair
    if pair.p1.size != 2:
        raise ValueError("exact oracle supports binary alphabets only")
    n, k = config.n, config.k
    n2 = (k - 1) * n
    llr = pair.llr()
    k1 = np.arange(n + 1)
    k2 = np.arange(n2 + 1)
    ph1 = phase1_decision(mean_llr(np.column_stack([n - k1, k1]), llr, n),
                          config.alpha1, config.beta1)
    tot = k1[:, None] + k2[None, :]
    ph2 = final_decision(mean_llr(np.stack([k * n - tot, tot], axis=-1), llr, k * n),
                         config.alpha_phase2)
    # decision on the full lattice
    dec = np.where(ph1[:, None] == 0, ph2, ph1[:, None])
    cont = np.broadcast_to(ph1[:, None] == 0, dec.shape)
    logs = {}
    for h, law in ((1, pair.p1.probs), (2, pair.p2.probs)):
        p = law[1]
        lp = binom.logpmf(k1, n, p)[:, None] + binom.logpmf(k2, n2, p)[None, :]
        wrong = 2 if h == 1 else 1
        logs[h] = (
            _lse(lp[dec == wrong]),
            _lse(lp[dec != wrong]),
            _lse(lp[cont]),
        )
    return ExactResult(
        log_p1_err=logs[1][0], log_p2_err=logs[2][0],
        log_p1_continue=logs[1][2], log_p2_continue=logs[2][2],
        log_p1_ok=logs[1][1], log_p2_ok=logs[2][1],
    )


# --------------------------------------------------------------- Monte Carlo


def wilson_interval(count: int, trials: int, z: float = 1.0) -> tuple[float, float]:
    """Wilson score interval for a binomial frequency."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    p = count / trials
    z2 = z * z
    den = 1.0 + z2 / trials
    centre = (p + z2 / (2 * trials)) / den
    half = z * math.sqrt(p * (1 - p) / trials + z2 / (4 * trials * trials)) / den
    lo = 0.0 if count == 0 else max(0.0, min(p, centre - half))
    hi = 1.0 if count == trials else min(1.0, max(p, centre + half))
    return lo, hi


def wilson_radius(count: int, trials: int, z: float = 1.0) -> float:
    lo, hi = wilson_interval(count, trials, z)
    return 0.5 * (hi - lo)


@dataclass(frozen=True)
class SimReport:
    """Monte Carlo counts for a two-hypothesis test, ``trials`` runs under each.

    ``err_type1_count`` counts H1 runs that chose H2; ``err_type2_count`` counts
    H2 runs that chose H1. ``wilson_ci_radius`` is the largest one-sigma Wilson
    half-width among the four reported frequencies.
    """

    trials: int
    err_type1_count: int
    err_type2_count: int
    continue_counts: tuple[int, int]
    tau_histogram: tuple[dict, dict]
    seed: int

    @property
    def p_tau_exceeds_n(self) -> tuple[float, float]:
        return tuple(c / self.trials for c in self.continue_counts)

    @property
    def err_freq(self) -> tuple[float, float]:
        return self.err_type1_count / self.trials, self.err_type2_count / self.trials

    def counts(self) -> dict[str, int]:
        return {
            "p1_err": self.err_type1_count,
            "p2_err": self.err_type2_count,
            "p1_continue": self.continue_counts[0],
            "p2_continue": self.continue_counts[1],
        }

    @property
    def wilson_ci_radius(self) -> float:
        return max(wilson_radius(c, self.trials) for c in self.counts().values())

    def mean_tau(self, hypothesis: int) -> float:
        hist = self.tau_histogram[hypothesis - 1]
        return sum(t * c for t, c in hist.items()) / self.trials

    def agrees_with(self, exact: ExactResult, z: float = 3.0) -> dict[str, bool]:
        """Whether each exact probability lies in the z-sigma Wilson interval."""
        out = {}
        for name, c in self.counts().items():
            lo, hi = wilson_interval(c, self.trials, z)
            out[name] = lo <= getattr(exact, name) <= hi
        return out


def _two_phase_block(config: TwoPhaseTestConfig, law: np.ndarray, size: int,
                     rng: np.random.Generator):
    n, k = config.n, config.k
    llr = config.pair.llr()
    c1 = rng.multinomial(n, law, size=size)
    c2 = rng.multinomial((k - 1) * n, law, size=size)
    d1 = phase1_decision(mean_llr(c1, llr, n), config.alpha1, config.beta1)
    d2 = final_decision(mean_llr(c1 + c2, llr, k * n), config.alpha_phase2)
    dec = np.where(d1 == 0, d2, d1)
    return int(np.sum(dec == 1)), int(np.sum(dec == 2)), int(np.sum(d1 == 0))


def monte_carlo_ht(config: TwoPhaseTestConfig, trials: int, seed: int) -> SimReport:
    """``trials`` independent runs of the two-phase test under each hypothesis.

    Runs are grouped in fixed blocks of 2**16; block ``b`` under hypothesis
    ``h`` draws from its own counter-based stream keyed by (seed, h, b), so
    the report does not depend on thread count or scheduling.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    blocks = [(h, b, min(MC_BLOCK, trials - b * MC_BLOCK))
              for h in (1, 2) for b in range(-(-trials // MC_BLOCK))]

    def work(item):
        h, b, size = item
        law = (config.pair.p1 if h == 1 else config.pair.p2).probs
        return h, _two_phase_block(config, law, size, block_rng(seed, h, b))

    workers = worker_count()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(work, blocks))
    else:
        results = [work(item) for item in blocks]
    tot = {1: [0, 0, 0], 2: [0, 0, 0]}
    for h, r in results:
        for i in range(3):
            tot[h][i] += r[i]
    n, kn = config.n, config.k * config.n
    hist = tuple(
        {t: c for t, c in ((n, trials - tot[h][2]), (kn, tot[h][2])) if c}
        for h in (1, 2)
    )
    return SimReport(
        trials=trials,
        err_type1_count=tot[1][1],
        err_type2_count=tot[2][0],
        continue_counts=(tot[1][2], tot[2][2]),
        tau_histogram=hist,
        seed=int(seed),
    )


# ----------------------------------------------------------------- exponents


class EmpiricalExponentWarning(UserWarning):
    pass


def empirical_exponent(values, *, log2_input: bool = False) -> float:
    """Least-squares slope of -log2(probability) against n.

    ``values`` holds (n, probability) pairs, or (n, log2 probability) pairs when
    ``log2_input`` is set. Zero probabilities are dropped with a warning.
    """
    pts = [(float(n), float(p)) for n, p in values]
    if log2_input:
        kept = [(n, -lp) for n, lp in pts if math.isfinite(lp)]
    else:
        kept = [(n, -math.log2(p)) for n, p in pts if p > 0]
    if len(kept) < len(pts):
        warnings.warn(f"dropped {len(pts) - len(kept)} zero-probability points",
                      EmpiricalExponentWarning, stacklevel=2)
    if len(kept) < 3:
        raise ValueError("need at least three positive-probability points")
    x, y = np.array(kept).T
    slope = np.polyfit(x, y, 1)[0]
    return float(slope)


def predicted_error_exponents(config: TwoPhaseTestConfig) -> tuple[float, float]:
    """min{E_i(gamma), K D(P^lam || P_i)} for i = 1, 2 with lam = ``lambda_phase2``."""
    ge = gamma_exponents(config.pair, min(config.gamma, chernoff_exponent(config.pair).d_star))
    d1, d2 = tilt_divergences(config.pair, config.lambda_phase2)
    return min(ge.e1, config.k * d1), min(ge.e2, config.k * d2)

