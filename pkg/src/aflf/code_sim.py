"""Monte Carlo simulation of the two-phase feedback code and a fixed-length baseline.

Phase I sends a random codeword of length ``m1 = ceil(alpha * ell)`` and the
decoder forms an ML estimate. Through ideal feedback the encoder learns that
estimate and spends the remaining ``m2 = ell - m1`` uses repeating input ``x``
(ACK, estimate correct) or ``x'`` (NACK). The decoder runs a fixed-length
binary test on those ``m2`` outputs. ACK ends the transmission at ``tau = ell``;
NACK discards everything and resends the message with a fresh random code of
length ``(k - 1) ell``, ending at ``tau = k ell``.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.special import gammaln, logsumexp

from .dmc import (
    Channel,
    Distribution,
    TiltedPair,
    capacity,
    capacity_achieving_input,
    kl_divergence,
    tilted_distribution,
)
from .exponents import (
    FeasibilityWarning,
    _ack_rows,
    er_table,
    optimize_two_phase,
)
from .ht_sim import TIE_TOL, block_rng

MAX_ELL = 128
MAX_MESSAGES = 4096
BLOCK_CELLS = 1 << 22  # codebook symbols generated per vectorised block


def message_count(ell: int, rate: float) -> int:
    """ceil(2^(ell R)), guarded against rounding just above an integer power."""
    v = 2.0 ** (ell * rate)
    return max(1, math.ceil(v - 1e-9 * v))


def _check_envelope(ell: int, m: int):
    if ell > MAX_ELL or m > MAX_MESSAGES:
        raise ValueError(
            f"ell={ell}, M={m} exceeds the simulation envelope "
            f"(ell <= {MAX_ELL}, M <= {MAX_MESSAGES}); each trial costs M * ell "
            "codebook symbols, so lower ell or the rate"
        )


def select_parameters(ch: Channel, rate: float, gamma: float) -> tuple[float, float]:
    """(alpha, lambda) for the two-phase code.

    gamma = 0 uses alpha = R / (0.99 C) with lambda = 0. For 0 < gamma < E_r(R)
    the optimiser's maximiser is used, unless the one-phase choice alpha = 1
    (never NACK) gives a larger bound. gamma >= E_r(R) returns alpha = 1; lambda
    is then unused and reported as 0.
    """
    c = capacity(ch)
    if not 0 < rate < c:
        raise ValueError("rate must lie in (0, C)")
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    if gamma == 0:
        return rate / (c - 0.01 * c), 0.0
    er = er_table(ch)(rate)
    if gamma >= er:
        return 1.0, 0.0
    opt = optimize_two_phase(ch, rate, gamma)
    if opt is None:
        warnings.warn("no feasible two-phase point; using alpha = 1", FeasibilityWarning,
                      stacklevel=2)
        return 1.0, 0.0
    if opt.value < er:
        return 1.0, 0.0
    return opt.alpha, opt.lam


@dataclass(frozen=True)
class CodeConfig:
    """Parameters of one two-phase code ensemble.

    ``alpha = 1`` is allowed and means no verification phase: every block is
    acknowledged.
    """

    channel: Channel
    rate: float
    ell: int
    alpha: float
    lam: float
    k: int
    input_dist: Optional[Distribution] = None
    seed: int = 0
    messages: int = field(init=False)
    m1: int = field(init=False)
    m2: int = field(init=False)

    def __post_init__(self):
        if int(self.ell) != self.ell or self.ell < 4:
            raise ValueError("ell must be an integer >= 4")
        if int(self.k) != self.k or self.k < 2:
            raise ValueError("k must be an integer >= 2")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if self.rate <= 0:
            raise ValueError("rate must be positive")
        q = self.input_dist or capacity_achieving_input(self.channel)
        if q.size != self.channel.n_inputs:
            raise ValueError("input distribution does not match the channel")
        object.__setattr__(self, "input_dist", q)
        m = message_count(self.ell, self.rate)
        if m < 2:
            raise ValueError("need at least two messages")
        _check_envelope(self.ell, m)
        m1 = min(self.ell, math.ceil(self.alpha * self.ell - 1e-9))
        m2 = self.ell - m1
        if m1 < 1 or (self.alpha < 1 and m2 < 1):
            raise ValueError("alpha leaves an empty phase")
        object.__setattr__(self, "messages", m)
        object.__setattr__(self, "m1", m1)
        object.__setattr__(self, "m2", m2)

    @property
    def verification(self) -> "AckTest":
        return ack_test(self.channel, self.lam)


class AckTest(NamedTuple):
    """Binary test between rows ``x`` (ACK) and ``x_prime`` (NACK)."""

    x: int
    x_prime: int
    support: np.ndarray
    llr: np.ndarray  # log2 W(y|x) / W(y|x') on the shared support
    threshold: float


def ack_test(ch: Channel, lam: float) -> AckTest:
    """Threshold t = D(P^lam || W_x') - D(P^lam || W_x), tilting W_x (lam=0) to W_x'."""
    res, _, _ = _ack_rows(ch)
    wx, wxp = ch.row(res.x), ch.row(res.x_prime)
    tilt = tilted_distribution(TiltedPair(wx, wxp), lam)
    t = kl_divergence(tilt, wxp) - kl_divergence(tilt, wx)
    support = np.flatnonzero(wx.probs > 0)
    llr = np.log2(wx.probs[support]) - np.log2(wxp.probs[support])
    return AckTest(res.x, res.x_prime, support, llr, t)


def ack_test_error_probabilities(ch: Channel, m2: int, lam: float) -> tuple[float, float]:
    """Exact (P(NACK | ACK sent), P(ACK | NACK sent)) by enumerating output types."""
    test = ack_test(ch, lam)
    rows = [ch.matrix[test.x][test.support], ch.matrix[test.x_prime][test.support]]
    s = test.support.size
    types = np.array([c for c in _compositions(m2, s)])
    stat = (types @ test.llr) / m2
    ack = stat >= test.threshold - TIE_TOL
    logcoef = gammaln(m2 + 1) - np.sum(gammaln(types + 1), axis=1)
    out = []
    for row, region in ((rows[0], ~ack), (rows[1], ack)):
        with np.errstate(divide="ignore"):
            lp = logcoef + types @ np.log(row)
        out.append(float(np.exp(logsumexp(lp[region]))) if region.any() else 0.0)
    return out[0], out[1]


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for bars in itertools.combinations(range(total + parts - 1), parts - 1):
        prev = -1
        out = []
        for b in bars:
            out.append(b - prev - 1)
            prev = b
        out.append(total + parts - 2 - prev)
        yield tuple(out)


# ------------------------------------------------------------------- engine


class _Codec:
    """Vectorised channel and ML decoder shared by all phases."""

    def __init__(self, ch: Channel, q: Distribution):
        w = ch.matrix
        self.nx, self.ny = w.shape
        self.cdf = np.cumsum(w, axis=1)
        self.q = q.probs
        with np.errstate(divide="ignore"):
            logw = np.log2(w)
        # group (input, output) cells by equal log-likelihood so that words with
        # the same joint type score bit-identically
        self.levels = []
        for v in np.unique(logw[np.isfinite(logw)]):
            self.levels.append((v, np.argwhere(logw == v)))
        self.forbidden = np.argwhere(~np.isfinite(logw))

    def codebook(self, rng, shape):
        return rng.choice(self.nx, size=shape, p=self.q).astype(np.int8)

    def transmit(self, rng, x: np.ndarray) -> np.ndarray:
        u = rng.random(x.shape)
        y = np.sum(u[..., None] >= self.cdf[x][..., :-1], axis=-1)
        return y.astype(np.int8)

    def decode(self, book: np.ndarray, y: np.ndarray) -> np.ndarray:
        """ML estimate per row; ties go to the smallest message index."""
        yb = y[:, None, :]
        score = np.zeros(book.shape[:2])
        for v, cells in self.levels:
            cnt = np.zeros(book.shape[:2], dtype=np.int64)
            for a, b in cells:
                cnt += np.count_nonzero((book == a) & (yb == b), axis=-1)
            score += cnt * v
        for a, b in self.forbidden:
            bad = np.any((book == a) & (yb == b), axis=-1)
            score[bad] = -np.inf
        return np.argmax(score, axis=1)


@dataclass(frozen=True)
class CodeSimReport:
    """Counters from a batch of simulated transmissions."""

    trials: int
    error_count: int
    retransmit_count: int
    phase1_error_count: int
    nack_given_correct_count: int
    ack_given_wrong_count: int
    phase2_error_count: int
    tau_sum: int
    tau_sq_sum: int
    ell: int
    k: int
    seed: int

    def __add__(self, other: "CodeSimReport") -> "CodeSimReport":
        if (self.ell, self.k) != (other.ell, other.k):
            raise ValueError("cannot merge reports of different codes")
        f = {n: getattr(self, n) + getattr(other, n) for n in _COUNTERS}
        return CodeSimReport(**f, ell=self.ell, k=self.k, seed=self.seed)

    @property
    def err_freq(self) -> float:
        return self.error_count / self.trials

    @property
    def retransmit_freq(self) -> float:
        return self.retransmit_count / self.trials

    @property
    def ack_stops(self) -> int:
        return self.trials - self.retransmit_count

    @property
    def mean_tau(self) -> float:
        return self.tau_sum / self.trials

    @property
    def tau_moment_estimates(self) -> tuple[float, float]:
        return self.tau_sum / self.trials, self.tau_sq_sum / self.trials

    @property
    def tau_support(self) -> set[int]:
        out = set()
        if self.ack_stops:
            out.add(self.ell)
        if self.retransmit_count:
            out.add(self.k * self.ell)
        return out

    def sigma(self, count: int) -> float:
        p = count / self.trials
        return math.sqrt(p * (1 - p) / self.trials)


_COUNTERS = ("trials", "error_count", "retransmit_count", "phase1_error_count",
             "nack_given_correct_count", "ack_given_wrong_count", "phase2_error_count",
             "tau_sum", "tau_sq_sum")


def _block_size(m: int, length: int) -> int:
    return max(1, min(4096, BLOCK_CELLS // max(1, m * length)))


def _two_phase_block(cfg: CodeConfig, codec: _Codec, test: Optional[AckTest], rng,
                     msgs: np.ndarray) -> dict:
    t = msgs.size
    m, ell, k = cfg.messages, cfg.ell, cfg.k
    book = codec.codebook(rng, (t, m, cfg.m1))
    y = codec.transmit(rng, book[np.arange(t), msgs])
    est = codec.decode(book, y)
    correct = est == msgs
    if cfg.m2 > 0:
        sent = np.where(correct, test.x, test.x_prime)
        y2 = codec.transmit(rng, np.repeat(sent[:, None], cfg.m2, axis=1))
        counts = np.stack([np.count_nonzero(y2 == b, axis=1) for b in test.support], axis=1)
        bad = np.zeros(t, dtype=bool)
        off = np.setdiff1d(np.arange(codec.ny), test.support)
        for b in off:
            bad |= np.any(y2 == b, axis=1)
        stat = (counts @ test.llr) / cfg.m2
        ack = (stat >= test.threshold - TIE_TOL) & ~bad
    else:
        ack = np.ones(t, dtype=bool)
    final = est.copy()
    nack = np.flatnonzero(~ack)
    if nack.size:
        length2 = (k - 1) * ell
        step = _block_size(m, length2)
        for s in range(0, nack.size, step):
            idx = nack[s:s + step]
            book2 = codec.codebook(rng, (idx.size, m, length2))
            y3 = codec.transmit(rng, book2[np.arange(idx.size), msgs[idx]])
            final[idx] = codec.decode(book2, y3)
    wrong = final != msgs
    tau = np.where(ack, ell, k * ell)
    return {
        "trials": t,
        "error_count": int(wrong.sum()),
        "retransmit_count": int((~ack).sum()),
        "phase1_error_count": int((~correct).sum()),
        "nack_given_correct_count": int((correct & ~ack).sum()),
        "ack_given_wrong_count": int((~correct & ack).sum()),
        "phase2_error_count": int((wrong & ~ack).sum()),
        "tau_sum": int(tau.sum()),
        "tau_sq_sum": int((tau.astype(np.int64) ** 2).sum()),
    }


class CodeTrial(NamedTuple):
    decoded: int
    tau: int
    phase1_estimate: int
    nack: bool


def run_code_trial(config: CodeConfig, message: int,
                   rng: Optional[np.random.Generator] = None) -> CodeTrial:
    """One transmission of ``message``; the stream defaults to one keyed by it."""
    if not 0 <= message < config.messages:
        raise ValueError("message index out of range")
    rng = rng or block_rng(config.seed, 17, message)
    codec = _Codec(config.channel, config.input_dist)
    test = config.verification if config.m2 > 0 else None
    m = config.messages
    book = codec.codebook(rng, (1, m, config.m1))
    y = codec.transmit(rng, book[0:1, message])
    est = int(codec.decode(book, y)[0])
    nack = False
    if config.m2 > 0:
        sent = test.x if est == message else test.x_prime
        y2 = codec.transmit(rng, np.full((1, config.m2), sent))
        if np.any(~np.isin(y2, test.support)):
            nack = True
        else:
            counts = np.array([np.count_nonzero(y2 == b) for b in test.support])
            nack = not (counts @ test.llr) / config.m2 >= test.threshold - TIE_TOL
    if not nack:
        return CodeTrial(est, config.ell, est, False)
    length2 = (config.k - 1) * config.ell
    book2 = codec.codebook(rng, (1, m, length2))
    y3 = codec.transmit(rng, book2[0:1, message])
    return CodeTrial(int(codec.decode(book2, y3)[0]), config.k * config.ell, est, True)


def monte_carlo_code(config: CodeConfig, trials: int) -> CodeSimReport:
    """Ensemble simulation: fresh codebooks and equiprobable messages every trial.

    Trials are processed in blocks whose size depends only on the code, each
    block drawing from its own stream keyed by (seed, block), so the report is
    reproducible bit for bit.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    codec = _Codec(config.channel, config.input_dist)
    test = config.verification if config.m2 > 0 else None
    step = _block_size(config.messages, config.m1)
    total = {n: 0 for n in _COUNTERS}
    for b, start in enumerate(range(0, trials, step)):
        rng = block_rng(config.seed, 11, b)
        size = min(step, trials - start)
        msgs = rng.integers(config.messages, size=size)
        part = _two_phase_block(config, codec, test, rng, msgs)
        for n in _COUNTERS:
            total[n] += part[n]
    return CodeSimReport(**total, ell=config.ell, k=config.k, seed=int(config.seed))


def run_flf_baseline(ch: Channel, rate: float, ell: int, input_dist: Optional[Distribution],
                     trials: int, seed: int) -> CodeSimReport:
    """Single-phase random code of length ``ell`` with ML decoding (tau = ell)."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    q = input_dist or capacity_achieving_input(ch)
    m = message_count(ell, rate)
    if m < 2:
        raise ValueError("need at least two messages")
    _check_envelope(ell, m)
    codec = _Codec(ch, q)
    step = _block_size(m, ell)
    errors = 0
    for b, start in enumerate(range(0, trials, step)):
        rng = block_rng(seed, 13, b)
        size = min(step, trials - start)
        msgs = rng.integers(m, size=size)
        book = codec.codebook(rng, (size, m, ell))
        y = codec.transmit(rng, book[np.arange(size), msgs])
        errors += int(np.count_nonzero(codec.decode(book, y) != msgs))
    return CodeSimReport(
        trials=trials, error_count=errors, retransmit_count=0, phase1_error_count=errors,
        nack_given_correct_count=0, ack_given_wrong_count=errors, phase2_error_count=0,
        tau_sum=trials * ell, tau_sq_sum=trials * ell * ell, ell=ell, k=1, seed=int(seed),
    )

