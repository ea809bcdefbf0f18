"""Channel-coding reliability bounds.

Gallager's E0, random-coding and sphere-packing exponents, Burnashev's
variable-length exponent and the almost-fixed-length (AFLF) achievability and
converse bounds built from them. Rates and exponents are in bits per channel use.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import brentq, minimize_scalar

from .dmc import (
    Channel,
    Distribution,
    c1_and_extremal_inputs,
    capacity,
    capacity_achieving_input,
    is_symmetric,
)

RHO_MAX_SP = 1e3
ER_NODES = 1025
COARSE_ALPHA_GRID = 201
ALPHA_BRACKET = (1e-9, 1e-12)  # g^-1 search range is [lo, C - hi]
RATE_TOL = 1e-12


class UnsupportedChannelError(ValueError):
    """Operation needs a property (symmetry, finite C1, ...) the channel lacks."""


class FeasibilityWarning(UserWarning):
    """The constrained two-phase optimisation had no feasible point."""


class PartialBoundWarning(UserWarning):
    """A combinator was evaluated with one of its terms missing."""


@dataclass(frozen=True)
class AflfParams:
    """Tail exponent ``gamma`` of P(tau > l) and hard length cap multiplier ``k``."""

    gamma: float
    k: int

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ValueError("gamma must be non-negative")
        if int(self.k) != self.k or self.k < 2:
            raise ValueError("k must be an integer >= 2")


@dataclass(frozen=True)
class ExponentCurve:
    bound_name: str
    points: tuple[tuple[float, float], ...]

    def __post_init__(self):
        rates = [r for r, _ in self.points]
        if any(b <= a for a, b in zip(rates, rates[1:])):
            raise ValueError("rates must be strictly increasing")
        if any(e < 0 for _, e in self.points):
            raise ValueError("exponents must be non-negative")

    @property
    def rates(self) -> np.ndarray:
        return np.array([r for r, _ in self.points])

    @property
    def exponents(self) -> np.ndarray:
        return np.array([e for _, e in self.points])


# --------------------------------------------------------------------------- E0


def _e0_and_slope(w: np.ndarray, q: np.ndarray, rho: float) -> tuple[float, float]:
    """E0(rho, Q) and its rho-derivative at fixed Q."""
    s = 1.0 / (1.0 + rho)
    with np.errstate(divide="ignore"):
        lnw = np.where(w > 0, np.log(np.where(w > 0, w, 1.0)), 0.0)
    ws = np.where(w > 0, np.exp(s * lnw), 0.0)
    a = q @ ws
    da = -(s * s) * (q @ (ws * lnw))
    pos = a > 0
    ap = a[pos]
    terms = np.exp((1.0 + rho) * np.log(ap))
    total = terms.sum()
    dtotal = np.sum(terms * (np.log(ap) + (1.0 + rho) * da[pos] / ap))
    return -math.log2(total), -dtotal / (total * math.log(2.0))


def gallager_e0(ch: Channel, q: Distribution, rho: float) -> float:
    """E0(rho, Q) = -log2 sum_y (sum_x Q(x) W(y|x)^(1/(1+rho)))^(1+rho)."""
    if rho < 0:
        raise ValueError("rho must be non-negative")
    qv = q.probs if isinstance(q, Distribution) else np.asarray(q, float)
    if qv.size != ch.n_inputs:
        raise ValueError("input distribution does not match the channel")
    return max(_e0_and_slope(ch.matrix, qv, rho)[0], 0.0)


class _E0Star:
    """max_Q E0(rho, Q) with its envelope slope, for one channel."""

    def __init__(self, ch: Channel):
        self.ch = ch
        self.w = ch.matrix
        self.symmetric = is_symmetric(ch)
        self.q_cap = capacity_achieving_input(ch).probs
        self._memo: dict[float, tuple[float, float, np.ndarray]] = {}

    def input_for(self, rho: float) -> np.ndarray:
        n = self.w.shape[0]
        if self.symmetric:
            return np.full(n, 1.0 / n)
        if rho <= 1e-9:
            return self.q_cap
        if n == 2:
            def neg(t):
                return -_e0_and_slope(self.w, np.array([1 - t, t]), rho)[0]

            res = minimize_scalar(neg, bounds=(0.0, 1.0), method="bounded",
                                  options={"xatol": 1e-12})
            t = float(res.x)
            best = min((0.0, 1.0, t), key=neg)
            return np.array([1 - best, best])
        return self._eg_input(rho)

    def _eg_input(self, rho: float, iters: int = 20_000, tol: float = 1e-13) -> np.ndarray:
        # exponentiated-gradient descent on f(Q) = sum_y a_y^(1+rho), convex on the simplex
        w = self.w
        s = 1.0 / (1.0 + rho)
        ws = w ** s
        q = self.q_cap.copy()
        q = np.maximum(q, 1e-12)
        q /= q.sum()

        def f_and_grad(qq):
            a = qq @ ws
            f = np.sum(a ** (1 + rho))
            g = (1 + rho) * (ws @ (a ** rho))
            return f, g

        f, g = f_and_grad(q)
        step = 1.0
        for _ in range(iters):
            gn = g / ((1 + rho) * f)
            while True:
                cand = q * np.exp(-step * (gn - 1.0))
                cand /= cand.sum()
                fc, gc = f_and_grad(cand)
                if fc <= f:
                    break
                step *= 0.5
                if step < 1e-16:
                    return q
            done = np.max(np.abs(cand - q)) < tol
            q, f, g = cand, fc, gc
            step = min(step * 2.0, 64.0)
            if done:
                break
        return q

    def __call__(self, rho: float) -> tuple[float, float]:
        hit = self._memo.get(rho)
        if hit is None:
            q = self.input_for(rho)
            e0, slope = _e0_and_slope(self.w, q, rho)
            hit = (e0, slope, q)
            if len(self._memo) < 100_000:
                self._memo[rho] = hit
        return hit[0], hit[1]


_E0_CACHE: dict[Channel, _E0Star] = {}


def _e0_star(ch: Channel) -> _E0Star:
    obj = _E0_CACHE.get(ch)
    if obj is None:
        obj = _E0Star(ch)
        _E0_CACHE[ch] = obj
    return obj


def _check_rate(ch: Channel, rate: float) -> float:
    c = capacity(ch)
    if rate < 0 or rate > c + RATE_TOL:
        raise ValueError(f"rate {rate!r} outside [0, C={c:.9g}]")
    return c


# ------------------------------------------------------------------ E_r / E_sp


def random_coding_exponent(ch: Channel, rate: float) -> float:
    """E_r(R) = max over rho in [0, 1] and Q of E0(rho, Q) - rho R."""
    c = _check_rate(ch, rate)
    if rate >= c:
        return 0.0
    e0s = _e0_star(ch)
    e1, s1 = e0s(1.0)
    if s1 >= rate:
        return max(e1 - rate, 0.0)
    rho = brentq(lambda r: e0s(r)[1] - rate, 0.0, 1.0, xtol=1e-15, rtol=1e-15)
    return max(e0s(rho)[0] - rho * rate, 0.0)


def critical_rate(ch: Channel) -> float:
    """Rate below which E_r is the straight line E0(1) - R."""
    return min(_e0_star(ch)(1.0)[1], capacity(ch))


def sphere_packing_exponent(ch: Channel, rate: float) -> float:
    """E_sp(R) = sup over rho >= 0 of max_Q E0(rho, Q) - rho R.

    The search stops at rho = 1e3; if the objective is still rising there the
    value is reported as ``inf``.
    """
    if rate <= 0:
        raise ValueError("sphere-packing exponent needs rate > 0")
    c = _check_rate(ch, rate)
    if rate >= c:
        return 0.0
    e0s = _e0_star(ch)
    if e0s(1.0)[1] <= rate:
        # maximiser lies in [0, 1]: same problem as the random-coding exponent
        return random_coding_exponent(ch, rate)
    if e0s(RHO_MAX_SP)[1] > rate:
        return math.inf
    rho = brentq(lambda r: e0s(r)[1] - rate, 1.0, RHO_MAX_SP, xtol=1e-13, rtol=1e-15)
    return max(e0s(rho)[0] - rho * rate, 0.0)


def haroutunian_exponent(ch: Channel, rate: float) -> float:
    """Haroutunian's feedback upper bound; implemented for symmetric channels only,
    where it equals the sphere-packing exponent."""
    if not is_symmetric(ch):
        raise UnsupportedChannelError("Haroutunian exponent is only available for symmetric channels")
    return sphere_packing_exponent(ch, rate)


class _ErTable:
    """Interpolated E_r for bulk evaluation.

    Nodes come from a uniform rho grid on [0, 1] through the parametric form
    R(rho) = E0*'(rho), E(rho) = E0*(rho) - rho R(rho), whose R-derivative is
    exactly -rho; a cubic Hermite spline through these nodes is monotone and
    convex-consistent. Below the critical rate E_r is the line E0*(1) - R.
    """

    def __init__(self, ch: Channel, nodes: int = ER_NODES):
        self.c = capacity(ch)
        e0s = _e0_star(ch)
        self.e0_1, self.r_crit = e0s(1.0)
        self.r_crit = min(self.r_crit, self.c)
        rhos = np.linspace(0.0, 1.0, nodes)
        vals = np.array([e0s(float(r)) for r in rhos])
        rates = vals[:, 1].copy()
        rates[0] = self.c
        ex = vals[:, 0] - rhos * rates
        ex[0] = 0.0
        order = np.argsort(rates, kind="stable")
        rates, ex, rhos = rates[order], ex[order], rhos[order]
        keep = np.concatenate([[True], np.diff(rates) > 1e-15])
        rates, ex, rhos = rates[keep], np.maximum(ex[keep], 0.0), rhos[keep]
        self.spline = None
        if rates.size >= 2 and self.c - self.r_crit > 1e-12:
            self.spline = CubicHermiteSpline(rates, ex, -rhos)
            self.lo = rates[0]

    def __call__(self, rate):
        r = np.asarray(rate, dtype=float)
        out = np.maximum(self.e0_1 - r, 0.0)
        if self.spline is not None:
            hi = r > self.lo
            if np.any(hi):
                out = np.where(hi, self.spline(np.clip(r, self.lo, self.c)), out)
        out = np.where(r >= self.c, 0.0, out)
        out = np.maximum(out, 0.0)
        return float(out) if np.ndim(rate) == 0 else out


_ER_TABLES: dict[Channel, _ErTable] = {}


def er_table(ch: Channel) -> _ErTable:
    """Shared, read-only interpolated E_r for ``ch`` (built on first use)."""
    t = _ER_TABLES.get(ch)
    if t is None:
        t = _ErTable(ch)
        _ER_TABLES[ch] = t
    return t


# ------------------------------------------------------------- feedback bounds


def burnashev_exponent(ch: Channel, rate: float) -> float:
    """C1 (1 - R / C); ``inf`` below capacity when C1 is infinite."""
    c = _check_rate(ch, rate)
    if rate >= c:
        return 0.0
    c1 = c1_and_extremal_inputs(ch).c1
    if not math.isfinite(c1):
        return math.inf
    return c1 * (1.0 - rate / c)


def k_star_channel(ch: Channel) -> float:
    """Smallest real K with (K - 1) E_r(0) >= C1; ``inf`` when C1 is infinite."""
    c1 = c1_and_extremal_inputs(ch).c1
    er0 = random_coding_exponent(ch, 0.0)
    if er0 <= 0:
        raise UnsupportedChannelError("E_r(0) = 0: degenerate channel")
    if not math.isfinite(c1):
        return math.inf
    return 1.0 + c1 / er0


def _retransmission_term(ch: Channel, rate: float, k: int) -> float:
    """(K - 1) E_r(R / (K - 1)), zero once R / (K - 1) exceeds capacity."""
    r2 = rate / (k - 1)
    if r2 > capacity(ch):
        return 0.0
    return (k - 1) * er_table(ch)(r2)


def aflf_lower_bound_gamma0(ch: Channel, rate: float, k: int) -> float:
    """min{C1 (1 - R/C), (K - 1) E_r(R / (K - 1))}."""
    if int(k) != k or k < 2:
        raise ValueError("k must be an integer >= 2")
    _check_rate(ch, rate)
    return min(burnashev_exponent(ch, rate), _retransmission_term(ch, rate, k))


def alpha_star(ch: Channel, rate: float, gamma: float) -> float:
    """Smallest Phase-I data fraction whose random-coding exponent reaches gamma.

    Solves alpha E_r(R / alpha) = gamma via g(a) = E_r(a) / a, inverted by
    bisection on a in [1e-9, C - 1e-12]; alpha = R / a. At R = 0 the limit
    gamma / E_r(0) is returned.
    """
    c = _check_rate(ch, rate)
    table = er_table(ch)
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if rate == 0:
        er0 = table(0.0)
        if gamma >= er0:
            raise ValueError("gamma >= E_r(R): use the alpha = 1 case")
        return gamma / er0
    if rate >= c:
        raise ValueError("rate must be below capacity")
    if gamma >= table(rate):
        raise ValueError("gamma >= E_r(R): use the alpha = 1 case")
    target = gamma / rate
    lo, hi = ALPHA_BRACKET[0], c - ALPHA_BRACKET[1]
    if table(hi) / hi >= target:
        return rate / hi
    lo = max(lo, rate)  # g(R) = E_r(R)/R > target
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if table(mid) / mid > target:
            lo = mid
        else:
            hi = mid
    a = 0.5 * (lo + hi)
    return rate / a


class TwoPhaseOptimum(NamedTuple):
    """Best (alpha, lambda) for the error-erasure exponent of the two-phase code."""

    value: float
    alpha: float
    lam: float


def _tilt_divergences(p: np.ndarray, q: np.ndarray, lams: np.ndarray):
    """Vectorised (D(P^lam || p), D(P^lam || q)) for p, q with a shared support."""
    lp, lq = np.log2(p), np.log2(q)
    lam = np.asarray(lams, dtype=float)[..., None]
    logw = (1 - lam) * lp + lam * lq
    m = logw.max(axis=-1, keepdims=True)
    z = np.exp2(logw - m)
    norm = z.sum(axis=-1, keepdims=True)
    t = z / norm
    logt = logw - m - np.log2(norm)
    d_p = np.sum(t * (logt - lp), axis=-1)
    d_q = np.sum(t * (logt - lq), axis=-1)
    return np.maximum(d_p, 0.0), np.maximum(d_q, 0.0)


def _ack_rows(ch: Channel):
    res = c1_and_extremal_inputs(ch)
    p, q = ch.matrix[res.x], ch.matrix[res.x_prime]
    if not res.finite or not np.array_equal(p > 0, q > 0):
        raise UnsupportedChannelError(
            "two-phase verification needs extremal rows with a common support"
        )
    mask = p > 0
    return res, p[mask], q[mask]


def _lambda_for_ack_exponent(p, q, targets: np.ndarray) -> np.ndarray:
    """Smallest lambda with D(P^lam || p) >= target (vectorised bisection)."""
    targets = np.asarray(targets, dtype=float)
    lo = np.zeros_like(targets)
    hi = np.ones_like(targets)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        d_ack, _ = _tilt_divergences(p, q, mid)
        above = d_ack >= targets
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
    return hi


def optimize_two_phase(ch: Channel, rate: float, gamma: float) -> Optional[TwoPhaseOptimum]:
    """Maximise alpha E_r(R/alpha) + (1 - alpha) D(P^lam || W_x') over the
    feasible set alpha >= alpha*(R, gamma), (1 - alpha) D(P^lam || W_x) >= gamma.

    For gamma > 0 the lambda-constraint binds at the optimum (the objective
    falls in lambda, the constraint rises), so the search is one-dimensional in
    alpha: a coarse grid followed by bounded Brent refinement of the best cell.
    Returns ``None`` when the feasible set is empty.
    """
    _, p, q = _ack_rows(ch)
    table = er_table(ch)
    a_lo = alpha_star(ch, rate, gamma)
    d_max = _tilt_divergences(p, q, np.array([1.0]))[0][0]
    a_hi = 1.0 - gamma / d_max
    if a_hi < a_lo:
        return None

    def objective(alphas):
        alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
        lam = _lambda_for_ack_exponent(p, q, np.minimum(gamma / (1.0 - alphas), d_max))
        _, d_nack = _tilt_divergences(p, q, lam)
        val = alphas * table(rate / alphas) + (1.0 - alphas) * d_nack
        return val, lam

    grid = np.linspace(a_lo, a_hi, COARSE_ALPHA_GRID)
    vals, lams = objective(grid)
    i = int(np.argmax(vals))
    best = TwoPhaseOptimum(float(vals[i]), float(grid[i]), float(lams[i]))
    if a_hi > a_lo:
        left, right = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
        res = minimize_scalar(lambda a: -objective(a)[0][0], bounds=(left, right),
                              method="bounded", options={"xatol": 1e-12})
        v, lam = objective(res.x)
        if v[0] > best.value:
            best = TwoPhaseOptimum(float(v[0]), float(res.x), float(lam[0]))
    return best


def aflf_lower_bound(ch: Channel, rate: float, params: AflfParams) -> float:
    """Achievable AFLF exponent of the two-phase code for tail exponent gamma.

    gamma = 0 gives min{C1 (1 - R/C), (K-1) E_r(R/(K-1))}; gamma >= E_r(R) gives
    E_r(R). Otherwise the optimised error-erasure exponent is capped by the
    retransmission term. The one-shot E_r(R) code (alpha = 1) is always
    admissible, so the result never drops below E_r(R).
    """
    c = _check_rate(ch, rate)
    if rate >= c:
        return 0.0
    if params.gamma == 0:
        return aflf_lower_bound_gamma0(ch, rate, params.k)
    er = er_table(ch)(rate)
    if params.gamma >= er:
        return er
    opt = optimize_two_phase(ch, rate, params.gamma)
    if opt is None:
        warnings.warn(
            f"no feasible (alpha, lambda) at R={rate:g}, gamma={params.gamma:g}; using E_r(R)",
            FeasibilityWarning,
            stacklevel=2,
        )
        return er
    return max(min(opt.value, _retransmission_term(ch, rate, params.k)), er)


def corollary_bounds(ch: Channel, rate: float) -> tuple[float, float]:
    """(E_r(R), C1 (1 - R/C)): the AFLF exponent sandwich for finite gamma."""
    lower = random_coding_exponent(ch, rate)
    upper = burnashev_exponent(ch, rate)
    assert lower <= upper + 1e-12
    return lower, upper


def structural_converse(
    ch: Channel,
    rate: float,
    params: AflfParams,
    ee_curve: Optional[Callable[[float, float], float]] = None,
) -> float:
    """min{ee_curve(R, gamma), K E_H(R / K)} for a caller-supplied
    error-erasure exponent; without one only the second term is returned and a
    ``PartialBoundWarning`` is issued."""
    if not is_symmetric(ch):
        raise UnsupportedChannelError("converse needs E_H, available for symmetric channels only")
    c = _check_rate(ch, rate)
    k = params.k
    if rate <= 0:
        h_term = math.inf
    else:
        h_term = k * haroutunian_exponent(ch, rate / k)
    if ee_curve is None:
        warnings.warn("ee_curve missing: returning K E_H(R/K) only", PartialBoundWarning,
                      stacklevel=2)
        return h_term
    ee = float(ee_curve(rate, params.gamma))
    if rate >= c and ee == 0:
        return 0.0
    return min(ee, h_term)


def exponent_curve(name: str, rates, values) -> ExponentCurve:
    return ExponentCurve(name, tuple((float(r), float(v)) for r, v in zip(rates, values)))
