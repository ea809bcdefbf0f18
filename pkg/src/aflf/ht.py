"""Exponent geometry of binary hypothesis tests.

Fixed-length and sequential error-exponent regions, the Chernoff exponent, the
tail-constrained exponents E1(gamma), E2(gamma) and the almost-fixed-length
region obtained by combining them. Exponents are in bits per sample.

Regions are downward closed in the non-negative quadrant, so each one is stored
as its upper boundary: a polyline with strictly increasing ``e1`` and
non-increasing ``e2``, read with linear interpolation. Past the last boundary
point a region only holds points with ``e2 <= 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq

from .dmc import Distribution, kl_divergence

DEFAULT_GRID = 512
LAMBDA_TOL = 1e-15


@dataclass(frozen=True)
class HtPair:
    """Law ``p1`` under H1 and ``p2`` under H2, on one alphabet and a common support."""

    p1: Distribution
    p2: Distribution

    def __post_init__(self):
        if self.p1.size != self.p2.size:
            raise ValueError("hypotheses must live on the same alphabet")
        if not np.array_equal(self.p1.support, self.p2.support):
            raise ValueError("hypotheses must have a common support")

    @classmethod
    def bernoulli(cls, a: float, b: float) -> "HtPair":
        return cls(Distribution.bernoulli(a), Distribution.bernoulli(b))

    @classmethod
    def from_spec(cls, spec: str) -> "HtPair":
        """``"0.9,0.2"`` gives two Bernoulli laws (P(X=1) under each
        hypothesis); ``"0.1,0.9;0.8,0.2"`` gives two explicit vectors."""
        parts = [s for s in spec.split(";") if s.strip()]
        if len(parts) == 1:
            vals = [float(v) for v in parts[0].replace(",", " ").split()]
            if len(vals) != 2:
                raise ValueError(f"cannot parse hypothesis pair {spec!r}")
            return cls.bernoulli(*vals)
        if len(parts) == 2:
            rows = [[float(v) for v in s.replace(",", " ").split()] for s in parts]
            return cls(Distribution(np.array(rows[0])), Distribution(np.array(rows[1])))
        raise ValueError(f"cannot parse hypothesis pair {spec!r}")

    @property
    def identical(self) -> bool:
        return self.p1 == self.p2

    @property
    def d12(self) -> float:
        """D(P1 || P2)."""
        return kl_divergence(self.p1, self.p2)

    @property
    def d21(self) -> float:
        """D(P2 || P1)."""
        return kl_divergence(self.p2, self.p1)

    def llr(self) -> np.ndarray:
        """Per-symbol log2(P1(x) / P2(x)); ``nan`` off the support."""
        p1, p2 = self.p1.probs, self.p2.probs
        out = np.full(p1.shape, np.nan)
        m = p1 > 0
        out[m] = np.log2(p1[m]) - np.log2(p2[m])
        return out


def tilt_divergences(pair: HtPair, lam):
    """(D(P^lam || P1), D(P^lam || P2)) for scalar or array ``lam``.

    P^lam is proportional to P1^(1-lam) P2^lam, so lam = 0 is P1 and lam = 1 is P2.
    """
    m = pair.p1.support
    lp, lq = np.log2(pair.p1.probs[m]), np.log2(pair.p2.probs[m])
    lam_arr = np.asarray(lam, dtype=float)
    logw = (1.0 - lam_arr[..., None]) * lp + lam_arr[..., None] * lq
    top = logw.max(axis=-1, keepdims=True)
    z = np.exp2(logw - top)
    norm = z.sum(axis=-1, keepdims=True)
    t = z / norm
    logt = logw - top - np.log2(norm)
    d1 = np.maximum(np.sum(t * (logt - lp), axis=-1), 0.0)
    d2 = np.maximum(np.sum(t * (logt - lq), axis=-1), 0.0)
    if lam_arr.ndim == 0:
        return float(d1), float(d2)
    return d1, d2


def threshold_at(pair: HtPair, lam: float) -> float:
    """Mean-LLR threshold D(P^lam || P2) - D(P^lam || P1) of the tilt at ``lam``."""
    d1, d2 = tilt_divergences(pair, lam)
    return d2 - d1


@dataclass(frozen=True)
class ExponentRegion:
    """Downward-closed set of (E1, E2) pairs given by its upper boundary."""

    name: str
    boundary: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        b = np.array(self.boundary, dtype=float).reshape(-1, 2)
        if b.shape[0] < 1:
            raise ValueError("region boundary needs at least one point")
        if np.any(b < 0) or np.any(~np.isfinite(b)):
            raise ValueError("boundary points must be finite and non-negative")
        if np.any(np.diff(b[:, 0]) <= 0):
            raise ValueError("boundary e1 must be strictly increasing")
        if np.any(np.diff(b[:, 1]) > 0):
            raise ValueError("boundary e2 must be non-increasing")
        b.setflags(write=False)
        object.__setattr__(self, "boundary", b)

    @property
    def e1(self) -> np.ndarray:
        return self.boundary[:, 0]

    @property
    def e2(self) -> np.ndarray:
        return self.boundary[:, 1]

    def upper(self, e1):
        """Boundary height at ``e1``; zero past the last point."""
        return _eval_polyline(self.boundary, e1)


def _eval_polyline(b: np.ndarray, x):
    xs = np.asarray(x, dtype=float)
    out = np.interp(xs, b[:, 0], b[:, 1])
    out = np.where(xs > b[-1, 0], 0.0, out)
    return float(out) if xs.ndim == 0 else out


def region_contains(region: ExponentRegion, e1: float, e2: float) -> bool:
    """Membership in a downward-closed region; negative coordinates are rejected."""
    if e1 < 0 or e2 < 0:
        return False
    b = region.boundary
    if e1 > b[-1, 0]:
        return e2 <= 0
    return bool(e2 <= _eval_polyline(b, e1))


# ------------------------------------------------------------------- regions


def fl_region_boundary(pair: HtPair, lambda_grid_size: int = DEFAULT_GRID) -> ExponentRegion:
    """Fixed-length region: the tilt curve (D(P^lam || P1), D(P^lam || P2))."""
    if lambda_grid_size < 2:
        raise ValueError("lambda grid needs at least two points")
    lams = np.linspace(0.0, 1.0, lambda_grid_size)
    d1, d2 = tilt_divergences(pair, lams)
    d1[0], d2[0] = 0.0, pair.d12
    d1[-1], d2[-1] = pair.d21, 0.0
    pts = _clean(np.column_stack([d1, d2]))
    return ExponentRegion("fixed_length", pts, {"lambda_grid": lambda_grid_size})


def seq_region(pair: HtPair) -> ExponentRegion:
    """Sequential region: the box [0, D(P2||P1)] x [0, D(P1||P2)]."""
    d12, d21 = pair.d12, pair.d21
    if not (math.isfinite(d12) and math.isfinite(d21)):
        raise ValueError("sequential region needs finite divergences")
    pts = [(0.0, d12)] if d21 == 0 else [(0.0, d12), (d21, d12)]
    return ExponentRegion("sequential", np.array(pts))


def _clean(pts: np.ndarray) -> np.ndarray:
    """Drop repeated abscissae and enforce a non-increasing ordinate."""
    pts = pts[np.argsort(pts[:, 0], kind="stable")]
    keep = np.concatenate([[True], np.diff(pts[:, 0]) > 0])
    pts = pts[keep].copy()
    pts[:, 1] = np.minimum.accumulate(np.maximum(pts[:, 1], 0.0))
    return pts


class ChernoffPoint(NamedTuple):
    d_star: float
    lambda_star: float


def chernoff_exponent(pair: HtPair) -> ChernoffPoint:
    """Balance point of the tilt curve, where D(P^lam||P1) = D(P^lam||P2)."""
    if pair.identical:
        return ChernoffPoint(0.0, 0.5)

    def gap(lam):
        d1, d2 = tilt_divergences(pair, lam)
        return d1 - d2

    lam = brentq(gap, 0.0, 1.0, xtol=LAMBDA_TOL, rtol=4 * np.finfo(float).eps, maxiter=500)
    d1, d2 = tilt_divergences(pair, lam)
    return ChernoffPoint(0.5 * (d1 + d2), float(lam))


class GammaExponents(NamedTuple):
    e1: float
    lambda1: float
    e2: float
    lambda2: float


def _solve_tilt(pair: HtPair, which: int, target: float) -> float:
    """lam with D(P^lam || P_which) = target (monotone in lam)."""

    def f(lam):
        return tilt_divergences(pair, lam)[which - 1] - target

    fa, fb = f(0.0), f(1.0)
    if fa * fb > 0:
        # target below the rounding floor of the endpoint where the divergence vanishes
        return 0.0 if abs(fa) < abs(fb) else 1.0
    return float(brentq(f, 0.0, 1.0, xtol=LAMBDA_TOL, rtol=4 * np.finfo(float).eps,
                        maxiter=500))


def gamma_exponents(pair: HtPair, gamma: float) -> GammaExponents:
    """E1(gamma) = max D(P^lam||P1) s.t. D(P^lam||P2) >= gamma, and its mirror E2.

    lambda1 is the largest admissible lam for the first problem, lambda2 the
    smallest for the second. When a constraint cannot be met at all (gamma
    above the relevant endpoint divergence) the exponent is reported as 0 at
    the endpoint where the constraint is loosest.
    """
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    if pair.identical:
        return GammaExponents(0.0, 1.0, 0.0, 0.0)
    d12, d21 = pair.d12, pair.d21
    if gamma == 0:
        lam1, lam2 = 1.0, 0.0
    else:
        # D(P^lam || P2) falls from d12 to 0, D(P^lam || P1) rises from 0 to d21
        lam1 = _solve_tilt(pair, 2, gamma) if gamma < d12 else 0.0
        lam2 = _solve_tilt(pair, 1, gamma) if gamma < d21 else 1.0
    e1 = pair.d21 if lam1 == 1.0 else tilt_divergences(pair, lam1)[0]
    e2 = pair.d12 if lam2 == 0.0 else tilt_divergences(pair, lam2)[1]
    if gamma > d12:
        e1 = 0.0
    if gamma > d21:
        e2 = 0.0
    return GammaExponents(e1, lam1, e2, lam2)


def k_star_ht(pair: HtPair) -> float:
    """max{D(P2||P1), D(P1||P2)} / D*."""
    d_star = chernoff_exponent(pair).d_star
    if d_star <= 0:
        raise ValueError("degenerate pair: Chernoff exponent is zero")
    return max(pair.d21, pair.d12) / d_star


# ------------------------------------------------------------ set algebra


def _scaled(b: np.ndarray, k: float) -> np.ndarray:
    return b * k


def _combine(lines: list[np.ndarray], op) -> np.ndarray:
    """Pointwise max/min of boundary polylines, exact up to rounding.

    Breakpoints are the union of all vertices, plus the point just past the end
    of any polyline that stops above zero (its boundary drops vertically there),
    plus every crossing between two polylines inside a shared linear piece.
    """
    xs = np.unique(np.concatenate([b[:, 0] for b in lines]))
    drops = [np.nextafter(b[-1, 0], np.inf) for b in lines if b[-1, 1] > 0]
    xs = np.unique(np.concatenate([xs, drops]))
    vals = np.array([_eval_polyline(b, xs) for b in lines])
    extra = []
    for i in range(len(lines)):
        for j in range(i + 1, len(lines)):
            d = vals[i] - vals[j]
            for s in np.flatnonzero(d[:-1] * d[1:] < 0):
                x0, x1 = xs[s], xs[s + 1]
                # both lines are linear on [x0, x1) unless x1 is a drop point
                if x1 in drops:
                    continue
                t = d[s] / (d[s] - d[s + 1])
                extra.append(x0 + t * (x1 - x0))
    if extra:
        xs = np.unique(np.concatenate([xs, extra]))
        vals = np.array([_eval_polyline(b, xs) for b in lines])
    ys = op(vals, axis=0)
    pts = np.column_stack([xs, ys])
    # trim trailing zeros after the first point that reaches zero
    zero = np.flatnonzero(ys <= 0)
    if zero.size:
        pts = pts[: zero[0] + 1]
    return _clean(pts)


def _rectangle(e1: float, e2: float) -> np.ndarray:
    if e1 <= 0:
        return np.array([[0.0, e2]])
    return np.array([[0.0, e2], [e1, e2]])


def _r_gamma(pair: HtPair, gamma: float, fl: ExponentRegion) -> tuple[np.ndarray, bool]:
    """Boundary of R_FL united with the gamma box, and whether the box mattered."""
    ge = gamma_exponents(pair, gamma)
    box = _rectangle(ge.e1, ge.e2)
    if region_contains(fl, ge.e1, ge.e2):
        return fl.boundary, False
    return _combine([fl.boundary, box], np.max), True


def afl_region(pair: HtPair, gamma: float, k: int, grid: int = DEFAULT_GRID) -> ExponentRegion:
    """R_gamma intersected with K R_FL, where R_gamma = R_FL united with
    the box [0, E1(gamma)] x [0, E2(gamma)]."""
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    if int(k) != k or k < 1:
        raise ValueError("k must be a positive integer")
    fl = fl_region_boundary(pair, grid)
    meta = {"gamma": gamma, "k": int(k)}
    bound, extended = _r_gamma(pair, gamma, fl)
    if not extended:
        return ExponentRegion("afl", fl.boundary, meta)
    out = _combine([bound, _scaled(fl.boundary, k)], np.min)
    return ExponentRegion("afl", out, meta)


def rejection_region(pair: HtPair, gamma: float, grid: int = DEFAULT_GRID) -> ExponentRegion:
    """R_gamma, tagged with the rejection exponent ``e_omega = gamma``."""
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    fl = fl_region_boundary(pair, grid)
    bound, _ = _r_gamma(pair, gamma, fl)
    return ExponentRegion("rejection", bound, {"gamma": gamma, "e_omega": gamma})
