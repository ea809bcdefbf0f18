"""Distributions, discrete memoryless channels and the divergences built on them.

All logarithms are base 2, so divergences, capacities and exponents are in bits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import logsumexp

STOCHASTIC_TOL = 1e-12
SYMMETRY_TOL = 1e-12


def _as_prob_vector(values, name: str = "probs") -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError(f"{name} must be a non-empty 1-D vector")
    if np.any(~np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError(f"{name} must contain finite non-negative entries")
    if abs(arr.sum() - 1.0) > STOCHASTIC_TOL:
        raise ValueError(f"{name} must sum to 1 (got {arr.sum()!r})")
    return arr


@dataclass(frozen=True, eq=False)
class Distribution:
    """Probability vector on the alphabet ``{0, ..., len(probs) - 1}``."""

    probs: np.ndarray

    def __post_init__(self):
        arr = _as_prob_vector(self.probs)
        arr.setflags(write=False)
        object.__setattr__(self, "probs", arr)

    @classmethod
    def bernoulli(cls, p: float) -> "Distribution":
        """Law of a {0, 1} variable with ``P(X = 1) = p``."""
        if not 0.0 <= p <= 1.0:
            raise ValueError("Bernoulli parameter must lie in [0, 1]")
        return cls(np.array([1.0 - p, p]))

    @classmethod
    def uniform(cls, size: int) -> "Distribution":
        return cls(np.full(size, 1.0 / size))

    @property
    def size(self) -> int:
        return self.probs.size

    @property
    def support(self) -> np.ndarray:
        return self.probs > 0

    def __len__(self) -> int:
        return self.probs.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, Distribution):
            return NotImplemented
        return self.size == other.size and bool(np.array_equal(self.probs, other.probs))

    def __hash__(self) -> int:
        return hash(self.probs.tobytes())

    def __repr__(self) -> str:
        return f"Distribution({np.array2string(self.probs, precision=6)})"


@dataclass(frozen=True, eq=False)
class Channel:
    """Row-stochastic transition matrix ``W[x, y] = W(y|x)`` of a DMC."""

    matrix: np.ndarray
    name: str = field(default="", compare=False)

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=float)
        if mat.ndim != 2:
            raise ValueError("channel matrix must be 2-D")
        if mat.shape[0] < 2 or mat.shape[1] < 2:
            raise ValueError("channel needs at least two inputs and two outputs")
        if np.any(~np.isfinite(mat)) or np.any(mat < 0):
            raise ValueError("channel entries must be finite and non-negative")
        if np.any(np.abs(mat.sum(axis=1) - 1.0) > STOCHASTIC_TOL):
            raise ValueError("every channel row must sum to 1")
        mat = mat.copy()
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    @classmethod
    def bsc(cls, p: float) -> "Channel":
        return cls(np.array([[1 - p, p], [p, 1 - p]]), name=f"bsc:{p:g}")

    @classmethod
    def bec(cls, e: float) -> "Channel":
        return cls(np.array([[1 - e, e, 0.0], [0.0, e, 1 - e]]), name=f"bec:{e:g}")

    @classmethod
    def z_channel(cls, p: float) -> "Channel":
        """Input 0 is noiseless; input 1 flips to 0 with probability ``p``."""
        return cls(np.array([[1.0, 0.0], [p, 1 - p]]), name=f"z:{p:g}")

    @classmethod
    def from_spec(cls, spec: str) -> "Channel":
        """Parse ``bsc:<p>``, ``bec:<e>``, ``z:<p>`` or an inline ``rows`` matrix.

        Inline matrices are row-major with rows separated by ``;`` and entries by
        ``,`` or whitespace, e.g. ``"0.9,0.1;0.2,0.8"``.
        """
        spec = spec.strip()
        kind, _, arg = spec.partition(":")
        kind = kind.lower()
        if kind in ("bsc", "bec", "z") and arg:
            value = float(arg)
            return {"bsc": cls.bsc, "bec": cls.bec, "z": cls.z_channel}[kind](value)
        if kind == "matrix" and arg:
            spec = arg
        rows = [r for r in spec.split(";") if r.strip()]
        try:
            mat = [[float(v) for v in r.replace(",", " ").split()] for r in rows]
        except ValueError as exc:
            raise ValueError(f"cannot parse channel spec {spec!r}") from exc
        return cls(np.array(mat), name="matrix")

    @property
    def n_inputs(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.matrix.shape[1]

    def row(self, x: int) -> Distribution:
        return Distribution(self.matrix[x])

    def __eq__(self, other) -> bool:
        if not isinstance(other, Channel):
            return NotImplemented
        return self.matrix.shape == other.matrix.shape and bool(
            np.array_equal(self.matrix, other.matrix)
        )

    def __hash__(self) -> int:
        return hash((self.matrix.shape, self.matrix.tobytes()))

    def __repr__(self) -> str:
        label = self.name or np.array2string(self.matrix, precision=4)
        return f"Channel({label})"


@dataclass(frozen=True)
class TiltedPair:
    """Two laws on one alphabet, the endpoints of a tilted family."""

    p: Distribution
    q: Distribution

    def __post_init__(self):
        if self.p.size != self.q.size:
            raise ValueError("tilted pair needs distributions on the same alphabet")

    @property
    def shared_support(self) -> bool:
        return bool(np.array_equal(self.p.support, self.q.support))


def _probs(d) -> np.ndarray:
    return d.probs if isinstance(d, Distribution) else _as_prob_vector(d)


def kl_divergence(p, q) -> float:
    """D(p || q) in bits, ``inf`` when p charges a symbol that q does not."""
    p, q = _probs(p), _probs(q)
    if p.shape != q.shape:
        raise ValueError("alphabet size mismatch")
    mask = p > 0
    if np.any(q[mask] == 0):
        return math.inf
    pm, qm = p[mask], q[mask]
    return max(0.0, float(np.sum(pm * (np.log2(pm) - np.log2(qm)))))


def tilted_distribution(pair: TiltedPair, lam: float) -> Distribution:
    """Normalised geometric interpolation ``p^(1-lam) q^lam``.

    Evaluated in log space with max-subtraction; symbols outside the common
    support get zero mass.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("tilt parameter must lie in [0, 1]")
    return Distribution(_tilt(pair.p.probs, pair.q.probs, lam))


def _tilt(p: np.ndarray, q: np.ndarray, lam: float) -> np.ndarray:
    common = (p > 0) & (q > 0)
    if not common.any():
        raise ValueError("tilted family undefined: supports are disjoint")
    logw = np.full(p.shape, -np.inf)
    logw[common] = (1.0 - lam) * np.log(p[common]) + lam * np.log(q[common])
    out = np.exp(logw - logsumexp(logw[common]))
    out /= out.sum()
    return out


def mutual_information(q, ch: Channel) -> float:
    """I(Q; W) in bits."""
    q = _probs(q)
    out = q @ ch.matrix
    total = 0.0
    for x in np.flatnonzero(q > 0):
        total += q[x] * kl_divergence(ch.matrix[x], out)
    return float(total)


class CapacityResult(NamedTuple):
    capacity: float
    input_dist: Distribution
    iterations: int


def blahut_arimoto(ch: Channel, tol: float = 1e-10, max_iter: int = 100_000) -> CapacityResult:
    """Capacity by alternating maximisation.

    Stops when the gap between the Blahut-Arimoto upper bound
    ``max_x D(W_x || QW)`` and the current mutual information drops below ``tol``.
    """
    w = ch.matrix
    n_in = w.shape[0]
    q = np.full(n_in, 1.0 / n_in)
    with np.errstate(divide="ignore", invalid="ignore"):
        logw = np.where(w > 0, np.log2(w), 0.0)
    it = 0
    lower = 0.0
    for it in range(1, max_iter + 1):
        out = q @ w
        with np.errstate(divide="ignore", invalid="ignore"):
            logout = np.where(out > 0, np.log2(out), 0.0)
        # d[x] = D(W_x || QW)
        d = np.sum(w * (logw - logout), axis=1)
        lower = float(q @ d)
        upper = float(d.max())
        if upper - lower < tol:
            break
        q = q * np.exp2(d - upper)
        q /= q.sum()
    return CapacityResult(max(lower, 0.0), Distribution(q / q.sum()), it)


def capacity(ch: Channel) -> float:
    """Channel capacity in bits per channel use."""
    return _capacity_cached(ch).capacity


_CAPACITY_CACHE: dict = {}


def _capacity_cached(ch: Channel) -> CapacityResult:
    res = _CAPACITY_CACHE.get(ch)
    if res is None:
        res = blahut_arimoto(ch)
        _CAPACITY_CACHE[ch] = res
    return res


def capacity_achieving_input(ch: Channel) -> Distribution:
    return _capacity_cached(ch).input_dist


class C1Result(NamedTuple):
    """Largest divergence between two channel rows and an input pair attaining it."""

    c1: float
    x: int
    x_prime: int

    @property
    def finite(self) -> bool:
        return math.isfinite(self.c1)


def c1_and_extremal_inputs(ch: Channel) -> C1Result:
    """C1 = max over ordered input pairs of D(W(.|x) || W(.|x')).

    Ties go to the lexicographically smallest ``(x, x')``. Rows with disjoint
    supports give ``c1 = inf``, reported through ``C1Result.finite``.
    """
    best = (-1.0, 0, 1)
    for x in range(ch.n_inputs):
        for xp in range(ch.n_inputs):
            if x == xp:
                continue
            d = kl_divergence(ch.matrix[x], ch.matrix[xp])
            if d > best[0]:
                best = (d, x, xp)
    return C1Result(*best)


def _group_by_multiset(vectors: Sequence[np.ndarray], tol: float) -> list[list[int]]:
    groups: list[list[int]] = []
    keys: list[np.ndarray] = []
    for i, v in enumerate(vectors):
        sv = np.sort(v)
        for g, key in zip(groups, keys):
            if np.all(np.abs(key - sv) <= tol):
                g.append(i)
                break
        else:
            groups.append([i])
            keys.append(sv)
    return groups


def is_symmetric(ch: Channel, tol: float = SYMMETRY_TOL) -> bool:
    """Gallager symmetry.

    Columns must split into blocks whose sub-matrices have rows that are
    permutations of each other and columns that are permutations of each
    other. Grouping columns by their multiset of entries is the coarsest
    candidate partition, and it is valid whenever any partition is.
    """
    w = ch.matrix
    for cols in _group_by_multiset([w[:, j] for j in range(w.shape[1])], tol):
        sub = w[:, cols]
        ref = np.sort(sub[0])
        for r in sub[1:]:
            if np.any(np.abs(np.sort(r) - ref) > tol):
                return False
    return True
