"""Deterministic numerical substrate.

Seeded random streams (splitmix64 seeding, xoshiro256** generation), the
affine least-squares fit used to project representations into position
space, and chunked pairwise-distance kernels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_TWO_M53 = 1.0 / (1 << 53)


class DegenerateInputError(ValueError):
    """Input point sets for which a fit or a metric is undefined."""


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & MASK64
    return h


def splitmix64(x: int) -> int:
    """One splitmix64 output for state ``x`` (the increment is applied first)."""
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def seed_derive(master: int, label: str | bytes) -> int:
    if isinstance(label, str):
        label = label.encode("utf-8")
    return splitmix64((master & MASK64) ^ fnv1a64(label))


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class RandomStream:
    """xoshiro256** stream seeded from a 64-bit seed via splitmix64.

    Single-owner: every draw advances the state.
    """

    def __init__(self, seed: int, origin: tuple[int, str] | None = None):
        state = []
        x = seed & MASK64
        for _ in range(4):
            state.append(splitmix64(x))
            x = (x + 0x9E3779B97F4A7C15) & MASK64
        if not any(state):  # all-zero state is a fixed point
            state[0] = 1
        self.s = state
        self.origin = origin
        self._spare_normal: float | None = None

    @classmethod
    def derive(cls, master: int, label: str) -> "RandomStream":
        return cls(seed_derive(master, label), origin=(master, label))

    @classmethod
    def from_state(cls, state) -> "RandomStream":
        stream = cls(0)
        stream.s = [int(v) & MASK64 for v in state]
        return stream

    def get_state(self) -> list[int]:
        return list(self.s)

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self.s
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self.s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * _TWO_M53

    def uniform(self, lo: float, hi: float) -> float:
        if lo > hi:
            raise ValueError(f"uniform: lo={lo} > hi={hi}")
        if lo == hi:
            self.next_u64()
            return lo
        x = lo + (hi - lo) * self.random()
        if x >= hi:  # rounding can land on the open bound
            x = math.nextafter(hi, lo)
        return x

    def randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection."""
        if n <= 0:
            raise ValueError("randbelow: n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def integers(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi] inclusive."""
        return lo + self.randbelow(hi - lo + 1)

    def normal(self) -> float:
        # Box-Muller; the second variate is kept for the next call
        if self._spare_normal is not None:
            z, self._spare_normal = self._spare_normal, None
            return z
        u1 = 1.0 - self.random()  # (0, 1]
        u2 = self.random()
        r = math.sqrt(-2.0 * math.log(u1))
        self._spare_normal = r * math.sin(2.0 * math.pi * u2)
        return r * math.cos(2.0 * math.pi * u2)

    def normal_array(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        return np.array([self.normal() for _ in range(n)], dtype=np.float64).reshape(shape)

    def uniform_array(self, lo: float, hi: float, shape) -> np.ndarray:
        n = int(np.prod(shape))
        return np.array([self.uniform(lo, hi) for _ in range(n)], dtype=np.float64).reshape(shape)

    def sample_without_replacement(self, n: int, k: int) -> np.ndarray:
        """``k`` distinct indices from range(n) by a sparse partial Fisher-Yates."""
        if k > n:
            raise ValueError(f"cannot draw {k} distinct items from {n}")
        swapped: dict[int, int] = {}
        out = np.empty(k, dtype=np.int64)
        for i in range(k):
            j = i + self.randbelow(n - i)
            vi = swapped.get(i, i)
            vj = swapped.get(j, j)
            out[i] = vj
            swapped[j] = vi
        return out


@dataclass
class AffineFit:
    A: np.ndarray  # (N_p, N_h)
    b: np.ndarray  # (N_p,)
    residual: float  # mean squared residual per sample

    def apply(self, H: np.ndarray) -> np.ndarray:
        return np.asarray(H, dtype=np.float64) @ self.A.T + self.b


RIDGE = 1e-10


def ols_fit(H: np.ndarray, P: np.ndarray, ridge: float = RIDGE) -> AffineFit:
    """Least-squares affine map ``p ~ A h + b`` via ridged normal equations."""
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    P = np.atleast_2d(np.asarray(P, dtype=np.float64))
    if H.shape[0] != P.shape[0]:
        raise ValueError(f"row count mismatch: {H.shape[0]} vs {P.shape[0]}")
    n = H.shape[0]
    if n < 2:
        raise DegenerateInputError("ols_fit needs at least two samples")
    if np.all(H == H[0]):
        raise DegenerateInputError("ols_fit: all representation rows identical")
    X = np.hstack([H, np.ones((n, 1))])
    gram = X.T @ X
    ridged = gram.copy()
    ridged[np.diag_indices_from(ridged)] += ridge
    rhs = X.T @ P
    coef = np.linalg.solve(ridged, rhs)  # (N_h + 1, N_p)
    # refinement against the unridged system removes the ridge bias when
    # [H | 1] has full rank; null-space components are never excited
    for _ in range(3):
        coef += np.linalg.solve(ridged, rhs - gram @ coef)
    A = coef[:-1].T.copy()
    b = coef[-1].copy()
    resid = X @ coef - P
    return AffineFit(A=A, b=b, residual=float(np.mean(np.sum(resid * resid, axis=1))))


def distance_block(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Euclidean distances between rows of X and rows of Y.

    Computed from explicit differences rather than the Gram expansion so that
    coincident rows give exact zeros.
    """
    diff = X[:, None, :] - Y[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def block_rows(n_cols: int, dim: int, max_cells: int = 4_000_000) -> int:
    return max(1, max_cells // max(n_cols * max(dim, 1), 1))


def iter_distance_blocks(X: np.ndarray, Y: np.ndarray | None = None, rows: int | None = None):
    """Yield ``(row_slice, D)`` chunks of the distance matrix between X and Y."""
    X = np.asarray(X, dtype=np.float64)
    Y = X if Y is None else np.asarray(Y, dtype=np.float64)
    if rows is None:
        rows = block_rows(Y.shape[0], X.shape[1])
    for start in range(0, X.shape[0], rows):
        sl = slice(start, min(start + rows, X.shape[0]))
        yield sl, distance_block(X[sl], Y)


def pairwise_distances(X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] < 1:
        raise ValueError("pairwise_distances needs at least one row")
    D = np.empty((X.shape[0], X.shape[0]))
    for sl, block in iter_distance_blocks(X):
        D[sl] = block
    return D


def max_pairwise_distance(X: np.ndarray) -> float:
    return max(float(block.max()) for _, block in iter_distance_blocks(X))
