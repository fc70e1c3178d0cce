"""Magnitude-based weight binarization and its sign-based baseline.

A weight vector ``w`` is encoded into a {0, 1} code ``b`` that maximizes the
cosine between ``b`` and ``|w|``.  For a fixed number of ones ``k`` the best
code puts its ones on the ``k`` largest magnitudes, so the global optimum
only needs one sort and a prefix-sum scan over ``k``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    AllZero,
    EmptyCode,
    InvalidArgs,
    OutOfRange,
    TooLarge,
    ZeroDirection,
)

BRUTE_FORCE_MAX_N = 20


@dataclass(frozen=True)
class BinaryCode:
    """A {0,1} code and its number of ones."""

    bits: np.ndarray
    ones: int

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8)
        if bits.ndim != 1:
            raise InvalidArgs("code must be one-dimensional")
        if np.any(bits > 1):
            raise InvalidArgs("code entries must be 0 or 1")
        if int(bits.sum()) != self.ones:
            raise InvalidArgs(f"ones={self.ones} but code has {int(bits.sum())}")
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_bits(cls, bits) -> "BinaryCode":
        bits = np.asarray(bits, dtype=np.uint8)
        return cls(bits, int(bits.sum()))

    @property
    def n(self) -> int:
        return int(self.bits.size)

    def to_pm1(self) -> np.ndarray:
        """Map to {-1, +1} as ``2 b - 1``."""
        return 2.0 * self.bits.astype(np.float64) - 1.0


@dataclass(frozen=True)
class SignCode:
    bits: np.ndarray  # int8 in {-1, +1}
    scale: float


def as_weights(w) -> np.ndarray:
    """Validate and return ``w`` as a 1-D float64 array."""
    arr = np.asarray(w, dtype=np.float64)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    if arr.size < 1:
        raise InvalidArgs("weight vector must have at least one entry")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgs("weight vector contains non-finite values")
    return arr


def _magnitude_order(mag: np.ndarray) -> np.ndarray:
    # descending magnitude, lower index first among equals
    return np.argsort(-mag, kind="stable")


def optimal_binarize(w) -> BinaryCode:
    """Global maximizer of ``b.|w| / ||b||`` over nonzero {0,1} codes.

    O(n log n): sort ``|w|`` once, scan ``L_k = S_k / sqrt(k)`` and keep the
    smallest ``k`` attaining the maximum.
    """
    mag = np.abs(as_weights(w))
    if not np.any(mag):
        raise AllZero("objective is undefined for an all-zero weight vector")
    order = _magnitude_order(mag)
    # the code is scale-free; rescaling keeps subnormal scores distinguishable
    scores = prefix_scores(mag[order] / mag.max())
    k = int(np.argmax(scores)) + 1
    bits = np.zeros(mag.size, dtype=np.uint8)
    bits[order[:k]] = 1
    return BinaryCode(bits, k)


def prefix_scores(sorted_mag: np.ndarray) -> np.ndarray:
    """``L_k`` for k = 1..n given magnitudes sorted in descending order."""
    k = np.arange(1, sorted_mag.size + 1, dtype=np.float64)
    return np.cumsum(sorted_mag) / np.sqrt(k)


def half_half_binarize(w) -> BinaryCode:
    """Ones on the ceil(n/2) largest magnitudes (ties: lower index wins).

    Uses a linear-time selection of the threshold magnitude instead of a
    full sort.
    """
    mag = np.abs(as_weights(w))
    n = mag.size
    k = (n + 1) // 2
    # k-th largest magnitude
    thresh = np.partition(mag, n - k)[n - k]
    above = mag > thresh
    bits = above.astype(np.uint8)
    missing = k - int(above.sum())
    if missing:
        tied = np.flatnonzero(mag == thresh)[:missing]
        bits[tied] = 1
    return BinaryCode(bits, k)


def _all_codes(n: int, start: int, stop: int) -> np.ndarray:
    ints = np.arange(start, stop, dtype=np.uint32)[:, None]
    return ((ints >> np.arange(n, dtype=np.uint32)) & 1).astype(np.uint8)


def brute_force_binarize(w, chunk: int = 1 << 16) -> BinaryCode:
    """Exhaustive search over all 2^n - 1 nonzero codes (n <= 20).

    Reference oracle for :func:`optimal_binarize`.  Exact ties in the
    objective go to the code with fewer ones.
    """
    arr = as_weights(w)
    n = arr.size
    if n > BRUTE_FORCE_MAX_N:
        raise TooLarge(f"brute force limited to n <= {BRUTE_FORCE_MAX_N}, got {n}")
    mag = np.abs(arr)
    if not np.any(mag):
        raise AllZero("objective is undefined for an all-zero weight vector")
    mag = mag / mag.max()
    norm = math.sqrt(float(mag @ mag))
    best_val, best_ones, best_bits = -math.inf, n + 1, None
    total = 1 << n
    for start in range(1, total, chunk):
        codes = _all_codes(n, start, min(start + chunk, total))
        ones = codes.sum(axis=1)
        vals = (codes @ mag) / (np.sqrt(ones) * norm)
        top = vals.max()
        if top < best_val:
            continue
        cand = np.flatnonzero(vals == top)
        i = cand[np.argmin(ones[cand])]
        if top > best_val or ones[i] < best_ones:
            best_val, best_ones, best_bits = top, int(ones[i]), codes[i].copy()
    return BinaryCode(best_bits, best_ones)


def objective_value(w, code: BinaryCode) -> float:
    """Cosine of the angle between ``code`` and ``|w|``."""
    mag = np.abs(as_weights(w))
    if code.n != mag.size:
        raise InvalidArgs("code and weight lengths differ")
    if code.ones < 1:
        raise EmptyCode("objective is undefined for the all-zero code")
    top = mag.max()
    if top == 0.0:
        raise AllZero("objective is undefined for an all-zero weight vector")
    mag = mag / top
    norm = math.sqrt(float(mag @ mag))
    return float(code.bits @ mag) / (math.sqrt(code.ones) * norm)


def sign_binarize_scaled(w) -> SignCode:
    """Sign code with the closed-form scale ``mean(|w|)``; sign(0) = +1."""
    arr = as_weights(w)
    bits = np.where(arr >= 0, 1, -1).astype(np.int8)
    return SignCode(bits, float(np.mean(np.abs(arr))))


def quantization_error(w, v: Sequence[float]) -> float:
    """``min_s ||s v - w||^2``, i.e. ``||w||^2 sin^2`` of the angle (w, v)."""
    arr = as_weights(w)
    direction = np.asarray(v, dtype=np.float64).reshape(-1)
    if direction.size != arr.size:
        raise InvalidArgs("direction and weight lengths differ")
    vv = float(direction @ direction)
    if vv == 0.0:
        raise ZeroDirection("direction vector has zero norm")
    wv = float(arr @ direction)
    return max(float(arr @ arr) - wv * wv / vv, 0.0)


def _unit_max(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    top = np.abs(x).max() if x.size else 0.0
    return x / top if top > 0 else x


def cosine(a, b) -> float:
    a, b = _unit_max(a), _unit_max(b)
    den = math.sqrt(float(a @ a) * float(b @ b))
    if den == 0.0:
        raise ZeroDirection("cosine undefined for a zero vector")
    return float(a @ b) / den


def angle_bounds(k: int, r: int) -> tuple[float, float]:
    """Range, in degrees, of the angle between a k-ones code and any code
    that differs from it in ``r`` bits."""
    if k < 1 or r < 0 or r > k:
        raise InvalidArgs(f"need 0 <= r <= k and k >= 1, got k={k}, r={r}")
    lo = math.degrees(math.acos(math.sqrt(k / (k + r))))
    hi = math.degrees(math.acos(math.sqrt((k - r) / k)))
    return lo, hi


def inequality_margin(w, k: int) -> float:
    """``L_k (sqrt(k+1) - sqrt(k)) - m_{k+1}`` with ``m`` the sorted magnitudes.

    Positive exactly when adding the (k+1)-th largest magnitude lowers the
    objective, i.e. ``L_{k+1} < L_k``.
    """
    mag = np.abs(as_weights(w))
    n = mag.size
    if not 1 <= k < n:
        raise OutOfRange(f"k must satisfy 1 <= k < n={n}, got {k}")
    top = np.sort(mag)[::-1]
    lk = float(top[:k].sum()) / math.sqrt(k)
    return lk * (math.sqrt(k + 1) - math.sqrt(k)) - float(top[k])
