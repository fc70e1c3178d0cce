"""Optimal magnitude thresholds under zero-mean Laplace and Gauss weights.

If weights are encoded as 1 when ``|w| > t``, the continuous analogue of the
binarization objective is ``2 int_t^inf w f(w) dw / sqrt(2 int_t^inf f(w) dw)``.
Its maximizer fixes the expected fraction of ones, ``p_plus``.

Monte-Carlo draws use numpy's PCG64 bit generator
(``numpy.random.default_rng(seed)``), so a given ``(seed, n)`` reproduces
bit-exactly on every platform numpy supports.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .binarize import as_weights, optimal_binarize
from .errors import Degenerate, InvalidArgs, InvalidScale

LAPLACE = "laplace"
GAUSS = "gauss"
KINDS = (LAPLACE, GAUSS)

GOLDEN_TOL = 1e-9
GAUSS_BRACKET = (0.0, 3.0)

# Abramowitz & Stegun 7.1.26, |error| <= 1.5e-7
_AS_P = 0.3275911
_AS_A = (0.254829592, -0.284496736, 1.421413741, -1.453152027, 1.061405429)


@dataclass(frozen=True)
class DistributionModel:
    kind: str
    scale: float

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgs(f"unknown distribution kind {self.kind!r}")
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise InvalidScale(f"scale must be positive, got {self.scale}")


@dataclass(frozen=True)
class ThresholdResult:
    t_star: float
    p_plus: float
    objective_at_t: float


def erfc(x: float) -> float:
    """Complementary error function, absolute error <= 1.5e-7."""
    if math.isnan(x):
        return math.nan
    z = abs(x)
    t = 1.0 / (1.0 + _AS_P * z)
    poly = t * (_AS_A[0] + t * (_AS_A[1] + t * (_AS_A[2] + t * (_AS_A[3] + t * _AS_A[4]))))
    r = poly * math.exp(-z * z)
    return r if x >= 0 else 2.0 - r


def laplace_objective(t: float, b: float) -> float:
    """``(b + t) exp(-t / 2b)``."""
    if not b > 0:
        raise InvalidScale(f"Laplace scale must be positive, got {b}")
    if t < 0:
        raise InvalidArgs(f"threshold must be nonnegative, got {t}")
    return (b + t) * math.exp(-t / (2.0 * b))


def laplace_objective_slope(t: float, b: float) -> float:
    """d/dt of :func:`laplace_objective`: ``exp(-t/2b) (b - t) / 2b``."""
    return math.exp(-t / (2.0 * b)) * (b - t) / (2.0 * b)


def gauss_objective(m: float) -> float:
    """``exp(-m^2) / sqrt(erfc(m))`` with ``m = t / (sqrt(2) sigma)``."""
    if m < 0:
        raise InvalidArgs(f"m must be nonnegative, got {m}")
    return math.exp(-m * m) / math.sqrt(erfc(m))


def golden_section_max(f: Callable[[float], float], lo: float, hi: float,
                       tol: float = GOLDEN_TOL) -> float:
    """Maximizer of a unimodal ``f`` on ``[lo, hi]`` to bracket width ``tol``."""
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def bisect_sign_change(g: Callable[[float], float], lo: float, hi: float,
                       tol: float = 0.0) -> float:
    """Root of ``g`` on ``[lo, hi]`` given ``g(lo) > 0 > g(hi)``.

    With ``tol=0`` iterates until the bracket stops shrinking in floating
    point.
    """
    if not (g(lo) > 0 > g(hi)):
        raise InvalidArgs("bracket does not contain a + to - sign change")
    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi or hi - lo <= tol:
            return mid
        if g(mid) > 0:
            lo = mid
        else:
            hi = mid


def gauss_argmax(lo: float = GAUSS_BRACKET[0], hi: float = GAUSS_BRACKET[1]) -> float:
    return golden_section_max(gauss_objective, lo, hi)


def optimal_threshold(model: DistributionModel) -> ThresholdResult:
    if model.kind == LAPLACE:
        b = model.scale
        t = b
        return ThresholdResult(t, math.exp(-t / b), laplace_objective(t, b))
    sigma = model.scale
    m = gauss_argmax()
    t = m * math.sqrt(2.0) * sigma
    obj = sigma / math.sqrt(math.pi) * gauss_objective(m)
    return ThresholdResult(t, erfc(m), obj)


def sample_weights(model: DistributionModel, n: int, seed: int) -> np.ndarray:
    if n < 1:
        raise InvalidArgs(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    if model.kind == LAPLACE:
        return rng.laplace(0.0, model.scale, size=n)
    return rng.normal(0.0, model.scale, size=n)


def empirical_plus_fraction(w) -> float:
    arr = as_weights(w)
    return optimal_binarize(arr).ones / arr.size


def fit_scale(kind: str, w) -> DistributionModel:
    """Zero-mean moment fit: ``b = mean|w|`` or ``sigma = rms(w)``."""
    arr = as_weights(w)
    if arr.size < 2:
        raise InvalidArgs("need at least two weights to fit a scale")
    if not np.any(arr):
        raise Degenerate("cannot fit a scale to all-zero weights")
    if kind == LAPLACE:
        return DistributionModel(LAPLACE, float(np.mean(np.abs(arr))))
    if kind == GAUSS:
        return DistributionModel(GAUSS, math.sqrt(float(np.mean(arr * arr))))
    raise InvalidArgs(f"unknown distribution kind {kind!r}")
