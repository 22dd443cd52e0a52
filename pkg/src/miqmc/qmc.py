"""Randomly shifted rank-1 lattice points and their map to normal space.

Lattice points are computed with exact integer arithmetic,
``t_n = (n * z mod N) / N``, so they never drift with ``N``. Random shifts
and plain Monte Carlo draws come from counter-based Philox streams keyed by
``(seed, purpose, index, k, ...)`` which makes every draw reproducible and
independent of the order in which samples are evaluated.
"""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Sequence, TextIO

import numpy as np
from scipy.special import erfc

__all__ = [
    "LatticeRule",
    "VectorFormatError",
    "load_generating_vector",
    "default_rule",
    "lattice_point",
    "lattice_points",
    "apply_shift",
    "draw_shift",
    "stream",
    "inv_normal_cdf",
    "qmc_normal_sample",
    "qmc_normal_samples",
    "TINY",
]

# smallest value fed to the inverse CDF in place of an exact 0
TINY = 2.0**-64

# purpose tags for stream keys
SHIFT, MC_SAMPLE, UNIFORM_POINT = 1, 2, 3


class VectorFormatError(ValueError):
    """Malformed generating-vector file."""


@dataclass(frozen=True)
class LatticeRule:
    """Generating vector ``z`` of a rank-1 lattice rule."""

    z: np.ndarray

    def __post_init__(self):
        z = np.array(self.z, dtype=np.int64).ravel()
        if z.size == 0 or np.any(z < 1):
            raise ValueError("generating vector entries must be >= 1")
        z.setflags(write=False)
        object.__setattr__(self, "z", z)

    @property
    def s_max(self) -> int:
        return int(self.z.size)


def load_generating_vector(stream: TextIO | Iterable[str]) -> LatticeRule:
    """Read one positive integer per line. Blank trailing lines are ignored."""
    values = []
    lines = list(stream)
    while lines and not lines[-1].strip():
        lines.pop()
    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        try:
            v = int(text)
        except ValueError:
            raise VectorFormatError(f"line {lineno}: not an integer: {text!r}") from None
        if v < 1:
            raise VectorFormatError(f"line {lineno}: entry must be >= 1, got {v}")
        values.append(v)
    if not values:
        raise VectorFormatError("empty vector file")
    return LatticeRule(np.array(values, dtype=np.int64))


_DEFAULT: LatticeRule | None = None


def default_rule() -> LatticeRule:
    """The bundled generating vector (3600 coordinates, base-2 embedded)."""
    global _DEFAULT
    if _DEFAULT is None:
        path = resources.files("miqmc") / "data" / "lattice_vector.txt"
        with path.open("r") as fh:
            _DEFAULT = load_generating_vector(fh)
    return _DEFAULT


def _check(rule: LatticeRule, N: int, s: int):
    if N < 1:
        raise ValueError(f"N must be positive, got {N}")
    if s < 1 or s > rule.s_max:
        raise ValueError(f"dimension {s} outside 1..{rule.s_max}")


def lattice_point(rule: LatticeRule, N: int, n: int, s: int) -> np.ndarray:
    _check(rule, N, s)
    if not 0 <= n < N:
        raise ValueError(f"point number {n} outside [0, {N})")
    return (n * rule.z[:s] % N) / N


def lattice_points(rule: LatticeRule, N: int, s: int, n: Sequence[int] | None = None) -> np.ndarray:
    """Points ``n`` (default: all of ``0..N-1``) as an array of shape (len(n), s)."""
    _check(rule, N, s)
    n = np.arange(N, dtype=np.int64) if n is None else np.asarray(n, dtype=np.int64)
    if n.size and (n.min() < 0 or n.max() >= N):
        raise ValueError(f"point numbers must lie in [0, {N})")
    # n, z < 2**31 so the product fits in int64
    return (np.multiply.outer(n, rule.z[:s]) % N) / N


def apply_shift(t: np.ndarray, shift: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    shift = np.asarray(shift, dtype=float)
    if t.shape[-1] != shift.shape[-1]:
        raise ValueError(f"dimension mismatch: point {t.shape[-1]} vs shift {shift.shape[-1]}")
    out = np.mod(t + shift, 1.0)
    out[out >= 1.0] = 0.0
    return out


def stream(seed: int, purpose: int, *key: int) -> np.random.Generator:
    """Counter-based generator for one ``(seed, purpose, key...)`` tuple.

    Distinct keys give statistically independent streams (SeedSequence
    spawn keys hashed into a Philox key).
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(purpose), len(key), *map(int, key)))
    return np.random.Generator(np.random.Philox(ss))


def draw_shift(rng: np.random.Generator, s: int) -> np.ndarray:
    if s < 1:
        raise ValueError(f"shift dimension must be >= 1, got {s}")
    return rng.random(s)


# Acklam's rational approximation, relative error 1.15e-9 before refinement
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _tail(q):
    num = ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
    den = (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
    return num / den


def inv_normal_cdf(u):
    """Inverse of the standard normal CDF on the open interval (0, 1).

    Acklam's rational approximation followed by one Halley step.
    Accepts scalars or arrays; raises ``ValueError`` outside (0, 1).
    """
    scalar = np.ndim(u) == 0
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if np.any(~(u > 0.0) | ~(u < 1.0)):
        raise ValueError("inv_normal_cdf is defined on the open interval (0, 1)")
    x = np.empty_like(u)

    lo = u < _P_LOW
    hi = u > 1.0 - _P_LOW
    mid = ~(lo | hi)

    q = u[mid] - 0.5
    r = q * q
    num = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
    den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
    x[mid] = num / den
    x[lo] = _tail(np.sqrt(-2.0 * np.log(u[lo])))
    x[hi] = -_tail(np.sqrt(-2.0 * np.log1p(-u[hi])))

    # Halley step; work with the smaller tail probability for accuracy
    upper = x > 0
    p = np.where(upper, 1.0 - u, u)
    xs = np.where(upper, -x, x)
    e = 0.5 * erfc(-xs / np.sqrt(2.0)) - p
    step = e * np.sqrt(2.0 * np.pi) * np.exp(0.5 * xs * xs)
    xs = xs - step / (1.0 + 0.5 * xs * step)
    x = np.where(upper, -xs, xs)
    x[u == 0.5] = 0.0
    return float(x[0]) if scalar else x


def _to_open_cube(y: np.ndarray) -> np.ndarray:
    return np.where(y == 0.0, TINY, y)


def qmc_normal_sample(rule: LatticeRule, N: int, n: int, shift: np.ndarray, s: int) -> np.ndarray:
    t = lattice_point(rule, N, n, s)
    return inv_normal_cdf(_to_open_cube(apply_shift(t, shift[:s])))


def qmc_normal_samples(rule: LatticeRule, N: int, n: Sequence[int], shift: np.ndarray, s: int) -> np.ndarray:
    """Vectorised :func:`qmc_normal_sample` for several point numbers."""
    t = lattice_points(rule, N, s, n)
    return inv_normal_cdf(_to_open_cube(apply_shift(t, shift[:s]))).reshape(t.shape)
