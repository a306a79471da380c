"""Exact rational helpers built on gmpy2."""

from __future__ import annotations

from fractions import Fraction
import math
from typing import Union

import gmpy2
from gmpy2 import mpq, mpz

Rational = type(mpq(0))
RationalLike = Union[int, Fraction, "mpq", str, float]

ZERO = mpq(0)
ONE = mpq(1)
HALF = mpq(1, 2)


def Q(x: RationalLike, d: int | None = None):
    """Coerce ``x`` (or ``x/d``) to an exact ``mpq``.

    Floats are converted exactly (binary expansion); strings may be
    ``"p/q"``, decimal or scientific.
    """
    if d is not None:
        return mpq(x, d)
    if isinstance(x, Rational):
        return x
    if isinstance(x, Fraction):
        return mpq(x.numerator, x.denominator)
    if isinstance(x, str):
        return mpq(x.strip())
    return mpq(x)


def floor(x) -> int:
    """Exact floor of a rational as a Python int."""
    return int(gmpy2.f_div(x.numerator, x.denominator))


def ceil(x) -> int:
    return int(gmpy2.c_div(x.numerator, x.denominator))


def frac(x):
    """Fractional part in [0, 1)."""
    return x - floor(x)


def mod1(x):
    return x - floor(x)


def balanced_mod(x, m):
    """Representative of ``x mod m`` in the half-open interval (-m/2, m/2]."""
    r = x - floor(x / m) * m
    if r > m / 2:
        r -= m
    return r


def circle_dist(a, b):
    """Distance on R/Z between two rationals."""
    d = mod1(a - b)
    return min(d, 1 - d)


def to_str(x) -> str:
    """Serialize as ``"num/den"``."""
    x = Q(x)
    return f"{int(x.numerator)}/{int(x.denominator)}"


def from_str(s: str):
    return mpq(s)


def iroot_floor(x, k: int) -> int:
    """Floor of the k-th root of a nonnegative integer."""
    r, _ = gmpy2.iroot(mpz(x), k)
    return int(r)


def floor_n_q_pow(n: int, q: int, sigma) -> int:
    """Exact ``floor(n * q**sigma)`` for rational sigma = s/t.

    Uses ``floor(n q^(s/t)) = floor((n^t q^s)^(1/t))``.
    """
    sigma = Q(sigma)
    s, t = int(sigma.numerator), int(sigma.denominator)
    return iroot_floor(mpz(n) ** t * mpz(q) ** s, t)


def rational_of_float_checked(x: float, scale=ONE):
    """Exact rational value of a float multiplied by ``scale``."""
    return mpq(x) * scale


def log2_int(x) -> float:
    """Base-2 logarithm of a (possibly huge) positive rational."""
    x = Q(x)
    num, den = mpz(x.numerator), mpz(x.denominator)
    nb, db = num.bit_length(), den.bit_length()
    shift_n, shift_d = max(nb - 60, 0), max(db - 60, 0)
    return (math.log2(int(num >> shift_n)) + shift_n) - (math.log2(int(den >> shift_d)) + shift_d)
