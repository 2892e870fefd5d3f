"""Exact rational parsing and canonical formatting.

Every number that crosses a file boundary goes through here so that no
float ever sits between a decimal string and a :class:`Fraction`.
"""
from __future__ import annotations

from fractions import Fraction
from numbers import Rational

__all__ = ["to_fraction", "format_fraction", "is_integral"]


def to_fraction(value) -> Fraction:
    """Convert an int, Fraction or decimal/ratio string to a Fraction.

    Floats are rejected: they would silently smuggle binary rounding into
    the verification path.
    """
    if isinstance(value, bool):
        raise TypeError("booleans are not numbers here")
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, Rational)):
        return Fraction(value)
    if isinstance(value, str):
        text = value.strip()
        if not text:
            raise ValueError("empty numeric literal")
        try:
            return Fraction(text)
        except (ValueError, ZeroDivisionError) as exc:
            raise ValueError(f"not an exact number: {value!r}") from exc
    raise TypeError(f"cannot convert {type(value).__name__} exactly: {value!r}")


def _terminates(den: int) -> bool:
    for p in (2, 5):
        while den % p == 0:
            den //= p
    return den == 1


def format_fraction(q: Fraction) -> str:
    """Canonical text for ``q``: an integer, a finite decimal, or ``p/q``."""
    q = Fraction(q)
    if q.denominator == 1:
        return str(q.numerator)
    if not _terminates(q.denominator):
        return f"{q.numerator}/{q.denominator}"
    digits = 0
    while (10 ** digits) % q.denominator:
        digits += 1
    scaled = abs(q.numerator) * (10 ** digits // q.denominator)
    whole, frac = divmod(scaled, 10 ** digits)
    sign = "-" if q < 0 else ""
    return f"{sign}{whole}.{str(frac).rjust(digits, '0')}"


def is_integral(q: Fraction) -> bool:
    return Fraction(q).denominator == 1
