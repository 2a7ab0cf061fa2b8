"""Canonical JSON and exact-rational formatting shared across the package.

Every document the toolkit writes goes through :func:`canonical_dumps` so that
serialize -> parse -> serialize is a byte-level fixed point. Multipliers and
fractions travel as strings: exact decimals when the denominator divides a
power of ten, ``p/q`` otherwise. JSON floats are never used for quantities
that feed back into arithmetic.
"""

from __future__ import annotations

import hashlib
import json
from fractions import Fraction


def canonical_dumps(obj) -> str:
    """Serialize with fixed key order (insertion order) and a trailing newline."""
    return json.dumps(obj, indent=2, ensure_ascii=False) + "\n"


def sha256_hex(data: bytes | str) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def format_fraction(value: Fraction | int) -> str:
    """Render a rational exactly: terminating decimal if one exists, else p/q."""
    frac = Fraction(value)
    sign = "-" if frac < 0 else ""
    num, den = abs(frac.numerator), frac.denominator
    if den == 1:
        return f"{sign}{num}"
    twos = fives = 0
    rest = den
    while rest % 2 == 0:
        rest //= 2
        twos += 1
    while rest % 5 == 0:
        rest //= 5
        fives += 1
    if rest != 1:
        return f"{sign}{num}/{den}"
    places = max(twos, fives)
    scaled = num * (2 ** (places - twos)) * (5 ** (places - fives))
    digits = str(scaled).rjust(places + 1, "0")
    whole, part = digits[:-places], digits[-places:].rstrip("0")
    if not part:
        return f"{sign}{whole}"
    return f"{sign}{whole}.{part}"


def parse_fraction(value) -> Fraction:
    """Accept ints, decimal strings, and p/q strings; reject binary floats."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        raise ValueError(
            f"refusing float {value!r}: pass an exact decimal string instead"
        )
    if isinstance(value, str):
        text = value.strip()
        if "/" in text:
            num, _, den = text.partition("/")
            return Fraction(int(num), int(den))
        return Fraction(text)
    raise TypeError(f"cannot parse a fraction from {type(value).__name__}")
