"""Signed fixed-point encoding of reals into Z_n.

A value at scale level L is the integer round(x * 2**(frac_bits * L)).
Negative values live in the upper half of Z_n (v -> n - |v|), so additions
mod n carry the usual signed semantics as long as nothing wraps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

MIN_FRAC_BITS = 5
MAX_FRAC_BITS = 64
DEFAULT_FRAC_BITS = 10


class EncodingOverflowError(ValueError):
    pass


def round_half_away(x: float | Fraction) -> int:
    """Round to nearest integer, ties away from zero. Exact for any float."""
    a = abs(Fraction(x))
    v = math.floor(a + Fraction(1, 2))
    return -v if x < 0 else v


def quantize(x: float, frac_bits: int, level: int = 1) -> int:
    """round(x * 2**(frac_bits*level)) as a signed integer, no modulus involved."""
    if not math.isfinite(x):
        raise EncodingOverflowError(f"cannot encode non-finite value {x}")
    return round_half_away(Fraction(float(x)) * (1 << (frac_bits * level)))


@dataclass(frozen=True)
class FixedPointCodec:
    frac_bits: int
    modulus: int

    def __post_init__(self):
        if not MIN_FRAC_BITS <= self.frac_bits <= MAX_FRAC_BITS:
            raise ValueError(f"frac_bits must be in [{MIN_FRAC_BITS}, {MAX_FRAC_BITS}]")
        if self.modulus < 3:
            raise ValueError("modulus too small")

    @property
    def half(self) -> int:
        return self.modulus // 2

    def scale(self, level: int) -> int:
        if level < 0:
            raise ValueError("scale level must be non-negative")
        return 1 << (self.frac_bits * level)

    def quantize(self, x: float, level: int) -> int:
        """Signed integer image of x at `level`, before mapping into Z_n."""
        if level < 0:
            raise ValueError("scale level must be non-negative")
        v = quantize(x, self.frac_bits, level)
        self.check_magnitude(v)
        return v

    def check_magnitude(self, v: int) -> None:
        if abs(v) >= self.half:
            raise EncodingOverflowError(
                f"|{v}| exceeds the representable bound n/2 ({self.modulus.bit_length()}-bit modulus)")

    def wrap(self, v: int) -> int:
        """Signed integer -> residue in [0, n)."""
        return v % self.modulus

    def signed(self, v: int) -> int:
        """Residue in [0, n) -> signed integer; values above n/2 are negative."""
        v %= self.modulus
        return v - self.modulus if v > self.half else v

    def encode(self, x: float, level: int = 1) -> int:
        return self.wrap(self.quantize(x, level))

    def decode(self, v: int, level: int = 1) -> float:
        s = self.signed(v)
        if s == 0:
            return 0.0
        # exact rational -> nearest float; avoids int->float overflow for huge levels
        return s / self.scale(level)

    def rescale_plain(self, v: int, from_level: int, to_level: int) -> int:
        if to_level < from_level:
            raise ValueError("rescale_plain only raises the scale level")
        s = self.signed(v) * self.scale(to_level - from_level)
        self.check_magnitude(s)
        return self.wrap(s)
