"""Multi-dimensional dual numbers for forward-mode derivative propagation.

A :class:`Dual` carries a real value plus a fixed-width vector of partial
derivatives, one entry per active parameter.  Every simulation routine in
this package is written against plain arithmetic operators and the generic
math functions below, so the same code runs on ordinary floats (fast path)
or on duals (derivative path).  Comparisons look at the real part only, so
branching code (contact activation, clamps) behaves identically under both
instantiations.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Dual",
    "make_parameter",
    "lift",
    "real",
    "partials",
    "seed_vector",
    "gradient",
    "jacobian",
    "sin",
    "cos",
    "tan",
    "atan2",
    "sqrt",
    "exp",
    "log",
    "tanh",
    "power",
    "absolute",
]

_NUMBER = (int, float)


class Dual:
    """Value plus partial-derivative vector (forward-mode AD).

    ``partials`` must have the same length for every dual participating in
    one computation; mixing plain numbers in is always allowed and treats
    them as constants (zero partials).  Partial vectors are never mutated
    in place, so sharing them between instances is safe.
    """

    __slots__ = ("re", "d")

    def __init__(self, re: float, d: np.ndarray):
        self.re = re
        self.d = d

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.re + other.re, self.d + other.d)
        if isinstance(other, _NUMBER):
            return Dual(self.re + other, self.d)
        return NotImplemented

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.re - other.re, self.d - other.d)
        if isinstance(other, _NUMBER):
            return Dual(self.re - other, self.d)
        return NotImplemented

    def __rsub__(self, other):
        if isinstance(other, _NUMBER):
            return Dual(other - self.re, -self.d)
        return NotImplemented

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.re * other.re, self.d * other.re + other.d * self.re)
        if isinstance(other, _NUMBER):
            return Dual(self.re * other, self.d * other)
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            if other.re == 0.0:
                raise ZeroDivisionError("dual division by zero real part")
            q = self.re / other.re
            return Dual(q, (self.d - q * other.d) / other.re)
        if isinstance(other, _NUMBER):
            if other == 0.0:
                raise ZeroDivisionError("dual division by zero")
            return Dual(self.re / other, self.d / other)
        return NotImplemented

    def __rtruediv__(self, other):
        if isinstance(other, _NUMBER):
            if self.re == 0.0:
                raise ZeroDivisionError("dual division by zero real part")
            q = other / self.re
            return Dual(q, (-q / self.re) * self.d)
        return NotImplemented

    def __neg__(self):
        return Dual(-self.re, -self.d)

    def __pos__(self):
        return self

    def __abs__(self):
        # Subgradient convention: derivative 0 at exactly zero.
        if self.re > 0.0:
            return self
        if self.re < 0.0:
            return Dual(-self.re, -self.d)
        return Dual(abs(self.re), self.d * 0.0)

    def __pow__(self, other):
        return power(self, other)

    def __rpow__(self, other):
        return power(other, self)

    # -- comparisons (real part only) -------------------------------------

    def __lt__(self, other):
        return self.re < _real_of(other)

    def __le__(self, other):
        return self.re <= _real_of(other)

    def __gt__(self, other):
        return self.re > _real_of(other)

    def __ge__(self, other):
        return self.re >= _real_of(other)

    def __eq__(self, other):
        if isinstance(other, (Dual, *_NUMBER)):
            return self.re == _real_of(other)
        return NotImplemented

    def __ne__(self, other):
        if isinstance(other, (Dual, *_NUMBER)):
            return self.re != _real_of(other)
        return NotImplemented

    __hash__ = None  # mutable-value semantics; not meant for dict keys

    def __float__(self):
        return float(self.re)

    def __repr__(self):
        return f"Dual({self.re!r}, {self.d!r})"


def _real_of(x) -> float:
    return x.re if isinstance(x, Dual) else x


def real(x) -> float:
    """Real part of a scalar (identity on plain numbers)."""
    return x.re if isinstance(x, Dual) else float(x)


def partials(x, width: int) -> np.ndarray:
    """Partial vector of a scalar; zeros for plain numbers."""
    if isinstance(x, Dual):
        return x.d
    return np.zeros(width)


def lift(value: float, width: int) -> Dual:
    """Lift a constant: all partials exactly zero."""
    return Dual(float(value), np.zeros(width))


def make_parameter(value: float, index: int, total: int) -> Dual:
    """Seed an active parameter: unit partial at ``index``, zero elsewhere."""
    if not 0 <= index < total:
        raise ValueError(
            f"parameter index {index} out of range for {total} parameters"
        )
    d = np.zeros(total)
    d[index] = 1.0
    return Dual(float(value), d)


def seed_vector(values: Sequence[float]) -> list[Dual]:
    """Seed every entry of ``values`` as an active parameter."""
    n = len(values)
    return [make_parameter(v, i, n) for i, v in enumerate(values)]


# -- elementary functions, generic over float | Dual -----------------------


def sin(x):
    if isinstance(x, Dual):
        return Dual(math.sin(x.re), math.cos(x.re) * x.d)
    return math.sin(x)


def cos(x):
    if isinstance(x, Dual):
        return Dual(math.cos(x.re), -math.sin(x.re) * x.d)
    return math.cos(x)


def tan(x):
    if isinstance(x, Dual):
        c = math.cos(x.re)
        return Dual(math.tan(x.re), x.d / (c * c))
    return math.tan(x)


def atan2(y, x):
    if isinstance(y, Dual) or isinstance(x, Dual):
        yr, xr = _real_of(y), _real_of(x)
        denom = xr * xr + yr * yr
        if denom == 0.0:
            raise ValueError("atan2 undefined derivative at (0, 0)")
        width = (y if isinstance(y, Dual) else x).d.shape[0]
        dy = partials(y, width)
        dx = partials(x, width)
        return Dual(math.atan2(yr, xr), (xr * dy - yr * dx) / denom)
    return math.atan2(y, x)


def sqrt(x):
    if isinstance(x, Dual):
        if x.re <= 0.0:
            raise ValueError(f"sqrt requires a positive argument, got {x.re}")
        r = math.sqrt(x.re)
        return Dual(r, x.d / (2.0 * r))
    if x < 0.0:
        raise ValueError(f"sqrt requires a positive argument, got {x}")
    return math.sqrt(x)


def exp(x):
    if isinstance(x, Dual):
        e = math.exp(x.re)
        return Dual(e, e * x.d)
    return math.exp(x)


def log(x):
    if isinstance(x, Dual):
        if x.re <= 0.0:
            raise ValueError(f"log requires a positive argument, got {x.re}")
        return Dual(math.log(x.re), x.d / x.re)
    if x <= 0.0:
        raise ValueError(f"log requires a positive argument, got {x}")
    return math.log(x)


def tanh(x):
    if isinstance(x, Dual):
        t = math.tanh(x.re)
        return Dual(t, (1.0 - t * t) * x.d)
    return math.tanh(x)


def power(x, p):
    """x**p for scalar base and exponent; either side may be dual."""
    if isinstance(p, Dual):
        # General a^b via exp(b * log a); requires a > 0.
        return exp(p * log(x))
    if isinstance(x, Dual):
        xr = x.re
        if xr == 0.0:
            if p == 0.0:
                return Dual(1.0, x.d * 0.0)
            if p < 1.0:
                raise ValueError(
                    f"power has unbounded derivative at base 0 with exponent {p}"
                )
            slope = 0.0 if p > 1.0 else 1.0
            return Dual(math.pow(0.0, p), slope * x.d)
        if xr < 0.0 and p != int(p):
            raise ValueError(
                f"power requires a positive base for non-integer exponent, got {xr}"
            )
        return Dual(math.pow(xr, p), (p * math.pow(xr, p - 1.0)) * x.d)
    if x < 0.0 and p != int(p):
        raise ValueError(
            f"power requires a positive base for non-integer exponent, got {x}"
        )
    return math.pow(x, p)


def absolute(x):
    if isinstance(x, Dual):
        return abs(x)
    return abs(x)


# -- whole-function derivatives ---------------------------------------------


def gradient(f: Callable, point: Sequence[float]) -> np.ndarray:
    """All partials of scalar-valued ``f`` in one forward evaluation."""
    xs = seed_vector([float(v) for v in point])
    y = f(xs)
    if isinstance(y, Dual):
        return y.d.copy()
    return np.zeros(len(point))


def jacobian(r: Callable, point: Sequence[float]) -> np.ndarray:
    """Jacobian of vector-valued ``r``; row i holds the partials of output i."""
    xs = seed_vector([float(v) for v in point])
    ys = r(xs)
    n = len(point)
    out = np.zeros((len(ys), n))
    for i, y in enumerate(ys):
        if isinstance(y, Dual):
            out[i, :] = y.d
    return out
