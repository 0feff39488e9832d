"""Truncated p-adic scalars and 3-vectors, cells of Q_p^3 and GL_3(Z_p) rotations.

Points that the simulator touches are rationals whose denominators are powers
of p, so most of this module works with :class:`fractions.Fraction` and plain
integers.  :class:`PadicScalar` covers general elements of Q_p at a fixed
relative precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

INF = math.inf


class PrecisionError(ArithmeticError):
    """Raised when an operation needs more p-adic digits than are available."""


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    if n % 2 == 0:
        return n == 2
    k = 3
    while k * k <= n:
        if n % k == 0:
            return False
        k += 2
    return True


@dataclass(frozen=True)
class ModelParams:
    """Prime ``p``, block exponent ``l`` (``L = p**l``) and ``epsilon``."""

    p: int
    l: int
    epsilon: float

    def __post_init__(self):
        if not isinstance(self.p, (int, np.integer)) or not is_prime(int(self.p)):
            raise ValueError(f"p must be a prime, got {self.p!r}")
        if int(self.l) != self.l or self.l < 1:
            raise ValueError(f"l must be an integer >= 1, got {self.l!r}")
        if not 0.0 < float(self.epsilon) < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon!r}")
        object.__setattr__(self, "p", int(self.p))
        object.__setattr__(self, "l", int(self.l))
        object.__setattr__(self, "epsilon", float(self.epsilon))

    @property
    def L(self) -> int:
        return self.p ** self.l

    @property
    def phi_dim(self) -> float:
        """Scaling dimension of the field, (3 - epsilon) / 4."""
        return (3.0 - self.epsilon) / 4.0

    @property
    def gbar_star(self) -> float:
        """Leading-order fixed-point coupling (p^eps - 1) / (36 L^eps (1 - p^-3))."""
        p, eps = self.p, self.epsilon
        return (p ** eps - 1.0) / (36.0 * self.L ** eps * (1.0 - p ** -3.0))

    def to_dict(self) -> dict:
        return {"p": self.p, "l": self.l, "epsilon": self.epsilon}


# ---------------------------------------------------------------------------
# rationals with p-power structure


def int_valuation(n: int, p: int) -> float:
    if n == 0:
        return INF
    n = abs(n)
    v = 0
    while n % p == 0:
        n //= p
        v += 1
    return v


def frac_valuation(x, p: int) -> float:
    """p-adic valuation of a rational number (``inf`` for zero)."""
    x = Fraction(x)
    if x == 0:
        return INF
    return int_valuation(x.numerator, p) - int_valuation(x.denominator, p)


def frac_abs_exponent(x, p: int) -> float:
    """Exponent e with |x|_p = p**e; ``-inf`` encodes x = 0."""
    v = frac_valuation(x, p)
    return -v


def reduce_mod_ball(x, p: int, m: int) -> Fraction:
    """Canonical representative of ``x`` modulo the ball of radius ``p**m`` around 0.

    The result keeps exactly the digits of index < -m of the p-adic expansion
    of ``x``; it is a non-negative rational with a p-power denominator.
    """
    x = Fraction(x)
    if x == 0:
        return Fraction(0)
    num, den = x.numerator, x.denominator
    e = int_valuation(den, p)
    den_unit = den // p ** e
    digits = e - m  # number of digits kept, indices -e .. -m-1
    if digits <= 0:
        return Fraction(0)
    mod = p ** digits
    t = (num * pow(den_unit, -1, mod)) % mod
    return Fraction(t, p ** e)


def fractional_part_rational(x, p: int) -> Fraction:
    """{x}_p for a rational x, an exact rational in [0, 1)."""
    return reduce_mod_ball(x, p, 0)


def base_p_digits(x, p: int) -> str:
    """Digit string of a non-negative rational with p-power denominator.

    Written in the usual p-adic order: higher indices first, a ``.`` separating
    index 0 from index -1.  Finite expansions only (no periodic tails).
    """
    x = Fraction(x)
    if x < 0 or int_valuation(x.denominator, p) == INF:
        raise ValueError("need a non-negative rational with p-power denominator")
    e = int_valuation(x.denominator, p)
    if x.denominator != p ** e:
        raise ValueError(f"{x} has a denominator that is not a power of {p}")
    n = int(x * p ** e)
    digits = []
    while n:
        n, d = divmod(n, p)
        digits.append(_DIGITS[d])
    digits += ["0"] * max(0, e + 1 - len(digits))
    digits.reverse()
    whole = "".join(digits[: len(digits) - e]) or "0"
    frac = "".join(digits[len(digits) - e:])
    whole = whole.lstrip("0") or "0"
    return whole + ("." + frac if frac else "")


def parse_base_p(s: str, p: int) -> Fraction:
    s = s.strip().lower()
    whole, _, frac = s.partition(".")
    value = 0
    for ch in whole + frac:
        d = _DIGITS.find(ch)
        if d < 0 or d >= p:
            raise ValueError(f"invalid base-{p} digit {ch!r} in {s!r}")
        value = value * p + d
    return Fraction(value, p ** len(frac))


_DIGITS = "0123456789abcdefghijklmnopqrstuvwxyz"


# ---------------------------------------------------------------------------
# PadicScalar


class PadicScalar:
    """Element of Q_p stored as ``p**valuation * unit`` with ``unit`` known mod ``p**precision``.

    Truncation: every operation keeps at most ``precision`` significant digits
    (capped relative precision).  Addition additionally loses the digits that
    cancel; if a sum cancels below the known absolute precision the result is
    exact zero.
    """

    __slots__ = ("p", "_v", "_unit", "precision")

    def __init__(self, p: int, valuation, unit: int, precision: int = 20):
        if precision < 1:
            raise ValueError("precision must be >= 1")
        self.p = p
        self.precision = precision
        if valuation == INF or unit % (p ** precision) == 0:
            self._v = None
            self._unit = 0
            return
        unit %= p ** precision
        shift = int_valuation(unit, p)
        if shift:
            # normalise so the leading digit is nonzero; the lost digits are unknown
            unit //= p ** shift
            valuation += shift
            self.precision = precision - shift
        self._v = int(valuation)
        self._unit = unit

    @classmethod
    def from_rational(cls, x, p: int, precision: int = 20) -> "PadicScalar":
        x = Fraction(x)
        if x == 0:
            return cls(p, INF, 0, precision)
        v = int(frac_valuation(x, p))
        y = x / Fraction(p) ** v
        mod = p ** precision
        unit = (y.numerator * pow(y.denominator, -1, mod)) % mod
        return cls(p, v, unit, precision)

    @classmethod
    def zero(cls, p: int, precision: int = 20) -> "PadicScalar":
        return cls(p, INF, 0, precision)

    # -- basic data ------------------------------------------------------
    @property
    def valuation(self):
        return INF if self._v is None else self._v

    @property
    def unit(self) -> int:
        return self._unit

    def is_zero(self) -> bool:
        return self._v is None

    def digits(self) -> list[int]:
        """Digits a_v, ..., a_{v+W-1} (empty for zero)."""
        if self._v is None:
            return []
        out, u = [], self._unit
        for _ in range(self.precision):
            u, d = divmod(u, self.p)
            out.append(d)
        return out

    def abs_exponent(self) -> float:
        """e with |x| = p**e; -inf for zero."""
        return -INF if self._v is None else -self._v

    def __abs__(self) -> float:
        if self._v is None:
            return 0.0
        return float(Fraction(self.p) ** (-self._v))

    def to_fraction(self) -> Fraction:
        """Truncated expansion sum_{n < v+W} a_n p^n as an exact rational."""
        if self._v is None:
            return Fraction(0)
        return Fraction(self._unit) * Fraction(self.p) ** self._v

    def fractional_part(self) -> Fraction:
        if self._v is None or self._v >= 0:
            return Fraction(0)
        if self.precision < -self._v:
            raise PrecisionError("not enough digits to resolve the polar part")
        k = -self._v
        return Fraction(self._unit % self.p ** k, self.p ** k)

    # -- arithmetic --------------------------------------------------------
    def _coerce(self, other) -> "PadicScalar":
        if isinstance(other, PadicScalar):
            if other.p != self.p:
                raise ValueError("mixing different primes")
            return other
        return PadicScalar.from_rational(other, self.p, self.precision)

    def _abs_precision(self) -> float:
        return INF if self._v is None else self._v + self.precision

    def __neg__(self):
        if self._v is None:
            return self
        return PadicScalar(self.p, self._v, -self._unit, self.precision)

    def __add__(self, other):
        other = self._coerce(other)
        if self._v is None:
            return other
        if other._v is None:
            return self
        v = min(self._v, other._v)
        absprec = min(self._abs_precision(), other._abs_precision())
        s = self._unit * self.p ** (self._v - v) + other._unit * self.p ** (other._v - v)
        if s == 0:
            return PadicScalar.zero(self.p, min(self.precision, other.precision))
        shift = int(int_valuation(s, self.p))
        new_v = v + shift
        relprec = int(min(absprec - new_v, min(self.precision, other.precision)))
        if relprec <= 0:
            return PadicScalar.zero(self.p, min(self.precision, other.precision))
        return PadicScalar(self.p, new_v, s // self.p ** shift, relprec)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) + (-self)

    def __mul__(self, other):
        other = self._coerce(other)
        prec = min(self.precision, other.precision)
        if self._v is None or other._v is None:
            return PadicScalar.zero(self.p, prec)
        return PadicScalar(self.p, self._v + other._v, self._unit * other._unit, prec)

    __rmul__ = __mul__

    def inverse(self) -> "PadicScalar":
        if self._v is None:
            raise ZeroDivisionError("inverse of p-adic zero")
        mod = self.p ** self.precision
        return PadicScalar(self.p, -self._v, pow(self._unit, -1, mod), self.precision)

    def __truediv__(self, other):
        return self * self._coerce(other).inverse()

    def __eq__(self, other):
        if not isinstance(other, PadicScalar):
            try:
                other = self._coerce(other)
            except (TypeError, ValueError):
                return NotImplemented
        if self.p != other.p:
            return False
        if self._v is None or other._v is None:
            return self._v is None and other._v is None
        prec = min(self.precision, other.precision)
        return self._v == other._v and (self._unit - other._unit) % self.p ** prec == 0

    def __hash__(self):
        return hash((self.p, self._v, self._unit))

    def __repr__(self):
        if self._v is None:
            return f"PadicScalar(0, p={self.p})"
        return f"PadicScalar(p={self.p}, v={self._v}, digits={self.digits()})"


def valuation(x, p: int | None = None):
    """p-adic valuation of a PadicScalar or rational (``inf`` for zero)."""
    if isinstance(x, PadicScalar):
        return x.valuation
    if p is None:
        raise TypeError("p is required for rational input")
    return frac_valuation(x, p)


def abs_exponent(x, p: int | None = None):
    """Exponent e with |x| = p**e; ``-inf`` for zero."""
    if isinstance(x, PadicScalar):
        return x.abs_exponent()
    return frac_abs_exponent(x, p)


def fractional_part(x, p: int | None = None) -> Fraction:
    if isinstance(x, PadicScalar):
        return x.fractional_part()
    return fractional_part_rational(x, p)


# ---------------------------------------------------------------------------
# vectors


@dataclass(frozen=True)
class PadicVector3:
    """A point of Q_p^3 with rational (p-power denominator or general) coordinates."""

    p: int
    components: tuple

    def __init__(self, p: int, components: Sequence):
        if len(components) != 3:
            raise ValueError("PadicVector3 needs exactly three components")
        comps = tuple(
            c.to_fraction() if isinstance(c, PadicScalar) else Fraction(c) for c in components
        )
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "components", comps)

    def norm_exponent(self) -> float:
        """e with |x| = p**e (max over components); -inf for the origin."""
        return max(frac_abs_exponent(c, self.p) for c in self.components)

    def norm(self) -> Fraction:
        e = self.norm_exponent()
        return Fraction(0) if e == -INF else Fraction(self.p) ** int(e)

    def __add__(self, other: "PadicVector3") -> "PadicVector3":
        return PadicVector3(self.p, [a + b for a, b in zip(self.components, other.components)])

    def __sub__(self, other: "PadicVector3") -> "PadicVector3":
        return PadicVector3(self.p, [a - b for a, b in zip(self.components, other.components)])

    def __neg__(self) -> "PadicVector3":
        return PadicVector3(self.p, [-a for a in self.components])

    def scaled(self, lam) -> "PadicVector3":
        lam = Fraction(lam)
        return PadicVector3(self.p, [lam * a for a in self.components])

    def dot(self, other: "PadicVector3") -> Fraction:
        return sum((a * b for a, b in zip(self.components, other.components)), Fraction(0))


def vec_norm(x: PadicVector3) -> Fraction:
    return x.norm()


def vec_norm_exponent(components: Iterable, p: int) -> float:
    return max(frac_abs_exponent(c, p) for c in components)


# ---------------------------------------------------------------------------
# cells


@dataclass(frozen=True, order=True)
class Cell:
    """Closed ball ``{x : |x - center| <= p**scale}`` in Q_p^3.

    ``center`` is the canonical representative: each coordinate keeps only the
    digits of index below ``-scale``.  Volume is ``p**(3*scale)``.
    """

    p: int
    scale: int
    center: tuple

    @classmethod
    def make(cls, p: int, scale: int, center: Sequence) -> "Cell":
        return cls(p, int(scale), tuple(reduce_mod_ball(c, p, scale) for c in center))

    @classmethod
    def ball(cls, p: int, scale: int = 0) -> "Cell":
        """The ball of radius p**scale around the origin."""
        return cls(p, int(scale), (Fraction(0),) * 3)

    @property
    def volume(self) -> Fraction:
        return Fraction(self.p) ** (3 * self.scale)

    def contains_point(self, x) -> bool:
        comps = x.components if isinstance(x, PadicVector3) else tuple(Fraction(c) for c in x)
        return vec_norm_exponent([a - c for a, c in zip(comps, self.center)], self.p) <= self.scale

    def contains(self, other: "Cell") -> bool:
        return other.scale <= self.scale and self.contains_point(other.center)

    def overlaps(self, other: "Cell") -> bool:
        return self.contains(other) or other.contains(self)

    def distance_exponent(self, other: "Cell") -> float:
        """Exponent of |x - y| for x, y in disjoint cells (constant there)."""
        return vec_norm_exponent([a - b for a, b in zip(self.center, other.center)], self.p)

    def children(self) -> list["Cell"]:
        step = Fraction(self.p) ** (-self.scale)
        p = self.p
        out = []
        for d3 in range(p):
            for d2 in range(p):
                for d1 in range(p):
                    c = (self.center[0] + d1 * step, self.center[1] + d2 * step,
                         self.center[2] + d3 * step)
                    out.append(Cell(p, self.scale - 1, c))
        return out

    def parent(self) -> "Cell":
        return Cell.make(self.p, self.scale + 1, self.center)

    def ancestor(self, scale: int) -> "Cell":
        if scale < self.scale:
            raise ValueError("ancestor scale below cell scale")
        return Cell.make(self.p, scale, self.center)

    def descendants(self, scale: int) -> list["Cell"]:
        """All sub-cells at the given (smaller or equal) scale."""
        cells = [self]
        for _ in range(self.scale - scale):
            cells = [c for cell in cells for c in cell.children()]
        return cells

    def translated(self, y) -> "Cell":
        comps = y.components if isinstance(y, PadicVector3) else tuple(Fraction(c) for c in y)
        return Cell.make(self.p, self.scale, [a + b for a, b in zip(self.center, comps)])

    def scaled(self, power: int) -> "Cell":
        """Image under x -> p**power * x (radius exponent drops by ``power``)."""
        lam = Fraction(self.p) ** power
        return Cell.make(self.p, self.scale - power, [lam * c for c in self.center])


# ---------------------------------------------------------------------------
# rotations


def _det3(m) -> int:
    return (m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]))


def _adj3(m):
    return (
        (m[1][1] * m[2][2] - m[1][2] * m[2][1], m[0][2] * m[2][1] - m[0][1] * m[2][2],
         m[0][1] * m[1][2] - m[0][2] * m[1][1]),
        (m[1][2] * m[2][0] - m[1][0] * m[2][2], m[0][0] * m[2][2] - m[0][2] * m[2][0],
         m[0][2] * m[1][0] - m[0][0] * m[1][2]),
        (m[1][0] * m[2][1] - m[1][1] * m[2][0], m[0][1] * m[2][0] - m[0][0] * m[2][1],
         m[0][0] * m[1][1] - m[0][1] * m[1][0]),
    )


@dataclass(frozen=True)
class Rotation:
    """Element of GL_3(Z_p) known modulo ``p**precision``.

    ``matrix`` holds integer representatives in ``[0, p**precision)``.
    """

    p: int
    precision: int
    matrix: tuple

    def __post_init__(self):
        mod = self.p ** self.precision
        m = tuple(tuple(int(a) % mod for a in row) for row in self.matrix)
        if len(m) != 3 or any(len(r) != 3 for r in m):
            raise ValueError("rotation matrix must be 3x3")
        if _det3(m) % self.p == 0:
            raise ValueError("matrix is singular modulo p; not in GL_3(Z_p)")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls, p: int, precision: int) -> "Rotation":
        return cls(p, precision, ((1, 0, 0), (0, 1, 0), (0, 0, 1)))

    @classmethod
    def permutation(cls, p: int, precision: int, perm: Sequence[int]) -> "Rotation":
        """Matrix sending coordinate axis j to axis perm[j]."""
        m = [[0] * 3 for _ in range(3)]
        for j, i in enumerate(perm):
            m[i][j] = 1
        return cls(p, precision, tuple(tuple(r) for r in m))

    @property
    def entries(self) -> tuple:
        return tuple(tuple(PadicScalar.from_rational(a, self.p, self.precision) for a in row)
                     for row in self.matrix)

    def determinant_valuation(self) -> float:
        return int_valuation(_det3(self.matrix) % self.p ** self.precision, self.p)

    def inverse(self) -> "Rotation":
        mod = self.p ** self.precision
        dinv = pow(_det3(self.matrix) % mod, -1, mod)
        adj = _adj3(self.matrix)
        return Rotation(self.p, self.precision, tuple(tuple(a * dinv % mod for a in row) for row in adj))

    def compose(self, other: "Rotation") -> "Rotation":
        prec = min(self.precision, other.precision)
        a, b = self.matrix, other.matrix
        m = tuple(tuple(sum(a[i][k] * b[k][j] for k in range(3)) for j in range(3)) for i in range(3))
        return Rotation(self.p, prec, m)

    def apply_point(self, x) -> tuple:
        comps = x.components if isinstance(x, PadicVector3) else tuple(Fraction(c) for c in x)
        return tuple(sum((self.matrix[i][k] * comps[k] for k in range(3)), Fraction(0))
                     for i in range(3))

    def apply_int_mod(self, t, modulus: int):
        """Matrix-vector product on integer triples modulo ``modulus`` (vectorised)."""
        t = np.asarray(t, dtype=object) if modulus > 2 ** 20 else np.asarray(t, dtype=np.int64)
        m = np.array(self.matrix, dtype=t.dtype) % modulus
        return (t @ m.T) % modulus


def random_rotation(seed, p: int, precision: int) -> Rotation:
    """Uniform digit matrix over Z_p / p**precision, rejecting matrices singular mod p."""
    if precision < 1:
        raise ValueError("precision must be >= 1")
    rng = np.random.default_rng(seed)
    mod = p ** precision
    while True:
        digits = rng.integers(0, p, size=(3, 3, precision))
        powers = [p ** k for k in range(precision)]
        m = tuple(tuple(int(sum(int(d) * w for d, w in zip(digits[i, j], powers))) for j in range(3))
                  for i in range(3))
        if _det3(m) % p != 0:
            return Rotation(p, precision, m)


def required_precision(cell: Cell) -> int:
    """Digits of the rotation needed to map ``cell`` exactly."""
    lowest = min((frac_valuation(c, cell.p) for c in cell.center), default=INF)
    if lowest == INF:
        return 1
    return max(1, int(-lowest - cell.scale))


def apply_rotation(M: Rotation, cell: Cell) -> Cell:
    """Image ``M . cell``: a cell of the same scale."""
    if cell.p != M.p:
        raise ValueError("prime mismatch")
    need = required_precision(cell)
    if M.precision < need:
        raise PrecisionError(f"rotation known to {M.precision} digits, cell needs {need}")
    return Cell.make(cell.p, cell.scale, M.apply_point(cell.center))
