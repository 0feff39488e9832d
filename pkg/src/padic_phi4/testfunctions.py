"""Schwartz-Bruhat test functions on Q_p^3 as step functions over disjoint cells.

A :class:`TestFunction` is a finite sum ``sum_j c_j 1_{B_j}`` over pairwise
disjoint balls.  Construction refines overlapping input cells to a common
partition and merges complete sibling families carrying equal coefficients,
so two functions built from different decompositions compare equal.

Text format (one term per line)::

    # p=2
    scale center_x center_y center_z re_coeff [im_coeff]

with centers written as base-p digit strings (``101.11`` = 5 + 3/4).
"""

from __future__ import annotations

import math
from collections import defaultdict
from fractions import Fraction
from typing import Iterable, Mapping

import numpy as np

from .padic import (
    Cell,
    PadicVector3,
    Rotation,
    apply_rotation,
    base_p_digits,
    frac_abs_exponent,
    frac_valuation,
    parse_base_p,
)

MAX_PARTITION_CELLS = 2_000_000


def _refine(terms: Iterable[tuple[Cell, complex]]) -> dict[Cell, complex]:
    """Split cells until no cell strictly contains another, then sum duplicates."""
    pending = list(terms)
    while True:
        cells = {c for c, _ in pending}
        by_scale = sorted(cells, key=lambda c: c.scale)
        split = set()
        for i, big in enumerate(by_scale):
            for small in by_scale[:i]:
                if small.scale < big.scale and big.contains(small):
                    split.add(big)
                    break
        if not split:
            break
        nxt = []
        for c, v in pending:
            if c in split:
                nxt.extend((ch, v) for ch in c.children())
            else:
                nxt.append((c, v))
        pending = nxt
    out: dict[Cell, complex] = defaultdict(complex)
    for c, v in pending:
        out[c] += v
    return dict(out)


def _merge_siblings(terms: dict[Cell, complex], p: int, rtol: float = 0.0) -> dict[Cell, complex]:
    terms = dict(terms)
    family = p ** 3
    while True:
        groups = defaultdict(list)
        for c in terms:
            groups[c.parent()].append(c)
        merged = False
        for parent, kids in groups.items():
            if len(kids) != family:
                continue
            vals = [terms[k] for k in kids]
            v0 = vals[0]
            tol = rtol * max(abs(v) for v in vals)
            if all(abs(v - v0) <= tol for v in vals):
                for k in kids:
                    del terms[k]
                terms[parent] = v0 if rtol == 0.0 else sum(vals) / family
                merged = True
        if not merged:
            return terms


def _clean(value):
    if isinstance(value, complex) and value.imag == 0.0:
        return value.real
    return value


class TestFunction:
    """Finite step function over disjoint cells (real or complex coefficients)."""

    __test__ = False  # not a pytest class

    def __init__(self, p: int, terms: Iterable[tuple[Cell, complex]] | Mapping = (), *,
                 merge_rtol: float = 0.0):
        if isinstance(terms, Mapping):
            terms = terms.items()
        terms = list(terms)
        for c, _ in terms:
            if c.p != p:
                raise ValueError("cell prime does not match test function prime")
        refined = _refine(terms)
        refined = {c: v for c, v in refined.items() if v != 0}
        merged = _merge_siblings(refined, p, merge_rtol)
        self.p = p
        self.terms: dict[Cell, complex] = {c: _clean(complex(v)) for c, v in merged.items()}

    # -- constructors ----------------------------------------------------
    @classmethod
    def indicator(cls, cell: Cell, coeff=1.0) -> "TestFunction":
        return cls(cell.p, [(cell, coeff)])

    @classmethod
    def unit_ball(cls, p: int, coeff=1.0) -> "TestFunction":
        return cls.indicator(Cell.ball(p, 0), coeff)

    @classmethod
    def zero(cls, p: int) -> "TestFunction":
        return cls(p, [])

    # -- inspection ------------------------------------------------------
    def __len__(self):
        return len(self.terms)

    def items(self):
        return sorted(self.terms.items(), key=lambda kv: (kv[0].scale, kv[0].center))

    def is_real(self) -> bool:
        return all(not isinstance(v, complex) for v in self.terms.values())

    @property
    def min_scale(self) -> int:
        return min(c.scale for c in self.terms)

    @property
    def max_scale(self) -> int:
        return max(c.scale for c in self.terms)

    def support_radius_exponent(self) -> float:
        """Smallest e such that the support lies in the ball |x| <= p**e."""
        if not self.terms:
            return -math.inf
        return max(max(c.scale, frac_abs_exponent_vec(c.center, self.p)) for c in self.terms)

    def refined(self, scale: int) -> list[tuple[Cell, complex]]:
        """Terms split down to cells of exactly ``scale`` (must be <= min_scale)."""
        out = []
        for c, v in self.items():
            if c.scale < scale:
                raise ValueError(f"test function has cells finer than scale {scale}")
            out.extend((d, v) for d in c.descendants(scale))
        return out

    def __call__(self, x) -> complex:
        return evaluate(self, x)

    # -- algebra ---------------------------------------------------------
    def __add__(self, other: "TestFunction") -> "TestFunction":
        if other.p != self.p:
            raise ValueError("prime mismatch")
        return type(self)(self.p, list(self.terms.items()) + list(other.terms.items()))

    def __neg__(self):
        return self * -1

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, scalar) -> "TestFunction":
        return type(self)(self.p, [(c, v * scalar) for c, v in self.terms.items()])

    __rmul__ = __mul__

    def conj(self) -> "TestFunction":
        return type(self)(self.p, [(c, complex(v).conjugate()) for c, v in self.terms.items()])

    def __eq__(self, other):
        if not isinstance(other, TestFunction):
            return NotImplemented
        return self.p == other.p and self.terms == other.terms

    def __hash__(self):
        return hash((self.p, frozenset(self.terms.items())))

    def allclose(self, other: "TestFunction", atol: float = 1e-12) -> bool:
        diff = self - other
        return all(abs(v) <= atol for v in diff.terms.values())

    def canonical(self) -> "TestFunction":
        return type(self)(self.p, self.terms)

    def __repr__(self):
        body = ", ".join(f"({c.scale}, {c.center}): {v}" for c, v in self.items()[:4])
        more = "" if len(self) <= 4 else f", ... {len(self)} terms"
        return f"{type(self).__name__}(p={self.p}, {{{body}{more}}})"


class FourierSide(TestFunction):
    """Step function in momentum space (complex coefficients)."""


def frac_abs_exponent_vec(center, p: int) -> float:
    return max(frac_abs_exponent(c, p) for c in center)


def evaluate(f: TestFunction, x) -> complex:
    """Coefficient of the cell containing ``x`` (0 outside the support)."""
    for c, v in f.terms.items():
        if c.contains_point(x):
            return v
    return 0.0


def inner(f: TestFunction, g: TestFunction) -> complex:
    """Bilinear pairing sum over cells of volume * f * g (no conjugation)."""
    cells = _common_partition(f, g)
    return sum(float(c.volume) * evaluate_cell(f, c) * evaluate_cell(g, c) for c in cells)


def l2_norm_sq(f: TestFunction) -> float:
    return float(sum(float(c.volume) * abs(v) ** 2 for c, v in f.terms.items()))


def evaluate_cell(f: TestFunction, cell: Cell) -> complex:
    """Value of ``f`` on ``cell``; the cell must not straddle a boundary of ``f``."""
    for c, v in f.terms.items():
        if c.contains(cell):
            return v
    return 0.0


def _common_partition(f: TestFunction, g: TestFunction) -> list[Cell]:
    refined = _refine([(c, 1) for c in f.terms] + [(c, 1) for c in g.terms])
    return list(refined)


# ---------------------------------------------------------------------------
# characters and the Fourier transform


def character(num, den: int) -> np.ndarray:
    """exp(-2 pi i num/den) with exact values at multiples of a quarter turn."""
    num = np.asarray(num)
    if num.dtype == object:
        r = np.array([int(n) % den for n in num.ravel()], dtype=object).reshape(num.shape)
        frac = np.array([float(Fraction(int(n), den)) for n in r.ravel()]).reshape(num.shape)
        quarter = np.array([(4 * int(n)) % den == 0 for n in r.ravel()]).reshape(num.shape)
        qidx = np.array([(4 * int(n)) // den if (4 * int(n)) % den == 0 else 0 for n in r.ravel()],
                        dtype=np.int64).reshape(num.shape)
    else:
        r = np.mod(num, den)
        frac = r / den
        quarter = (4 * r) % den == 0
        qidx = np.where(quarter, (4 * r) // den, 0)
    out = np.exp(-2j * np.pi * frac)
    exact = np.array([1.0, -1j, -1.0, 1j])
    return np.where(quarter, exact[np.asarray(qidx, dtype=np.int64) % 4], out)


def character_value(t: Fraction) -> complex:
    """exp(-2 pi i t) for an exact rational t."""
    t = Fraction(t)
    return complex(character(np.array([t.numerator], dtype=object), t.denominator)[0])


def _grid_points(p: int, radius_exp: int, resolution_exp: int) -> np.ndarray:
    """Integer digit triples t with centers t * p**(-radius_exp) ... of the partition."""
    n = p ** (radius_exp - resolution_exp)
    idx = np.arange(n, dtype=np.int64)
    t1, t2, t3 = np.meshgrid(idx, idx, idx, indexing="ij")
    return np.stack([t1.ravel(), t2.ravel(), t3.ravel()], axis=1)


def fourier(f: TestFunction) -> FourierSide:
    """Exact Fourier transform with character exp(-2 pi i {k.x}_p).

    The indicator of a ball of radius ``p**m`` around ``a`` transforms to
    ``k -> exp(-2 pi i {k.a}) p**(3m) 1{|k| <= p**-m}``; the result is
    tabulated on the common momentum partition where every term is constant.
    """
    p = f.p
    if not f.terms:
        return FourierSide(p, [])
    terms = list(f.terms.items())
    top = max(-c.scale for c, _ in terms)  # support radius exponent in momentum space
    res = top
    for c, _ in terms:
        res = min(res, -c.scale)
        e = frac_abs_exponent_vec(c.center, p)
        if e != -math.inf:
            res = min(res, -int(e))
    count = p ** (3 * (top - res))
    if count > MAX_PARTITION_CELLS:
        raise ValueError(f"momentum partition would need {count} cells")
    t = _grid_points(p, top, res)
    # momentum centers k = t * p**(-top); norm exponent of each k
    kexp = _norm_exponents(t, p, top)
    # centers a_j = A_j / p**E with a common E
    E = max((-int(frac_valuation(x, p)) for c, _ in terms for x in c.center if x != 0), default=0)
    E = max(E, 0)
    den = p ** (top + E) if top + E > 0 else 1
    use_obj = den > 2 ** 40 or p ** E > 2 ** 20
    values = np.zeros(len(t), dtype=complex)
    for c, coeff in terms:
        A = [int(x * p ** E) for x in c.center]
        if use_obj:
            num = np.array([sum(int(ti) * a for ti, a in zip(row, A)) for row in t], dtype=object)
        else:
            num = t @ np.array(A, dtype=np.int64)
        if top + E > 0:
            chi = character(num, den)
        else:
            chi = np.ones(len(t), dtype=complex)
        mask = kexp <= -c.scale
        values += np.where(mask, coeff * chi * float(Fraction(p) ** (3 * c.scale)), 0.0)
    scale_res = res
    base = Fraction(p) ** (-top)
    out = []
    for row, v in zip(t, values):
        if v != 0:
            cell = Cell(p, scale_res, tuple(int(x) * base for x in row))
            out.append((cell, complex(v)))
    return FourierSide(p, out)


def _norm_exponents(t: np.ndarray, p: int, radius_exp: int) -> np.ndarray:
    """Norm exponent of the points t * p**(-radius_exp); -inf for t = 0."""
    out = np.full(len(t), -np.inf)
    v = np.full(len(t), np.iinfo(np.int64).max)
    for i in range(3):
        col = t[:, i].copy()
        vi = np.zeros(len(t), dtype=np.int64)
        live = col != 0
        while True:
            m = live & (col % p == 0)
            if not m.any():
                break
            col[m] //= p
            vi[m] += 1
        v = np.where(live, np.minimum(v, vi), v)
    nz = np.any(t != 0, axis=1)
    out[nz] = radius_exp - v[nz]
    return out


def inverse_fourier(fhat: TestFunction) -> TestFunction:
    """Inverse transform: fourier(fourier(f))(x) = f(-x), so undo the sign flip."""
    g = fourier(fhat)
    return TestFunction(g.p, [(reflect_cell(c), v) for c, v in g.terms.items()])


def reflect_cell(c: Cell) -> Cell:
    return Cell.make(c.p, c.scale, [-x for x in c.center])


# ---------------------------------------------------------------------------
# group actions


def translate(f: TestFunction, y) -> TestFunction:
    """tau_y f (x) = f(x - y): every cell shifted by y."""
    if not isinstance(y, PadicVector3):
        y = PadicVector3(f.p, y)
    return type(f)(f.p, [(c.translated(y), v) for c, v in f.terms.items()])


def rotate(f: TestFunction, M: Rotation) -> TestFunction:
    """(M . f)(x) = f(M^-1 x): cells mapped by M."""
    return type(f)(f.p, [(apply_rotation(M, c), v) for c, v in f.terms.items()])


def scale(f: TestFunction, z: int, l: int = 1) -> TestFunction:
    """(lambda . f)(x) = f(lambda^-1 x) with lambda = L**z = p**(l z), |lambda| = L**-z."""
    return type(f)(f.p, [(c.scaled(l * z), v) for c, v in f.terms.items()])


# ---------------------------------------------------------------------------
# text serialisation


def dumps(f: TestFunction) -> str:
    lines = [f"# p={f.p}"]
    for c, v in f.items():
        centers = " ".join(base_p_digits(x, f.p) for x in c.center)
        v = complex(v)
        coeff = repr(v.real) if v.imag == 0 else f"{v.real!r} {v.imag!r}"
        lines.append(f"{c.scale} {centers} {coeff}")
    return "\n".join(lines) + "\n"


def loads(text: str, p: int | None = None) -> TestFunction:
    terms = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if "p=" in line and p is None:
                p = int(line.split("p=")[1].split()[0])
            continue
        if p is None:
            raise ValueError("prime not given and no '# p=' header found")
        parts = line.split()
        if len(parts) not in (5, 6):
            raise ValueError(f"malformed test-function line: {raw!r}")
        m = int(parts[0])
        center = [parse_base_p(s, p) for s in parts[1:4]]
        coeff = complex(float(parts[4]), float(parts[5]) if len(parts) == 6 else 0.0)
        terms.append((Cell.make(p, m, center), coeff))
    if p is None:
        raise ValueError("empty test-function text without a prime")
    return TestFunction(p, terms)
