import math
from fractions import Fraction
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from padic_phi4.padic import (Cell, ModelParams, PadicScalar, PadicVector3, PrecisionError, Rotation,
                              abs_exponent, apply_rotation, fractional_part, random_rotation, valuation,
                              vec_norm)

rationals = st.builds(lambda n, k, d: Fraction(n, 2 ** k * d), st.integers(-10 ** 6, 10 ** 6),
                      st.integers(0, 6), st.sampled_from([1, 3, 5, 7]))


def test_model_params_identities():
    P = ModelParams(2, 1, 0.3)
    assert P.L == 2
    assert 0.5 < P.phi_dim < 0.75
    assert abs(3 - 4 * P.phi_dim - P.epsilon) < 1e-15
    assert abs(3 - 2 * P.phi_dim - (3 + P.epsilon) / 2) < 1e-15
    assert ModelParams(3, 2, 0.1).L == 9


@pytest.mark.parametrize("bad", [dict(p=4, l=1, epsilon=0.1), dict(p=2, l=0, epsilon=0.1),
                                 dict(p=2, l=1, epsilon=0.0), dict(p=2, l=1, epsilon=1.0)])
def test_model_params_rejects(bad):
    with pytest.raises(ValueError):
        ModelParams(**bad)


def test_valuation_examples():
    assert valuation(12, 2) == 2
    assert valuation(0, 2) == math.inf
    assert valuation(Fraction(1, 3), 3) == -1
    assert valuation(PadicScalar.from_rational(12, 2)) == 2
    assert PadicScalar.zero(5).valuation == math.inf


def test_abs_examples():
    assert abs_exponent(12, 2) == -2
    assert abs(PadicScalar.from_rational(12, 2)) == 0.25
    assert abs(PadicScalar.zero(2)) == 0.0
    assert abs_exponent(-5, 5) == -1


def test_fractional_part_examples():
    assert fractional_part(Fraction(3, 4), 2) == Fraction(3, 4)
    assert fractional_part(5, 2) == 0
    assert fractional_part(Fraction(1, 3) + 2, 3) == Fraction(1, 3)
    assert PadicScalar.from_rational(Fraction(7, 4), 2).fractional_part() == Fraction(3, 4)


def test_digits_leading_nonzero():
    x = PadicScalar.from_rational(12, 2, precision=6)
    d = x.digits()
    assert d[0] == 1 and len(d) == 6
    assert sum(a * 2 ** (k + 2) for k, a in enumerate(d)) == 12


def test_vec_norm_examples():
    p = 3
    assert vec_norm(PadicVector3(p, [p, 1, p * p])) == 1
    assert vec_norm(PadicVector3(p, [0, 0, 0])) == 0
    assert vec_norm(PadicVector3(2, [Fraction(1, 2), 4, 8])) == 2


@settings(max_examples=200, deadline=None)
@given(rationals, rationals)
def test_ultrametric_and_multiplicative(x, y):
    p = 2
    ex, ey, es = abs_exponent(x, p), abs_exponent(y, p), abs_exponent(x + y, p)
    assert es <= max(ex, ey)
    if ex != ey:
        assert es == max(ex, ey)
    assert abs_exponent(x * y, p) == ex + ey or x * y == 0


@settings(max_examples=200, deadline=None)
@given(rationals, rationals)
def test_scalar_arithmetic_matches_rationals(x, y):
    p, W = 2, 30
    a, b = PadicScalar.from_rational(x, p, W), PadicScalar.from_rational(y, p, W)
    assert a + b == PadicScalar.from_rational(x + y, p, W) or (a + b).is_zero()
    assert a * b == PadicScalar.from_rational(x * y, p, W)
    assert -a == PadicScalar.from_rational(-x, p, W)
    if x != 0:
        assert a * a.inverse() == PadicScalar.from_rational(1, p, W)


def test_vector_ultrametric():
    rng = np.random.default_rng(0)
    for _ in range(200):
        x = PadicVector3(2, [Fraction(int(a), 8) for a in rng.integers(-64, 64, 3)])
        y = PadicVector3(2, [Fraction(int(a), 4) for a in rng.integers(-64, 64, 3)])
        nx, ny = x.norm(), y.norm()
        assert (x + y).norm() <= max(nx, ny)
        if nx != ny:
            assert (x + y).norm() == max(nx, ny)


def test_cell_volume_and_children():
    c = Cell.make(3, 1, [Fraction(1, 9), 0, Fraction(2, 9)])
    kids = c.children()
    assert len(kids) == 27 and len(set(kids)) == 27
    assert all(k.volume * 27 == c.volume for k in kids)
    assert all(c.contains(k) and k.parent() == c for k in kids)
    assert c.volume == Fraction(3) ** 3


def test_cell_equality_canonical():
    a = Cell.make(2, 0, [Fraction(1, 2), 3, 0])
    b = Cell.make(2, 0, [Fraction(1, 2) + 5, 0, 7])
    assert a == b and hash(a) == hash(b)
    assert a != Cell.make(2, -1, [Fraction(1, 2), 0, 0])


def test_rotation_examples():
    I = Rotation.identity(2, 4)
    swap = Rotation.permutation(2, 4, [1, 0, 2])
    c = Cell.make(2, -1, [Fraction(1, 4), Fraction(3, 4), Fraction(1, 2)])
    assert apply_rotation(I, c) == c
    assert apply_rotation(swap, c).center == (c.center[1], c.center[0], c.center[2])
    with pytest.raises(ValueError):
        Rotation(2, 4, ((2, 0, 0), (0, 1, 0), (0, 0, 1)))  # row 0 mod p vanishes
    assert random_rotation(7, 3, 5).determinant_valuation() == 0


def _cells(p, scale, box):
    k = box - scale
    return [Cell.make(p, scale, [Fraction(a, p ** box), Fraction(b, p ** box), Fraction(c, p ** box)])
            for a, b, c in product(range(p ** k), repeat=3)]


@pytest.mark.parametrize("p", [2, 3])
def test_random_rotation_permutes_cells(p):
    cells = _cells(p, -1, 1)
    for seed in range(5):
        M = random_rotation(seed, p, 4)
        images = [apply_rotation(M, c) for c in cells]
        assert sorted(images) == sorted(cells)
        back = [apply_rotation(M.inverse(), c) for c in images]
        assert back == cells
        for c in cells:
            assert PadicVector3(p, M.apply_point(c.center)).norm() == PadicVector3(p, c.center).norm()


def test_rotation_precision_error():
    c = Cell.make(2, -5, [Fraction(1, 32), 0, 0])
    with pytest.raises(PrecisionError):
        apply_rotation(Rotation.identity(2, 2), c)
