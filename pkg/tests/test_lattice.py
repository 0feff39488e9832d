import io
import math
from fractions import Fraction

import numpy as np
import pytest

from padic_phi4.covariance import CovarianceKernel, CutoffWindow, c_pairing
from padic_phi4.lattice import (FieldConfiguration, LatticeGeometry, MultiscaleCoordinates, OutOfBoxError,
                                act_on_field, cell_index, field_to_csv, gram_of_window, pair, pairing_weights,
                                read_field, sample_gaussian, sample_gaussian_batch, synthesis_matrix,
                                synthesize, write_field)
from padic_phi4.padic import Cell, ModelParams, random_rotation
from padic_phi4.testfunctions import TestFunction, rotate, translate


def geom(p=2, l=1, eps=0.3, r=-1, s=1):
    return LatticeGeometry(ModelParams(p, l, eps), CutoffWindow(r, s))


def test_geometry_counts():
    g = geom(2, 1, 0.3, -2, 1)
    assert g.depth == 3 and g.cell_count == 8 ** 3 == g.params.L ** (3 * 3)
    assert g.coordinate_count == 8 * (1 + 8 + 64) + 1
    g2 = geom(2, 2, 0.3, -1, 0)
    assert g2.depth == 2 and g2.cell_count == 4 ** 3


def test_cell_index_examples():
    g = geom(2, 1, 0.3, -1, 1)
    i0 = cell_index((0, 0, 0), g)
    assert cell_index((Fraction(2), 0, 4), g) == i0  # |x| <= L^r
    j = cell_index((Fraction(1, 2), 0, 0), g)  # |x - 0| = L^s
    assert j // g.family ** (g.depth - 1) != i0 // g.family ** (g.depth - 1)
    with pytest.raises(OutOfBoxError):
        cell_index((Fraction(1, 4), 0, 0), g)
    for i in range(g.cell_count):
        assert cell_index(g.cell(i).center, g) == i


@pytest.mark.parametrize("p,l,r,s", [(2, 1, -1, 1), (2, 1, 0, 2), (3, 1, -1, 1), (2, 2, -1, 0)])
def test_synthesis_exact(p, l, r, s):
    g = geom(p, l, 0.37, r, s)
    A = synthesis_matrix(g)
    G = gram_of_window(g)
    assert np.max(np.abs(A @ A.T - G)) < 1e-10


def test_synthesis_examples():
    g = geom(2, 1, 0.3, -1, 1)
    assert np.all(synthesize(MultiscaleCoordinates.zeros(g), g).values == 0)
    g0 = geom(2, 1, 0.3, 1, 1)
    k = g0.kernel()
    A = synthesis_matrix(g0)
    assert A.shape == (1, 1)
    sigma0sq = (1 - 2 ** -3) * k.S(g0.ls)
    assert abs(A[0, 0] ** 2 - sigma0sq) < 1e-14 and abs(sigma0sq - k.c0) < 1e-14
    with pytest.raises(ValueError):
        MultiscaleCoordinates.from_flat(np.zeros(3), g)


def test_gram_matches_pairwise_closed_form():
    g = geom(3, 1, 0.2, -1, 0)
    G = gram_of_window(g)
    k = g.kernel()
    for i in (0, 5, 26):
        for j in range(g.cell_count):
            assert G[i, j] == k.c_closed(g.distance_exponent(i, j))


def test_sampler_determinism():
    g = geom()
    a, b = sample_gaussian(g, 99), sample_gaussian(g, 99)
    assert a.values.tobytes() == b.values.tobytes()
    assert sample_gaussian(g, 100).values.tobytes() != a.values.tobytes()


def test_sampler_moments():
    g = geom(2, 1, 0.3, -1, 1)
    k = g.kernel()
    v = np.concatenate(list(sample_gaussian_batch(g, 5, 100_000, batch=10_000)))
    x = v[:, 0]
    assert abs(x.var() - k.c0) < 4 * k.c0 * math.sqrt(2 / len(x))
    for j in (1, 8, 63):
        m = g.distance_exponent(0, j)
        prod = x * v[:, j]
        assert abs(prod.mean() - k.c_closed(m)) < 4 * prod.std() / math.sqrt(len(x))
    f = TestFunction.unit_ball(2, 3.0)
    w = pairing_weights(f, g)
    c = np.cos(v @ w)
    target = math.exp(-0.5 * c_pairing(f, f, k))
    assert abs(c.mean() - target) < 4 * c.std() / math.sqrt(len(c))


def test_pair_examples():
    g = geom(2, 1, 0.3, -1, 1)
    const = FieldConfiguration(np.full(g.cell_count, 2.5), g)
    box = TestFunction.indicator(Cell.ball(2, g.ls))
    assert pair(const, box) == pytest.approx(2.5 * g.params.L ** (3 * g.s))
    field = sample_gaussian(g, 1)
    assert pair(field, TestFunction.zero(2)) == 0.0
    c = g.cell(17)
    assert pair(field, TestFunction.indicator(c)) == pytest.approx(g.params.L ** (3 * g.r) * field.values[17])
    with pytest.raises(OutOfBoxError):
        pair(field, TestFunction.indicator(Cell.ball(2, 2)))


def test_pair_finer_than_lattice():
    g = geom(2, 1, 0.3, -1, 1)
    field = sample_gaussian(g, 2)
    fine = Cell.make(2, -3, [0, 0, 0])
    assert pair(field, TestFunction.indicator(fine)) == pytest.approx(field.values[0] * 2.0 ** -9)


def test_actions_and_pairing_identity(rng):
    g = geom(2, 1, 0.3, -1, 1)
    field = sample_gaussian(g, 3)
    assert np.array_equal(act_on_field(field, (0, 0, 0)).values, field.values)
    f = TestFunction(2, [(g.cell(i), float(rng.normal())) for i in rng.choice(g.cell_count, 6, replace=False)])
    for _ in range(5):
        y = tuple(Fraction(int(a), 2) for a in rng.integers(-4, 4, 3))
        moved = act_on_field(field, y)
        assert pair(moved, f) == pytest.approx(pair(field, translate(f, tuple(-c for c in y))), abs=1e-14)
        back = act_on_field(moved, tuple(-c for c in y))
        assert np.array_equal(back.values, field.values)
    M = random_rotation(4, 2, g.depth + 2)
    rotated = act_on_field(field, M)
    assert pair(rotated, f) == pytest.approx(pair(field, rotate(f, M.inverse())), abs=1e-14)
    assert np.array_equal(act_on_field(rotated, M.inverse()).values, field.values)
    with pytest.raises(OutOfBoxError):
        act_on_field(field, (Fraction(1, 4), 0, 0))


def test_field_serialisation():
    g = geom(2, 1, 0.3, -1, 0)
    field = sample_gaussian(g, 7)
    buf = io.BytesIO()
    write_field(buf, field, seed=7)
    buf.seek(0)
    back, meta = read_field(buf)
    assert back.values.tobytes() == field.values.tobytes() and meta["seed"] == 7
    assert back.geometry == g
    csv = field_to_csv(field).splitlines()
    assert csv[0] == "index,t1,t2,t3,value" and len(csv) == g.cell_count + 1
