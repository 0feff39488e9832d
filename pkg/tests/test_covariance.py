import math

import numpy as np
import pytest

from conftest import random_cell, random_test_function
from padic_phi4.covariance import (CovarianceKernel, CutoffWindow, c_pairing, gram_matrix, psd_check,
                                   scaling_identity_check)
from padic_phi4.padic import Cell, ModelParams
from padic_phi4.testfunctions import TestFunction


def series_oracle(kernel, m, terms=400):
    """Direct partial sum of the scale series, far past double precision."""
    p3 = kernel.p ** -3.0
    tot = 0.0
    for n in range(kernel.lr, kernel.lr + terms):
        a = 1.0 if m <= n else 0.0
        b = 1.0 if m <= n + 1 else 0.0
        tot += kernel.p ** (-2.0 * n * kernel.params.phi_dim) * (a - p3 * b)
    return tot


def test_closed_form_examples():
    k = CovarianceKernel(ModelParams(2, 1, 0.5), 0)
    assert abs(k.c0 - series_oracle(k, -math.inf)) < 1e-12
    assert abs(k.c0 - 1.509793) < 1e-5  # quoted to about 6 digits
    assert abs(k.c_closed(1) - series_oracle(k, 1)) < 1e-12
    assert abs(k.c_closed(1) - 0.509789) < 1e-5
    assert k.c_closed(0) == k.c0 and k.c_closed(-4) == k.c0


def test_series_with_remainder():
    k = CovarianceKernel(ModelParams(2, 1, 0.5), 0)
    val, rem = k.c_series(1, 200)
    assert rem < 1e-12 and abs(val - k.c_closed(1)) < 2e-12
    for m in range(-3, 8):
        val, rem, _ = k.series_to_tolerance(m, 1e-13)
        assert rem < 1e-13 and abs(val - k.c_closed(m)) < 2e-12


@pytest.mark.parametrize("p", [2, 3, 5])
@pytest.mark.parametrize("eps", [0.05, 0.3, 0.6, 0.9])
def test_closed_form_monotone_positive(p, eps):
    for l in (1, 2):
        k = CovarianceKernel(ModelParams(p, l, eps), -1)
        vals = [k.c_closed(m) for m in range(k.lr, k.lr + 30)]
        assert all(v > 0 for v in vals)
        assert all(a > b for a, b in zip(vals, vals[1:]))


def test_pairing_examples():
    P = ModelParams(2, 1, 0.5)
    for r in (0, -1, -2):
        k = CovarianceKernel(P, r)
        one = TestFunction.unit_ball(2)
        a, b = c_pairing(one, one, k, "momentum"), c_pairing(one, one, k, "position")
        assert abs(a - b) < 1e-10 * abs(a)
    k = CovarianceKernel(P, -1)
    c1, c2 = Cell.make(2, -1, [0, 0, 0]), Cell.make(2, -1, [2, 0, 0])
    m = c1.distance_exponent(c2)
    expect = float(c1.volume * c2.volume) * k.c_closed(m)
    got = c_pairing(TestFunction.indicator(c1), TestFunction.indicator(c2), k)
    assert abs(got - expect) < 1e-12 * abs(expect)
    assert c_pairing(TestFunction.zero(2), one, k) == 0.0


@pytest.mark.parametrize("p", [2, 3])
def test_shell_sum_matches_full_momentum_grid(p, rng):
    k = CovarianceKernel(ModelParams(p, 1, 0.3), -1)
    for _ in range(5):
        f = random_test_function(rng, p, 3, False, scale_lo=-1, scale_hi=1, box=1)
        g = random_test_function(rng, p, 3, False, scale_lo=-1, scale_hi=1, box=1)
        a, b = c_pairing(f, g, k, "momentum"), c_pairing(f, g, k, "momentum-grid")
        assert abs(a - b) <= 1e-12 * max(abs(a), abs(b))


def test_psd():
    k = CovarianceKernel(ModelParams(2, 1, 0.3), -1)
    assert psd_check([Cell.ball(2, -1)], k) == pytest.approx(k.c0)
    sib = Cell.ball(2, 0).children()
    assert psd_check(sib, k) >= -1e-12
    G = gram_matrix(sib, k)
    assert np.allclose(np.diag(G), k.c0)
    off = G[~np.eye(8, dtype=bool)]
    assert np.allclose(off, k.c_closed(0))
    rng = np.random.default_rng(3)
    cells = list({random_cell(rng, 2, -1, -1, 2) for _ in range(200)})[:64]
    assert psd_check(cells, k) >= -1e-10


def test_budget_and_window():
    with pytest.raises(ValueError):
        CutoffWindow(1, 0)
    w = CutoffWindow(-2, 2, max_cells=1000)
    with pytest.raises(MemoryError):
        w.check_budget(ModelParams(2, 1, 0.1))


@pytest.mark.parametrize("z", [-2, -1, 0, 1, 2])
def test_scaling_identity(z, rng):
    P = ModelParams(3, 1, 0.4)
    k = CovarianceKernel(P, -1)
    one = TestFunction.unit_ball(3)
    assert scaling_identity_check(one, one, z, k) < 1e-10
    f = random_test_function(rng, 3, terms=2)
    g = random_test_function(rng, 3, terms=2)
    assert scaling_identity_check(f, g, z, k) < 1e-10


def test_table_columns():
    k = CovarianceKernel(ModelParams(2, 1, 0.5), 0)
    rows = k.table(range(0, 4))
    for m, c, s, rem in rows:
        assert abs(c - s) < 2e-12 and rem < 1e-12
