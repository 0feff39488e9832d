import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from padic_phi4.covariance import CutoffWindow
from padic_phi4.lattice import (FieldConfiguration, LatticeGeometry, act_on_field, sample_gaussian,
                                sample_gaussian_batch)
from padic_phi4.padic import ModelParams, random_rotation
from padic_phi4.wick import (Couplings, WickContext, cell_integrand, cell_potential_u, monomial_coefficients,
                             potential, potential_lower_bound, wick2, wick4)

P = ModelParams(2, 1, 0.3)


def test_couplings_validation():
    with pytest.raises(ValueError):
        Couplings(-1e-3, 0.0)
    with pytest.raises(ValueError):
        Couplings(float("nan"), 0.0)
    assert Couplings(0.0, 0.1).g == 0.0


def test_wick_examples():
    ctx = WickContext(P, -1)
    c0 = ctx.c0
    assert wick2(0.0, ctx) == -c0
    assert abs(wick2(math.sqrt(c0), ctx)) < 1e-15
    assert wick4(0.0, ctx) == 3 * c0 * c0

    class Fixed:
        c0 = 1.5

    assert wick4(1.0, Fixed) == pytest.approx(-1.25)


def test_wick_gaussian_means():
    g = LatticeGeometry(P, CutoffWindow(-1, 0))
    ctx = WickContext(P, -1)
    v = np.concatenate(list(sample_gaussian_batch(g, 11, 100_000, batch=20_000)))[:, 3]
    for x in (wick2(v, ctx), wick4(v, ctx)):
        assert abs(x.mean()) < 4 * x.std() / math.sqrt(len(x))


def test_potential_examples():
    g = LatticeGeometry(P, CutoffWindow(-1, 1))
    ctx = WickContext(P, -1)
    cp = Couplings(0.3, -0.2)
    zero = FieldConfiguration(np.zeros(g.cell_count), g)
    c0, L, r, eps = ctx.c0, P.L, -1, P.epsilon
    expect = L ** (3 * (g.s - r)) * L ** (3 * r) * (3 * cp.g * c0 ** 2 * L ** (-eps * r)
                                                    - cp.mu * c0 * L ** (-(3 + eps) * r / 2))
    assert potential(zero, cp, ctx) == pytest.approx(expect, rel=1e-13)
    field = sample_gaussian(g, 0)
    assert potential(field, Couplings(0.0, 0.0), ctx) == 0.0
    one = LatticeGeometry(P, CutoffWindow(1, 1))
    ctx1 = WickContext(P, 1)
    v = 0.7
    single = FieldConfiguration(np.array([v]), one)
    expect1 = L ** 3 * (L ** -eps * cp.g * wick4(v, ctx1) + L ** (-(3 + eps) / 2) * cp.mu * wick2(v, ctx1))
    assert potential(single, cp, ctx1) == pytest.approx(expect1, rel=1e-13)
    with pytest.raises(ValueError):
        potential(field, cp, ctx1)


def test_potential_symmetric_and_bounded():
    g = LatticeGeometry(P, CutoffWindow(-1, 1))
    ctx = WickContext(P, -1)
    cp = Couplings(0.05, -0.4)
    field = sample_gaussian(g, 4)
    V = potential(field, cp, ctx)
    assert potential(act_on_field(field, (1, 0, 0)), cp, ctx) == pytest.approx(V, rel=1e-14)
    assert potential(act_on_field(field, random_rotation(1, 2, 4)), cp, ctx) == pytest.approx(V, rel=1e-14)
    lb = potential_lower_bound(g.cell_count, cp, ctx)
    for seed in range(20):
        assert potential(sample_gaussian(g, seed), cp, ctx) >= lb
    vs = np.linspace(-5, 5, 20001)
    vol = float(P.L) ** (3 * g.r)
    assert g.cell_count * vol * cell_integrand(vs, cp, ctx).min() >= lb - 1e-12


@pytest.mark.parametrize("r", [-3, -2, -1, 0])
def test_u_units_are_r_independent(r):
    cp = Couplings(0.2, 0.15)
    ctx = WickContext(P, r)
    g = LatticeGeometry(P, CutoffWindow(r, r))
    vol = float(P.L) ** (3 * r)
    u = np.linspace(-3, 3, 13)
    v = u * g.v_per_u
    assert np.allclose(vol * cell_integrand(v, cp, ctx), cell_potential_u(u, cp, P), rtol=1e-12, atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 2), st.floats(-2, 2), st.floats(0.1, 3), st.floats(-4, 4))
def test_monomial_form(gc, mu, s2, u):
    a4, a2, a0 = monomial_coefficients(gc, mu, s2)
    direct = gc * (u ** 4 - 6 * s2 * u ** 2 + 3 * s2 ** 2) + mu * (u ** 2 - s2)
    assert a4 * u ** 4 + a2 * u ** 2 + a0 == pytest.approx(direct, rel=1e-10, abs=1e-9)
