import math

import numpy as np
import pytest

from padic_phi4 import rg
from padic_phi4.lattice import sigma_u2
from padic_phi4.padic import ModelParams

P = ModelParams(2, 1, 0.1)


def test_gbar_star_value():
    assert P.gbar_star == pytest.approx(2.126e-3, rel=1e-3)


def test_basis_change_roundtrip():
    for K in (4, 10, 14):
        A = rg.wick_to_monomial_matrix(K, 1.3)
        B = rg.monomial_to_wick_matrix(K, 1.3)
        scale = np.abs(A).max() * np.abs(B).max()
        assert np.max(np.abs(A @ B - np.eye(K + 1))) < 1e-14 * scale


def test_potential_representation():
    V = rg.SingleSitePotential.from_couplings(P, 0.01, -0.02, 10)
    assert V.g == 0.01 and V.mu == -0.02 and V.K == 10 and V.is_even()
    mono = V.monomial()
    s2 = sigma_u2(P)
    assert mono[4] == pytest.approx(0.01) and mono[2] == pytest.approx(-0.02 - 0.06 * s2)
    W = rg.SingleSitePotential.from_monomial(P, mono)
    assert np.allclose(W.array(), V.array(), atol=1e-15)
    u = 0.8
    direct = 0.01 * (u ** 4 - 6 * s2 * u ** 2 + 3 * s2 ** 2) - 0.02 * (u ** 2 - s2)
    assert V(u) == pytest.approx(direct, rel=1e-12)
    back = rg.SingleSitePotential.from_even_vector(P, V.even_vector(), 10)
    assert np.array_equal(back.array(), V.array())


def test_zero_is_fixed():
    V = rg.SingleSitePotential.zero(P, 10)
    assert np.max(np.abs(rg.rg_step(V).array())) < 1e-14


def test_even_input_gives_even_output():
    V = rg.SingleSitePotential.from_couplings(P, 0.02, 0.01, 10)
    W = rg.rg_step(V)
    assert np.all(W.array()[1::2] == 0.0)
    assert W.array()[0] == 0.0


def test_series_and_dual_routes_agree():
    rng = np.random.default_rng(2)
    for _ in range(5):
        g = rng.uniform(0, 0.02)
        V = rg.SingleSitePotential.from_couplings(P, g, rng.uniform(-0.01, 0.01), 10)
        coeffs = V.array().copy()
        coeffs[6] = rng.uniform(-1, 1) * 1e-4
        coeffs[8] = rng.uniform(0, 1) * 1e-5
        V = rg.SingleSitePotential(P, coeffs)
        a, b = rg.rg_step(V, method="series"), rg.rg_step(V, method="cauchy")
        assert np.max(np.abs(a.array() - b.array())) < 1e-8


def test_non_integrable_rejected():
    coeffs = np.zeros(5)
    coeffs[4] = -0.01
    with pytest.raises(rg.NonIntegrableError):
        rg.rg_step(rg.SingleSitePotential(P, coeffs))


def test_gaussian_spectrum_matches_isserlis():
    for params in (P, ModelParams(3, 1, 0.3), ModelParams(2, 2, 0.2)):
        K = 10
        exact = rg.gaussian_linearization(params, K)
        fd = rg.even_jacobian(np.zeros(K // 2), params, K)
        ev_exact = np.sort(np.linalg.eigvals(exact[2::2, 2::2]).real)[::-1]
        ev_fd = np.sort(np.linalg.eigvals(fd).real)[::-1]
        expect = np.array([params.L ** (3 - k * params.phi_dim) for k in range(2, K + 1, 2)])
        assert np.allclose(ev_exact, expect, rtol=1e-12)
        assert np.max(np.abs(ev_fd - expect)) < 1e-8
    assert 2 ** (3 - 2 * P.phi_dim) == pytest.approx(2 ** 1.55, rel=1e-15)


def test_one_loop_flow():
    g_fix, _ = rg.one_loop_fixed_point(P)
    assert g_fix == pytest.approx(P.gbar_star, rel=1e-12)
    assert rg.one_loop_flow(0.0, 0.0, P) == (0.0, 0.0)
    # rg_step vs one-loop g': the mismatch is second order in g
    mism = []
    for g in (1e-5, 1e-6):
        V = rg.rg_step(rg.SingleSitePotential.from_couplings(P, g, 0.0, 8))
        g1, _ = rg.one_loop_flow(g, 0.0, P)
        mism.append(abs(V.g - g1) / g)
    assert mism[1] < mism[0] / 5
    assert mism[0] < 1e-3


def test_gaussian_fixed_point_eta_zero():
    fp = rg.gaussian_fixed_point(P, 10)
    assert abs(fp.eta) < 1e-12
    fp.gaussian = False  # away from V = 0 two relevant directions are ambiguous
    with pytest.raises(rg.EigenvalueAmbiguityError):
        rg.extract_eta(fp, P)


def test_nontrivial_fixed_point():
    fp = rg.find_fixed_point(P, 10)
    assert fp.residual_norm < 1e-10
    assert 0.5 <= fp.g_star / P.gbar_star <= 1.5
    assert 0.55 <= fp.eta / P.epsilon <= 0.80
    assert sum(1 for e in fp.eigenvalues if e > 1) == 1
    assert fp.to_dict()["g_star"] == fp.g_star
    W = rg.rg_step(fp.potential)
    assert np.max(np.abs(W.array() - fp.potential.array())) < 1e-9


def test_flow_classifier_examples():
    t = rg.flow_classifier(0.0, 0.0, P, steps=20)
    assert t.escape == 0
    t = rg.flow_classifier(0.0, 0.5, P, steps=20)
    assert t.escape == 1 and t.escape_step <= 2
    t = rg.flow_classifier(0.0, -0.5, P, steps=20)
    assert t.escape == -1


def test_tune_mu_gaussian():
    cm = rg.tune_mu_critical(0.0, P, K=6, steps=40)
    assert abs(cm.mu) < 1e-12


@pytest.mark.slow
def test_tune_mu_critical_point():
    fp = rg.find_fixed_point(P, 10)
    cm = rg.tune_mu_critical(P.gbar_star, P, 10, fixed_point=fp.potential)
    lo, hi = cm.bracket
    assert rg.flow_classifier(P.gbar_star, lo, P, 60, 10, fp.potential).escape == -1
    assert rg.flow_classifier(P.gbar_star, hi, P, 60, 10, fp.potential).escape == 1
    assert abs(cm.mu) < 10 * P.epsilon * P.gbar_star
    t = rg.flow_classifier(P.gbar_star, cm.mu, P, 60, 10, fp.potential)
    assert t.escape_step is None or t.escape_step >= 20
