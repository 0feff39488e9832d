import math

import numpy as np
import pytest

from padic_phi4.covariance import CutoffWindow
from padic_phi4.lattice import FieldConfiguration, LatticeGeometry, pairing_weights, sample_gaussian_batch
from padic_phi4.mcmc import CompositeNormalization, calibrate_composite, composite_observable
from padic_phi4.mcmc.composite import composite_from_raw, gaussian_second_moment
from padic_phi4.mcmc.estimators import (binning_curve, block_means, combine_chains, estimate_series,
                                        gelman_rubin, jackknife, tau_int)
from padic_phi4.padic import Cell, ModelParams
from padic_phi4.testfunctions import TestFunction


def ar1(n, phi, seed):
    rng = np.random.default_rng(seed)
    e = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = e[0] / math.sqrt(1 - phi * phi)
    for i in range(1, n):
        x[i] = phi * x[i - 1] + e[i]
    return x


def test_tau_white_noise():
    x = np.random.default_rng(0).standard_normal(100_000)
    assert tau_int(x) == pytest.approx(0.5, abs=0.1)
    est = estimate_series(x)
    assert est.stderr == pytest.approx(1 / math.sqrt(len(x)), rel=0.2) and est.reliable


def test_tau_ar1():
    phi = 0.8
    x = ar1(200_000, phi, 1)
    exact = 0.5 * (1 + phi) / (1 - phi)
    assert tau_int(x) == pytest.approx(exact, rel=0.2)
    assert len(binning_curve(x)) >= 5


def test_error_bars_cover():
    # fraction of AR(1) runs with |mean| < 2 stderr should be near 95 %
    hits = sum(abs(estimate_series(ar1(20_000, 0.7, s)).z_score()) < 2 for s in range(60))
    assert hits >= 50


def test_combine_and_rhat():
    chains = [ar1(20_000, 0.5, s) for s in range(4)]
    c = combine_chains(chains)
    assert c.n_effective > 10_000 and c.reliable
    assert gelman_rubin(chains) < 1.02
    shifted = [x + 3 * i for i, x in enumerate(chains)]
    assert gelman_rubin(shifted) > 1.5
    assert not estimate_series(np.ones(1)).reliable


def test_jackknife_ratio():
    rng = np.random.default_rng(3)
    a = 2 + rng.standard_normal(40_000)
    b = 4 + rng.standard_normal(40_000)
    est = jackknife(lambda m: m[0] / m[1], [np.column_stack([a, b])], 200)
    assert abs(est.mean - 0.5) < 4 * est.stderr
    assert est.stderr == pytest.approx(math.sqrt(1 / 16 + 4 / 256) / math.sqrt(40_000), rel=0.3)
    with pytest.raises(ValueError):
        block_means([np.ones(3)], 10)


P = ModelParams(2, 1, 0.2)
G = LatticeGeometry(P, CutoffWindow(-1, 0))
ONE = TestFunction.unit_ball(2)


def test_composite_examples():
    zero = FieldConfiguration(np.zeros(G.cell_count), G)
    plain = CompositeNormalization(1.0, 0.0, 1.0, 0.0)
    c0 = G.kernel().c0
    assert composite_observable(zero, ONE, plain) == pytest.approx(-c0)
    norm = CompositeNormalization(0.9, 0.3, 1.7, 0.1)
    expect = 0.9 ** G.r * (-1.7 * c0 - 0.3 * float(P.L) ** (-2 * G.r * P.phi_dim))
    assert composite_observable(zero, ONE, norm) == pytest.approx(expect)
    with pytest.raises(ValueError):
        CompositeNormalization(1.0, 0.0, -1.0, 0.0)
    assert CompositeNormalization.from_eta(0.2, 2).Z2 == pytest.approx(2 ** -0.1)


def test_composite_gaussian_calibration():
    v = np.concatenate(list(sample_gaussian_batch(G, 8, 200_000, batch=50_000)))
    w = pairing_weights(ONE, G)
    raw = (v * v - G.kernel().c0) @ w
    assert abs(raw.mean()) < 4 * raw.std() / math.sqrt(len(raw))
    norm = calibrate_composite([raw[:100_000], raw[100_000:]], 1.0, G, eta=0.0)
    exact_y2 = 1 / math.sqrt(gaussian_second_moment(G, ONE))
    assert abs(norm.Y2 - exact_y2) < 4 * norm.Y2_stderr
    assert abs(norm.Y0) < 4 * norm.Y0_stderr
    n = composite_from_raw(raw, 1.0, G, norm)
    assert np.mean(n ** 2) == pytest.approx(1.0, abs=0.02)
    # rescaling j needs no recalibration: N(2j) = 2 N(j)
    field = FieldConfiguration(v[0], G)
    two = TestFunction.unit_ball(2, 2.0)
    assert composite_observable(field, two, norm) == pytest.approx(2 * composite_observable(field, ONE, norm))
