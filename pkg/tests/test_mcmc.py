import io
import math

import numpy as np
import pytest

from padic_phi4.covariance import CutoffWindow, c_pairing
from padic_phi4.lattice import LatticeGeometry, make_rng
from padic_phi4.mcmc import (MCMCConfig, ObservableSet, Sampler, TransferOracle, brute_force_oracle,
                             combine_chains, connected_four_point, gelman_rubin, run_chains)
from padic_phi4.mcmc import backend
from padic_phi4.mcmc.sampler import config_digest, read_checkpoint, write_checkpoint
from padic_phi4.padic import Cell, ModelParams
from padic_phi4.testfunctions import TestFunction
from padic_phi4.wick import Couplings

P = ModelParams(2, 1, 0.2)


def geometry(r, s):
    return LatticeGeometry(P, CutoffWindow(r, s))


def unit_ball_obs(g):
    return ObservableSet(g, phi=[("one", TestFunction.unit_ball(2)),
                                 ("cell", TestFunction.indicator(g.cell(0)))])


def test_config_validation():
    with pytest.raises(ValueError):
        MCMCConfig(sweeps=10, burn_in=10)
    with pytest.raises(ValueError):
        MCMCConfig(sweeps=10, proposal_width=-1.0)
    cfg = MCMCConfig(sweeps=100, burn_in=20, thinning=4)
    assert cfg.retained == 20
    assert len(cfg.widths(3)) == 4


@pytest.mark.skipif("cython" not in backend.BACKENDS, reason="compiled kernel not built")
def test_backends_identical():
    g = geometry(-1, 1)
    cp = Couplings(3 * P.gbar_star, 0.01)
    cfg = MCMCConfig(sweeps=60, burn_in=30, seed=5)
    a = Sampler(g, cp, "python").run(cfg, 0, unit_ball_obs(g))
    b = Sampler(g, cp, "cython").run(cfg, 0, unit_ball_obs(g))
    assert np.allclose(a.samples, b.samples, rtol=1e-12, atol=1e-14)
    assert np.array_equal(a.acceptance, b.acceptance)


def test_incremental_potential_matches_direct():
    g = geometry(-1, 1)
    s = Sampler(g, Couplings(0.05, -0.02))
    rng = make_rng(1)
    state = s.initial_state(MCMCConfig(sweeps=1), rng)
    for _ in range(5):
        s.sweep(state, rng)
    # u kept by the kernels equals a fresh synthesis of the coordinates
    from padic_phi4.lattice import synthesize_u

    assert np.allclose(state.u, synthesize_u(state.coords, g), atol=1e-12)


def test_zero_width_accepts_everything():
    g = geometry(-1, 0)
    cfg = MCMCConfig(sweeps=20, burn_in=0, proposal_width=1e-9, tune=False)
    res = Sampler(g, Couplings(0.1, 0.0)).run(cfg, 0)
    assert np.all(res.acceptance > 0.999)


def test_determinism_and_threads():
    g = geometry(-1, 0)
    cfg = MCMCConfig(sweeps=80, burn_in=20, chains=3, seed=9)
    s = Sampler(g, Couplings(0.02, 0.0))
    a = run_chains(s, cfg, unit_ball_obs(g), threads=1)
    b = run_chains(s, cfg, unit_ball_obs(g), threads=3)
    for x, y in zip(a, b):
        assert x.samples.tobytes() == y.samples.tobytes()
    assert a[0].samples.tobytes() != a[1].samples.tobytes()


def test_checkpoint_resume_is_exact(tmp_path):
    g = geometry(-1, 0)
    s = Sampler(g, Couplings(0.05, 0.01))
    obs = unit_ball_obs(g)
    full_cfg = MCMCConfig(sweeps=100, burn_in=20, seed=3, checkpoint_every=40)
    digest = config_digest(full_cfg.to_dict())
    path = str(tmp_path / "chk.bin")
    full = s.run(full_cfg, 0, obs, checkpoint_path=path, config_hash=digest)
    # stop at sweep 40 and resume from the file written there
    part_cfg = MCMCConfig(sweeps=40, burn_in=20, seed=3, checkpoint_every=40)
    s.run(part_cfg, 0, obs, checkpoint_path=path, config_hash=digest)
    with open(path, "rb") as fh:
        state = read_checkpoint(fh, g, digest)
    assert state.sweep == 40
    resumed = s.run(full_cfg, 0, obs, state=state)
    assert resumed.samples.tobytes() == full.samples.tobytes()
    with open(path, "rb") as fh, pytest.raises(ValueError):
        read_checkpoint(fh, g, b"other")


def test_gaussian_chain_matches_covariance():
    g = geometry(-1, 1)
    f = TestFunction.unit_ball(2)
    cfg = MCMCConfig(sweeps=6000, burn_in=500, chains=2, seed=1)
    res = run_chains(Sampler(g, Couplings(0.0, 0.0)), cfg, ObservableSet(g, phi=[("one", f)]))
    x = [r.samples[:, 0] for r in res]
    second = combine_chains([v ** 2 for v in x])
    assert abs(second.z_score(c_pairing(f, f, g.kernel()))) < 4
    assert abs(combine_chains(x).z_score(0.0)) < 4


@pytest.mark.parametrize("window", [(0, 0), (-1, 0)])
def test_chain_matches_oracle(window):
    g = geometry(*window)
    cp = Couplings(20 * P.gbar_star, -0.05)
    ora = brute_force_oracle(g, cp, draws=400_000, seed=2)
    assert ora.Z >= 1 - 4 * ora.Z_stderr
    cfg = MCMCConfig(sweeps=20000, burn_in=1000, chains=2, seed=11)
    res = run_chains(Sampler(g, cp), cfg, unit_ball_obs(g))
    for col, name in ((0, "box"), (1, "cell")):
        x = [r.samples[:, col] for r in res]
        for k in (2, 4):
            est = combine_chains([v ** k for v in x])
            ref, ref_se = ora.moments[name if g.depth else "cell"][k]
            assert abs(est.mean - ref) < 4 * math.hypot(est.stderr, ref_se)


def test_oracle_gaussian_limit():
    g = geometry(0, 0)
    ora = brute_force_oracle(g, Couplings(0.0, 0.0))
    c = g.kernel().c0
    assert ora.Z == pytest.approx(1.0, abs=1e-12)
    assert ora.moments["cell"][2][0] == pytest.approx(c, rel=1e-10)
    assert ora.moments["cell"][4][0] == pytest.approx(3 * c * c, rel=1e-10)


def test_transfer_oracle_gaussian_and_quadrature():
    g = geometry(-2, 1)
    t = TransferOracle(g, Couplings(0.0, 0.0))
    assert abs(t.log_Z()) < 1e-9
    one = TestFunction.unit_ball(2)
    assert t.phi_moments(1)[2] == pytest.approx(c_pairing(one, one, g.kernel()), rel=1e-9)
    g0 = geometry(0, 0)
    cp = Couplings(0.05, -0.1)
    ref = brute_force_oracle(g0, cp)
    t0 = TransferOracle(g0, cp)
    assert t0.phi_moments(0)[4] == pytest.approx(ref.moments["cell"][4][0], rel=1e-8)
    assert math.exp(t0.log_Z()) == pytest.approx(ref.Z, rel=1e-8)


@pytest.mark.slow
def test_transfer_oracle_matches_chain():
    g = geometry(-2, 1)
    cp = Couplings(3 * P.gbar_star, 0.0)
    t = TransferOracle(g, cp)
    ref = t.phi_moments(1)
    cfg = MCMCConfig(sweeps=20000, burn_in=1000, chains=4, seed=21)
    res = run_chains(Sampler(g, cp), cfg, ObservableSet(g, phi=[("one", TestFunction.unit_ball(2))]), threads=4)
    x = [r.samples[:, 0] for r in res]
    assert gelman_rubin(x) < 1.1
    for k in (2, 4):
        assert abs(combine_chains([v ** k for v in x]).z_score(ref[k])) < 4


def test_sign_symmetry_and_connected_moment_gaussian():
    g = geometry(-1, 0)
    cfg = MCMCConfig(sweeps=8000, burn_in=500, chains=2, seed=4)
    res = run_chains(Sampler(g, Couplings(0.0, 0.0)), cfg, unit_ball_obs(g))
    x = [r.samples[:, 0] for r in res]
    assert abs(combine_chains([v ** 3 for v in x]).z_score()) < 4
    conn, literal = connected_four_point(x)
    assert abs(conn.z_score()) < 4
    assert math.isfinite(literal.mean)
