"""Experiment pipelines shared by the command line and the acceptance suite.

Each function takes a resolved configuration (see :mod:`padic_phi4.config`)
and returns plain data: rows for CSV tables and dictionaries for JSON
summaries.  Nothing here writes files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rg
from .config import model_params, parse_test_function, translation_vector, window
from .covariance import CutoffWindow
from .lattice import LatticeGeometry, pairing_weights
from .mcmc import (MCMCConfig, ObservableSet, Sampler, TransferOracle, combine_chains, connected_four_point,
                   gelman_rubin, jackknife)
from .mcmc.composite import CompositeNormalization, _prefactors
from .mcmc.estimators import block_means, estimate_series
from .padic import random_rotation, required_precision
from .testfunctions import TestFunction, rotate, scale, translate
from .wick import Couplings

N_BLOCKS = 32
CALIBRATION_KEY = 0xCA11  # seed offsets keep calibration and second-window chains independent
SCALING_KEY = 0x5CA1E
ROUNDOFF = 1e-12  # relative size below which a paired difference is summation noise


# ---------------------------------------------------------------------------
# couplings and RG inputs


@dataclass
class ResolvedCouplings:
    couplings: Couplings
    info: dict


def fixed_point(params, cfg: dict, K: int | None = None) -> rg.FixedPointResult:
    r = cfg["rg"]
    return rg.find_fixed_point(params, K or r["K"], tol=r["tol"], max_iter=r["max_iter"], fd_step=r["fd_step"])


def resolve_couplings(cfg: dict, g_scale: float | None = None) -> ResolvedCouplings:
    """g (``gbar_star`` or a number) times g_scale; mu numeric or tuned to criticality."""
    params = model_params(cfg)
    c = cfg["couplings"]
    base = params.gbar_star if c["g"] == "gbar_star" else c["g"]
    g = base * (c["g_scale"] if g_scale is None else g_scale)
    info = {"g": g, "gbar_star": params.gbar_star}
    if c["mu"] == "auto":
        K = cfg["rg"]["tune_K"]
        fp = fixed_point(params, cfg, K)
        crit = rg.tune_mu_critical(g, params, K, steps=cfg["rg"]["flow_steps"], fixed_point=fp.potential)
        mu = crit.mu
        info["critical"] = {"K": K, **crit.to_dict()}
    else:
        mu = c["mu"]
    info["mu"] = mu
    return ResolvedCouplings(Couplings(g, mu), info)


def eta_estimate(cfg: dict) -> float:
    return fixed_point(model_params(cfg), cfg).eta


def mcmc_config(cfg: dict, seed_key: int = 0, chains: int | None = None) -> MCMCConfig:
    m = cfg["mcmc"]
    w = m["proposal_width"]
    return MCMCConfig(sweeps=m["sweeps"], burn_in=m["burn_in"], chains=chains or m["chains"],
                      seed=(cfg["seed"] + seed_key) % 2 ** 64, thinning=m["thinning"],
                      proposal_width=tuple(w) if isinstance(w, list) else w, tune=m["tune"],
                      checkpoint_every=m["checkpoint_every"])


def geometry(cfg: dict, r_shift: int = 0, s_shift: int = 0) -> LatticeGeometry:
    w = window(cfg)
    return LatticeGeometry(model_params(cfg), CutoffWindow(w.r + r_shift, w.s + s_shift, w.max_cells))


def named_functions(cfg: dict, kind: str) -> list:
    p = cfg["model"]["p"]
    out = []
    for i, spec in enumerate(cfg["observables"][kind]):
        name = spec if isinstance(spec, str) else f"{kind}{i}"
        out.append((name, parse_test_function(spec, p, f"observables.{kind}[{i}]")))
    return out


# ---------------------------------------------------------------------------
# correlator tables


def _row(cid: str, est) -> dict:
    return {"correlator_id": cid, "mean": est.mean, "stderr": est.stderr,
            "tau_int": est.autocorrelation_time, "n_eff": est.n_effective}


def chain_series(results: list, column: int) -> list:
    return [r.samples[:, column] for r in results]


def moment_rows(results: list, observables: ObservableSet, moments) -> list:
    """Moments of every phi(f), the connected 4-point function, and raw composite moments."""
    rows = []
    for i, name in enumerate(observables.names):
        series = chain_series(results, i)
        kind = "phi" if i < observables.n_phi else "wick2"
        for k in moments:
            rows.append(_row(f"{kind}[{name}]^{k}", combine_chains([x ** k for x in series])))
        if kind == "phi" and 4 in moments:
            conn, literal = connected_four_point(series, N_BLOCKS)
            rows.append(_row(f"phi[{name}]^4_connected", conn))
            rows.append(_row(f"phi[{name}]^4_minus_3_second", literal))
    return rows


def diagnostics(results: list) -> dict:
    return {
        "acceptance": [[float(a) for a in r.acceptance] for r in results],
        "proposal_widths": [[float(w) for w in r.widths] for r in results],
        "retained": [int(len(r.samples)) for r in results],
        "r_hat_potential": gelman_rubin([r.potentials for r in results]),
    }


# ---------------------------------------------------------------------------
# composite calibration with two independent error sources


@dataclass
class Calibration:
    norm: CompositeNormalization
    replicates: np.ndarray  # leave-one-block-out (Y0, Y2)


def calibrate(raw_one: list, geom: LatticeGeometry, eta: float, n_blocks: int = N_BLOCKS) -> Calibration:
    """Y0 and Y2 from raw sums for j = 1_{Z_p^3}, with jackknife replicates.

    Y0 makes <N(1)> vanish and Y2 makes <N(1)^2> = 1 on these chains.
    """
    L = geom.params.L
    z2r, sc = _prefactors(geom, CompositeNormalization.from_eta(eta, L))
    integral_one = float(pairing_weights(TestFunction.unit_ball(geom.p), geom).sum())

    def ys(m):
        var = m[1] - m[0] ** 2
        if not var > 0:
            return float("nan"), float("nan")
        y2 = 1.0 / (z2r * math.sqrt(var))
        return y2 * m[0] / (sc * integral_one), y2

    stacked = [np.column_stack([x, x ** 2]) for x in raw_one]
    blocks = block_means(stacked, n_blocks)
    nb = len(blocks)
    total = blocks.sum(axis=0)
    Y0, Y2 = ys(total / nb)
    if not (math.isfinite(Y2) and Y2 > 0):
        raise ArithmeticError("degenerate composite variance; cannot calibrate Y2")
    reps = np.array([ys((total - blocks[i]) / (nb - 1)) for i in range(nb)])
    spread = np.sqrt((nb - 1) / nb * ((reps - reps.mean(axis=0)) ** 2).sum(axis=0))
    norm = CompositeNormalization.from_eta(eta, L, Y0=float(Y0), Y2=float(Y2), Y0_stderr=float(spread[0]),
                                           Y2_stderr=float(spread[1]))
    return Calibration(norm, reps)


def _calibration_se(func, cal: Calibration) -> float:
    vals = np.array([func(y0, y2) for y0, y2 in cal.replicates])
    nb = len(vals)
    return float(math.sqrt((nb - 1) / nb * np.sum((vals - vals.mean()) ** 2)))


def normalized_rows(results: list, observables: ObservableSet, cal: Calibration, geom: LatticeGeometry) -> list:
    """<N(j)> and <N(j)^2> for every composite j, plus <phi(f)^2>.

    Standard errors add the measurement jackknife (Y fixed) and the
    calibration jackknife (measurement means fixed) in quadrature; the two
    come from independent chains.
    """
    z2r, sc = _prefactors(geom, cal.norm)
    rows = []
    for i, name in enumerate(observables.names):
        series = chain_series(results, i)
        if i < observables.n_phi:
            rows.append(_row(f"phi[{name}]^2", combine_chains([x ** 2 for x in series])))
            continue
        I = float(observables.matrix[i].sum())
        stacked = [np.column_stack([x, x ** 2]) for x in series]

        def first(m, y0, y2):
            return z2r * (y2 * m[0] - y0 * sc * I)

        def second(m, y0, y2):
            return _second_moment_from_means(m, z2r, sc, I, y0, y2)

        full = _means(series)
        Y0, Y2 = cal.norm.Y0, cal.norm.Y2
        for label, func in (("N", first), ("N^2", second)):
            meas = jackknife(lambda m: func(m, Y0, Y2), stacked, N_BLOCKS)
            se_cal = _calibration_se(lambda y0, y2: func(full, y0, y2), cal)
            tau = estimate_series(np.concatenate(series)).autocorrelation_time
            rows.append({"correlator_id": f"{label}[{name}]", "mean": meas.mean,
                         "stderr": math.hypot(meas.stderr, se_cal), "tau_int": tau,
                         "n_eff": float(sum(len(x) for x in series)) / (2 * tau)})
    return rows


def correlators(cfg: dict, threads: int = 1, g_scale: float | None = None,
                observables: tuple | None = None) -> dict:
    """Calibrated run: RG eta, couplings, calibration chains, measurement chains."""
    from .mcmc import run_chains

    rc = resolve_couplings(cfg, g_scale)
    eta = eta_estimate(cfg)
    geom = geometry(cfg)
    phi = named_functions(cfg, "phi") if observables is None else observables[0]
    comp = named_functions(cfg, "composite") if observables is None else observables[1]
    sampler = Sampler(geom, rc.couplings)
    cal_obs = ObservableSet(geom, composite=[("unit_ball", TestFunction.unit_ball(geom.p))])
    cal_cfg = mcmc_config(cfg, CALIBRATION_KEY, cfg["mcmc"]["calibration_chains"])
    cal_res = run_chains(sampler, cal_cfg, cal_obs, threads)
    cal = calibrate(chain_series(cal_res, 0), geom, eta)
    obs = ObservableSet(geom, phi=phi, composite=comp)
    res = run_chains(sampler, mcmc_config(cfg), obs, threads)
    return {
        "rows": normalized_rows(res, obs, cal, geom),
        "couplings": rc.info,
        "eta": eta,
        "normalization": cal.norm.to_dict(),
        "diagnostics": {"measurement": diagnostics(res), "calibration": diagnostics(cal_res)},
    }


# ---------------------------------------------------------------------------
# invariance harness


def transformed_observables(cfg: dict, geom: LatticeGeometry) -> tuple:
    """Observable set holding every f with its translate and its rotation."""
    y = translation_vector(cfg)
    phi = named_functions(cfg, "phi")
    comp = named_functions(cfg, "composite")
    prec = max(required_precision(c) for _, f in phi + comp for c in f.terms) + 2
    M = random_rotation(cfg["invariance"]["rotation_seed"], geom.p, max(prec, 1))

    def expand(items):
        out = []
        for name, f in items:
            out += [(name, f), (f"translate({name})", translate(f, y)), (f"rotate({name})", rotate(f, M))]
        return out

    return ObservableSet(geom, phi=expand(phi), composite=expand(comp)), M


def symmetry_rows(results: list, observables: ObservableSet, moments) -> list:
    """z-scores of paired differences <F(f)> - <F(g f)> over the same chains."""
    rows = []
    names = observables.names
    for i, name in enumerate(names):
        if name.startswith(("translate(", "rotate(")):
            continue
        kind = "phi" if i < observables.n_phi else "wick2"
        ks = moments if kind == "phi" else [1, 2]
        for op in ("translate", "rotate"):
            j = names.index(f"{op}({name})", i)
            for k in ks:
                a = [r.samples[:, i] ** k for r in results]
                diff = [x - r.samples[:, j] ** k for x, r in zip(a, results)]
                scale_ = max(float(np.max(np.abs(x))) for x in a)
                if max(float(np.max(np.abs(d))) for d in diff) <= ROUNDOFF * scale_:
                    # g f and f give the same observable up to summation order
                    rows.append({"test": op, "correlator_id": f"{kind}[{name}]^{k}", "difference": 0.0,
                                 "stderr": 0.0, "z": 0.0})
                    continue
                est = combine_chains(diff)
                z = est.mean / est.stderr if est.stderr > 0 else (0.0 if est.mean == 0 else math.inf)
                rows.append({"test": op, "correlator_id": f"{kind}[{name}]^{k}", "difference": est.mean,
                             "stderr": est.stderr, "z": z})
    return rows


def scaling_exponent(params, eta: float, n_phi: int, n_comp: int) -> float:
    """Log_L of |lambda|-power for n phi insertions and n_comp N insertions at |lambda| = L."""
    d = params.phi_dim
    return (3.0 - d) * n_phi + (3.0 - 2.0 * d - 0.5 * eta) * n_comp


def scaling_ratio_oracle(params, couplings: Couplings, r: int, s: int) -> float:
    """<phi(lambda f)^2>_{r-1,s+1} / (|lambda|^(2(3-[phi])) <phi(f)^2>_{r,s}), f = 1_{Z_p^3}, |lambda| = L.

    Exact (tree transfer); both windows are integrated directly.
    """
    L = params.L
    inner = TransferOracle(LatticeGeometry(params, CutoffWindow(r, s, 1 << 62)), couplings)
    outer = TransferOracle(LatticeGeometry(params, CutoffWindow(r - 1, s + 1, 1 << 62)), couplings)
    a = inner.phi_moments(inner.geometry.ls, (2,))[2]
    b = outer.phi_moments(outer.geometry.ls - params.l, (2,))[2]
    return b / (float(L) ** (2 * scaling_exponent(params, 0.0, 1, 0)) * a)


def scaling_sequence(params, couplings: Couplings, r: int, s: int, steps: int) -> list:
    """Exact ratios for windows (r - k, s + k), k = 0 .. steps - 1."""
    return [scaling_ratio_oracle(params, couplings, r - k, s + k) for k in range(steps)]


def _second_moment_from_means(m, z2r, sc, I, y0, y2):
    return z2r ** 2 * (y2 ** 2 * m[1] - 2 * y2 * y0 * sc * I * m[0] + (y0 * sc * I) ** 2)


def _means(series: list) -> np.ndarray:
    return np.array([np.mean([x.mean() for x in series]), np.mean([(x ** 2).mean() for x in series])])


def _ratio_estimate(a, b, factor):
    ratio = b.mean / (factor * a.mean)
    return ratio, abs(ratio) * math.hypot(a.stderr / a.mean, b.stderr / b.mean)


def invariance(cfg: dict, threads: int = 1) -> dict:
    """Symmetry z-scores on the configured window and scaling ratios to (r - 1, s + 1)."""
    from .covariance import scaling_identity_check
    from .mcmc import run_chains

    params = model_params(cfg)
    rc = resolve_couplings(cfg)
    geom = geometry(cfg)
    obs, M = transformed_observables(cfg, geom)
    sampler = Sampler(geom, rc.couplings)
    res = run_chains(sampler, mcmc_config(cfg), obs, threads)
    out = {"couplings": rc.info, "rotation": [list(row) for row in M.matrix],
           "translation": [str(x) for x in translation_vector(cfg)],
           "symmetry": symmetry_rows(res, obs, cfg["observables"]["moments"]),
           "diagnostics": diagnostics(res)}
    if not cfg["invariance"]["scaling"]:
        return out

    eta = eta_estimate(cfg)
    L = float(params.L)
    outer = geometry(cfg, -1, 1)
    phi, comp = named_functions(cfg, "phi"), named_functions(cfg, "composite")
    scaled = [(f"scale({n})", scale(f, -1, params.l)) for n, f in phi]
    scaled_comp = [(f"scale({n})", scale(j, -1, params.l)) for n, j in comp]
    outer_obs = ObservableSet(outer, phi=scaled, composite=scaled_comp)
    outer_res = run_chains(Sampler(outer, rc.couplings), mcmc_config(cfg, SCALING_KEY), outer_obs, threads)
    rows = []
    for k, (name, _) in enumerate(phi):
        i = obs.names.index(name)
        a = combine_chains([x ** 2 for x in chain_series(res, i)])
        b = combine_chains([x ** 2 for x in chain_series(outer_res, k)])
        ratio, se = _ratio_estimate(a, b, L ** (2 * scaling_exponent(params, eta, 1, 0)))
        rows.append({"correlator_id": f"phi[{name}]^2", "ratio": ratio, "stderr": se})
    if comp:
        cal_res = run_chains(sampler, mcmc_config(cfg, CALIBRATION_KEY, cfg["mcmc"]["calibration_chains"]),
                             ObservableSet(geom, composite=[("unit_ball", TestFunction.unit_ball(geom.p))]),
                             threads)
        cal = calibrate(chain_series(cal_res, 0), geom, eta)
        out["normalization"] = cal.norm.to_dict()
        z_in, sc_in = _prefactors(geom, cal.norm)
        z_out, sc_out = _prefactors(outer, cal.norm)
        factor = L ** (2 * scaling_exponent(params, eta, 0, 1))
        for k, (name, _) in enumerate(comp):
            i = obs.names.index(name, obs.n_phi)
            ser_a = chain_series(res, i)
            ser_b = chain_series(outer_res, outer_obs.n_phi + k)
            Ia = float(obs.matrix[i].sum())
            Ib = float(outer_obs.matrix[outer_obs.n_phi + k].sum())

            def ratio_of(ma, mb, y0, y2):
                return (_second_moment_from_means(mb, z_out, sc_out, Ib, y0, y2)
                        / (factor * _second_moment_from_means(ma, z_in, sc_in, Ia, y0, y2)))

            Y0, Y2 = cal.norm.Y0, cal.norm.Y2
            ma, mb = _means(ser_a), _means(ser_b)
            # independent windows: jackknife each with the other held at its mean
            sa = jackknife(lambda m: ratio_of(m, mb, Y0, Y2), [np.column_stack([x, x ** 2]) for x in ser_a])
            sb = jackknife(lambda m: ratio_of(ma, m, Y0, Y2), [np.column_stack([x, x ** 2]) for x in ser_b])
            sc_ = _calibration_se(lambda y0, y2: ratio_of(ma, mb, y0, y2), cal)
            rows.append({"correlator_id": f"N[{name}]^2", "ratio": ratio_of(ma, mb, Y0, Y2),
                         "stderr": math.sqrt(sa.stderr ** 2 + sb.stderr ** 2 + sc_ ** 2)})
    out["scaling"] = {"eta": eta, "outer_window": [outer.r, outer.s], "rows": rows,
                      "outer_diagnostics": diagnostics(outer_res)}
    out["scaling"]["exact_unit_ball_phi2_ratio"] = scaling_ratio_oracle(params, rc.couplings, geom.r, geom.s)
    if rc.couplings.g == 0.0:
        kernel = outer.kernel()
        out["scaling"]["covariance_identity_residual"] = {
            name: scaling_identity_check(f, f, -1, kernel) for name, f in phi}
    return out
