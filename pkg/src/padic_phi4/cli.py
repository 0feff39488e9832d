"""Command-line front end: ``padic-phi4 <command> --config run.json --out DIR``.

Every output embeds the resolved configuration and its hash; CSV files carry
it on a leading ``# config=`` comment line.  Exit codes: 1 invalid
configuration or input, 2 numerical failure, 3 resource limit.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys

import numpy as np

from . import __version__, experiments as ex, rg
from .config import ConfigError, canonical_json, config_hash, model_params, resolve
from .lattice import GENERATOR_ID, field_to_csv, sample_gaussian, sigma_u2, write_field
from .mcmc import BACKEND, ObservableSet, Sampler, brute_force_oracle, run_chains
from .mcmc.sampler import config_digest, read_checkpoint

EXIT_CONFIG, EXIT_NUMERICAL, EXIT_RESOURCE = 1, 2, 3


class Output:
    """Writes deterministic files into one directory."""

    def __init__(self, directory: str, cfg: dict):
        self.directory = directory
        self.cfg = cfg
        self.hash = config_hash(cfg)
        os.makedirs(directory, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.directory, name)

    def header(self) -> dict:
        return {"config": self.cfg, "config_hash": self.hash, "seed": self.cfg["seed"],
                "generator": GENERATOR_ID, "backend": BACKEND, "version": __version__}

    def json(self, name: str, payload: dict) -> None:
        doc = {**self.header(), **_plain(payload)}
        with open(self.path(name), "w", newline="\n") as fh:
            fh.write(json.dumps(doc, sort_keys=True, indent=2, allow_nan=True) + "\n")

    def csv(self, name: str, columns: list, rows: list) -> None:
        buf = io.StringIO()
        buf.write(f"# config={canonical_json(self.cfg)}\n# config_hash={self.hash}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row[c]) for c in columns])
        with open(self.path(name), "w", newline="") as fh:
            fh.write(buf.getvalue())


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _plain(obj):
    """JSON-ready copy: numpy scalars and arrays become Python values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


# ---------------------------------------------------------------------------
# commands


def cmd_params(cfg: dict, out: Output, threads: int) -> dict:
    params = model_params(cfg)
    geom = ex.geometry(cfg)
    kernel = geom.kernel()
    d = params.phi_dim
    report = {
        "phi_dim": d,
        "exponents": {"3-[phi]": 3 - d, "3-2[phi]": 3 - 2 * d, "6-2[phi]": 6 - 2 * d,
                      "2(3-[phi])": 2 * (3 - d), "3-4[phi] (=epsilon)": 3 - 4 * d},
        "L": params.L,
        "C_r(0)": kernel.c0,
        "sigma_u2": sigma_u2(params),
        "zero_mode_variance_u": geom.zero_mode_sigma ** 2,
        "gbar_star": params.gbar_star,
        "window": {"r": geom.r, "s": geom.s, "depth": geom.depth, "cells": geom.cell_count,
                   "coordinates": geom.coordinate_count, "budget": cfg["window"]["max_cells"]},
    }
    out.json("params.json", {"params": report})
    return report


def cmd_covariance(cfg: dict, out: Output, threads: int) -> dict:
    geom = ex.geometry(cfg)
    c = cfg["covariance"]
    lo = geom.lr if c["m_min"] is None else c["m_min"]
    hi = geom.ls if c["m_max"] is None else c["m_max"]
    if lo > hi:
        raise ConfigError("covariance: need m_min <= m_max")
    rows = [{"m": m, "C_r(p^m)": val, "series_partial": part, "remainder_bound": rem}
            for m, val, part, rem in geom.kernel().table(range(lo, hi + 1), c["tol"])]
    out.csv("covariance.csv", ["m", "C_r(p^m)", "series_partial", "remainder_bound"], rows)
    return {"rows": len(rows)}


def cmd_sample(cfg: dict, out: Output, threads: int) -> dict:
    geom = ex.geometry(cfg)
    fmt = cfg["sample"]["format"]
    files = []
    for i in range(cfg["sample"]["count"]):
        field = sample_gaussian(geom, cfg["seed"], i)
        if fmt == "binary":
            name = f"field_{i:04d}.bin"
            with open(out.path(name), "wb") as fh:
                write_field(fh, field, seed=cfg["seed"])
        else:
            name = f"field_{i:04d}.csv"
            with open(out.path(name), "w", newline="") as fh:
                fh.write(f"# config={canonical_json(cfg)}\n# config_hash={out.hash}\n")
                fh.write(field_to_csv(field))
        files.append({"file": name, "stream": i})
    # binary snapshots carry only a short header; the sidecar holds the full config
    out.json("sample.json", {"fields": files})
    return {"fields": len(files)}


def _run_mcmc(cfg: dict, out: Output, sampler: Sampler, observables: ObservableSet, threads: int) -> list:
    mc = ex.mcmc_config(cfg)
    if not mc.checkpoint_every:
        return run_chains(sampler, mc, observables, threads)
    digest = config_digest(cfg)
    results = []
    for c in range(mc.chains):
        path = out.path(f"chain_{c}.ckpt")
        state = None
        if os.path.exists(path):
            with open(path, "rb") as fh:
                state = read_checkpoint(fh, sampler.geometry, digest)
        results.append(sampler.run(mc, c, observables, state, path, digest))
    return results


def cmd_mcmc(cfg: dict, out: Output, threads: int) -> dict:
    rc = ex.resolve_couplings(cfg)
    geom = ex.geometry(cfg)
    obs = ObservableSet(geom, phi=ex.named_functions(cfg, "phi"), composite=ex.named_functions(cfg, "composite"))
    res = _run_mcmc(cfg, out, Sampler(geom, rc.couplings), obs, threads)
    rows = ex.moment_rows(res, obs, cfg["observables"]["moments"])
    out.csv("mcmc.csv", ["correlator_id", "mean", "stderr", "tau_int", "n_eff"], rows)
    summary = {"couplings": rc.info, "mcmc": ex.mcmc_config(cfg).to_dict(), "diagnostics": ex.diagnostics(res)}
    out.json("mcmc.json", summary)
    return summary


def cmd_correlators(cfg: dict, out: Output, threads: int) -> dict:
    result = ex.correlators(cfg, threads)
    out.csv("correlators.csv", ["correlator_id", "mean", "stderr", "tau_int", "n_eff"], result.pop("rows"))
    out.json("correlators.json", result)
    return result


def cmd_invariance(cfg: dict, out: Output, threads: int) -> dict:
    result = ex.invariance(cfg, threads)
    out.csv("symmetry.csv", ["test", "correlator_id", "difference", "stderr", "z"], result.pop("symmetry"))
    if "scaling" in result:
        out.csv("scaling.csv", ["correlator_id", "ratio", "stderr"], result["scaling"].pop("rows"))
    out.json("invariance.json", result)
    return result


def cmd_rgflow(cfg: dict, out: Output, threads: int) -> dict:
    m, r = cfg["model"], cfg["rg"]
    rows = []
    for eps in r["epsilons"]:
        for K in r["Ks"]:
            params = model_params({"model": {**m, "epsilon": eps}})
            fp = rg.find_fixed_point(params, K, tol=r["tol"], max_iter=r["max_iter"], fd_step=r["fd_step"])
            lam2 = max(x for x in fp.eigenvalues if x > 1.0)
            rows.append({"epsilon": eps, "K": K, "g_star": fp.g_star, "gbar_star": params.gbar_star,
                         "ratio": fp.g_star / params.gbar_star, "lambda2": lam2, "eta": fp.eta,
                         "eta_over_epsilon": fp.eta / eps, "residual": fp.residual_norm})
    cols = ["epsilon", "K", "g_star", "gbar_star", "ratio", "lambda2", "eta", "eta_over_epsilon", "residual"]
    out.csv("rgflow.csv", cols, rows)
    summary = {"scan_points": len(rows)}
    if r["critical"]:
        params = model_params(cfg)
        rc = ex.resolve_couplings(cfg)
        fp = ex.fixed_point(params, cfg)
        traj = rg.flow_classifier(rc.couplings.g, rc.couplings.mu, params, r["flow_steps"], r["K"], fp.potential)
        summary["couplings"] = rc.info
        summary["trajectory"] = traj.to_dict()
    out.json("rgflow.json", summary)
    return summary


def cmd_oracle(cfg: dict, out: Output, threads: int) -> dict:
    from .mcmc import TransferOracle

    rc = ex.resolve_couplings(cfg)
    geom = ex.geometry(cfg)
    o = cfg["oracle"]
    orders = tuple(o["orders"])
    method = o["method"]
    if method == "auto":
        method = {0: "quadrature", 1: "importance"}.get(geom.depth, "transfer")
    rows = []
    if method == "transfer":
        t = TransferOracle(geom, rc.couplings)
        nodes = {"cell": geom.depth, "box": 0}
        if geom.r <= 0 <= geom.s:
            nodes["unit_ball"] = geom.ls
        for name, depth in nodes.items():
            for k, v in t.phi_moments(depth, orders).items():
                rows.append({"observable": name, "order": k, "value": v, "stderr": 0.0})
        summary = {"method": "transfer", "log_Z": t.log_Z()}
    else:
        if (method == "quadrature") != (geom.depth == 0):
            raise ConfigError("oracle.method: quadrature needs depth 0, importance needs depth 1")
        res = brute_force_oracle(geom, rc.couplings, orders, draws=o["draws"], seed=cfg["seed"])
        for name, mom in res.moments.items():
            for k, (v, se) in mom.items():
                rows.append({"observable": name, "order": k, "value": v, "stderr": se})
        summary = {"method": res.method, "Z": res.Z, "Z_stderr": res.Z_stderr, "log_Z": math.log(res.Z)}
    summary["couplings"] = rc.info
    out.csv("oracle.csv", ["observable", "order", "value", "stderr"], rows)
    out.json("oracle.json", summary)
    return summary


HELP = {
    "params": "derived model quantities and window sizes",
    "covariance": "covariance table C_r(p^m) with series check",
    "sample": "exact Gaussian field snapshots",
    "mcmc": "interacting Markov chains and raw moment table",
    "correlators": "calibrated run with normalized composite correlators",
    "invariance": "translation/rotation z-scores and window scaling ratios",
    "rgflow": "fixed-point scan over epsilon and truncation degree",
    "oracle": "reference moments by quadrature, importance sampling or tree transfer",
}

COMMANDS = {
    "params": cmd_params, "covariance": cmd_covariance, "sample": cmd_sample, "mcmc": cmd_mcmc,
    "correlators": cmd_correlators, "invariance": cmd_invariance, "rgflow": cmd_rgflow, "oracle": cmd_oracle,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="padic-phi4", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, help=HELP[name])
        sp.add_argument("--config", help="JSON configuration file (defaults apply when omitted)")
        sp.add_argument("--seed", type=int, help="unsigned 64-bit seed, overrides the config")
        sp.add_argument("--out", default=".", help="output directory (default: current directory)")
        sp.add_argument("--threads", type=int, default=1, help="worker processes for chains")
    return parser


def _load(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON ({exc})") from None
    except OSError as exc:
        raise ConfigError(f"config: {exc}") from None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError("--threads: must be >= 1")
        cfg = resolve(_load(args.config), seed=args.seed)
        out = Output(args.out, cfg)
        result = COMMANDS[args.command](cfg, out, args.threads)
        if args.command == "params":
            print(json.dumps(_plain(result), sort_keys=True, indent=2))
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MemoryError as exc:
        print(f"resource error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (ArithmeticError, rg.FixedPointError, rg.EigenvalueAmbiguityError, rg.NonIntegrableError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        # remaining value errors come from invalid inputs (test functions outside the box, ...)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
