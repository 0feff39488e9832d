"""Run configuration: one JSON document, validated and completed with defaults.

The resolved configuration (every default materialized) is embedded in all
outputs.  ``threads`` and the output directory are execution details and are
not part of it, so they never change an output byte.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from fractions import Fraction

from .covariance import DEFAULT_MAX_CELLS, CutoffWindow
from .padic import Cell, ModelParams, is_prime, parse_base_p
from .testfunctions import TestFunction, loads

DEFAULTS = {
    "model": {"p": 2, "l": 1, "epsilon": 0.2},
    "window": {"r": -1, "s": 1, "max_cells": DEFAULT_MAX_CELLS},
    "couplings": {"g": "gbar_star", "g_scale": 1.0, "mu": 0.0},
    "mcmc": {"sweeps": 4000, "burn_in": 400, "chains": 2, "thinning": 1, "proposal_width": None,
             "tune": True, "checkpoint_every": 0, "calibration_chains": 2},
    "rg": {"K": 10, "tune_K": 14, "epsilons": None, "Ks": None, "tol": 1e-10, "max_iter": 50,
           "fd_step": 1e-6, "flow_steps": 60, "critical": False},
    "observables": {"phi": ["unit_ball"], "composite": ["unit_ball"], "moments": [2, 4]},
    "covariance": {"m_min": None, "m_max": None, "tol": 1e-13},
    "sample": {"count": 4, "format": "binary"},
    "oracle": {"method": "auto", "draws": 1_000_000, "orders": [2, 4]},
    "invariance": {"translation": None, "rotation_seed": 0, "scaling": True},
    "seed": 0,
}


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""


def _merge(base: dict, user: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in user.items():
        where = f"{path}.{k}" if path else k
        if k not in base:
            raise ConfigError(f"{where}: unknown field")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{where}: expected an object")
            out[k] = _merge(base[k], v, where)
        else:
            out[k] = v
    return out


def _int(cfg, path, lo=None, hi=None):
    sect, key = path.split(".") if "." in path else (None, path)
    v = cfg[sect][key] if sect else cfg[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{path}: expected an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(f"{path}: must be >= {lo}, got {v}")
    if hi is not None and v > hi:
        raise ConfigError(f"{path}: must be <= {hi}, got {v}")
    return v


def _real(v, path):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"{path}: expected a finite number, got {v!r}")
    return float(v)


def resolve(user: dict, seed: int | None = None) -> dict:
    """Defaults + user values, validated.  ``seed`` overrides the config's seed."""
    if not isinstance(user, dict):
        raise ConfigError("config: top level must be a JSON object")
    cfg = _merge(DEFAULTS, user)
    if seed is not None:
        cfg["seed"] = seed
    _int(cfg, "seed", 0, 2 ** 64 - 1)

    m = cfg["model"]
    p = _int(cfg, "model.p", 2)
    if not is_prime(p):
        raise ConfigError(f"model.p: must be prime, got {p}")
    _int(cfg, "model.l", 1)
    eps = _real(m["epsilon"], "model.epsilon")
    if not 0.0 < eps < 1.0:
        raise ConfigError(f"model.epsilon: must lie in the open interval (0, 1), got {eps}")
    m["epsilon"] = eps

    r, s = _int(cfg, "window.r"), _int(cfg, "window.s")
    if r > s:
        raise ConfigError(f"window: need r <= s, got r={r}, s={s}")
    _int(cfg, "window.max_cells", 1)

    c = cfg["couplings"]
    if c["g"] != "gbar_star":
        c["g"] = _real(c["g"], "couplings.g")
        if c["g"] < 0:
            raise ConfigError("couplings.g: must be >= 0")
    c["g_scale"] = _real(c["g_scale"], "couplings.g_scale")
    if c["mu"] == "auto":
        if "rg" not in user:
            raise ConfigError("couplings.mu: 'auto' needs an explicit rg block")
    else:
        c["mu"] = _real(c["mu"], "couplings.mu")

    mc = cfg["mcmc"]
    for k in ("sweeps", "burn_in", "chains", "thinning", "checkpoint_every", "calibration_chains"):
        _int(cfg, f"mcmc.{k}", 0)
    if not mc["sweeps"] > mc["burn_in"]:
        raise ConfigError("mcmc.sweeps: must exceed mcmc.burn_in")
    if mc["chains"] < 1 or mc["thinning"] < 1:
        raise ConfigError("mcmc.chains: chains and thinning must be >= 1")
    w = mc["proposal_width"]
    if w is not None:
        ws = w if isinstance(w, list) else [w]
        if not all(_real(x, "mcmc.proposal_width") > 0 for x in ws):
            raise ConfigError("mcmc.proposal_width: widths must be > 0")

    rg = cfg["rg"]
    for k in ("K", "tune_K"):
        K = _int(cfg, f"rg.{k}", 4)
        if K % 2:
            raise ConfigError(f"rg.{k}: truncation degree must be even")
    for k in ("epsilons", "Ks"):
        if rg[k] is not None and not isinstance(rg[k], list):
            raise ConfigError(f"rg.{k}: expected a list or null")
    if rg["epsilons"] is None:
        rg["epsilons"] = [eps]
    rg["epsilons"] = [_real(e, "rg.epsilons") for e in rg["epsilons"]]
    if not all(0 < e < 1 for e in rg["epsilons"]):
        raise ConfigError("rg.epsilons: every value must lie in (0, 1)")
    if rg["Ks"] is None:
        rg["Ks"] = [rg["K"]]
    if not all(isinstance(K, int) and K >= 4 and K % 2 == 0 for K in rg["Ks"]):
        raise ConfigError("rg.Ks: every value must be an even integer >= 4")

    ob = cfg["observables"]
    for k in ("phi", "composite"):
        if not isinstance(ob[k], list):
            raise ConfigError(f"observables.{k}: expected a list")
        for i, spec in enumerate(ob[k]):
            parse_test_function(spec, p, f"observables.{k}[{i}]")
            if isinstance(spec, dict) and "file" in spec:
                # inline the file so the resolved config is self-contained
                with open(spec["file"]) as fh:
                    ob[k][i] = {"text": fh.read()}
    if not all(isinstance(o, int) and o >= 1 for o in ob["moments"]):
        raise ConfigError("observables.moments: expected positive integers")

    if cfg["sample"]["format"] not in ("binary", "csv"):
        raise ConfigError("sample.format: must be 'binary' or 'csv'")
    _int(cfg, "sample.count", 1)
    if cfg["oracle"]["method"] not in ("auto", "quadrature", "importance", "transfer"):
        raise ConfigError("oracle.method: must be auto, quadrature, importance or transfer")
    _int(cfg, "oracle.draws", 1)
    t = cfg["invariance"]["translation"]
    if t is not None:
        if not (isinstance(t, list) and len(t) == 3):
            raise ConfigError("invariance.translation: expected three base-p digit strings")
        try:
            [parse_base_p(x, p) for x in t]
        except (ValueError, AttributeError) as exc:
            raise ConfigError(f"invariance.translation: {exc}") from None
    _int(cfg, "invariance.rotation_seed", 0)

    return cfg


def model_params(cfg: dict) -> ModelParams:
    m = cfg["model"]
    return ModelParams(m["p"], m["l"], m["epsilon"])


def window(cfg: dict) -> CutoffWindow:
    w = cfg["window"]
    return CutoffWindow(w["r"], w["s"], w["max_cells"])


def parse_test_function(spec, p: int, path: str = "test function") -> TestFunction:
    """Builtins ``unit_ball``, ``ball:<m>``, ``radial:<m>`` (the shell |x| = p^m),
    ``cell:<x>,<y>,<z>@<m>`` (base-p digit strings), or ``{"file": path}`` /
    ``{"text": ...}`` in the plain-text test-function format."""
    try:
        if isinstance(spec, dict):
            if "file" in spec:
                with open(spec["file"]) as fh:
                    return loads(fh.read(), p)
            if "text" in spec:
                return loads(spec["text"], p)
            raise ValueError("expected a 'file' or 'text' key")
        if not isinstance(spec, str):
            raise ValueError(f"expected a string or object, got {spec!r}")
        if spec == "unit_ball":
            return TestFunction.unit_ball(p)
        kind, _, arg = spec.partition(":")
        if kind == "ball":
            return TestFunction.indicator(Cell.ball(p, int(arg)))
        if kind == "radial":
            m = int(arg)
            return TestFunction(p, [(Cell.ball(p, m), 1.0), (Cell.ball(p, m - 1), -1.0)])
        if kind == "cell":
            digits, _, scale = arg.partition("@")
            center = [parse_base_p(x, p) for x in digits.split(",")]
            if len(center) != 3:
                raise ValueError("cell needs three coordinates")
            return TestFunction.indicator(Cell.make(p, int(scale), center))
        raise ValueError(f"unknown test function {spec!r}")
    except (ValueError, OSError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def translation_vector(cfg: dict) -> tuple:
    """Configured translation, or (L^-s, 0, 0) which moves Z_p^3 off itself when s > 0."""
    p = cfg["model"]["p"]
    t = cfg["invariance"]["translation"]
    if t is None:
        return (Fraction(1, p ** (cfg["model"]["l"] * cfg["window"]["s"])) if cfg["window"]["s"] >= 0
                else Fraction(0), Fraction(0), Fraction(0))
    return tuple(parse_base_p(x, p) for x in t)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


def config_hash(cfg: dict) -> str:
    """Git-style blob hash (sha1 of 'blob <len>\\0' + canonical JSON)."""
    data = canonical_json(cfg).encode()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()
