"""Metropolis sampling of the interacting measure on multiscale coordinates.

The prior on coordinates is i.i.d. standard normal (it synthesizes exactly the
cutoff Gaussian field on the window), and the likelihood is exp(-V) with the
per-cell potential g :u^4: + mu :u^2: in rescaled units.  One sweep visits
every coordinate once, tree level by tree level from the root, then the zero
mode.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ..lattice import (GENERATOR_ID, LatticeGeometry, MultiscaleCoordinates, make_rng, pairing_weights,
                       sigma_u2, synthesize_u)
from ..testfunctions import TestFunction
from ..wick import Couplings, monomial_coefficients
from . import backend

TARGET_ACCEPTANCE = 0.45
TUNE_INTERVAL = 25


class NumericalError(ArithmeticError):
    pass


@dataclass(frozen=True)
class MCMCConfig:
    sweeps: int
    burn_in: int = 0
    chains: int = 1
    seed: int = 0
    thinning: int = 1
    proposal_width: tuple | float | None = None  # per level (root first, zero mode last), or one value
    tune: bool = True  # adapt widths during burn-in only
    checkpoint_every: int = 0

    def __post_init__(self):
        if not (self.sweeps > self.burn_in >= 0):
            raise ValueError("need sweeps > burn_in >= 0")
        if self.chains < 1 or self.thinning < 1:
            raise ValueError("chains and thinning must be >= 1")
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        w = self.proposal_width
        if w is not None:
            ws = [w] if np.isscalar(w) else list(w)
            if not all(x > 0 for x in ws):
                raise ValueError("proposal widths must be > 0")
            if not np.isscalar(w):
                object.__setattr__(self, "proposal_width", tuple(float(x) for x in ws))

    def widths(self, depth: int) -> np.ndarray:
        w = self.proposal_width
        if w is None:
            return np.full(depth + 1, 1.0)
        if np.isscalar(w):
            return np.full(depth + 1, float(w))
        if len(w) != depth + 1:
            raise ValueError(f"need {depth + 1} proposal widths (levels plus zero mode), got {len(w)}")
        return np.array(w, dtype=float)

    @property
    def retained(self) -> int:
        return (self.sweeps - self.burn_in) // self.thinning

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(d["proposal_width"], tuple):
            d["proposal_width"] = list(d["proposal_width"])
        return d


@dataclass
class ObservableSet:
    """Linear field observables phi(f) and raw composites sum_cells vol j :v^2:."""

    geometry: LatticeGeometry
    phi: list = field(default_factory=list)  # (name, TestFunction)
    composite: list = field(default_factory=list)

    def __post_init__(self):
        g = self.geometry
        rows = [pairing_weights(f, g) for _, f in self.phi] + [pairing_weights(j, g) for _, j in self.composite]
        self.matrix = np.array(rows).reshape(len(rows), g.cell_count)
        self.n_phi = len(self.phi)
        self.c0 = g.kernel().c0

    @property
    def names(self) -> list:
        return [n for n, _ in self.phi] + [n for n, _ in self.composite]

    def measure(self, u: np.ndarray) -> np.ndarray:
        v = u * self.geometry.v_per_u
        out = np.empty(len(self.matrix))
        if self.n_phi:
            out[: self.n_phi] = self.matrix[: self.n_phi] @ v
        if len(self.matrix) > self.n_phi:
            out[self.n_phi:] = self.matrix[self.n_phi:] @ (v * v - self.c0)
        return out


@dataclass
class ChainState:
    coords: MultiscaleCoordinates
    u: np.ndarray
    widths: np.ndarray
    sweep: int = 0
    accepted: np.ndarray = None
    proposed: np.ndarray = None
    samples: list = field(default_factory=list)
    potentials: list = field(default_factory=list)


@dataclass
class ChainResult:
    chain: int
    samples: np.ndarray  # (retained, n_obs)
    potentials: np.ndarray
    acceptance: np.ndarray  # per level after burn-in, zero mode last
    widths: np.ndarray
    names: list


class Sampler:
    def __init__(self, geometry: LatticeGeometry, couplings: Couplings, backend_name: str | None = None):
        self.geometry = geometry
        self.couplings = couplings
        s2 = sigma_u2(geometry.params)
        self.a4, self.a2, self.a0 = monomial_coefficients(couplings.g, couplings.mu, s2)
        self.weights = geometry.level_weights()
        self.zero_sigma = geometry.zero_mode_sigma
        self.backend_name = backend_name or backend.ACTIVE
        self.update_level = backend.get_update_level(self.backend_name)

    # --- potential -------------------------------------------------------
    def potential(self, u: np.ndarray) -> float:
        u2 = u * u
        return float(np.sum(self.a4 * u2 * u2 + self.a2 * u2) + self.a0 * len(u))

    # --- state -----------------------------------------------------------
    def initial_state(self, config: MCMCConfig, rng: np.random.Generator) -> ChainState:
        g = self.geometry
        flat = rng.standard_normal(g.coordinate_count)
        coords = MultiscaleCoordinates.from_flat(flat, g)
        D = g.depth
        return ChainState(coords, synthesize_u(coords, g), config.widths(D),
                          accepted=np.zeros(D + 1), proposed=np.zeros(D + 1))

    def sweep(self, state: ChainState, rng: np.random.Generator) -> np.ndarray:
        """One pass over all coordinates; returns accepted moves per level."""
        g = self.geometry
        fam, D = g.family, g.depth
        acc = np.zeros(D + 1)
        u = state.u
        for d in range(D):
            z = state.coords.levels[d]
            steps = state.widths[d] * rng.standard_normal(z.shape)
            log_u = np.log(rng.random(z.shape))
            acc[d] = self.update_level(u, z, float(self.weights[d]), fam ** (D - 1 - d),
                                       self.a4, self.a2, steps, log_u)
        # zero mode: shifts every cell by the same amount
        step = state.widths[D] * rng.standard_normal()
        log_u = math.log(rng.random())
        z0 = state.coords.zero_mode
        delta = self.zero_sigma * step
        u2 = u * u
        S1, S2, S3 = float(u.sum()), float(u2.sum()), float((u2 * u).sum())
        B = float(len(u))
        d2 = delta * delta
        dv = (self.a4 * (4 * delta * S3 + 6 * d2 * S2 + 4 * d2 * delta * S1 + B * d2 * d2)
              + self.a2 * (2 * delta * S1 + B * d2))
        if log_u < -0.5 * ((z0 + step) ** 2 - z0 * z0) - dv:
            state.coords.zero_mode = z0 + step
            acc[D] = 1
        # rebuild from coordinates so rounding never accumulates
        state.u = synthesize_u(state.coords, g)
        if not np.all(np.isfinite(state.u)):
            raise NumericalError(f"non-finite field after sweep {state.sweep}")
        return acc

    def proposals_per_sweep(self) -> np.ndarray:
        g = self.geometry
        return np.array([g.family ** (d + 1) for d in range(g.depth)] + [1], dtype=float)

    def run(self, config: MCMCConfig, chain: int, observables: ObservableSet | None = None,
            state: ChainState | None = None, checkpoint_path: str | None = None,
            config_hash: bytes = b"") -> ChainResult:
        rng = make_rng(config.seed, chain)
        if state is None:
            state = self.initial_state(config, rng)
        else:
            rng.bit_generator.state = state.rng_state
        per_sweep = self.proposals_per_sweep()
        window_acc = np.zeros_like(per_sweep)
        while state.sweep < config.sweeps:
            acc = self.sweep(state, rng)
            state.sweep += 1
            if state.sweep <= config.burn_in:
                window_acc += acc
                if config.tune and state.sweep % TUNE_INTERVAL == 0:
                    rate = window_acc / (per_sweep * TUNE_INTERVAL)
                    state.widths = state.widths * np.exp(np.clip(rate - TARGET_ACCEPTANCE, -0.5, 0.5))
                    window_acc[:] = 0.0
            else:
                state.accepted += acc
                state.proposed += per_sweep
                if (state.sweep - config.burn_in) % config.thinning == 0:
                    if observables is not None:
                        state.samples.append(observables.measure(state.u))
                    state.potentials.append(self.potential(state.u))
            if checkpoint_path and config.checkpoint_every and state.sweep % config.checkpoint_every == 0:
                state.rng_state = rng.bit_generator.state
                with open(checkpoint_path, "wb") as fh:
                    write_checkpoint(fh, state, config_hash)
        names = observables.names if observables is not None else []
        samples = np.array(state.samples).reshape(len(state.samples), len(names))
        with np.errstate(invalid="ignore"):
            acceptance = np.where(state.proposed > 0, state.accepted / np.maximum(state.proposed, 1), np.nan)
        return ChainResult(chain, samples, np.array(state.potentials), acceptance, state.widths.copy(), names)


def _run_one(args):
    sampler, config, chain, observables = args
    return sampler.run(config, chain, observables)


def run_chains(sampler: Sampler, config: MCMCConfig, observables: ObservableSet | None = None,
               threads: int = 1) -> list:
    """All chains of a run, in chain order regardless of worker scheduling."""
    jobs = [(sampler, config, c, observables) for c in range(config.chains)]
    if threads <= 1 or config.chains == 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(threads, config.chains)) as pool:
        return list(pool.map(_run_one, jobs))


# ---------------------------------------------------------------------------
# checkpoints

_CKPT_MAGIC = b"PADCHKPT"


def config_digest(config: dict) -> bytes:
    return hashlib.sha256(json.dumps(config, sort_keys=True, separators=(",", ":")).encode()).digest()


def write_checkpoint(fh, state: ChainState, config_hash: bytes) -> None:
    header = {
        "generator": GENERATOR_ID,
        "rng_state": _jsonable(state.rng_state),
        "sweep": state.sweep,
        "widths": state.widths.tolist(),
        "accepted": state.accepted.tolist(),
        "proposed": state.proposed.tolist(),
        "n_samples": len(state.samples),
        "n_obs": len(state.samples[0]) if state.samples else 0,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    fh.write(_CKPT_MAGIC)
    fh.write(config_hash.ljust(32, b"\0")[:32])
    fh.write(struct.pack("<Q", len(blob)))
    fh.write(blob)
    flat = state.coords.flat()
    fh.write(struct.pack("<Q", flat.size))
    fh.write(flat.astype("<f8").tobytes())
    fh.write(np.asarray(state.samples, dtype="<f8").tobytes())
    fh.write(np.asarray(state.potentials, dtype="<f8").tobytes())


def read_checkpoint(fh, geometry: LatticeGeometry, config_hash: bytes | None = None) -> ChainState:
    if fh.read(8) != _CKPT_MAGIC:
        raise ValueError("not a checkpoint file")
    stored = fh.read(32)
    if config_hash is not None and stored != config_hash.ljust(32, b"\0")[:32]:
        raise ValueError("checkpoint was written for a different configuration")
    (n,) = struct.unpack("<Q", fh.read(8))
    header = json.loads(fh.read(n))
    (m,) = struct.unpack("<Q", fh.read(8))
    flat = np.frombuffer(fh.read(8 * m), dtype="<f8").astype(float)
    coords = MultiscaleCoordinates.from_flat(flat, geometry)
    ns, no = header["n_samples"], header["n_obs"]
    samples = np.frombuffer(fh.read(8 * ns * no), dtype="<f8").reshape(ns, no)
    pots = np.frombuffer(fh.read(8 * ns), dtype="<f8")
    state = ChainState(coords, synthesize_u(coords, geometry), np.array(header["widths"]), header["sweep"],
                       np.array(header["accepted"]), np.array(header["proposed"]),
                       [row.copy() for row in samples], list(pots))
    state.rng_state = header["rng_state"]
    return state


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return [int(x) for x in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj
