"""Independent reference values for the interacting measure on small or tree-structured windows.

* :func:`brute_force_oracle` -- depth 0 by adaptive quadrature, depth 1 by
  importance sampling from the Gaussian prior.
* :class:`TransferOracle` -- exact marginals of block fields at every tree
  depth by integrating the tree leaf to root and back, for any depth.  Each
  sibling average is a constrained N-fold convolution done by FFT on a grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline

from ..lattice import LatticeGeometry, make_rng, sigma_u2, synthesize_batch_u
from ..wick import Couplings, monomial_coefficients

MAX_Z_STEP = 0.25  # largest z spacing for the sibling Gaussian


@dataclass
class OracleResult:
    moments: dict  # name -> {order: (value, stderr)}
    Z: float
    Z_stderr: float
    method: str

    def to_dict(self) -> dict:
        return {"moments": {k: {str(o): list(v) for o, v in m.items()} for k, m in self.moments.items()},
                "Z": self.Z, "Z_stderr": self.Z_stderr, "method": self.method}


def _phi_scales(geometry: LatticeGeometry) -> dict:
    """phi(1_cell) and phi(1_box) per unit of cell u and box-mean u."""
    p = geometry.params
    base = float(p.L) ** (3 * geometry.r) * geometry.v_per_u
    return {"cell": base, "box": base * geometry.cell_count}


def brute_force_oracle(geometry: LatticeGeometry, couplings: Couplings, orders=(2, 4),
                       draws: int = 10_000_000, seed: int = 0, batch: int = 100_000) -> OracleResult:
    """Moments of phi(1_cell0) and phi(1_box) and the normalization Z."""
    s2 = sigma_u2(geometry.params)
    a4, a2, a0 = monomial_coefficients(couplings.g, couplings.mu, s2)
    scales = _phi_scales(geometry)
    if geometry.depth == 0:
        sd = geometry.zero_mode_sigma

        def weight(u):
            return math.exp(-(a4 * u ** 4 + a2 * u ** 2 + a0)) * math.exp(-0.5 * (u / sd) ** 2) / (sd * math.sqrt(2 * math.pi))

        def quad(f):
            val, _ = integrate.quad(f, -np.inf, np.inf, epsabs=1e-14, epsrel=1e-12, limit=400)
            return val

        Z = quad(weight)
        moments = {}
        for name in ("cell", "box"):
            moments[name] = {k: (quad(lambda u, k=k: (scales[name] * u) ** k * weight(u)) / Z, 0.0) for k in orders}
        return OracleResult(moments, Z, 0.0, "quadrature")
    if geometry.coordinate_count > 200:
        raise ValueError("importance sampling oracle is meant for depth-1 windows")
    rng = make_rng(seed, 0xB0)
    sw = sw2 = 0.0
    acc = {name: {k: 0.0 for k in orders} for name in scales}
    acc2 = {name: {k: 0.0 for k in orders} for name in scales}
    cross = {name: {k: 0.0 for k in orders} for name in scales}
    done = 0
    while done < draws:
        b = min(batch, draws - done)
        u = synthesize_batch_u(rng.standard_normal((b, geometry.coordinate_count)), geometry)
        u2 = u * u
        V = (a4 * u2 * u2 + a2 * u2 + a0).sum(axis=1)
        w = np.exp(-V)
        sw += w.sum()
        sw2 += (w * w).sum()
        obs = {"cell": scales["cell"] * u[:, 0], "box": scales["box"] * u.mean(axis=1)}
        for name, x in obs.items():
            for k in orders:
                xk = x ** k
                acc[name][k] += (w * xk).sum()
                acc2[name][k] += (w * w * xk * xk).sum()
                cross[name][k] += (w * w * xk).sum()
        done += b
    n = float(draws)
    Z = sw / n
    varw = sw2 / n - Z * Z
    Z_se = math.sqrt(max(varw, 0.0) / n)
    moments = {}
    for name in scales:
        moments[name] = {}
        for k in orders:
            m = acc[name][k] / sw
            # delta method for a ratio of means: var(w (x^k - m)) / (n Z^2)
            var = (acc2[name][k] - 2 * m * cross[name][k] + m * m * sw2) / n
            moments[name][k] = (m, math.sqrt(max(var, 0.0) / n) / Z)
    ess = sw * sw / sw2
    if ess < 0.01 * n:
        raise ArithmeticError(f"importance weights degenerate (effective sample size {ess:.0f})")
    return OracleResult(moments, Z, Z_se, "importance-sampling")


def _centering_tilt(logk, z, iterations=30):
    """theta per row with sum_z z exp(logk + theta z) = 0 (Newton on the log-partition)."""
    theta = np.zeros(len(logk))
    for _ in range(iterations):
        x = logk + theta[:, None] * z[None, :]
        x = x - x.max(axis=1, keepdims=True)
        w = np.exp(x)
        s0 = w.sum(axis=1)
        m = (w * z).sum(axis=1) / s0
        v = (w * z * z).sum(axis=1) / s0 - m * m
        step = m / np.maximum(v, 1e-12)
        theta = theta - np.clip(step, -5.0, 5.0)
        if np.max(np.abs(m)) < 1e-13:
            break
    return theta


class TransferOracle:
    """Exact block-field marginals on the full tree of a window.

    Block field of a node = u-value shared by all its cells from the zero mode
    and every coarser fluctuation.  ``inside[d](a)`` is the conditional weight
    of a depth-d subtree given its block field ``a``; ``outside[d](a)`` is the
    density of the block field of one depth-d node with its own subtree
    integrated out.  Marginal at depth d: inside * outside.
    """

    def __init__(self, geometry: LatticeGeometry, couplings: Couplings, a_max: float = 14.0,
                 a_step: float | None = None, z_max: float = 11.0):
        self.geometry = geometry
        if a_step is None:
            # the root block field is the zero mode; resolve its prior width
            a_step = min(0.02, geometry.zero_mode_sigma / 2.5)
        self.couplings = couplings
        s2 = sigma_u2(geometry.params)
        self.a4, self.a2, self.a0 = monomial_coefficients(couplings.g, couplings.mu, s2)
        n_half = int(round(a_max / a_step))
        self.a = np.linspace(-n_half * a_step, n_half * a_step, 2 * n_half + 1)
        self.h = a_step
        self.z_max = z_max
        self.N = geometry.family
        D = geometry.depth
        self.weights = geometry.level_weights()
        log_in = [None] * (D + 1)
        log_in[D] = -(self.a4 * self.a ** 4 + self.a2 * self.a ** 2 + self.a0)
        for d in range(D - 1, -1, -1):
            log_in[d] = self._sibling_average(log_in[d + 1], self.weights[d], self.N)
        self.log_inside = log_in
        self.log_outside = self._outside()

    # log E[prod_{i<=n} F(a + w eta_i)], eta constrained Gaussian on n sites, for every grid a
    def _sibling_average(self, logF, w, n):
        # coarse levels (small w) need a finer z-grid than h / w; refine the a-grid
        # by an integer factor so that a + w z_j still lands on grid points
        refine = max(1, int(math.ceil(self.h / w / MAX_Z_STEP)))
        h_a = self.h / refine
        h_z = h_a / w
        J = int(math.ceil(self.z_max / h_z))
        z = h_z * np.arange(-J, J + 1)
        log_phi = -0.5 * z * z - 0.5 * math.log(2 * math.pi)
        M = len(self.a)
        if refine > 1:
            finite = np.isfinite(logF)
            fine_a = np.linspace(self.a[0], self.a[-1], refine * (M - 1) + 1)
            inner = (fine_a >= self.a[finite][0]) & (fine_a <= self.a[finite][-1])
            fine = np.full(len(fine_a), -np.inf)
            fine[inner] = CubicSpline(self.a[finite], logF[finite])(fine_a[inner])
        else:
            fine = logF
        pad = np.full(len(fine) + 2 * J, -np.inf)
        pad[J:J + len(fine)] = fine
        idx = refine * np.arange(M)[:, None] + np.arange(2 * J + 1)[None, :]  # index of a + w z_j
        size = 1 << int(math.ceil(math.log2(n * 2 * J + 1)))
        out = np.empty(M)
        chunk = max(1, (1 << 22) // size)
        for start in range(0, M, chunk):
            rows = idx[start:start + chunk]
            logk = pad[rows] + log_phi[None, :]
            # tilting by exp(theta z) leaves the value at sum(z) = 0 unchanged and
            # centres each row, so the FFT never resolves a far tail
            logk = logk + _centering_tilt(logk, z)[:, None] * z[None, :]
            shift = logk.max(axis=1, keepdims=True)
            k = np.exp(logk - shift)
            conv = np.fft.irfft(np.fft.rfft(k, size, axis=1) ** n, size, axis=1)
            centre = conv[:, n * J]
            # sum over the grid equals zero at the centre; J(a) = h^(n-1) conv
            with np.errstate(divide="ignore"):
                out[start:start + chunk] = (np.log(np.maximum(centre, 1e-300)) + (n - 1) * math.log(h_z)
                                            + n * shift[:, 0] + 0.5 * math.log(2 * math.pi * n))
        return out

    def _outside(self):
        g = self.geometry
        D, N = g.depth, self.N
        a = self.a
        sd0 = g.zero_mode_sigma
        log_out = [None] * (D + 1)
        log_out[0] = -0.5 * (a / sd0) ** 2 - math.log(sd0 * math.sqrt(2 * math.pi))
        var_t = 1.0 - 1.0 / N
        for d in range(D):
            w = self.weights[d]
            logW = self._sibling_average(self.log_inside[d + 1], w, N - 1)
            finite = np.isfinite(logW)
            spline = CubicSpline(a[finite], logW[finite])
            lo, hi = a[finite][0], a[finite][-1]
            A, B = np.meshgrid(a, a, indexing="ij")  # parent a, child b
            t = (B - A) / w
            x = (N * A - B) / (N - 1)
            inside = (x >= lo) & (x <= hi)
            logs = np.where(inside, spline(np.clip(x, lo, hi)), -np.inf)
            logs = logs - 0.5 * t * t / var_t - 0.5 * math.log(2 * math.pi * var_t) - math.log(w)
            logs = logs + log_out[d][:, None]
            m = logs.max()
            with np.errstate(divide="ignore"):
                log_out[d + 1] = np.log(np.exp(logs - m).sum(axis=0) * self.h) + m
        return log_out

    def log_Z(self) -> float:
        x = self.log_inside[0] + self.log_outside[0]
        m = x.max()
        return float(math.log(np.exp(x - m).sum() * self.h) + m)

    def marginal(self, depth: int) -> np.ndarray:
        """Normalized density of a depth-``depth`` block field on the grid ``self.a``."""
        x = self.log_inside[depth] + self.log_outside[depth]
        dens = np.exp(x - x.max())
        return dens / (dens.sum() * self.h)

    def block_moments(self, depth: int, orders=(2, 4)) -> dict:
        dens = self.marginal(depth)
        return {k: float((dens * self.a ** k).sum() * self.h) for k in orders}

    def phi_scale(self, depth: int) -> float:
        """phi(1_B) per unit block field, for a node B at ``depth``."""
        g = self.geometry
        return _phi_scales(g)["cell"] * g.family ** (g.depth - depth)

    def phi_moments(self, depth: int, orders=(2, 4)) -> dict:
        c = self.phi_scale(depth)
        return {k: c ** k * v for k, v in self.block_moments(depth, orders).items()}
