"""The ultraviolet-cutoff covariance C_r of the massless hierarchical field.

Three evaluations are provided and cross-checked in the tests:

* :meth:`CovarianceKernel.c_closed` -- geometric resummation of the scale
  series (production path),
* :meth:`CovarianceKernel.c_series` -- the literal series truncated at
  ``n_max`` together with a rigorous bound on the dropped tail,
* :func:`c_pairing` with ``method="momentum"`` -- the momentum integral
  ``int fhat(-k) ghat(k) 1{|k| <= L^-r} |k|^{-(3-2[phi])} d^3k`` done shell by
  shell on the Fourier side.

Norm exponents are always integers: ``m`` stands for ``|x| = p**m`` and
``-inf`` for ``x = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .padic import Cell, ModelParams
from .testfunctions import TestFunction, _grid_points, _norm_exponents, character, frac_abs_exponent_vec
from .padic import frac_valuation

DEFAULT_MAX_CELLS = 1 << 22


@dataclass(frozen=True)
class CutoffWindow:
    """UV cutoff exponent ``r`` (lattice mesh L**r) and box exponent ``s`` (box radius L**s)."""

    r: int
    s: int
    max_cells: int = DEFAULT_MAX_CELLS

    def __post_init__(self):
        if int(self.r) != self.r or int(self.s) != self.s:
            raise ValueError("r and s must be integers")
        if self.r > self.s:
            raise ValueError(f"need r <= s, got r={self.r}, s={self.s}")

    def depth(self, params: ModelParams) -> int:
        return params.l * (self.s - self.r)

    def cell_count(self, params: ModelParams) -> int:
        return params.L ** (3 * (self.s - self.r))

    def check_budget(self, params: ModelParams) -> None:
        n = self.cell_count(params)
        if n > self.max_cells:
            raise MemoryError(f"window needs {n} cells, budget is {self.max_cells}")


class CovarianceKernel:
    """C_r as a radial function of the norm exponent, plus cached constants."""

    def __init__(self, params: ModelParams, r: int):
        self.params = params
        self.r = int(r)
        self.p = params.p
        self.lr = params.l * self.r
        self.alpha = 2.0 * params.phi_dim  # decay exponent of the scale weights
        self._log_p = math.log(self.p)
        self._geom = 1.0 / (1.0 - math.exp(-self.alpha * self._log_p))

    # S(N) = sum_{n >= N} p^{-2 n [phi]}
    def S(self, N: int) -> float:
        return math.exp(-self.alpha * N * self._log_p) * self._geom

    def weight(self, n: int) -> float:
        return math.exp(-self.alpha * n * self._log_p)

    @property
    def c0(self) -> float:
        """C_r(0) = (1 - p^-3) S(lr)."""
        return (1.0 - self.p ** -3.0) * self.S(self.lr)

    def c_closed(self, m) -> float:
        if m == -math.inf or m <= self.lr:
            return self.c0
        m = int(m)
        return self.S(m) - self.p ** -3.0 * self.S(max(self.lr, m - 1))

    def c_series(self, m, n_max: int) -> tuple[float, float]:
        """Partial sum over n = lr..n_max and a bound on the omitted tail."""
        if n_max < self.lr:
            raise ValueError("n_max must be >= l*r")
        p3 = self.p ** -3.0
        terms = []
        for n in range(self.lr, n_max + 1):
            a = 1.0 if m <= n else 0.0
            b = 1.0 if m <= n + 1 else 0.0
            terms.append(self.weight(n) * (a - p3 * b))
        remainder = (1.0 + p3) * self.S(n_max + 1)
        return math.fsum(terms), remainder

    def series_to_tolerance(self, m, tol: float = 1e-13) -> tuple[float, float, int]:
        """Partial sum with n_max grown until the tail bound drops below ``tol``."""
        n_max = max(self.lr, int(m) if m != -math.inf else self.lr)
        while (1.0 + self.p ** -3.0) * self.S(n_max + 1) >= tol:
            n_max += 1
        val, rem = self.c_series(m, n_max)
        return val, rem, n_max

    def ball_integral(self, M: int, evaluator=None) -> float:
        """Integral of C_r(u) over the ball |u| <= p**M."""
        c = evaluator or self.c_closed
        p3 = self.p ** -3.0
        if M <= self.lr:
            return c(-math.inf) * float(self.p) ** (3 * M)
        parts = [c(-math.inf) * float(self.p) ** (3 * self.lr)]
        for j in range(self.lr + 1, M + 1):
            parts.append(c(j) * float(self.p) ** (3 * j) * (1.0 - p3))
        return math.fsum(parts)

    def table(self, m_values, tol: float = 1e-13):
        """Rows (m, C_r(p^m), series partial sum, remainder bound)."""
        rows = []
        for m in m_values:
            val, rem, _ = self.series_to_tolerance(m, tol)
            rows.append((m, self.c_closed(m), val, rem))
        return rows


def gbar_star(params: ModelParams) -> float:
    return params.gbar_star


# ---------------------------------------------------------------------------
# bilinear form C_r(f, g)


def c_pairing(f: TestFunction, g: TestFunction, kernel: CovarianceKernel, method: str = "momentum") -> float:
    """C_r(f, g) for real test functions.

    ``method`` selects the momentum-shell sum (default), the full momentum
    grid (``"momentum-grid"``, small supports only), the position-space
    double sum with the closed-form kernel (``"position"``), or the same
    double sum with the truncated series (``"series"``).
    """
    if not f.terms or not g.terms:
        return 0.0
    if method == "momentum":
        return _pairing_shells(f, g, kernel)
    if method == "momentum-grid":
        return _pairing_momentum(f, g, kernel)
    if method == "position":
        return _pairing_position(f, g, kernel, kernel.c_closed)
    if method == "series":
        return _pairing_position(f, g, kernel, lambda m: kernel.series_to_tolerance(m, 1e-14)[0])
    raise ValueError(f"unknown method {method!r}")


def _pairing_position(f, g, kernel, cfun) -> float:
    parts = []
    cache = {}

    def ball(M):
        if M not in cache:
            cache[M] = kernel.ball_integral(M, cfun)
        return cache[M]

    for a, ca in f.terms.items():
        for b, cb in g.terms.items():
            if a.contains(b):
                val = float(b.volume) * ball(a.scale)
            elif b.contains(a):
                val = float(a.volume) * ball(b.scale)
            else:
                val = float(a.volume) * float(b.volume) * cfun(a.distance_exponent(b))
            parts.append(float(np.real(ca * cb)) * val)
    return math.fsum(parts)


def _pairing_shells(f, g, kernel) -> float:
    """Sum over momentum shells |k| = p^j of |k|^-alpha times the shell integral.

    A pair of cells (a, b) contributes vol_a vol_b int chi(k.(b - a)) over
    |k| <= min(p^-m_a, p^-m_b, L^-r); the shell integral of a character is
    p^3j [|d| <= p^-j] - p^3(j-1) [|d| <= p^(1-j)].  Shells are summed one
    by one until the remaining geometric tail is below double precision.
    """
    p = f.p
    alpha = 3.0 - 2.0 * kernel.params.phi_dim
    beta = 3.0 - alpha
    cut = -kernel.lr
    tail_factor = 1.0 / (1.0 - float(p) ** (-beta))
    parts = []
    for a, ca in f.terms.items():
        for b, cb in g.terms.items():
            top = min(-a.scale, -b.scale, cut)
            d = [x - y for x, y in zip(b.center, a.center)]
            e = frac_abs_exponent_vec(d, p)  # |b - a| = p^e
            total = []
            j = top
            while True:
                inner = p ** (3 * j) if j <= -e else 0.0
                outer = float(p) ** (3 * (j - 1)) if j - 1 <= -e else 0.0
                shell = float(p) ** (-alpha * j) * (float(inner) - outer)
                total.append(shell)
                if j <= -e and float(p) ** (beta * j) * tail_factor < 1e-18 * abs(math.fsum(total)):
                    break
                if j <= -e and j < top - 4000:
                    break
                j -= 1
            # shells below j: all within |k| <= p^-e, a geometric tail
            total.append((1.0 - p ** -3.0) * float(p) ** (beta * (j - 1)) * tail_factor)
            parts.append(float(np.real(ca * cb)) * float(a.volume) * float(b.volume) * math.fsum(total))
    return math.fsum(parts)


def _fourier_on_grid(f: TestFunction, t: np.ndarray, top: int, E: int) -> np.ndarray:
    """fhat evaluated at the momentum points k = t * p**-top."""
    p = f.p
    kexp = _norm_exponents(t, p, top)
    den = p ** (top + E) if top + E > 0 else 1
    out = np.zeros(len(t), dtype=complex)
    for c, coeff in f.terms.items():
        A = np.array([int(x * p ** E) for x in c.center], dtype=np.int64)
        chi = character(t @ A, den) if den > 1 else 1.0
        mask = kexp <= -c.scale
        out += np.where(mask, coeff * chi * float(p) ** (3 * c.scale), 0.0)
    return out


def _pairing_momentum(f, g, kernel) -> float:
    p = f.p
    terms = list(f.terms.items()) + list(g.terms.items())
    top = max(-c.scale for c, _ in terms)
    res = top
    E = 0
    for c, _ in terms:
        res = min(res, -c.scale)
        e = frac_abs_exponent_vec(c.center, p)
        if e != -math.inf:
            res = min(res, -int(e))
        for x in c.center:
            if x != 0:
                E = max(E, -int(frac_valuation(x, p)))
    n = p ** (top - res)
    if n ** 3 > 8_000_000:
        raise ValueError("momentum partition too large")
    t = _grid_points(p, top, res)
    fh = _fourier_on_grid(f, t, top, E)
    gh = _fourier_on_grid(g, t, top, E)
    # index of -k on the same grid
    neg = (-t) % n
    flat = lambda tt: (tt[:, 0] * n + tt[:, 1]) * n + tt[:, 2]
    order = np.empty(len(t), dtype=np.int64)
    order[flat(t)] = np.arange(len(t))
    fh_neg = fh[order[flat(neg)]]
    integrand = fh_neg * gh
    kexp = _norm_exponents(t, p, top)
    alpha = 3.0 - 2.0 * kernel.params.phi_dim
    cut = -kernel.lr  # |k| <= L^-r = p^-lr
    vol = float(p) ** (3 * res)
    nonzero = np.isfinite(kexp) & (kexp <= cut)
    weights = np.where(nonzero, np.power(float(p), -alpha * np.where(np.isfinite(kexp), kexp, 0.0)), 0.0)
    shell = np.real(integrand) * weights * vol
    # the cell around k = 0 integrates |k|^-alpha over a ball, in closed form
    J = min(res, cut)
    beta = 3.0 - alpha
    zero_ball = (1.0 - p ** -3.0) * float(p) ** (beta * J) / (1.0 - float(p) ** (-beta))
    zero_idx = np.flatnonzero(~np.any(t != 0, axis=1))[0]
    parts = list(shell[nonzero]) + [float(np.real(integrand[zero_idx])) * zero_ball]
    return math.fsum(parts)


def psd_check(cells: list[Cell], kernel: CovarianceKernel) -> float:
    """Minimum eigenvalue of the Gram matrix C_r(x_i - x_j) over cell centers."""
    G = gram_matrix(cells, kernel)
    return float(np.linalg.eigvalsh(G).min())


def gram_matrix(cells: list[Cell], kernel: CovarianceKernel) -> np.ndarray:
    n = len(cells)
    G = np.empty((n, n))
    for i in range(n):
        G[i, i] = kernel.c0
        for j in range(i + 1, n):
            G[i, j] = G[j, i] = kernel.c_closed(cells[i].distance_exponent(cells[j]))
    return G


def scaling_identity_check(f: TestFunction, g: TestFunction, z: int, kernel: CovarianceKernel,
                           method: str = "momentum") -> float:
    """Relative residual of C_r(lam f, lam g) = |lam|^(6 - 2[phi]) C_{r+z}(f, g), lam = L**z."""
    from .testfunctions import scale

    params = kernel.params
    lhs = c_pairing(scale(f, z, params.l), scale(g, z, params.l), kernel, method)
    shifted = CovarianceKernel(params, kernel.r + z)
    lam_abs = float(params.L) ** (-z)
    rhs = lam_abs ** (6.0 - 2.0 * params.phi_dim) * c_pairing(f, g, shifted, method)
    denom = max(abs(lhs), abs(rhs), 1e-300)
    return abs(lhs - rhs) / denom
