"""Hierarchical renormalization-group map on single-site potentials.

One p-step integrates the finest fluctuation of a block of N = p^3 sites and
rescales the block variable:

    exp(-V'(psi)) ~ E[ prod_i exp(-V(p^-[phi] psi + zeta_i)) ],

with zeta_i = z_i - mean(z) for i.i.d. standard normal z_i.  Potentials are
polynomials in the Wick basis :u^k: taken with respect to the fixed variance
sigma_u^2 = (1 - p^-3) / (1 - p^-2[phi]).

Production route (``_log_weight_series``): the constraint sum(z_i) = 0 is
written as a Fourier integral over omega, which factorizes the N-site
expectation into a product of one-dimensional integrals.  Everything is kept
as a power series in the block variable ``a`` using the generating function of
Hermite polynomials, so the Taylor coefficients of log E[...] come out
directly.

Oracle route (``_log_weight_cauchy``): the same expectation is evaluated at
complex ``a`` on a circle by an N-fold FFT convolution in real space, and the
Taylor coefficients are read off with a discrete Cauchy integral.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lattice import sigma_u2
from .padic import ModelParams

# fluctuation integrals run over |w| <= W_MAX; the Gaussian tail beyond is < e^-60
W_MAX = 11.0
W_HALF_POINTS = 440
W_STEP = W_MAX / W_HALF_POINTS
N_OMEGA = 401
EDGE_MARGIN = 36.0  # log-weight at the domain edge must sit this far below the peak
OVERFLOW = 1e6


class NonIntegrableError(ValueError):
    pass


class TruncationOverflowError(ArithmeticError):
    pass


class FixedPointError(RuntimeError):
    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory or []


class EigenvalueAmbiguityError(RuntimeError):
    def __init__(self, message, spectrum=None):
        super().__init__(message)
        self.spectrum = spectrum


# ---------------------------------------------------------------------------
# basis changes


def _double_factorial_odd(n: int) -> float:
    """(n - 1)!! for even n, the n-th standard Gaussian moment."""
    out = 1.0
    for j in range(n - 1, 0, -2):
        out *= j
    return out


def wick_to_monomial_matrix(K: int, sigma2: float) -> np.ndarray:
    """T with monomial coefficients = T @ Wick coefficients."""
    T = np.zeros((K + 1, K + 1))
    for k in range(K + 1):
        # :u^k: = sum_j (-1)^j C(k, 2j) (2j-1)!! s^j u^(k-2j)
        for j in range(k // 2 + 1):
            T[k - 2 * j, k] = (-1) ** j * math.comb(k, 2 * j) * _double_factorial_odd(2 * j) * sigma2 ** j
    return T


def monomial_to_wick_matrix(K: int, sigma2: float) -> np.ndarray:
    T = np.zeros((K + 1, K + 1))
    for k in range(K + 1):
        for j in range(k // 2 + 1):
            T[k - 2 * j, k] = math.comb(k, 2 * j) * _double_factorial_odd(2 * j) * sigma2 ** j
    return T


@dataclass(frozen=True)
class SingleSitePotential:
    """V(u) = sum_k coeffs[k] :u^k: with Wick order w.r.t. ``sigma2``."""

    params: ModelParams
    coeffs: tuple
    sigma2: float = field(default=None)

    def __post_init__(self):
        c = tuple(float(x) for x in self.coeffs)
        if not c:
            raise ValueError("need at least one coefficient")
        if not all(math.isfinite(x) for x in c):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "coeffs", c)
        if self.sigma2 is None:
            object.__setattr__(self, "sigma2", sigma_u2(self.params))

    @classmethod
    def zero(cls, params: ModelParams, K: int) -> "SingleSitePotential":
        return cls(params, (0.0,) * (K + 1))

    @classmethod
    def from_couplings(cls, params: ModelParams, g: float, mu: float, K: int) -> "SingleSitePotential":
        if K < 4:
            raise ValueError("K must be at least 4")
        c = [0.0] * (K + 1)
        c[4], c[2] = g, mu
        return cls(params, c)

    @classmethod
    def from_monomial(cls, params: ModelParams, mono) -> "SingleSitePotential":
        mono = np.asarray(mono, dtype=float)
        s2 = sigma_u2(params)
        return cls(params, tuple(monomial_to_wick_matrix(len(mono) - 1, s2) @ mono))

    @property
    def K(self) -> int:
        return len(self.coeffs) - 1

    @property
    def g(self) -> float:
        return self.coeffs[4] if self.K >= 4 else 0.0

    @property
    def mu(self) -> float:
        return self.coeffs[2] if self.K >= 2 else 0.0

    def array(self) -> np.ndarray:
        return np.array(self.coeffs)

    def monomial(self) -> np.ndarray:
        return wick_to_monomial_matrix(self.K, self.sigma2) @ self.array()

    def is_even(self) -> bool:
        return all(c == 0.0 for c in self.coeffs[1::2])

    def even_vector(self) -> np.ndarray:
        """Coefficients c_2, c_4, ..., c_K (the constant is normalized away)."""
        return self.array()[2::2].copy()

    @classmethod
    def from_even_vector(cls, params: ModelParams, vec, K: int) -> "SingleSitePotential":
        c = np.zeros(K + 1)
        c[2::2] = vec
        return cls(params, tuple(c))

    def __call__(self, u):
        return np.polynomial.polynomial.polyval(u, self.monomial())

    def to_dict(self) -> dict:
        return {"basis": "wick", "sigma2": self.sigma2, "K": self.K, "coeffs": list(self.coeffs)}


# ---------------------------------------------------------------------------
# power series helpers; the last axis holds coefficients of a^0..a^K


def _series_mul(a, b, K):
    out = np.zeros(np.broadcast_shapes(a.shape, b.shape), dtype=np.result_type(a, b))
    for n in range(K + 1):
        out[..., n] = np.sum(a[..., : n + 1] * b[..., n::-1], axis=-1)
    return out


def _series_pow(h, n, K):
    result = np.zeros_like(h)
    result[..., 0] = 1.0
    base = h
    while n:
        if n & 1:
            result = _series_mul(result, base, K)
        n >>= 1
        if n:
            base = _series_mul(base, base, K)
    return result


def _series_log(f, K):
    g = np.zeros_like(f)
    g[..., 0] = np.log(f[..., 0])
    for n in range(1, K + 1):
        acc = n * f[..., n]
        for j in range(1, n):
            acc = acc - j * g[..., j] * f[..., n - j]
        g[..., n] = acc / (n * f[..., 0])
    return g


def _hermite_table(w, K):
    """Probabilists' Hermite polynomials He_0..He_K on the grid w."""
    H = np.empty((K + 1, len(w)))
    H[0] = 1.0
    if K >= 1:
        H[1] = w
    for k in range(1, K):
        H[k + 1] = w * H[k] - k * H[k - 1]
    return H


def _grid():
    return np.linspace(-W_MAX, W_MAX, 2 * W_HALF_POINTS + 1)


def _log_density(mono, w):
    """log(exp(-V(w)) phi(w)) up to the constant -log(2 pi)/2."""
    return -np.polynomial.polynomial.polyval(w, mono) - 0.5 * w * w


def _check_integrable(logd, w):
    if not np.all(np.isfinite(logd)):
        raise NonIntegrableError("Boltzmann weight is not finite on the fluctuation domain")
    peak = logd.max()
    edge = np.abs(w) >= W_MAX - 1.0
    if logd[edge].max() > peak - EDGE_MARGIN:
        raise NonIntegrableError("Boltzmann weight does not decay on the fluctuation domain")


def _log_weight_series(mono, N, K_out):
    """Taylor coefficients of log E[prod_i F(a + zeta_i)] in a, up to a^K_out."""
    w = _grid()
    logd = _log_density(mono, w)
    _check_integrable(logd, w)
    shift = logd.max()
    dens = np.exp(logd - shift)
    m0 = dens.sum()
    mean = (dens * w).sum() / m0
    var = (dens * (w - mean) ** 2).sum() / m0
    omega_max = (9.0 + math.sqrt(K_out)) / math.sqrt(N * max(var, 1e-3))
    omega = np.linspace(-omega_max, omega_max, N_OMEGA)
    d_omega = omega[1] - omega[0]
    phase = np.exp(1j * np.outer(w, omega))
    H = _hermite_table(w, K_out)
    fact = np.array([math.factorial(k) for k in range(K_out + 1)], dtype=float)
    M = ((H * dens) @ phase) / m0  # (K+1, n_omega): int F phi He_k e^{i omega w} / int F phi
    # fold the per-site factor e^{-i omega a} in before the N-th power; the
    # cancellations then happen at single-site size
    h = _series_mul((M / fact[:, None]).T,
                    np.array([(-1j * omega) ** j / fact[j] for j in range(K_out + 1)]).T, K_out)
    integrand = _series_pow(h, N, K_out)
    J = np.real(integrand.sum(axis=0)) * d_omega / (2.0 * math.pi)
    # normalization: W = N J / rho(0) times (int F phi)^N
    if J[0] <= 0:
        raise NonIntegrableError("fluctuation integral is not positive")
    logJ = _series_log(J, K_out)
    logm0 = math.log(m0 * W_STEP) + shift - 0.5 * math.log(2.0 * math.pi)
    logJ[0] += N * logm0 + math.log(N) - 0.5 * math.log(N / (2.0 * math.pi))
    return logJ


def _convolve_power(k, N):
    """N-fold self-convolution of the sampled function k via FFT."""
    n = len(k)
    size = 1 << int(math.ceil(math.log2(N * (n - 1) + 1)))
    kf = np.fft.fft(k, size)
    return np.fft.ifft(kf ** N)[: N * (n - 1) + 1]


def log_weight_pointwise(mono, N, a):
    """log E[prod_i F(a + zeta_i)] at (possibly complex) points ``a``.

    Real-space route: the density of sum(z_i) at 0 under the weights
    F(a + z_i) phi(z_i), by FFT convolution on a uniform grid.
    """
    z = _grid()
    n = len(z)
    out = np.empty(np.shape(a), dtype=complex)
    for idx, av in np.ndenumerate(np.asarray(a, dtype=complex)):
        logk = -np.polynomial.polynomial.polyval(av + z, mono) - 0.5 * z * z
        shift = logk.real.max()
        k = np.exp(logk - shift)
        conv = _convolve_power(k, N)
        # sum of N grid points is zero at index N * (n - 1) / 2
        val = conv[N * (n - 1) // 2] * W_STEP ** (N - 1)
        logJ = np.log(val) + N * (shift - 0.5 * math.log(2.0 * math.pi))
        out[idx] = logJ + math.log(N) - 0.5 * math.log(N / (2.0 * math.pi))
    return out


def _log_weight_cauchy(mono, N, K_out, radius=0.5, n_points=64):
    theta = 2.0 * math.pi * np.arange(n_points) / n_points
    a = radius * np.exp(1j * theta)
    vals = log_weight_pointwise(mono, N, a)
    coeffs = np.fft.fft(vals) / n_points
    k = np.arange(K_out + 1)
    return np.real(coeffs[: K_out + 1] / radius ** k)


# ---------------------------------------------------------------------------
# the map


def _one_p_step(V: SingleSitePotential, method: str) -> SingleSitePotential:
    params = V.params
    p = params.p
    N = p ** 3
    K = V.K
    mono = V.monomial()
    if method == "series":
        logW = _log_weight_series(mono, N, K)
    elif method == "cauchy":
        logW = _log_weight_cauchy(mono, N, K)
    else:
        raise ValueError(f"unknown method {method!r}")
    scale = float(p) ** (-params.phi_dim * np.arange(K + 1))
    new_mono = -logW * scale
    if V.is_even():
        new_mono[1::2] = 0.0
    wick = monomial_to_wick_matrix(K, V.sigma2) @ new_mono
    wick[0] = 0.0
    if not np.all(np.isfinite(wick)) or abs(wick[-1]) > OVERFLOW:
        raise TruncationOverflowError(f"top coefficient {wick[-1]!r} beyond threshold")
    return SingleSitePotential(params, tuple(wick), V.sigma2)


def rg_step(V: SingleSitePotential, params: ModelParams | None = None, method: str = "series") -> SingleSitePotential:
    """One L-step of the block-spin map, composed from l p-steps."""
    params = params or V.params
    if params != V.params:
        V = SingleSitePotential(params, V.coeffs)
    out = V
    for _ in range(params.l):
        out = _one_p_step(out, method)
    return out


def gaussian_linearization(params: ModelParams, K: int) -> np.ndarray:
    """Exact Jacobian of rg_step at V = 0 in the Wick basis (Gaussian moments).

    At V = 0 the linear response is V'(psi) = N E[dV(p^-[phi] psi + zeta)]
    with zeta ~ N(0, 1 - 1/N), composed over l p-steps; the constant row is
    dropped.
    """
    p = params.p
    N = p ** 3
    s2 = sigma_u2(params)
    var = 1.0 - 1.0 / N
    mono_step = np.zeros((K + 1, K + 1))
    for k in range(K + 1):
        for j in range(0, k + 1, 2):
            mono_step[k - j, k] += math.comb(k, j) * _double_factorial_odd(j) * var ** (j // 2)
    scale = np.diag(float(p) ** (-params.phi_dim * np.arange(K + 1)))
    step = monomial_to_wick_matrix(K, s2) @ (N * scale @ mono_step) @ wick_to_monomial_matrix(K, s2)
    step[0, :] = 0.0
    out = np.eye(K + 1)
    for _ in range(params.l):
        out = step @ out
    return out


# ---------------------------------------------------------------------------
# fixed point and linearization


def _even_map(vec, params, K, method="series"):
    V = SingleSitePotential.from_even_vector(params, vec, K)
    return rg_step(V, params, method).even_vector()


def coefficient_scales(params: ModelParams, K: int) -> np.ndarray:
    """Gaussian L2 norms sigma_u^k sqrt(k!) of :u^k: for k = 2, 4, ..., K."""
    s = math.sqrt(sigma_u2(params))
    return np.array([s ** k * math.sqrt(math.factorial(k)) for k in range(2, K + 1, 2)])


def even_jacobian(vec, params, K, step=1e-6, method="series"):
    """Central finite-difference Jacobian of the even-sector map.

    ``step`` is measured in units where each :u^k: has unit Gaussian norm, so
    the perturbation of V is of size ``step`` on the fluctuation scale for
    every k.
    """
    vec = np.asarray(vec, dtype=float)
    n = len(vec)
    # cap so that a step never moves V by more than O(1) at the domain edge
    h = np.minimum(step / coefficient_scales(params, K), W_MAX ** -np.arange(2.0, K + 1, 2))
    J = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h[j]
        J[:, j] = (_even_map(vec + e, params, K, method) - _even_map(vec - e, params, K, method)) / (2 * h[j])
    return J


@dataclass
class FixedPointResult:
    potential: SingleSitePotential
    residual_norm: float
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    g_star: float
    eta: float = float("nan")
    iterations: int = 0
    gaussian: bool = False

    def to_dict(self) -> dict:
        return {
            "coeffs": list(self.potential.coeffs),
            "sigma2": self.potential.sigma2,
            "residual_norm": self.residual_norm,
            "eigenvalues": [float(x) for x in self.eigenvalues],
            "g_star": self.g_star,
            "eta": self.eta,
            "iterations": self.iterations,
            "gaussian": self.gaussian,
        }


def one_loop_flow(g: float, mu: float, params: ModelParams) -> tuple[float, float]:
    """Second-order truncation of the map in (g, mu) for l = 1.

    Obtained by Wick-pairing two copies of g :u^4: + mu :u^2: across the
    fluctuation covariance I - J/N of one block.
    """
    if params.l != 1:
        raise ValueError("one_loop_flow is defined for l = 1")
    p = params.p
    N = p ** 3
    Le = float(p) ** params.epsilon
    A = 36.0 * Le * (1.0 - p ** -3.0)
    q = float(p) ** (-2.0 * params.phi_dim)
    g_new = Le * g - A * g * g
    mu_new = (float(p) ** (3.0 - 2.0 * params.phi_dim) * mu
              - 12.0 * (N - 1) * q * g * mu
              - _mu_g2(params) * g * g)
    return g_new, mu_new


def one_loop_fixed_point(params: ModelParams) -> tuple[float, float]:
    p = params.p
    N = p ** 3
    g = params.gbar_star
    q = float(p) ** (-2.0 * params.phi_dim)
    lam2 = float(p) ** (3.0 - 2.0 * params.phi_dim)
    mu = -_mu_g2(params) * g * g / (1.0 - lam2 + 12.0 * (N - 1) * q * g)
    return g, mu


def _mu_g2(params: ModelParams) -> float:
    """Coefficient of g^2 in mu': three contractions, plus two contractions re-Wick-ordered."""
    p = params.p
    N = p ** 3
    q = float(p) ** (-2.0 * params.phi_dim)
    return 48.0 * (N - 1) * (N - 2) / N * q + 144.0 * (N - 1) * q * q * sigma_u2(params)


def find_fixed_point(params: ModelParams, K: int = 10, init=None, tol: float = 1e-10,
                     max_iter: int = 50, fd_step: float = 1e-6) -> FixedPointResult:
    """Newton iteration on the even coefficients (c_2, c_4, ..., c_K)."""
    if K < 4 or K % 2:
        raise ValueError("K must be even and >= 4")
    if init is None:
        g0, mu0 = one_loop_fixed_point(params)
        vec = np.zeros(K // 2)
        vec[0], vec[1] = mu0, g0
    else:
        vec = np.asarray(init, dtype=float).copy()
        if vec.shape != (K // 2,):
            raise ValueError(f"init must have {K // 2} entries")
    trajectory = []
    n = len(vec)
    for it in range(1, max_iter + 1):
        try:
            F = _even_map(vec, params, K) - vec
        except (NonIntegrableError, TruncationOverflowError) as exc:
            raise FixedPointError(f"map failed at iteration {it}: {exc}", trajectory) from exc
        res = float(np.max(np.abs(F)))
        trajectory.append((it, vec.tolist(), res))
        if res <= tol:
            break
        J = even_jacobian(vec, params, K, fd_step) - np.eye(n)
        vec = vec - np.linalg.solve(J, F)
        if not np.all(np.isfinite(vec)):
            raise FixedPointError("Newton iterate is not finite", trajectory)
    else:
        raise FixedPointError(f"no convergence in {max_iter} iterations (residual {res:.3e})", trajectory)
    J = even_jacobian(vec, params, K, fd_step)
    evals, evecs = np.linalg.eig(J)
    if np.max(np.abs(evals.imag)) > 1e-8 * np.max(np.abs(evals)):
        raise FixedPointError("complex eigenvalues in the even sector", trajectory)
    order = np.argsort(-evals.real)
    evals, evecs = evals.real[order], evecs.real[:, order]
    V = SingleSitePotential.from_even_vector(params, vec, K)
    gaussian = abs(vec[1]) < 1e-3 * params.gbar_star
    fp = FixedPointResult(V, res, evals, evecs, float(vec[1]), iterations=it, gaussian=gaussian)
    fp.eta = extract_eta(fp, params)
    return fp


def extract_eta(fp: FixedPointResult, params: ModelParams) -> float:
    relevant = [x for x in fp.eigenvalues if x > 1.0]
    if fp.gaussian and relevant:
        # :u^4: is relevant at V = 0 too; the :u^2: direction has the largest eigenvalue
        relevant = [max(relevant)]
    if len(relevant) != 1:
        raise EigenvalueAmbiguityError(
            f"expected one relevant even direction, found {len(relevant)}: {list(fp.eigenvalues)}",
            spectrum=list(fp.eigenvalues))
    lam2 = relevant[0]
    return 2.0 * ((3.0 - 2.0 * params.phi_dim) - math.log(lam2) / math.log(params.L))


def gaussian_fixed_point(params: ModelParams, K: int) -> FixedPointResult:
    V = SingleSitePotential.zero(params, K)
    J = gaussian_linearization(params, K)[2::2, 2::2]
    evals = np.sort(np.linalg.eigvals(J).real)[::-1]
    fp = FixedPointResult(V, 0.0, evals, np.eye(len(evals)), 0.0, gaussian=True)
    fp.eta = extract_eta(fp, params)
    return fp


# ---------------------------------------------------------------------------
# flow classification and critical tuning


@dataclass
class FlowTrajectory:
    couplings: list  # (c_2, c_4) per step
    distances: list
    escape: int  # +1 massive, -1 ordered, 0 none
    escape_step: int | None
    overflow: bool = False

    def to_dict(self) -> dict:
        return {"couplings": self.couplings, "distances": self.distances,
                "escape": self.escape, "escape_step": self.escape_step, "overflow": self.overflow}


def flow_classifier(g: float, mu: float, params: ModelParams, steps: int = 40, K: int = 10,
                    fixed_point: SingleSitePotential | None = None, threshold: float = 0.05) -> FlowTrajectory:
    """Iterate rg_step from g :u^4: + mu :u^2: and watch c_2 leave the fixed point.

    Escape is declared when |c_2 - c_2*| exceeds ``threshold``; a failed step
    (truncation overflow or loss of integrability) counts as escape in the
    direction of the last c_2 deviation.
    """
    ref = fixed_point.array() if fixed_point is not None else np.zeros(K + 1)
    V = SingleSitePotential.from_couplings(params, g, mu, K)
    couplings = [(V.mu, V.g)]
    distances = [float(np.max(np.abs(V.array() - ref)))]
    for n in range(1, steps + 1):
        dev = V.mu - ref[2]
        if abs(dev) > threshold:
            return FlowTrajectory(couplings, distances, 1 if dev > 0 else -1, n - 1)
        try:
            V = rg_step(V, params)
        except (NonIntegrableError, TruncationOverflowError):
            return FlowTrajectory(couplings, distances, 1 if dev > 0 else -1, n, overflow=True)
        couplings.append((V.mu, V.g))
        distances.append(float(np.max(np.abs(V.array() - ref))))
    dev = V.mu - ref[2]
    if abs(dev) > threshold:
        return FlowTrajectory(couplings, distances, 1 if dev > 0 else -1, steps)
    return FlowTrajectory(couplings, distances, 0, None)


@dataclass
class CriticalMass:
    mu: float
    bracket: tuple
    iterations: int

    def to_dict(self) -> dict:
        return {"mu": self.mu, "bracket": list(self.bracket), "iterations": self.iterations}


def tune_mu_critical(g: float, params: ModelParams, K: int = 10, steps: int = 60, tol: float = 1e-15,
                     fixed_point: SingleSitePotential | None = None, max_iter: int = 200) -> CriticalMass:
    """Bisection on mu between ordered (-) and massive (+) escapes."""

    def side(mu):
        tr = flow_classifier(g, mu, params, steps, K, fixed_point)
        return tr.escape

    scale = max(abs(g), 1e-6)
    lo, hi = -scale, scale
    for _ in range(60):
        if side(lo) < 0:
            break
        lo *= 2.0
    else:
        raise FixedPointError("no ordered escape found below the search window")
    for _ in range(60):
        if side(hi) > 0:
            break
        hi *= 2.0
    else:
        raise FixedPointError("no massive escape found above the search window")
    it = 0
    while hi - lo > tol and it < max_iter:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        s = side(mid)
        if s > 0:
            hi = mid
        elif s < 0:
            lo = mid
        else:
            # trajectory stayed put for all steps: mid is within resolution
            lo = hi = mid
            break
        it += 1
    return CriticalMass(0.5 * (lo + hi), (lo, hi), it)
