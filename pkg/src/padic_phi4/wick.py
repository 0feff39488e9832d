"""Wick powers and the phi^4 interaction V_{r,s} on lattice fields."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .covariance import CovarianceKernel
from .lattice import FieldConfiguration, sigma_u2
from .padic import ModelParams


@dataclass(frozen=True)
class Couplings:
    g: float
    mu: float = 0.0

    def __post_init__(self):
        # g = 0 is kept as the Gaussian limit used by the oracles
        if not self.g >= 0.0:
            raise ValueError(f"g must be >= 0, got {self.g}")


@dataclass(frozen=True)
class WickContext:
    params: ModelParams
    r: int

    @property
    def c0(self) -> float:
        return CovarianceKernel(self.params, self.r).c0

    @property
    def quartic_factor(self) -> float:
        """L^(-(3 - 4[phi]) r) = L^(-eps r)."""
        return float(self.params.L) ** (-self.params.epsilon * self.r)

    @property
    def quadratic_factor(self) -> float:
        """L^(-(3 - 2[phi]) r) = L^(-(3 + eps) r / 2)."""
        return float(self.params.L) ** (-(3.0 + self.params.epsilon) * self.r / 2.0)


def wick2(v, ctx: WickContext):
    return np.square(v) - ctx.c0


def wick4(v, ctx: WickContext):
    c0 = ctx.c0
    v2 = np.square(v)
    return v2 * v2 - 6.0 * c0 * v2 + 3.0 * c0 * c0


def cell_integrand(v, couplings: Couplings, ctx: WickContext):
    """Integrand of V_{r,s} at one cell, before the volume factor."""
    return (ctx.quartic_factor * couplings.g * wick4(v, ctx)
            + ctx.quadratic_factor * couplings.mu * wick2(v, ctx))


def potential(field: FieldConfiguration, couplings: Couplings, ctx: WickContext) -> float:
    g = field.geometry
    if g.r != ctx.r or g.params != ctx.params:
        raise ValueError("Wick context does not match the field's lattice")
    vol = float(g.params.L) ** (3 * g.r)
    # np.sum reduces pairwise in a fixed order, so the result is bit-stable
    return float(vol * np.sum(cell_integrand(field.values, couplings, ctx)))


def potential_lower_bound(cell_count: int, couplings: Couplings, ctx: WickContext) -> float:
    """cell_count * L^(3r) * min_v of the one-cell integrand (closed form in v^2)."""
    a = ctx.quartic_factor * couplings.g
    b = ctx.quadratic_factor * couplings.mu
    c0 = ctx.c0
    # integrand = a x^2 + (b - 6 a c0) x + const with x = v^2 >= 0
    lin = b - 6.0 * a * c0
    const = 3.0 * a * c0 * c0 - b * c0
    if a > 0:
        x = max(0.0, -lin / (2.0 * a))
    else:
        x = 0.0 if lin >= 0 else np.inf
    vmin = a * x * x + lin * x + const
    vol = float(ctx.params.L) ** (3 * ctx.r)
    return cell_count * vol * vmin


# u-unit form: per cell g :u^4: + mu :u^2: with Wick order w.r.t. sigma_u^2


def monomial_coefficients(g: float, mu: float, sigma2: float) -> tuple[float, float, float]:
    """(a4, a2, a0) with g :u^4: + mu :u^2: = a4 u^4 + a2 u^2 + a0."""
    return g, mu - 6.0 * g * sigma2, 3.0 * g * sigma2 * sigma2 - mu * sigma2


def cell_potential_u(u, couplings: Couplings, params: ModelParams):
    s2 = sigma_u2(params)
    u2 = np.square(u)
    return couplings.g * (u2 * u2 - 6.0 * s2 * u2 + 3.0 * s2 * s2) + couplings.mu * (u2 - s2)
