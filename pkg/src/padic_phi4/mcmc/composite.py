"""The renormalized composite field N[phi^2] and its calibration."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..lattice import FieldConfiguration, LatticeGeometry, pairing_weights
from ..testfunctions import TestFunction
from .estimators import EstimateWithError, jackknife


@dataclass(frozen=True)
class CompositeNormalization:
    Z2: float
    Y0: float
    Y2: float
    eta: float
    Y0_stderr: float = 0.0
    Y2_stderr: float = 0.0

    def __post_init__(self):
        if not self.Z2 > 0:
            raise ValueError("Z2 must be > 0")
        if not self.Y2 > 0:
            raise ValueError("Y2 must be > 0")

    @classmethod
    def from_eta(cls, eta: float, L: int, Y0: float = 0.0, Y2: float = 1.0, **kw) -> "CompositeNormalization":
        return cls(float(L) ** (-0.5 * eta), Y0, Y2, eta, **kw)

    def to_dict(self) -> dict:
        return asdict(self)


def _prefactors(geometry: LatticeGeometry, norm: CompositeNormalization) -> tuple[float, float]:
    """(Z2^r, L^(-2 r [phi]))."""
    p = geometry.params
    return norm.Z2 ** geometry.r, float(p.L) ** (-2.0 * geometry.r * p.phi_dim)


def composite_observable(field: FieldConfiguration, j: TestFunction, norm: CompositeNormalization) -> float:
    """Z2^r sum_cells L^(3r) (Y2 :v^2: - Y0 L^(-2r[phi])) j(cell)."""
    g = field.geometry
    w = pairing_weights(j, g)  # L^(3r) j(cell)
    c0 = g.kernel().c0
    z2r, scale = _prefactors(g, norm)
    wick = field.values * field.values - c0
    return float(z2r * (norm.Y2 * (w @ wick) - norm.Y0 * scale * w.sum()))


def composite_from_raw(raw, integral_j: float, geometry: LatticeGeometry, norm: CompositeNormalization):
    """N[phi^2](j) from recorded raw sums w_j . :v^2: and int j."""
    z2r, scale = _prefactors(geometry, norm)
    return z2r * (norm.Y2 * np.asarray(raw) - norm.Y0 * scale * integral_j)


def calibrate_composite(raw_series: list, integral_one: float, geometry: LatticeGeometry, eta: float,
                        n_blocks: int = 32) -> CompositeNormalization:
    """Y0 zeroes <N[phi^2](1)>, then Y2 makes <N[phi^2](1)^2> = 1.

    ``raw_series`` holds, per chain, the raw sums for j = 1_{Z_p^3}.
    """
    L = geometry.params.L
    z2r, scale = _prefactors(geometry, CompositeNormalization.from_eta(eta, L))
    stacked = [np.column_stack([np.asarray(x), np.asarray(x) ** 2]) for x in raw_series]

    def y2_of(m):
        var = m[1] - m[0] ** 2
        return 1.0 / (z2r * math.sqrt(var)) if var > 0 else float("nan")

    def y0_of(m):
        return y2_of(m) * m[0] / (scale * integral_one)

    Y2 = jackknife(y2_of, stacked, n_blocks)
    Y0 = jackknife(y0_of, stacked, n_blocks)
    if not (math.isfinite(Y2.mean) and Y2.mean > 0):
        raise ValueError("degenerate composite variance; cannot calibrate Y2")
    return CompositeNormalization.from_eta(eta, L, Y0=Y0.mean, Y2=Y2.mean,
                                           Y0_stderr=Y0.stderr, Y2_stderr=Y2.stderr)


def gaussian_second_moment(geometry: LatticeGeometry, j: TestFunction) -> float:
    """<(int :phi^2: j)^2> under the Gaussian measure: 2 sum w_x w_y C(x - y)^2."""
    from ..lattice import gram_of_window

    w = pairing_weights(j, geometry)
    G = gram_of_window(geometry)
    return float(2.0 * w @ (G * G) @ w)
