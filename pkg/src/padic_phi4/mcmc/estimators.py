"""Error analysis for correlated Markov-chain output.

Integrated autocorrelation times come from a binning analysis: the variance
of bin means is tracked as the bin length doubles, and the estimate is read
at the largest bin length that still leaves ``MIN_BINS`` bins.  Nonlinear
functions of several means (connected moments, ratios) use a blocked
jackknife across all chains.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

MIN_BINS = 32
MIN_EFFECTIVE = 10.0


@dataclass(frozen=True)
class EstimateWithError:
    mean: float
    stderr: float
    autocorrelation_time: float = 0.5
    n_effective: float = float("nan")
    reliable: bool = True

    def z_score(self, target: float = 0.0) -> float:
        return (self.mean - target) / self.stderr if self.stderr > 0 else math.inf

    def to_dict(self) -> dict:
        return asdict(self)


def binning_curve(x: np.ndarray) -> list:
    """(bin length, stderr of the mean) while at least MIN_BINS bins remain."""
    x = np.asarray(x, dtype=float)
    out = []
    b = 1
    while len(x) // b >= MIN_BINS:
        nb = len(x) // b
        means = x[: nb * b].reshape(nb, b).mean(axis=1)
        out.append((b, float(means.std(ddof=1) / math.sqrt(nb))))
        b *= 2
    return out


def tau_int(x: np.ndarray) -> float:
    """Integrated autocorrelation time from the binning plateau (0.5 for white noise)."""
    curve = binning_curve(x)
    if not curve or curve[0][1] == 0.0:
        return 0.5
    naive = curve[0][1]
    best = max(se for _, se in curve)
    return 0.5 * (best / naive) ** 2


def estimate_series(x: np.ndarray) -> EstimateWithError:
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 2:
        return EstimateWithError(float(x.mean()) if n else float("nan"), float("inf"), float("nan"), float(n), False)
    tau = tau_int(x)
    var = float(x.var(ddof=1))
    n_eff = n / (2.0 * tau) if tau > 0 else float(n)
    se = math.sqrt(var / n_eff) if var > 0 else 0.0
    return EstimateWithError(float(x.mean()), se, tau, n_eff, n_eff >= MIN_EFFECTIVE)


def combine_chains(series: list) -> EstimateWithError:
    """Equal-weight combination of per-chain estimates (chains are independent)."""
    ests = [estimate_series(x) for x in series]
    k = len(ests)
    mean = sum(e.mean for e in ests) / k
    se = math.sqrt(sum(e.stderr ** 2 for e in ests)) / k
    n_eff = sum(e.n_effective for e in ests)
    tau = float(np.mean([e.autocorrelation_time for e in ests]))
    return EstimateWithError(mean, se, tau, n_eff, n_eff >= MIN_EFFECTIVE and all(math.isfinite(e.stderr) for e in ests))


def gelman_rubin(series: list) -> float:
    """Potential scale reduction R-hat from equal-length chains."""
    m = len(series)
    if m < 2:
        return float("nan")
    n = min(len(x) for x in series)
    xs = np.array([np.asarray(x[:n], dtype=float) for x in series])
    W = xs.var(axis=1, ddof=1).mean()
    B = n * xs.mean(axis=1).var(ddof=1)
    if W == 0:
        return float("nan")
    var_hat = (n - 1) / n * W + B / n
    return float(math.sqrt(var_hat / W))


def block_means(series: list, n_blocks: int) -> np.ndarray:
    """Per-block column means, blocks taken within each chain (shape (blocks, n_obs))."""
    rows = []
    for x in series:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        b = len(x) // n_blocks
        if b < 1:
            raise ValueError("chain shorter than the number of blocks")
        rows.append(x[: b * n_blocks].reshape(n_blocks, b, -1).mean(axis=1))
    return np.concatenate(rows)


def jackknife(func, series: list, n_blocks: int = 32) -> EstimateWithError:
    """Blocked jackknife for ``func(column means)`` pooled over chains."""
    blocks = block_means(series, n_blocks)
    nb = len(blocks)
    total = blocks.sum(axis=0)
    full = float(func(total / nb))
    loo = np.array([func((total - blocks[i]) / (nb - 1)) for i in range(nb)], dtype=float)
    se = math.sqrt((nb - 1) / nb * np.sum((loo - loo.mean()) ** 2))
    bias_corrected = nb * full - (nb - 1) * loo.mean()
    return EstimateWithError(float(bias_corrected), float(se), float("nan"), float(nb), nb >= MIN_EFFECTIVE)


def moment_columns(samples: np.ndarray, columns: list) -> np.ndarray:
    """Product of the given sample columns, row by row."""
    out = np.ones(len(samples))
    for c in columns:
        out = out * samples[:, c]
    return out


def connected_four_point(series: list, n_blocks: int = 32) -> tuple[EstimateWithError, EstimateWithError]:
    """<X^4> - 3<X^2>^2 and the literal <X^4> - 3<X^2> for a scalar series per chain."""
    stacked = [np.column_stack([np.asarray(x) ** 2, np.asarray(x) ** 4]) for x in series]
    conn = jackknife(lambda m: m[1] - 3.0 * m[0] ** 2, stacked, n_blocks)
    literal = jackknife(lambda m: m[1] - 3.0 * m[0], stacked, n_blocks)
    return conn, literal
