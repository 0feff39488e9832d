"""Markov-chain sampling of the interacting measure, estimators and oracles."""

from .backend import ACTIVE as BACKEND
from .composite import CompositeNormalization, calibrate_composite, composite_from_raw, composite_observable
from .estimators import EstimateWithError, combine_chains, connected_four_point, gelman_rubin, jackknife
from .oracle import OracleResult, TransferOracle, brute_force_oracle
from .sampler import ChainResult, MCMCConfig, NumericalError, ObservableSet, Sampler, run_chains

__all__ = [
    "BACKEND", "ChainResult", "CompositeNormalization", "EstimateWithError", "MCMCConfig", "NumericalError",
    "ObservableSet", "OracleResult", "Sampler", "TransferOracle", "brute_force_oracle", "calibrate_composite",
    "combine_chains", "composite_from_raw", "composite_observable", "connected_four_point", "gelman_rubin",
    "jackknife", "run_chains",
]
