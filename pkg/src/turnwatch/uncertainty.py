"""Kernel-density uncertainty of multi-sample prediction ensembles.

Per valid step, a Gaussian KDE is fit over the N sampled interaction-class
probabilities and evaluated at their mean; the per-step log-likelihoods are
affinely rescaled to [0, 1] and the uncertainty is one minus their average.
The rescaling population is the evaluation batch, so scores are comparable
across sequences scored together.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataError

_SQRT_2PI = math.sqrt(2.0 * math.pi)

BANDWIDTH_FLOOR = 1e-3


@dataclass
class PredictionEnsemble:
    """N sampled frame-wise probability sequences for one parsed sequence."""

    samples: np.ndarray     # (N, T, 2) row-stochastic
    valid_mask: np.ndarray  # (T,) bool

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        self.valid_mask = np.asarray(self.valid_mask, dtype=bool)
        if self.samples.ndim != 3 or self.samples.shape[2] != 2:
            raise DataError(f"expected (N, T, 2) samples, got {self.samples.shape}")
        if self.samples.shape[0] < 1:
            raise DataError("ensemble needs at least one sample")
        if self.samples.shape[1] != self.valid_mask.shape[0]:
            raise DataError("valid_mask length does not match sample steps")

    @property
    def interaction_probs(self) -> np.ndarray:
        """(N, T) probabilities of the positive class."""
        return self.samples[:, :, 1]


@dataclass
class UncertaintyScore:
    gamma: float
    per_step_loglik: np.ndarray  # (T,) raw log-density at the mean, NaN at padding


def kde_density(samples: np.ndarray, h: float, query) -> np.ndarray | float:
    """Gaussian-kernel density estimate at the query point(s)."""
    if h <= 0:
        raise ConfigurationError(f"bandwidth must be positive, got {h}")
    samples = np.asarray(samples, dtype=np.float64)
    query_arr = np.atleast_1d(np.asarray(query, dtype=np.float64))
    u = (query_arr[:, None] - samples[None, :]) / h
    dens = np.exp(-0.5 * u * u).sum(axis=1) / (samples.size * h * _SQRT_2PI)
    return float(dens[0]) if np.isscalar(query) or np.asarray(query).ndim == 0 else dens


def silverman_bandwidth(samples: np.ndarray, floor: float = BANDWIDTH_FLOOR) -> float:
    """1.06 * sigma * N^(-1/5), floored for degenerate spreads."""
    samples = np.asarray(samples, dtype=np.float64)
    sigma = float(samples.std())
    return max(1.06 * sigma * samples.size ** (-0.2), floor)


def step_logliks(ens: PredictionEnsemble, h_rule=silverman_bandwidth) -> np.ndarray:
    """(T,) log KDE density of the mean prediction per step, NaN at padding."""
    probs = ens.interaction_probs
    out = np.full(probs.shape[1], np.nan)
    for t in np.nonzero(ens.valid_mask)[0]:
        column = probs[:, t]
        h = h_rule(column)
        out[t] = math.log(max(kde_density(column, h, float(column.mean())), 1e-300))
    return out


def _minmax_omega(population: np.ndarray):
    lo, hi = float(population.min()), float(population.max())
    if hi - lo < 1e-12:
        return lambda v: np.ones_like(np.asarray(v, dtype=np.float64))
    return lambda v: np.clip((np.asarray(v, dtype=np.float64) - lo) / (hi - lo), 0.0, 1.0)


def uncertainty_scores(
    ensembles: list[PredictionEnsemble], h_rule=silverman_bandwidth, omega_rule=None
) -> list[UncertaintyScore]:
    """Score a batch of ensembles with a shared log-likelihood normalization.

    omega_rule maps the pooled per-step log-likelihoods to a scaling function;
    the default is affine min-max onto [0, 1].
    """
    if not ensembles:
        return []
    logliks = []
    for ens in ensembles:
        if not ens.valid_mask.any():
            raise DataError("ensemble has no valid steps")
        logliks.append(step_logliks(ens, h_rule))
    population = np.concatenate([ll[np.isfinite(ll)] for ll in logliks])
    omega = (omega_rule or _minmax_omega)(population)
    scores = []
    for ens, ll in zip(ensembles, logliks):
        valid = ll[np.isfinite(ll)]
        gamma = float(np.clip(1.0 - omega(valid).mean(), 0.0, 1.0))
        scores.append(UncertaintyScore(gamma, ll))
    return scores


def uncertainty(
    ens: PredictionEnsemble, h_rule=silverman_bandwidth, omega_rule=None
) -> UncertaintyScore:
    """Single-sequence convenience wrapper; the normalization population is
    the sequence's own valid steps."""
    return uncertainty_scores([ens], h_rule, omega_rule)[0]
