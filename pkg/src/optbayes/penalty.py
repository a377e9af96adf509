"""Quadratic penalties between model and market call surfaces, and the choice of
their scale lambda."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

from .market_data import DataError, NormalizedSurface, OptionGrid, SurfaceObservation, normalize
from .models.density import path_log_densities
from .models.families import ModelFamily, ModelInstance
from .models.pricing import model_surface

logger = logging.getLogger(__name__)

# normalized-price units: about one bid-ask spread on an index option
DEFAULT_NAIVE_WEIGHT = 1e-3


class PenaltyMode(str, Enum):
    STRUCTURED = "Structured"
    NAIVE = "Naive"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class PenaltyConfig:
    lam: float = 1.0
    mode: PenaltyMode = PenaltyMode.STRUCTURED
    weights: float | tuple[float, ...] = DEFAULT_NAIVE_WEIGHT

    def __post_init__(self):
        object.__setattr__(self, "mode", PenaltyMode(self.mode))
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if np.any(~(w > 0)):
            raise ValueError("naive-penalty weights must be positive")

    def with_lambda(self, lam: float) -> PenaltyConfig:
        return PenaltyConfig(lam, self.mode, self.weights)


def _slopes(z: np.ndarray, k: np.ndarray) -> np.ndarray:
    return np.diff(z, axis=-1) / np.diff(k)


def strike_slopes(s: NormalizedSurface) -> np.ndarray:
    """Slopes of z on (k_{j-1}, k_j], one row per expiry; zero beyond the last strike."""
    out = _slopes(s.z, s.k)
    if np.any(out > 0.0):
        raise DataError(f"call prices increase in strike (max slope {out.max():.3g})")
    return out


def expiry_weights(taus: np.ndarray) -> np.ndarray:
    """Quadrature weights over [0, T]: the τ_1 integrand on [0, τ_1], then trapezia."""
    taus = np.asarray(taus, dtype=float)
    w = np.zeros_like(taus)
    w[0] = taus[0]
    gaps = np.diff(taus)
    w[:-1] += 0.5 * gaps
    w[1:] += 0.5 * gaps
    return w


def structured_from_slopes(model_slopes: np.ndarray, market_slopes: np.ndarray, k: np.ndarray,
                           taus: np.ndarray) -> np.ndarray:
    """Penalty at lambda = 1 from slope arrays; leading axes of ``model_slopes``
    broadcast, so a stack of model surfaces is handled in one call."""
    inner = ((model_slopes - market_slopes) ** 2 * np.diff(k)).sum(axis=-1)
    return inner @ expiry_weights(taus)


def penalty_structured(model: NormalizedSurface, market: NormalizedSurface, cfg: PenaltyConfig = PenaltyConfig()) -> float:
    """lam times the double integral over expiry and moneyness of the squared
    difference of strike derivatives, for piecewise-linear surfaces in strike."""
    if model.grid != market.grid:
        raise ValueError("model and market surfaces are on different grids")
    q = structured_from_slopes(strike_slopes(model), strike_slopes(market), model.k, model.grid.taus)
    return cfg.lam * float(q)


def penalty_naive(model_prices, market_prices, cfg: PenaltyConfig = PenaltyConfig(mode=PenaltyMode.NAIVE)) -> float:
    """Sum of squared price errors scaled by per-instrument weights."""
    y = np.ravel(np.asarray(market_prices, dtype=float))
    z = np.ravel(np.asarray(model_prices, dtype=float))
    if y.shape != z.shape:
        raise ValueError(f"length mismatch: {z.size} model vs {y.size} market prices")
    w = np.broadcast_to(np.asarray(cfg.weights, dtype=float), y.shape)
    return float(np.sum(((y - z) / w) ** 2))


def penalty(model: NormalizedSurface, market: NormalizedSurface, cfg: PenaltyConfig) -> float:
    """Penalty in the configured mode, lambda included. Naive mode compares the
    quoted normalized prices (the zero-strike column is excluded)."""
    if cfg.mode is PenaltyMode.STRUCTURED:
        return penalty_structured(model, market, cfg)
    if model.grid != market.grid:
        raise ValueError("model and market surfaces are on different grids")
    return cfg.lam * penalty_naive(model.z[:, 1:], market.z[:, 1:], cfg)


@lru_cache(maxsize=200_000)
def model_slopes(m: ModelInstance, rate: float, grid: OptionGrid) -> np.ndarray:
    """Strike slopes of an instance's normalized surface (cached, read-only)."""
    out = strike_slopes(model_surface(m, rate, grid))
    out.setflags(write=False)
    return out


def market_slopes(series: list[SurfaceObservation]) -> np.ndarray:
    """Strike slopes of every normalized market surface, shape (days, M, N)."""
    return np.stack([strike_slopes(normalize(obs)) for obs in series])


def ledger_columns(m: ModelInstance, series: list[SurfaceObservation], h: float,
                   slopes: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Per-day transition log-densities and lambda = 1 structured penalties of one
    instance over consecutive observations (days 1..n-1)."""
    logp = path_log_densities(m, [o.log_price for o in series], [o.rate for o in series], h)
    if slopes is None:
        slopes = market_slopes(series)
    grid = series[0].grid
    k, taus = np.concatenate(([0.0], grid.ks)), grid.taus
    q = np.array([structured_from_slopes(model_slopes(m, obs.rate, grid), slopes[i], k, taus)
                  for i, obs in enumerate(series) if i > 0])
    return logp, q


def calibrate_lambda(training: list[SurfaceObservation], universe: list[ModelInstance], *,
                     h: float, variant: str = "universe") -> float:
    """Scale lambda so that mean |log p| equals lambda times mean Q(lambda = 1).

    Averages run over the instances and consecutive training days. ``variant`` is
    "universe" (every instance) or "black_scholes" (Black-Scholes instances only).
    """
    if len(training) < 2:
        raise ValueError("training window needs at least two observations")
    if variant == "black_scholes":
        universe = [m for m in universe if m.family is ModelFamily.BLACK_SCHOLES]
    elif variant != "universe":
        raise ValueError(f"unknown lambda calibration variant {variant!r}")
    if not universe:
        raise ValueError("no instances to calibrate lambda on")
    slopes = market_slopes(training)
    abs_logp, q = 0.0, 0.0
    for m in universe:
        lp, qq = ledger_columns(m, training, h, slopes)
        abs_logp += np.abs(lp).mean()
        q += qq.mean()
    if q <= 0.0:
        raise ValueError("degenerate training set: every model fits the surfaces exactly")
    lam = lambda_ratio(abs_logp, q)
    logger.info("calibrated lambda = %.6g over %d instances and %d days", lam, len(universe), len(training) - 1)
    return lam


def lambda_ratio(mean_abs_logp: float, mean_q: float) -> float:
    """Lambda equalizing the two mean contributions."""
    if mean_q <= 0.0:
        raise ValueError("mean penalty must be positive")
    return float(mean_abs_logp / mean_q)
