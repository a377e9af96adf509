"""Posterior-weighted decision products: predictive density, price distribution
and hedge."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import Posterior
from .models.density import DensityTable, increment_logpdf, transition_density_table
from .models.families import ModelInstance


@dataclass(frozen=True, eq=False)
class PriceDistribution:
    """Discrete distribution of per-instance values under posterior weights."""

    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if v.shape != w.shape:
            raise ValueError(f"{v.size} values but {w.size} weights")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be non-negative and sum to 1")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "weights", w)

    @property
    def mean(self) -> float:
        return float(self.weights @ self.values)

    @property
    def std(self) -> float:
        return float(np.sqrt(max(self.weights @ (self.values - self.mean) ** 2, 0.0)))

    def quantile(self, q: float) -> float:
        """Smallest value whose weighted CDF reaches q."""
        if not 0.0 <= q <= 1.0:
            raise ValueError("quantile level must lie in [0, 1]")
        order = np.argsort(self.values, kind="stable")
        cdf = np.cumsum(self.weights[order])
        i = min(int(np.searchsorted(cdf, q, side="left")), cdf.size - 1)
        if q == 0.0:
            i = int(np.argmax(self.weights[order] > 0))
        return float(self.values[order][i])


def _check(post: Posterior, n: int) -> None:
    if post.weights.size != n:
        raise ValueError(f"posterior has {post.weights.size} instances, got {n} values")


def mixture_price(post: Posterior, prices) -> PriceDistribution:
    """Price distribution whose mean is the posterior-weighted price."""
    prices = np.asarray(prices, dtype=float)
    _check(post, prices.size)
    return PriceDistribution(prices, post.weights)


def mixture_delta(post: Posterior, deltas):
    """Posterior-weighted hedge; ``deltas`` may carry trailing instrument axes."""
    deltas = np.asarray(deltas, dtype=float)
    _check(post, deltas.shape[0])
    out = np.tensordot(post.weights, deltas, axes=1)
    return out if out.ndim else float(out)


@dataclass(frozen=True, eq=False)
class PredictiveDensity:
    """Mixture of one-step transition densities of X_{t+h} given X_t = x_t."""

    weights: np.ndarray
    instances: tuple[ModelInstance, ...]
    vstates: tuple[float | None, ...]
    x_t: float
    h: float
    rate: float

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for w, m, v in zip(self.weights, self.instances, self.vstates):
            if w > 0:
                out += w * np.exp(increment_logpdf(m, x - self.x_t, self.h, self.rate, v))
        return out

    def mean(self) -> float:
        """Mixture mean from each component's tabulated law."""
        return float(sum(w * (self.x_t + t.mean()) for w, t in zip(self.weights, self._tables()) if w > 0))

    def _tables(self) -> list[DensityTable]:
        return [transition_density_table(m, self.h, self.rate, v) for m, v in zip(self.instances, self.vstates)]

    def table(self, n_points: int = 4096) -> DensityTable:
        """Cell-average tabulation on a common grid covering every component,
        obtained by differencing each component's distribution function."""
        tables = [t for w, t in zip(self.weights, self._tables()) if w > 0]
        ws = [w for w in self.weights if w > 0]
        lo = min(t.x[0] - 0.5 * t.dx for t in tables)
        hi = max(t.x[-1] + 0.5 * t.dx for t in tables)
        edges = np.linspace(lo, hi, n_points + 1)
        mass = np.zeros(n_points)
        for w, t in zip(ws, tables):
            own = np.concatenate(([t.x[0] - 0.5 * t.dx], t.x + 0.5 * t.dx))
            cum = np.concatenate(([0.0], np.cumsum(t.pdf * t.dx)))
            mass += w * np.diff(np.interp(edges, own, cum))
        return DensityTable(self.x_t + 0.5 * (edges[:-1] + edges[1:]), mass / (edges[1] - edges[0]))


def predictive_density(post: Posterior, universe: list[ModelInstance], x_t: float, vstates=None,
                       h: float = 1 / 252, rate: float = 0.0) -> PredictiveDensity:
    """Posterior mixture of transition densities from the current log-price.
    ``vstates`` optionally overrides each stochastic-vol instance's frozen level."""
    _check(post, len(universe))
    vstates = tuple(vstates) if vstates is not None else (None,) * len(universe)
    if len(vstates) != len(universe):
        raise ValueError("one volatility state per instance is required")
    return PredictiveDensity(post.weights, tuple(universe), vstates, float(x_t), h, rate)
