"""Discounted log-likelihood accumulation over a fixed model universe and the
resulting posterior weights."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy.special import logsumexp

from .market_data import TRADING_DAY, SurfaceObservation, normalize
from .models.density import LOG_DENSITY_FLOOR, path_log_densities, transition_log_density
from .models.families import ModelFamily, ModelInstance
from .models.pricing import model_surface
from .penalty import (DEFAULT_NAIVE_WEIGHT, PenaltyConfig, PenaltyMode, model_slopes, penalty,
                      strike_slopes, structured_from_slopes)

logger = logging.getLogger(__name__)


class InstanceError(RuntimeError):
    """A model-zoo or penalty failure, tagged with the instance that raised it."""

    def __init__(self, instance: ModelInstance, cause: Exception):
        super().__init__(f"{instance}: {type(cause).__name__}: {cause}")
        self.instance = instance
        self.cause = cause


class Mode(str, Enum):
    MOVES_ONLY = "MovesOnly"
    OPTIONS_ONLY = "OptionsOnly"
    COMBINED = "Combined"

    def __str__(self) -> str:
        return self.value

    @property
    def uses_moves(self) -> bool:
        return self is not Mode.OPTIONS_ONLY

    @property
    def uses_options(self) -> bool:
        return self is not Mode.MOVES_ONLY


@dataclass(frozen=True)
class EngineConfig:
    beta: float = 0.99
    h: float = TRADING_DAY
    lam: float = 1.0
    mode: Mode = Mode.COMBINED
    penalty_mode: PenaltyMode = PenaltyMode.STRUCTURED
    naive_weight: float = DEFAULT_NAIVE_WEIGHT
    floor: float = LOG_DENSITY_FLOOR
    # give every family equal prior mass instead of every instance
    family_prior: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "penalty_mode", PenaltyMode(self.penalty_mode))
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if not self.h > 0:
            raise ValueError("h must be positive")

    @property
    def penalty(self) -> PenaltyConfig:
        return PenaltyConfig(self.lam, self.penalty_mode, self.naive_weight)


@dataclass(frozen=True, eq=False)
class LikelihoodState:
    ell: np.ndarray
    t: int
    config: EngineConfig

    @classmethod
    def initial(cls, n: int, config: EngineConfig) -> LikelihoodState:
        return cls(np.zeros(n), 0, config)


@dataclass(frozen=True, eq=False)
class Posterior:
    weights: np.ndarray
    families: tuple[ModelFamily, ...] = field(repr=False)

    @property
    def by_family(self) -> dict[ModelFamily, float]:
        """Summed weights per family present in the universe, in enum order."""
        fam = np.array([f.value for f in self.families])
        return {f: float(self.weights[fam == f.value].sum()) for f in ModelFamily if f in self.families}


def log_prior(universe: list[ModelInstance], family_prior: bool) -> np.ndarray:
    """Log prior weights up to a constant: flat over instances, or flat over families."""
    if not family_prior:
        return np.zeros(len(universe))
    counts: dict[ModelFamily, int] = {}
    for m in universe:
        counts[m.family] = counts.get(m.family, 0) + 1
    return -np.log([counts[m.family] for m in universe])


def posterior(state: LikelihoodState, universe: list[ModelInstance]) -> Posterior:
    """Softmax of the log-likelihoods (max-subtracted via log-sum-exp)."""
    if len(universe) != state.ell.size:
        raise ValueError("universe does not match the likelihood state")
    a = state.ell + log_prior(universe, state.config.family_prior)
    w = np.exp(a - logsumexp(a))
    w /= w.sum()
    return Posterior(w, tuple(m.family for m in universe))


def increments(universe: list[ModelInstance], prev: SurfaceObservation, curr: SurfaceObservation,
               config: EngineConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-instance (log p, lambda Q) for one day; terms unused by the mode are zero."""
    n = len(universe)
    logp, q = np.zeros(n), np.zeros(n)
    market = normalize(curr) if config.mode.uses_options else None
    for i, m in enumerate(universe):
        try:
            if config.mode.uses_moves:
                logp[i] = transition_log_density(m, None, prev.log_price, curr.log_price, config.h, prev.rate,
                                                 config.floor)
            if config.mode.uses_options:
                q[i] = penalty(model_surface(m, curr.rate, curr.grid), market, config.penalty)
        except Exception as exc:
            raise InstanceError(m, exc) from exc
    return logp, q


def step(state: LikelihoodState, prev: SurfaceObservation, curr: SurfaceObservation,
         universe: list[ModelInstance]) -> LikelihoodState:
    """One update ell <- beta ell + log p - lambda Q."""
    if len(universe) != state.ell.size:
        raise ValueError("universe does not match the likelihood state")
    logp, q = increments(universe, prev, curr, state.config)
    return LikelihoodState(state.config.beta * state.ell + logp - q, state.t + 1, state.config)


@dataclass(frozen=True, eq=False)
class RunResult:
    """Log-likelihood paths, shape (days, instances); row 0 is the zero start."""

    dates: tuple
    ell: np.ndarray
    logp: np.ndarray
    q: np.ndarray
    config: EngineConfig

    def posterior(self, t: int, universe: list[ModelInstance]) -> Posterior:
        return posterior(LikelihoodState(self.ell[t], t, self.config), universe)

    def weights(self, universe: list[ModelInstance]) -> np.ndarray:
        return np.stack([self.posterior(t, universe).weights for t in range(len(self.dates))])


def move_matrix(universe: list[ModelInstance], series: list[SurfaceObservation], h: float,
                floor: float = LOG_DENSITY_FLOOR) -> np.ndarray:
    """log p for every instance and day, shape (days - 1, instances)."""
    x = [o.log_price for o in series]
    r = [o.rate for o in series]
    out = np.empty((len(series) - 1, len(universe)))
    for i, m in enumerate(universe):
        try:
            out[:, i] = path_log_densities(m, x, r, h, floor)
        except Exception as exc:
            raise InstanceError(m, exc) from exc
    return out


def penalty_matrix(universe: list[ModelInstance], series: list[SurfaceObservation], cfg: PenaltyConfig) -> np.ndarray:
    """lambda Q for every instance and day after the first, shape (days - 1, instances)."""
    out = np.empty((len(series) - 1, len(universe)))
    grid = series[0].grid
    k, taus = np.concatenate(([0.0], grid.ks)), grid.taus
    stacks: dict[float, np.ndarray] = {}

    def stack(rate: float) -> np.ndarray:
        if rate not in stacks:
            rows = []
            for m in universe:
                try:
                    rows.append(model_slopes(m, rate, grid) if cfg.mode is PenaltyMode.STRUCTURED
                                else model_surface(m, rate, grid).z[:, 1:])
                except Exception as exc:
                    raise InstanceError(m, exc) from exc
            stacks[rate] = np.stack(rows)
        return stacks[rate]

    w = np.broadcast_to(np.asarray(cfg.weights, dtype=float), grid.shape)
    for d, obs in enumerate(series[1:]):
        if obs.grid != grid:
            raise ValueError(f"{obs.date}: option grid changes within the series")
        market = normalize(obs)
        if cfg.mode is PenaltyMode.STRUCTURED:
            out[d] = structured_from_slopes(stack(obs.rate), strike_slopes(market), k, taus)
        else:
            out[d] = (((stack(obs.rate) - market.z[:, 1:]) / w) ** 2).sum(axis=(1, 2))
    return cfg.lam * out


def run(series: list[SurfaceObservation], universe: list[ModelInstance], config: EngineConfig) -> RunResult:
    """Apply the recursion over a whole series; equivalent to repeated ``step``.

    The first date carries ell = 0 (uniform posterior under the chosen prior).
    """
    if not series:
        raise ValueError("empty series")
    n, J = len(series), len(universe)
    logp = move_matrix(universe, series, config.h, config.floor) if config.mode.uses_moves and n > 1 \
        else np.zeros((n - 1, J))
    q = penalty_matrix(universe, series, config.penalty) if config.mode.uses_options and n > 1 \
        else np.zeros((n - 1, J))
    ell = np.zeros((n, J))
    for t in range(1, n):
        ell[t] = config.beta * ell[t - 1] + logp[t - 1] - q[t - 1]
    logger.info("ran %s over %d days and %d instances", config.mode, n, J)
    return RunResult(tuple(o.date for o in series), ell, logp, q, config)


def with_mode(config: EngineConfig, mode: Mode) -> EngineConfig:
    return replace(config, mode=Mode(mode))
