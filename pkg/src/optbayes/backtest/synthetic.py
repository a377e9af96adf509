"""Synthetic market data drawn from a single model instance."""

from __future__ import annotations

import datetime as dt

import numpy as np

from ..market_data import TRADING_DAY, DataError, OptionGrid, SurfaceObservation, implied_vol_forward
from ..models.density import transition_density_table
from ..models.families import ModelInstance, check_admissible
from ..models.pricing import model_surface

# noisy vols are kept at least this large
MIN_VOL = 1e-4


def instance_vols(m: ModelInstance, rate: float, grid: OptionGrid) -> np.ndarray:
    """Implied vols of the instance's forward-moneyness calls on the grid."""
    z = model_surface(m, rate, grid).z[:, 1:]
    vols = np.empty(grid.shape)
    for i, tau in enumerate(grid.expiries):
        for j, k in enumerate(grid.moneyness):
            try:
                vols[i, j] = implied_vol_forward(float(z[i, j]), k, tau)
            except DataError as exc:
                raise DataError(f"{m}: no implied vol at expiry {tau:g}, moneyness {k:g}: {exc}") from None
    return vols


def weekdays(start: dt.date, n: int) -> list[dt.date]:
    out, d = [], start
    while len(out) < n:
        if d.weekday() < 5:
            out.append(d)
        d += dt.timedelta(days=1)
    return out


def generate_synthetic(true_instance: ModelInstance, n_days: int, seed: int, *, noise: float = 0.0,
                       spot0: float = 100.0, rate: float = 0.0, start: dt.date = dt.date(2020, 1, 1),
                       grid: OptionGrid = OptionGrid(), h: float = TRADING_DAY) -> list[SurfaceObservation]:
    """Log-price path sampled by inverse CDF from the instance's tabulated one-step
    law; daily vols are the instance's own implied vols plus Gaussian noise of
    standard deviation ``noise``. Fully determined by the arguments."""
    check_admissible(true_instance)
    if n_days < 1:
        raise ValueError("n_days must be at least 1")
    rng = np.random.default_rng(seed)
    steps = transition_density_table(true_instance, h, rate).sample(rng, n_days - 1)
    logs = np.log(spot0) + np.concatenate(([0.0], np.cumsum(steps)))
    base = instance_vols(true_instance, rate, grid)
    series = []
    for date, x in zip(weekdays(start, n_days), logs):
        vols = base if noise == 0 else np.maximum(base + noise * rng.standard_normal(base.shape), MIN_VOL)
        series.append(SurfaceObservation(date, float(np.exp(x)), rate, vols, grid))
    return series
