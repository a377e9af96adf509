"""Option-surface market data: grids, CSV ingestion, Black-Scholes conversion and
forward-normalized call surfaces."""

from __future__ import annotations

import csv
import datetime as dt
import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import brentq, isotonic_regression
from scipy.special import ndtr

logger = logging.getLogger(__name__)

DEFAULT_EXPIRIES = (1 / 12, 2 / 12, 3 / 12, 6 / 12, 1.0, 1.5, 2.0)
DEFAULT_MONEYNESS = (0.80, 0.90, 0.95, 1.00, 1.05, 1.10, 1.20)
TRADING_DAY = 1.0 / 252.0

CSV_HEADER = ("date", "spot", "rate", "expiry", "moneyness", "vol")

# Grid coordinates read from a file match the configured grid within this.
GRID_MATCH_TOL = 1e-6
MONOTONE_TOL = 1e-6
MAX_REPAIR = 1e-3


class DataError(ValueError):
    """Raised for malformed or economically impossible market data."""


@dataclass(frozen=True)
class OptionGrid:
    expiries: tuple[float, ...] = DEFAULT_EXPIRIES
    moneyness: tuple[float, ...] = DEFAULT_MONEYNESS

    def __post_init__(self):
        exp = tuple(float(v) for v in self.expiries)
        mon = tuple(float(v) for v in self.moneyness)
        object.__setattr__(self, "expiries", exp)
        object.__setattr__(self, "moneyness", mon)
        for name, axis in (("expiries", exp), ("moneyness", mon)):
            if not axis:
                raise ValueError(f"{name} must be non-empty")
            if any(not (v > 0 and math.isfinite(v)) for v in axis):
                raise ValueError(f"{name} must be positive and finite")
            if any(b <= a for a, b in zip(axis, axis[1:])):
                raise ValueError(f"{name} must be strictly increasing")

    @property
    def T(self) -> float:
        return self.expiries[-1]

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.expiries), len(self.moneyness)

    @property
    def n_instruments(self) -> int:
        return len(self.expiries) * len(self.moneyness)

    @property
    def taus(self) -> np.ndarray:
        return np.asarray(self.expiries)

    @property
    def ks(self) -> np.ndarray:
        return np.asarray(self.moneyness)

    def with_strike(self, k: float) -> OptionGrid:
        """Grid with one extra moneyness column inserted in order."""
        return OptionGrid(self.expiries, tuple(sorted(set(self.moneyness) | {float(k)})))


@dataclass(frozen=True, eq=False)
class SurfaceObservation:
    date: dt.date
    spot: float
    rate: float
    vols: np.ndarray  # (n_expiries, n_moneyness)
    grid: OptionGrid = OptionGrid()

    def __post_init__(self):
        vols = np.array(self.vols, dtype=float)
        vols.setflags(write=False)
        object.__setattr__(self, "vols", vols)
        if vols.shape != self.grid.shape:
            raise DataError(f"{self.date}: vols shape {vols.shape} != grid {self.grid.shape}")
        if not (self.spot > 0 and math.isfinite(self.spot)):
            raise DataError(f"{self.date}: spot must be positive, got {self.spot}")
        if not np.all(np.isfinite(vols)) or np.any(vols <= 0):
            raise DataError(f"{self.date}: implied vols must be finite and positive")

    @property
    def log_price(self) -> float:
        return math.log(self.spot)

    def strikes(self) -> np.ndarray:
        """Strikes of the quoted calls: moneyness times the forward of each expiry."""
        g = self.grid
        return g.ks[None, :] * self.spot * np.exp(self.rate * g.taus)[:, None]

    def prices(self) -> np.ndarray:
        """Discounted call prices at ``strikes()``."""
        return vol_to_price(self.vols, self.spot, self.strikes(), self.grid.taus[:, None], self.rate)


@dataclass(frozen=True, eq=False)
class NormalizedSurface:
    """Call prices c(tau, k) = C(tau, k F) / F per unit forward, with the
    zero-strike column z = 1 at k = 0 stored first."""

    grid: OptionGrid
    z: np.ndarray  # (n_expiries, n_moneyness + 1)

    def __post_init__(self):
        z = np.array(self.z, dtype=float)
        z.setflags(write=False)
        object.__setattr__(self, "z", z)
        m, n = self.grid.shape
        if z.shape != (m, n + 1):
            raise DataError(f"normalized surface shape {z.shape} != {(m, n + 1)}")
        if np.any(z[:, 0] != 1.0):
            raise DataError("zero-strike column must equal 1")
        if np.any(z < 0.0) or np.any(z > 1.0):
            raise DataError("normalized call prices must lie in [0, 1]")

    @property
    def k(self) -> np.ndarray:
        return np.concatenate(([0.0], self.grid.ks))

    @classmethod
    def from_calls(cls, grid: OptionGrid, calls: np.ndarray, *, tol: float = MONOTONE_TOL,
                   max_repair: float = MAX_REPAIR) -> NormalizedSurface:
        """Build from forward-normalized calls on the grid (without the k = 0 column),
        repairing small monotonicity violations in strike."""
        calls = np.clip(np.asarray(calls, dtype=float), 0.0, 1.0)
        z = np.hstack([np.ones((calls.shape[0], 1)), calls])
        return cls(grid, repair_monotone(z, tol=tol, max_repair=max_repair))


def repair_monotone(z: np.ndarray, *, tol: float = MONOTONE_TOL, max_repair: float = MAX_REPAIR) -> np.ndarray:
    """Project each row onto the nearest non-increasing sequence where it rises
    by more than ``tol``; rises above ``max_repair`` are data errors."""
    z = np.array(z, dtype=float)
    rises = np.diff(z, axis=1)
    worst = float(rises.max(initial=0.0))
    if worst > max_repair:
        row = int(np.unravel_index(np.argmax(rises), rises.shape)[0])
        raise DataError(f"call prices increase in strike by {worst:.3g} at expiry row {row}")
    if worst > 0.0:
        if worst > tol:
            logger.warning("repairing strike monotonicity violation of %.3g", worst)
        for i in np.nonzero(rises.max(axis=1) > 0.0)[0]:
            z[i] = isotonic_regression(z[i], increasing=False).x
    return z


def black_call(forward, strike, vol, tau):
    """Undiscounted Black call price."""
    forward, strike, vol, tau = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (forward, strike, vol, tau)))
    sd = vol * np.sqrt(tau)
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = np.log(forward / strike) / sd + 0.5 * sd
    d2 = d1 - sd
    price = forward * ndtr(d1) - strike * ndtr(d2)
    price = np.maximum(price, np.maximum(forward - strike, 0.0))
    return price if price.ndim else float(price)


def vol_to_price(vol, spot, strike, expiry, rate):
    """Black-Scholes call price (no dividends)."""
    df = np.exp(-np.asarray(rate, dtype=float) * np.asarray(expiry, dtype=float))
    return df * black_call(np.asarray(spot) / df, strike, vol, expiry)


def bs_delta(vol, spot, strike, expiry, rate):
    sd = vol * np.sqrt(expiry)
    d1 = (np.log(spot / strike) + rate * expiry) / sd + 0.5 * sd
    return ndtr(d1)


def implied_vol(price: float, spot: float, strike: float, expiry: float, rate: float,
                lo: float = 1e-6, hi: float = 10.0) -> float:
    """Black-Scholes implied volatility by bracketed root search."""
    df = math.exp(-rate * expiry)
    # C = df F B(K / F) with F = S / df, so the unit-forward price is C / S
    return implied_vol_forward(price / spot, strike * df / spot, expiry, lo=lo, hi=hi)


def implied_vol_forward(c: float, k: float, tau: float, lo: float = 1e-6, hi: float = 10.0) -> float:
    """Implied vol from an undiscounted call price per unit forward."""
    intrinsic = max(1.0 - k, 0.0)
    if not (intrinsic < c < 1.0):
        raise DataError(f"price {c!r} outside no-arbitrage bounds at k={k}, tau={tau}")
    f = lambda s: black_call(1.0, k, s, tau) - c
    if f(lo) > 0:
        raise DataError(f"price {c!r} below the {lo} vol price at k={k}, tau={tau}")
    while f(hi) < 0:
        hi *= 2.0
        if hi > 1e3:
            raise DataError(f"no implied vol for price {c!r} at k={k}, tau={tau}")
    return brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)


def normalize(obs: SurfaceObservation, *, tol: float = MONOTONE_TOL, max_repair: float = MAX_REPAIR) -> NormalizedSurface:
    """Forward-moneyness normalization.

    Entry (m, j) is the price of the strike k_j S e^{r tau_m} call divided by S,
    which equals the undiscounted Black price with unit forward.
    At zero rate this is the spot-moneyness c(tau, k) = C(tau, k S) / S.
    """
    g = obs.grid
    calls = black_call(1.0, g.ks[None, :], obs.vols, g.taus[:, None])
    return NormalizedSurface.from_calls(g, calls, tol=tol, max_repair=max_repair)


def _match(value: float, axis: tuple[float, ...]) -> int | None:
    for i, a in enumerate(axis):
        if abs(value - a) <= GRID_MATCH_TOL:
            return i
    return None


def load_series(path: str | Path, grid: OptionGrid = OptionGrid()) -> list[SurfaceObservation]:
    """Read the ``date,spot,rate,expiry,moneyness,vol`` CSV into date-sorted
    observations. Dates missing any grid cell are dropped with a warning."""
    path = Path(path)
    cells: dict[dt.date, dict[tuple[int, int], float]] = defaultdict(dict)
    spot_rate: dict[dt.date, tuple[float, float]] = {}
    off_grid = 0
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(CSV_HEADER) - set(reader.fieldnames):
            raise DataError(f"{path}: header must contain {','.join(CSV_HEADER)}")
        for row in reader:
            where = f"{path}:{reader.line_num}"
            try:
                date = dt.date.fromisoformat(row["date"].strip())
                spot, rate, expiry, mon, vol = (float(row[c]) for c in CSV_HEADER[1:])
            except (ValueError, AttributeError) as exc:
                raise DataError(f"{where}: unparseable row ({exc})") from None
            if not spot > 0:
                raise DataError(f"{where}: non-positive spot {spot}")
            if not vol > 0 or not math.isfinite(vol):
                raise DataError(f"{where}: non-positive vol {vol}")
            prev = spot_rate.setdefault(date, (spot, rate))
            if prev != (spot, rate):
                raise DataError(f"{where}: spot/rate for {date} disagree with earlier rows")
            m, j = _match(expiry, grid.expiries), _match(mon, grid.moneyness)
            if m is None or j is None:
                off_grid += 1
                continue
            if (m, j) in cells[date]:
                raise DataError(f"{where}: duplicate cell ({date}, {expiry}, {mon})")
            cells[date][(m, j)] = vol
    if off_grid:
        logger.warning("%s: ignored %d rows off the option grid", path, off_grid)

    series = []
    nm, nk = grid.shape
    for date in sorted(spot_rate):
        got = cells.get(date, {})
        if len(got) != nm * nk:
            missing = [(grid.expiries[m], grid.moneyness[j]) for m in range(nm) for j in range(nk) if (m, j) not in got]
            logger.warning("%s: dropping %s, missing %d cells (first: expiry=%g, moneyness=%g)",
                           path, date, len(missing), *missing[0])
            continue
        vols = np.empty((nm, nk))
        for (m, j), v in got.items():
            vols[m, j] = v
        spot, rate = spot_rate[date]
        series.append(SurfaceObservation(date, spot, rate, vols, grid))
    return series


def write_series(path: str | Path, series: list[SurfaceObservation]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for obs in series:
            g = obs.grid
            for m, tau in enumerate(g.expiries):
                for j, k in enumerate(g.moneyness):
                    w.writerow([obs.date.isoformat(), repr(obs.spot), repr(obs.rate), repr(tau), repr(k),
                                repr(float(obs.vols[m, j]))])
