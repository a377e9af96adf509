"""European call pricing over an option grid for every model family."""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy import stats

from ..market_data import NormalizedSurface, OptionGrid, black_call
from .charfn import chernoff_range, cumulants, log_char_fn
from .families import ModelFamily, ModelInstance, check_admissible

F = ModelFamily

COS_TERMS = 256
COS_MAX_TERMS = 2**16
COS_TOL = 1e-10
COS_L = 10.0
COS_TAIL_EPS = 1e-13
DELTA_BUMP = 1e-4


class PricingError(RuntimeError):
    def __init__(self, model: ModelInstance, msg: str):
        super().__init__(f"{model}: {msg}")
        self.model = model


def _cos_puts(m: ModelInstance, tau: float, k: np.ndarray, n_terms: int, a: float, b: float) -> np.ndarray:
    """Undiscounted puts E[(k - e^Y)^+] per unit forward, Y = log(S_tau / F_tau)."""
    n = np.arange(n_terms)
    w = n * np.pi / (b - a)
    phi = np.exp(log_char_fn(m, w, tau) - 1j * w * a)
    phi[0] *= 0.5
    d = np.log(k)[:, None]
    # payoff cosine coefficients of (k - e^y)^+ on [a, log k]
    wd = w[None, :] * (d - a)
    chi = (np.cos(wd) * np.exp(d) - math.exp(a) + w * np.sin(wd) * np.exp(d)) / (1.0 + w * w)
    psi = np.empty_like(wd)
    psi[:, 0] = (d - a)[:, 0]
    psi[:, 1:] = np.sin(wd[:, 1:]) / w[1:]
    v = 2.0 / (b - a) * (k[:, None] * psi - chi)
    return (phi.real[None, :] * v).sum(axis=1)


def cos_calls(m: ModelInstance, tau: float, k: np.ndarray, *, n_terms: int = COS_TERMS,
              tol: float = COS_TOL, max_terms: int = COS_MAX_TERMS, L: float = COS_L) -> np.ndarray:
    """Forward-normalized undiscounted calls c(k) = E[(e^Y - k)^+] by Fourier-cosine
    expansion, doubling the term count until successive results agree within tol."""
    k = np.asarray(k, dtype=float)
    c1, c2, c4 = cumulants(m, tau)
    half = L * math.sqrt(c2 + math.sqrt(c4))
    a, b = c1 - half, c1 + half
    if m.family is F.NIG:
        # the NIG tails are much heavier than its cumulants suggest at short expiries
        clo, chi = chernoff_range(m, tau, eps=COS_TAIL_EPS)
        a, b = min(a, clo), max(b, chi)
    lk = np.log(k)
    a, b = min(a, lk.min() - 0.1 * half), max(b, lk.max() + 0.1 * half)
    prev = _cos_puts(m, tau, k, n_terms, a, b)
    while True:
        n_terms *= 2
        cur = _cos_puts(m, tau, k, n_terms, a, b)
        if not np.all(np.isfinite(cur)):
            raise PricingError(m, f"non-finite COS prices at tau={tau}")
        if np.max(np.abs(cur - prev)) <= tol:
            break
        if n_terms >= max_terms:
            raise PricingError(m, f"COS expansion did not converge at tau={tau} with {n_terms} terms")
        prev = cur
    calls = cur + 1.0 - k
    return np.clip(calls, np.maximum(1.0 - k, 0.0), 1.0)


def cev_calls(spot, strike, tau, rate, sigma, beta, anchor=None):
    """Discounted CEV calls with local vol sigma * (S / anchor)^(beta - 1), by the
    noncentral chi-square representation (absorbing boundary at zero)."""
    anchor = spot if anchor is None else anchor
    strike = np.asarray(strike, dtype=float)
    if beta >= 1.0:
        return spot * black_call(1.0, strike / (spot * math.exp(rate * tau)), sigma, tau)
    bc = 1.0 - beta
    coef2 = sigma**2 * anchor ** (2 * bc)
    # driftless forward with time-changed variance
    if rate != 0.0:
        var = coef2 * math.expm1(2 * rate * bc * tau) / (2 * rate * bc)
    else:
        var = coef2 * tau
    fwd = spot * math.exp(rate * tau)
    x = fwd ** (2 * bc) / (bc * bc * var)
    y = strike ** (2 * bc) / (bc * bc * var)
    undiscounted = fwd * stats.ncx2.sf(y, 2 + 1 / bc, x) - strike * stats.ncx2.cdf(x, 1 / bc, y)
    undiscounted = np.clip(undiscounted, np.maximum(fwd - strike, 0.0), fwd)
    return math.exp(-rate * tau) * undiscounted


def hagan_vol(f, k, tau, alpha, beta, rho, nu):
    """Hagan et al. lognormal SABR implied volatility."""
    f, k = np.broadcast_arrays(np.asarray(f, dtype=float), np.asarray(k, dtype=float))
    bc = 1.0 - beta
    fk = f * k
    lfk = np.log(f / k)
    fkb = fk ** (0.5 * bc)
    z = nu / alpha * fkb * lfk
    small = np.abs(z) < 1e-8
    zs = np.where(small, 1.0, z)
    xz = np.log((np.sqrt(1 - 2 * rho * zs + zs * zs) + zs - rho) / (1 - rho))
    zx = np.where(small, 1.0 - 0.5 * rho * z, zs / np.where(small, 1.0, xz))
    denom = fkb * (1 + bc**2 / 24 * lfk**2 + bc**4 / 1920 * lfk**4)
    corr = 1 + (bc**2 / 24 * alpha**2 / fk**bc + 0.25 * rho * beta * nu * alpha / fkb
                + (2 - 3 * rho * rho) / 24 * nu * nu) * tau
    return alpha / denom * zx * corr


def call_prices(m: ModelInstance, spot: float, rate: float, taus, strikes, *,
                vstate: float | None = None, anchor: float | None = None) -> np.ndarray:
    """Discounted call prices C(tau_i, K_ij).

    ``strikes`` broadcasts against ``taus[:, None]``. ``anchor`` is the spot level
    at which local-vol style parameters (CEV sigma, SABR alpha) are quoted; it
    defaults to ``spot``, which makes every family scale invariant.
    """
    check_admissible(m)
    m = m.with_vol_state(vstate)
    taus = np.asarray(taus, dtype=float)
    strikes = np.broadcast_to(np.asarray(strikes, dtype=float), (taus.size, np.shape(strikes)[-1]))
    anchor = spot if anchor is None else anchor
    p = m.params
    out = np.empty(strikes.shape)
    for i, tau in enumerate(taus):
        fwd = spot * math.exp(rate * tau)
        df = math.exp(-rate * tau)
        kk = strikes[i]
        if m.family is F.BLACK_SCHOLES:
            out[i] = df * black_call(fwd, kk, p["sigma"], tau)
        elif m.family is F.CEV:
            out[i] = cev_calls(spot, kk, tau, rate, p["sigma"], p["beta"], anchor)
        elif m.family is F.SABR:
            alpha = p["alpha"] * anchor ** (1 - p["beta"])
            vol = hagan_vol(fwd, kk, tau, alpha, p["beta"], p["rho"], p["nu"])
            if not np.all(np.isfinite(vol)) or np.any(vol <= 0):
                raise PricingError(m, f"SABR implied vol invalid at tau={tau}")
            out[i] = df * black_call(fwd, kk, vol, tau)
        else:
            out[i] = df * fwd * cos_calls(m, tau, kk / fwd)
    return out


def price_surface(m: ModelInstance, vstate: float | None, spot: float, rate: float, grid: OptionGrid) -> np.ndarray:
    """Call prices at strikes moneyness * spot on every grid expiry."""
    return call_prices(m, spot, rate, grid.taus, grid.ks * spot, vstate=vstate)


def delta_surface(m: ModelInstance, vstate: float | None, spot: float, rate: float, grid: OptionGrid,
                  bump: float = DELTA_BUMP, *, forward_strikes: bool = False) -> np.ndarray:
    """Spot deltas by central differences with relative bump, strikes and the
    parameter anchor held at the unbumped spot. Strikes are moneyness * spot, or
    moneyness * forward with ``forward_strikes``."""
    strikes = grid.ks[None, :] * spot * (np.exp(rate * grid.taus)[:, None] if forward_strikes else 1.0)
    up = call_prices(m, spot * (1 + bump), rate, grid.taus, strikes, vstate=vstate, anchor=spot)
    dn = call_prices(m, spot * (1 - bump), rate, grid.taus, strikes, vstate=vstate, anchor=spot)
    return np.clip((up - dn) / (2 * spot * bump), 0.0, 1.0)


def forward_calls(m: ModelInstance, rate: float, grid: OptionGrid, vstate: float | None = None) -> np.ndarray:
    """Forward-normalized calls: price of the k F strike per unit spot."""
    taus = grid.taus
    growth = np.exp(rate * taus)[:, None]
    return call_prices(m, 1.0, rate, taus, grid.ks[None, :] * growth, vstate=vstate)


@lru_cache(maxsize=200_000)
def model_surface(m: ModelInstance, rate: float, grid: OptionGrid) -> NormalizedSurface:
    """Normalized model surface, comparable to ``market_data.normalize`` output."""
    return NormalizedSurface.from_calls(grid, forward_calls(m, rate, grid))


@lru_cache(maxsize=50_000)
def model_deltas(m: ModelInstance, rate: float, grid: OptionGrid) -> np.ndarray:
    """Deltas of the forward-moneyness calls, matching ``model_surface``; they do
    not depend on the spot level for any family here."""
    out = delta_surface(m, None, 1.0, rate, grid, forward_strikes=True)
    out.setflags(write=False)
    return out

