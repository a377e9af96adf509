"""One-step transition densities of the log-price.

Stochastic-volatility families are evaluated with the volatility frozen at its
current state over the step, so Heston is Gaussian, Bates is a Poisson mixture of
Gaussians and SABR is a CEV step with local vol alpha.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import fft, special, stats
from scipy.interpolate import CubicSpline

from .charfn import chernoff_range, cumulants, log_char_fn
from .families import ModelFamily, ModelInstance, check_admissible

F = ModelFamily

LOG_DENSITY_FLOOR = -7000.0
GRID_POINTS = 2**12
RANGE_L = 10.0
TAIL_EPS = 1e-10
MAX_NEGATIVE = 1e-10
MAX_GRID_POINTS = 2**17
CF_TOL = 1e-10
MAX_SUBCELLS = 4096


class InversionError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class DensityTable:
    """Density of the log-increment tabulated on a uniform grid."""

    x: np.ndarray
    pdf: np.ndarray

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    def integral(self) -> float:
        return float(np.trapezoid(self.pdf, self.x))

    def mean(self) -> float:
        return float(np.trapezoid(self.x * self.pdf, self.x) / self.integral())

    def cdf(self) -> np.ndarray:
        """Cumulative distribution at the grid points, with cell-centred mass."""
        cells = self.pdf * self.dx
        c = np.cumsum(cells) - 0.5 * cells
        return c / cells.sum()

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Inverse-CDF draws, piecewise linear between cell midpoints."""
        edges = np.concatenate(([self.x[0] - 0.5 * self.dx], self.x + 0.5 * self.dx))
        mass = np.concatenate(([0.0], np.cumsum(self.pdf * self.dx)))
        mass /= mass[-1]
        return np.interp(rng.random(n), mass, edges)

    def interpolator(self):
        return CubicSpline(self.x, self.pdf, bc_type="natural", extrapolate=False)


def _range(m: ModelInstance, h: float, rate: float, L: float = RANGE_L, eps: float = TAIL_EPS) -> tuple[float, float]:
    """Tabulation interval: L standard deviations with kurtosis widening, extended
    to the Chernoff bound so that each tail outside holds < eps mass."""
    c1, c2, c4 = cumulants(m, h, rate)
    half = L * math.sqrt(c2 + math.sqrt(c4))
    lo, hi = c1 - half, c1 + half
    if m.family not in (F.HESTON, F.BATES):
        clo, chi = chernoff_range(m, h, rate, eps=eps)
        lo, hi = min(lo, clo), max(hi, chi)
    return lo, hi


def grid_size(m: ModelInstance, h: float, rate: float, a: float, b: float,
              n_min: int = GRID_POINTS, n_max: int = MAX_GRID_POINTS, tol: float = CF_TOL) -> int:
    """Smallest power-of-two count (at least n_min) whose highest cosine frequency
    sees a characteristic-function modulus below tol; n_max if none does."""
    n = n_min
    while n < n_max:
        u = n * np.pi / (b - a)
        if math.exp(log_char_fn(m, u, h, rate).real) < tol:
            break
        n *= 2
    return n


def density_from_cf(m: ModelInstance, h: float, rate: float = 0.0, vstate: float | None = None,
                    n_points: int | None = None, bounds: tuple[float, float] | None = None) -> DensityTable:
    """Fourier-cosine inversion of the characteristic function onto a uniform grid of
    cell centres (computed with a type-III DCT).

    The point count defaults to ``grid_size``, which refines the grid for peaked
    short-horizon laws such as NIG.
    """
    m = m.with_vol_state(vstate)
    a, b = bounds if bounds is not None else _range(m, h, rate)
    if n_points is None:
        n_points = grid_size(m, h, rate, a, b)
    w = np.arange(n_points) * np.pi / (b - a)
    coef = 2.0 / (b - a) * np.exp(log_char_fn(m, w, h, rate) - 1j * w * a).real
    pdf = 0.5 * fft.dct(coef, type=3)
    x = a + (np.arange(n_points) + 0.5) * (b - a) / n_points
    if pdf.min() < -MAX_NEGATIVE * max(pdf.max(), 1.0):
        raise InversionError(f"{m}: inverted density dips to {pdf.min():.3g}; widen the grid or add points")
    return DensityTable(x, np.maximum(pdf, 0.0))


def _gauss_logpdf(y, mean, var):
    return -0.5 * (np.log(2 * np.pi * var) + (y - mean) ** 2 / var)


def _poisson_gauss_logpdf(y, h, rate, s2, lam, mu, dj):
    """Gaussian diffusion plus compound-Poisson Gaussian jumps over one step."""
    kbar = math.expm1(mu + 0.5 * dj * dj)
    drift = (rate - 0.5 * s2 - lam * kbar) * h
    lh = lam * h
    if lh <= 0:
        return _gauss_logpdf(y, drift, s2 * h)
    n_max = int(lh + 12 * math.sqrt(lh) + 25)
    n = np.arange(n_max + 1)
    logw = stats.poisson.logpmf(n, lh)
    comps = _gauss_logpdf(y[..., None], drift + n * mu, s2 * h + n * dj * dj) + logw
    return special.logsumexp(comps, axis=-1)


def _cev_logpdf(y, h, rate, sigma, beta):
    """Log-density of log(S_h / S_0) for CEV started at S_0 = 1 (continuous part)."""
    bc = 1.0 - beta
    var = sigma**2 * (math.expm1(2 * rate * bc * h) / (2 * rate * bc) if rate else h)
    fwd = math.exp(rate * h)
    x = fwd ** (2 * bc) / (bc * bc * var)
    s = np.exp(y)
    yy = s ** (2 * bc) / (bc * bc * var)
    return stats.ncx2.logpdf(x, 2 + 1 / bc, yy) + np.log(2 * bc * yy)


def _vg_logpdf(y, h, rate, sigma, nu, theta):
    s2 = sigma * sigma
    omega = math.log(1 - theta * nu - 0.5 * s2 * nu) / nu
    x = y - (rate + omega) * h
    # keep x * x representable; the density is continuous at the mode when h > nu / 2
    x = np.where(np.abs(x) < 1e-100, 1e-100, x)
    a = h / nu
    q = 2 * s2 / nu + theta * theta
    arg = np.sqrt(x * x * q) / s2
    return (math.log(2.0) + theta * x / s2 - a * math.log(nu) - 0.5 * math.log(2 * np.pi * s2) - special.gammaln(a)
            + (0.5 * a - 0.25) * np.log(x * x / q) + np.log(special.kve(a - 0.5, arg)) - arg)


def _nig_logpdf(y, h, rate, alpha, beta, delta):
    gam = math.sqrt(alpha * alpha - beta * beta)
    omega = delta * (math.sqrt(alpha * alpha - (beta + 1) ** 2) - gam)
    dh = delta * h
    x = y - (rate + omega) * h
    r = np.sqrt(dh * dh + x * x)
    return (math.log(alpha * dh / np.pi) + np.log(special.kve(1, alpha * r)) - alpha * r - np.log(r)
            + dh * gam + beta * x)


def increment_logpdf(m: ModelInstance, y, h: float, rate: float = 0.0, vstate: float | None = None) -> np.ndarray:
    """Unfloored log-density of the log-price increment y over h years."""
    check_admissible(m)
    m = m.with_vol_state(vstate)
    y = np.asarray(y, dtype=float)
    p = m.params
    f = m.family
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if f is F.BLACK_SCHOLES:
            s2 = p["sigma"] ** 2
            return _gauss_logpdf(y, (rate - 0.5 * s2) * h, s2 * h)
        if f is F.HESTON:
            return _gauss_logpdf(y, (rate - 0.5 * p["v0"]) * h, p["v0"] * h)
        if f in (F.CEV, F.SABR):
            sigma, beta = (p["sigma"], p["beta"]) if f is F.CEV else (p["alpha"], p["beta"])
            if beta >= 1.0:
                return _gauss_logpdf(y, (rate - 0.5 * sigma**2) * h, sigma**2 * h)
            return _cev_logpdf(y, h, rate, sigma, beta)
        if f is F.MERTON:
            return _poisson_gauss_logpdf(y, h, rate, p["sigma"] ** 2, p["lam"], p["mu_j"], p["sigma_j"])
        if f is F.BATES:
            return _poisson_gauss_logpdf(y, h, rate, p["v0"], p["lam"], p["mu_j"], abs(p["mu_j"]))
        if f is F.VARIANCE_GAMMA:
            return _vg_logpdf(y, h, rate, p["sigma"], p["nu"], p["theta"])
        if f is F.NIG:
            return _nig_logpdf(y, h, rate, p["alpha"], p["beta"], p["delta"])
    # Kou: no convenient closed form, interpolate the inverted density
    spline, lo, hi = _cf_spline(m, h, rate)
    out = np.full(y.shape, -np.inf)
    inside = (y >= lo) & (y <= hi)
    vals = spline(y[inside])
    with np.errstate(divide="ignore"):
        out[inside] = np.log(np.maximum(vals, 0.0))
    return out


@lru_cache(maxsize=100_000)
def _cf_spline(m: ModelInstance, h: float, rate: float):
    table = density_from_cf(m, h, rate)
    return table.interpolator(), table.x[0], table.x[-1]


def transition_log_density(m: ModelInstance, vstate: float | None, x0, x1, h: float, rate: float = 0.0,
                           floor: float = LOG_DENSITY_FLOOR) -> np.ndarray | float:
    """log p(x0, x1) for log-prices over a step of h years, never below ``floor``."""
    if h <= 0:
        raise ValueError("step h must be positive")
    y = np.asarray(x1, dtype=float) - np.asarray(x0, dtype=float)
    lp = increment_logpdf(m, y, h, rate, vstate)
    lp = np.where(np.isnan(lp), -np.inf, lp)
    out = np.maximum(lp, floor)
    return out if out.ndim else float(out)


def _frozen_equivalent(m: ModelInstance) -> ModelInstance:
    """Levy instance with the same one-step law under frozen volatility."""
    p = m.params
    if m.family is F.HESTON:
        return ModelInstance.create(F.BLACK_SCHOLES, sigma=math.sqrt(p["v0"]))
    if m.family is F.BATES:
        return ModelInstance.create(F.MERTON, sigma=math.sqrt(p["v0"]), lam=p["lam"], mu_j=p["mu_j"],
                                    sigma_j=abs(p["mu_j"]))
    if m.family in (F.CEV, F.SABR):
        sigma = p["sigma"] if m.family is F.CEV else p["alpha"]
        return ModelInstance.create(F.BLACK_SCHOLES, sigma=sigma)
    return m


def _cell_average(logpdf, edges: np.ndarray, nodes: int = 8) -> np.ndarray:
    t, w = np.polynomial.legendre.leggauss(nodes)
    lo, hi = edges[:-1, None], edges[1:, None]
    pts = 0.5 * (hi - lo) * t + 0.5 * (hi + lo)
    vals = np.exp(logpdf(pts))
    return 0.5 * (vals * w).sum(axis=1)


def transition_density_table(m: ModelInstance, h: float, rate: float = 0.0, vstate: float | None = None,
                             n_points: int | None = None) -> DensityTable:
    """Tabulated one-step density of the log-increment.

    Closed-form families are tabulated as cell averages (Gauss-Legendre per cell,
    adaptive quadrature in the cells around the variance-gamma pole); Kou is
    inverted from its characteristic function.
    """
    m = m.with_vol_state(vstate)
    if m.family is F.KOU:
        return density_from_cf(m, h, rate, n_points=n_points)
    eq = _frozen_equivalent(m)
    lo, hi = _range(eq, h, rate)
    if n_points is None:
        # the variance-gamma transform decays too slowly for the sizing rule to help
        n_points = GRID_POINTS if m.family is F.VARIANCE_GAMMA else grid_size(eq, h, rate, lo, hi)
    edges = np.linspace(lo, hi, n_points + 1)
    x = 0.5 * (edges[:-1] + edges[1:])
    logpdf = lambda y: increment_logpdf(m, y, h, rate)
    pdf = _cell_average(logpdf, edges)
    if m.family is F.VARIANCE_GAMMA:
        from scipy.integrate import IntegrationWarning, quad

        p = m.params
        pole = (rate + math.log(1 - p["theta"] * p["nu"] - 0.5 * p["sigma"] ** 2 * p["nu"]) / p["nu"]) * h
        j = int(np.clip(np.searchsorted(edges, pole) - 1, 0, n_points - 1))
        f1 = lambda t: float(np.exp(logpdf(np.array(t))))
        for i in range(max(j - 3, 0), min(j + 4, n_points)):
            a, b = edges[i], edges[i + 1]
            # split at the pole so quad only meets endpoint singularities
            pieces = [(a, pole), (pole, b)] if a < pole < b else [(a, b)]
            with warnings.catch_warnings():
                # roundoff warnings near the pole; the cell mass is still accurate
                warnings.simplefilter("ignore", IntegrationWarning)
                val = sum(quad(f1, lo_, hi_, limit=200, epsabs=1e-14, epsrel=1e-10)[0] for lo_, hi_ in pieces)
            pdf[i] = val / (b - a)
    if not np.all(np.isfinite(pdf)):
        raise InversionError(f"{m}: non-finite transition density on the tabulation grid")
    return DensityTable(x, pdf)


def increment_mean(m: ModelInstance, h: float, rate: float = 0.0, vstate: float | None = None) -> float:
    """Expected log-increment over h (frozen volatility for SV families)."""
    m = m.with_vol_state(vstate)
    eq = _frozen_equivalent(m)
    if m.family in (F.CEV, F.SABR) and (m["beta"] < 1.0):
        table = transition_density_table(m, h, rate)
        return table.mean()
    return cumulants(eq, h, rate)[0]


def path_log_densities(m: ModelInstance, log_prices, rates, h: float, floor: float = LOG_DENSITY_FLOOR) -> np.ndarray:
    """Floored log-densities of each consecutive move along a log-price path, using
    the rate at the start of each step. Steps sharing a rate are evaluated together."""
    x = np.asarray(log_prices, dtype=float)
    r = np.broadcast_to(np.asarray(rates, dtype=float), x.shape)[:-1]
    y = np.diff(x)
    out = np.empty_like(y)
    for rate in np.unique(r):
        sel = r == rate
        out[sel] = transition_log_density(m, None, 0.0, y[sel], h, float(rate), floor)
    return out


def interval_masses(m: ModelInstance, edges, h: float, rate: float = 0.0, vstate: float | None = None,
                    sub: int = 8, nodes: int = 8) -> np.ndarray:
    """Probability of the log-increment falling in each interval between edges.

    Each interval is split into ``sub`` pieces with Gauss-Legendre nodes (more for
    the sharply peaked NIG law); the variance-gamma law (a pole at its mode) is integrated from its table instead.
    """
    edges = np.asarray(edges, dtype=float)
    m = m.with_vol_state(vstate)
    if m.family is F.VARIANCE_GAMMA:
        t = transition_density_table(m, h, rate)
        own = np.concatenate(([t.x[0] - 0.5 * t.dx], t.x + 0.5 * t.dx))
        cum = np.concatenate(([0.0], np.cumsum(t.pdf * t.dx)))
        return np.diff(np.interp(edges, own, cum))
    if m.family is F.NIG:
        # the law is peaked on the scale delta h, far below its standard deviation
        scale = 0.5 * m["delta"] * h
        sub = int(min(max(sub, math.ceil(np.max(np.diff(edges)) / scale)), MAX_SUBCELLS))
    fine = np.linspace(edges[:-1], edges[1:], sub + 1, axis=1)
    lo, hi = fine[:, :-1].ravel(), fine[:, 1:].ravel()
    t_, w_ = np.polynomial.legendre.leggauss(nodes)
    pts = 0.5 * (hi - lo)[:, None] * t_ + 0.5 * (hi + lo)[:, None]
    vals = np.exp(increment_logpdf(m, pts, h, rate))
    mass = 0.5 * (hi - lo) * (vals * w_).sum(axis=1)
    return mass.reshape(len(edges) - 1, sub).sum(axis=1)
