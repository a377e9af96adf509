"""Risk-neutral characteristic functions of the log-price increment log(S_tau / S_0)."""

from __future__ import annotations

import math

import numpy as np

from .families import ModelFamily, ModelInstance

F = ModelFamily


class DomainError(ValueError):
    """Argument outside the strip where the characteristic function exists."""


def moment_strip(m: ModelInstance) -> tuple[float, float]:
    """Open interval of real s with E[exp(s X)] finite (X the log-increment).

    Heston and Bates moments depend on the horizon; their strip is reported as the
    unrestricted one and explosions surface as non-finite values.
    """
    p = m.params
    if m.family is F.KOU:
        return -p["eta"], p["eta"]
    if m.family is F.VARIANCE_GAMMA:
        # roots of 1 - s theta nu - s^2 sigma^2 nu / 2
        a, b = 0.5 * p["sigma"] ** 2 * p["nu"], p["theta"] * p["nu"]
        disc = math.sqrt(b * b + 4 * a)
        return (-b - disc) / (2 * a), (-b + disc) / (2 * a)
    if m.family is F.NIG:
        return -p["alpha"] - p["beta"], p["alpha"] - p["beta"]
    return -math.inf, math.inf


def _levy_exponent(m: ModelInstance, u: np.ndarray) -> np.ndarray:
    """Martingale-corrected Levy exponent psi with E exp(iu X_t) = exp(t psi(u))."""
    p = m.params
    iu = 1j * u
    if m.family is F.BLACK_SCHOLES:
        s2 = p["sigma"] ** 2
        return -0.5 * s2 * (u * u + iu)
    if m.family is F.MERTON:
        s2, lam, mu, dj = p["sigma"] ** 2, p["lam"], p["mu_j"], p["sigma_j"]
        kbar = math.expm1(mu + 0.5 * dj * dj)
        return -0.5 * s2 * (u * u + iu) - iu * lam * kbar + lam * (np.exp(iu * mu - 0.5 * dj * dj * u * u) - 1)
    if m.family is F.KOU:
        s2, lam, q, eta = p["sigma"] ** 2, p["lam"], p["p_up"], p["eta"]
        zeta = q * eta / (eta - 1) + (1 - q) * eta / (eta + 1) - 1
        jump = q * eta / (eta - iu) + (1 - q) * eta / (eta + iu) - 1
        return -0.5 * s2 * (u * u + iu) - iu * lam * zeta + lam * jump
    if m.family is F.VARIANCE_GAMMA:
        s2, nu, th = p["sigma"] ** 2, p["nu"], p["theta"]
        omega = math.log(1 - th * nu - 0.5 * s2 * nu) / nu
        return -np.log(1 - iu * th * nu + 0.5 * s2 * nu * u * u) / nu + iu * omega
    if m.family is F.NIG:
        al, be, de = p["alpha"], p["beta"], p["delta"]
        gam = math.sqrt(al * al - be * be)
        omega = de * (math.sqrt(al * al - (be + 1) ** 2) - gam)
        return -de * (np.sqrt(al * al - (be + iu) ** 2) - gam) + iu * omega
    raise DomainError(f"{m.family} has no Levy exponent")


def _heston_log_cf(u, tau, kappa, theta, xi, rho, v0):
    # rotation-count-free form (principal branch of d, |g e^{-d tau}| < 1)
    iu = 1j * u
    b = kappa - rho * xi * iu
    d = np.sqrt(b * b + xi * xi * (iu + u * u))
    g = (b - d) / (b + d)
    e = np.exp(-d * tau)
    c = kappa * theta / (xi * xi) * ((b - d) * tau - 2.0 * np.log((1.0 - g * e) / (1.0 - g)))
    dd = (b - d) / (xi * xi) * (1.0 - e) / (1.0 - g * e)
    return c + dd * v0


def log_char_fn(m: ModelInstance, u, tau: float, rate: float = 0.0, vstate: float | None = None) -> np.ndarray:
    """log E[exp(iu log(S_tau / S_0))] under the risk-neutral measure."""
    if not m.family.has_char_fn:
        raise DomainError(f"{m.family} has no closed-form characteristic function")
    u = np.asarray(u, dtype=complex)
    s = -u.imag
    lo, hi = moment_strip(m)
    if np.any(s <= lo) or np.any(s >= hi):
        raise DomainError(f"{m}: Im(u) outside the strip ({-hi}, {-lo})")
    m = m.with_vol_state(vstate)
    p = m.params
    out = 1j * u * rate * tau
    if m.family in (F.HESTON, F.BATES):
        out = out + _heston_log_cf(u, tau, p["kappa"], p["theta"], p["xi"], p["rho"], p["v0"])
        if m.family is F.BATES:
            lam, mu = p["lam"], p["mu_j"]
            dj = abs(mu)
            kbar = math.expm1(mu + 0.5 * dj * dj)
            iu = 1j * u
            out = out + tau * lam * (np.exp(iu * mu - 0.5 * dj * dj * u * u) - 1 - iu * kbar)
        return out
    return out + tau * _levy_exponent(m, u)


def char_fn(m: ModelInstance, u, tau: float, rate: float = 0.0, vstate: float | None = None):
    """E[exp(iu X_tau)] for the log-price increment X_tau = log(S_tau / S_0)."""
    val = np.exp(log_char_fn(m, u, tau, rate, vstate))
    return val if np.ndim(val) else complex(val)


def cumulants(m: ModelInstance, tau: float, rate: float = 0.0, vstate: float | None = None) -> tuple[float, float, float]:
    """First, second and fourth cumulants of log(S_tau / S_0), by central
    differences of the cumulant generating function on the real axis."""
    lo, hi = moment_strip(m)
    step = min(0.1, 0.2 * min(-lo, hi))
    s = step * np.arange(-2, 3)
    k = log_char_fn(m, -1j * s, tau, rate, vstate).real
    c1 = (8 * (k[3] - k[1]) - (k[4] - k[0])) / (12 * step)
    c2 = (-k[4] + 16 * k[3] - 30 * k[2] + 16 * k[1] - k[0]) / (12 * step * step)
    c4 = (k[4] - 4 * k[3] + 6 * k[2] - 4 * k[1] + k[0]) / step**4
    return float(c1), float(max(c2, 0.0)), float(abs(c4))


def chernoff_range(m: ModelInstance, tau: float, rate: float = 0.0, vstate: float | None = None,
                   eps: float = 1e-10) -> tuple[float, float]:
    """Interval outside which each tail of log(S_tau / S_0) carries < eps mass,
    from the Chernoff bound P(X > x) <= exp(K(s) - s x), minimized over s."""
    lo, hi = moment_strip(m)
    c1, c2, _ = cumulants(m, tau, rate, vstate)
    sd = math.sqrt(c2) if c2 > 0 else 1e-3
    log_eps = math.log(eps)
    ends = []
    for sign, bound in ((1.0, hi), (-1.0, -lo)):
        cap = min(bound * 0.999, 60.0 / sd)
        ss = sign * np.geomspace(1e-3 / sd, cap, 80) if cap > 1e-3 / sd else np.array([])
        best = math.inf
        if ss.size:
            with np.errstate(all="ignore"):
                kk = log_char_fn(m, -1j * ss, tau, rate, vstate).real
            ok = np.isfinite(kk)
            if ok.any():
                x = (kk[ok] - log_eps) / np.abs(ss[ok])
                best = float(x.min())
        ends.append(best)
    right, left = ends
    return -left, right
