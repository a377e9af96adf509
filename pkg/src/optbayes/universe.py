"""Building a fixed model universe: snapshot calibration, grid spanning and
likelihood-based pruning."""

from __future__ import annotations

import csv
import datetime as dt
import itertools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .engine import EngineConfig, run
from .market_data import TRADING_DAY, DataError, OptionGrid, SurfaceObservation, normalize
from .models.density import InversionError, interval_masses
from .models.families import InadmissibleError, ModelFamily, ModelInstance, check_admissible
from .models.pricing import PricingError, model_surface
from .penalty import penalty_structured

logger = logging.getLogger(__name__)

F = ModelFamily

HIST_BINS = 41
HIST_SPAN = 6.0
MIN_WINDOW = 60
FIT_ITERATIONS = 500
FIT_RESTARTS = 5
JITTER = 0.5
# objective value for parameter vectors that cannot be priced
BAD_OBJECTIVE = 1e6


# ---------------------------------------------------------------- calibration

def _sigmoid(u: float) -> float:
    return 0.5 * (1.0 + math.tanh(0.5 * u))


def _logit(p: float) -> float:
    p = min(max(p, 1e-12), 1.0 - 1e-12)
    return math.log(p / (1.0 - p))


def _box(family: ModelFamily, name: str, values: dict[str, float]) -> tuple[float, float, bool]:
    """Calibration interval and whether it is traversed in log scale."""
    spec = next(p for p in family.params if p.name == name)
    lo, hi = spec.bounds
    if family is F.NIG and name == "beta":
        # alpha > |beta| and alpha > |beta + 1|
        a = values["alpha"]
        lo, hi = -a + 1e-9, a - 1.0 - 1e-9
    return lo, hi, spec.kind == "scale" and lo > 0


def _to_free(family: ModelFamily, name: str, value: float, values: dict[str, float]) -> float:
    lo, hi, log = _box(family, name, values)
    if log:
        return _logit((math.log(value) - math.log(lo)) / (math.log(hi) - math.log(lo)))
    return _logit((value - lo) / (hi - lo))


def _from_free(family: ModelFamily, name: str, u: float, values: dict[str, float]) -> float:
    lo, hi, log = _box(family, name, values)
    s = _sigmoid(u)
    if log:
        return math.exp(math.log(lo) + s * (math.log(hi) - math.log(lo)))
    return lo + s * (hi - lo)


def fit_axes(family: ModelFamily) -> tuple[str, ...]:
    """Parameters adjusted by calibration and spanned by the grid (fixed slots excluded)."""
    return tuple(p.name for p in family.params if p.role != "fixed")


def _encode(m: ModelInstance) -> np.ndarray:
    vals = m.params
    return np.array([_to_free(m.family, n, vals[n], vals) for n in fit_axes(m.family)])


def _decode(template: ModelInstance, u: np.ndarray) -> ModelInstance:
    vals = dict(template.params)
    # NIG beta depends on alpha, which precedes it
    for n, x in zip(fit_axes(template.family), u):
        vals[n] = _from_free(template.family, n, float(x), vals)
    return ModelInstance.create(template.family, **vals)


def return_histogram(returns, bins: int = HIST_BINS, span: float = HIST_SPAN) -> tuple[np.ndarray, np.ndarray]:
    """Equal-width bin edges over mean +- span sample SDs and empirical bin probabilities."""
    r = np.asarray(returns, dtype=float)
    mu, sd = r.mean(), r.std(ddof=1)
    if not sd > 0:
        raise ValueError("returns window has zero dispersion")
    edges = np.linspace(mu - span * sd, mu + span * sd, bins + 1)
    counts, _ = np.histogram(r, edges)
    return edges, counts / r.size


def histogram_misfit(m: ModelInstance, edges: np.ndarray, probs: np.ndarray, h: float, rate: float) -> float:
    """Sum of squared differences between model and empirical bin probabilities."""
    return float(np.sum((interval_masses(m, edges, h, rate) - probs) ** 2))


@dataclass(frozen=True)
class FitResult:
    instance: ModelInstance
    objective: float
    surface_residual: float
    histogram_residual: float
    converged: bool


@dataclass(frozen=True)
class CalibrationSnapshot:
    date: dt.date
    fits: dict[ModelFamily, FitResult] = field(default_factory=dict)


def fit_objective(m: ModelInstance, obs: SurfaceObservation, edges: np.ndarray, probs: np.ndarray,
                  h: float) -> tuple[float, float]:
    """(surface penalty at lambda = 1, histogram misfit) for one instance."""
    q = penalty_structured(model_surface(m, obs.rate, obs.grid), normalize(obs))
    return q, histogram_misfit(m, edges, probs, h, obs.rate)


def least_squares_fit(family: ModelFamily | str, obs: SurfaceObservation, returns_window, *,
                      start: ModelInstance | None = None, h: float = TRADING_DAY, maxiter: int = FIT_ITERATIONS,
                      restarts: int = FIT_RESTARTS, seed: int = 0) -> FitResult:
    """Minimize surface penalty plus histogram misfit by Nelder-Mead.

    The search runs in unconstrained coordinates mapped onto each parameter's
    calibration box. The first start is ``start`` (default: the family's typical
    values); later starts jitter the best point so far.
    """
    family = ModelFamily(family)
    returns_window = np.asarray(returns_window, dtype=float)
    if returns_window.size < MIN_WINDOW:
        raise ValueError(f"returns window needs at least {MIN_WINDOW} returns, got {returns_window.size}")
    edges, probs = return_histogram(returns_window)
    template = start if start is not None else ModelInstance.create(family)
    if template.family is not family:
        raise ValueError("start instance belongs to another family")
    market = normalize(obs)

    def objective(u):
        try:
            m = _decode(template, u)
            check_admissible(m)
            q = penalty_structured(model_surface(m, obs.rate, obs.grid), market)
            val = q + histogram_misfit(m, edges, probs, h, obs.rate)
        except (InadmissibleError, PricingError, InversionError, ValueError, ArithmeticError):
            return BAD_OBJECTIVE
        return val if math.isfinite(val) else BAD_OBJECTIVE

    rng = np.random.default_rng(seed)
    best_u = _encode(template)
    best_f = objective(best_u)
    converged = False
    x0 = best_u
    for r in range(max(restarts, 1)):
        if r > 0:
            x0 = best_u + JITTER * rng.standard_normal(best_u.size)
        res = minimize(objective, x0, method="Nelder-Mead",
                       options={"maxiter": maxiter, "xatol": 1e-8, "fatol": 1e-14, "adaptive": best_u.size > 3})
        if res.fun < best_f:
            best_u, best_f = res.x, float(res.fun)
        converged |= bool(res.success)
    m = _decode(template, best_u)
    q, hist = fit_objective(m, obs, edges, probs, h)
    if not converged:
        logger.warning("%s fit on %s did not converge within %d iterations", family, obs.date, maxiter)
    return FitResult(m, q + hist, q, hist, converged)


def calibrate_snapshots(series: list[SurfaceObservation], dates, families=tuple(ModelFamily), *,
                        window: int = 250, h: float = TRADING_DAY, maxiter: int = FIT_ITERATIONS,
                        restarts: int = FIT_RESTARTS, seed: int = 0) -> list[CalibrationSnapshot]:
    """Fit every family at each snapshot date using the trailing returns window."""
    index = {o.date: i for i, o in enumerate(series)}
    logs = np.log([o.spot for o in series])
    out = []
    for date in dates:
        i = index[date]
        rets = np.diff(logs[max(0, i - window):i + 1])
        fits = {}
        for fam in families:
            fits[ModelFamily(fam)] = least_squares_fit(fam, series[i], rets, h=h, maxiter=maxiter,
                                                       restarts=restarts, seed=seed)
            logger.info("snapshot %s %s objective %.3g", date, fam, fits[ModelFamily(fam)].objective)
        out.append(CalibrationSnapshot(date, fits))
    return out


# ---------------------------------------------------------------- grid spanning

@dataclass(frozen=True)
class Axis:
    low: float
    high: float
    n_points: int = 7
    spacing: str = "auto"  # auto | linear | log

    def __post_init__(self):
        if self.low > self.high:
            raise ValueError(f"axis low {self.low} exceeds high {self.high}")
        if self.n_points < 1:
            raise ValueError("axis needs at least one point")

    def values(self, kind: str = "scale") -> np.ndarray:
        if self.low == self.high:
            return np.array([self.low])
        log = self.spacing == "log" or (self.spacing == "auto" and kind == "scale")
        if log and self.low > 0:
            return np.geomspace(self.low, self.high, self.n_points)
        return np.linspace(self.low, self.high, self.n_points)


@dataclass(frozen=True)
class UniverseSpec:
    n_points: int = 7
    max_per_family: int = 100
    # cap on the Cartesian product per family; points per axis shrink to respect it
    max_grid: int = 5000
    spacing: str = "auto"
    axes: dict = field(default_factory=dict)  # {(family, name): Axis} overrides

    def __post_init__(self):
        if self.n_points < 2:
            raise ValueError("n_points must be at least 2")


def family_axes(family: ModelFamily, snapshots: list[CalibrationSnapshot], spec: UniverseSpec) -> dict[str, np.ndarray]:
    """Grid values per fitted parameter spanning the snapshot range."""
    names = fit_axes(family)
    fitted = [s.fits[family].instance for s in snapshots if family in s.fits]
    n = spec.n_points
    while n > 2 and n ** len(names) > spec.max_grid:
        n -= 1
    kinds = {p.name: p.kind for p in family.params}
    out = {}
    for name in names:
        axis = spec.axes.get((family, name))
        if axis is None:
            vals = [m[name] for m in fitted]
            axis = Axis(min(vals), max(vals), n, spec.spacing)
        out[name] = axis.values(kinds[name])
    return out


def span_grid(snapshots: list[CalibrationSnapshot], spec: UniverseSpec = UniverseSpec(), *,
              rate: float | None = None, grid: OptionGrid | None = None) -> list[ModelInstance]:
    """Cartesian grid per family between the lowest and highest fitted values,
    inadmissible combinations dropped. Given ``rate`` and ``grid``, combinations
    whose option surface cannot be computed there are dropped as well."""
    if len(snapshots) < 2:
        raise ValueError("span_grid needs at least two snapshots")
    families = [f for f in ModelFamily if any(f in s.fits for s in snapshots)]
    universe = []
    for fam in families:
        axes = family_axes(fam, snapshots, spec)
        base = next(s.fits[fam].instance for s in snapshots if fam in s.fits)
        kept = unpriceable = 0
        for combo in itertools.product(*axes.values()):
            m = base.replace(**dict(zip(axes, (float(v) for v in combo))))
            if not m.admissible():
                continue
            if rate is not None and grid is not None:
                try:
                    model_surface(m, rate, grid)
                except (PricingError, InversionError, DataError, ArithmeticError):
                    unpriceable += 1
                    continue
            universe.append(m)
            kept += 1
        if kept == 0:
            raise InadmissibleError(f"every {fam} grid combination is inadmissible or unpriceable")
        if unpriceable:
            logger.warning("%s grid: dropped %d instances that could not be priced", fam, unpriceable)
        logger.info("%s grid: %d instances", fam, kept)
    return universe


# ---------------------------------------------------------------- pruning

@dataclass(frozen=True)
class PruneRecord:
    date: dt.date
    family: ModelFamily
    best_instance_id: int
    ell_best: float


@dataclass(frozen=True)
class PruneResult:
    universe: list[ModelInstance]
    log: list[PruneRecord]
    # selection distance: largest best-minus-ell gap admitted, per family
    distance: dict[ModelFamily, float]


def prune(candidates: list[ModelInstance], data: list[SurfaceObservation], target: int = 100,
          config: EngineConfig = EngineConfig()) -> PruneResult:
    """Keep, per family, the instances closest in log-likelihood to the family's
    per-date best at some date, at most ``target`` of them.

    An instance's gap is min over dates of (best ell - its ell); per-date winners
    have gap zero. Taking the ``target`` smallest gaps (ties by candidate order)
    is the largest distance threshold whose kept count does not exceed target.
    ``best_instance_id`` in the log indexes ``candidates``.
    """
    if not candidates:
        raise ValueError("no candidates to prune")
    if len(data) < 2:
        raise ValueError("pruning needs at least two observations")
    kept_idx, log, distance = [], [], {}
    for fam in ModelFamily:
        idx = [i for i, m in enumerate(candidates) if m.family is fam]
        if not idx:
            continue
        members = [candidates[i] for i in idx]
        # the first date carries no evidence (every ell is zero), so it is skipped
        ell = run(data, members, config).ell[1:]
        best = ell.max(axis=1)
        arg = ell.argmax(axis=1)
        for t, obs in enumerate(data[1:]):
            log.append(PruneRecord(obs.date, fam, idx[int(arg[t])], float(best[t])))
        gap = (best[:, None] - ell).min(axis=0)
        if len(idx) <= target:
            chosen = list(range(len(idx)))
        else:
            winners = np.unique(arg)
            if winners.size > target:
                # more per-date winners than slots: keep the most frequent winners
                freq = np.bincount(arg, minlength=len(idx))
                chosen = sorted(winners, key=lambda j: (-freq[j], j))[:target]
                logger.warning("%s: %d per-date winners exceed target %d", fam, winners.size, target)
            else:
                chosen = sorted(range(len(idx)), key=lambda j: (gap[j], j))[:target]
        distance[fam] = float(gap[chosen].max())
        kept_idx += [idx[j] for j in sorted(chosen)]
        logger.info("%s: kept %d of %d (distance %.4g)", fam, len(chosen), len(idx), distance[fam])
    kept_idx.sort()
    return PruneResult([candidates[i] for i in kept_idx], log, distance)


def write_prune_log(path, log: list[PruneRecord]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "family", "best_instance_id", "ell_best"])
        for r in log:
            w.writerow([r.date.isoformat(), r.family.value, r.best_instance_id, repr(r.ell_best)])
