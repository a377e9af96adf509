"""End-to-end backtests and universe construction driven by a RunConfig."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import __version__
from ..engine import EngineConfig, Mode, RunResult, run
from ..market_data import SurfaceObservation, load_series
from ..models.families import ModelFamily, ModelInstance, read_universe, universe_text, write_universe
from ..models.pricing import model_deltas, model_surface
from ..penalty import calibrate_lambda
from ..universe import UniverseSpec, calibrate_snapshots, prune, span_grid, write_prune_log
from .config import RunConfig

logger = logging.getLogger(__name__)


def _fmt(x: float) -> str:
    return repr(float(x))


def universe_digest(universe: list[ModelInstance]) -> str:
    return hashlib.sha256(universe_text(universe).encode("utf-8")).hexdigest()


def engine_config(cfg: RunConfig, lam: float, mode: Mode = Mode.COMBINED) -> EngineConfig:
    return EngineConfig(beta=cfg.beta, h=cfg.h, lam=lam, mode=mode, penalty_mode=cfg.penalty,
                        naive_weight=cfg.naive_weight, floor=cfg.floor, family_prior=cfg.family_prior)


def resolve_lambda(cfg: RunConfig, series: list[SurfaceObservation], universe: list[ModelInstance]) -> float:
    if cfg.lam != "auto":
        return float(cfg.lam)
    training = series[:max(cfg.training_days, 2)]
    return calibrate_lambda(training, universe, h=cfg.h, variant=cfg.lambda_variant)


@dataclass(frozen=True, eq=False)
class BacktestResult:
    lam: float
    universe: list[ModelInstance]
    series: list[SurfaceObservation]
    results: dict[Mode, RunResult]

    def family_weights(self, mode: Mode) -> dict[ModelFamily, np.ndarray]:
        """Per-family posterior paths, one value per date."""
        res = self.results[Mode(mode)]
        w = res.weights(self.universe)
        fam = np.array([m.family.value for m in self.universe])
        return {f: w[:, fam == f.value].sum(axis=1) for f in ModelFamily if f.value in fam}


def backtest(cfg: RunConfig, series: list[SurfaceObservation], universe: list[ModelInstance]) -> BacktestResult:
    if not universe:
        raise ValueError("empty model universe")
    lam = resolve_lambda(cfg, series, universe)
    results = {mode: run(series, universe, engine_config(cfg, lam, mode)) for mode in cfg.mode_list}
    return BacktestResult(lam, universe, series, results)


def write_outputs(out: Path, bt: BacktestResult, cfg: RunConfig, universe_meta: dict[str, str]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    uni = bt.universe
    with (out / "posterior_instances.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode", "date", "instance", "family", "log_likelihood", "weight"])
        for mode, res in bt.results.items():
            weights = res.weights(uni)
            for t, date in enumerate(res.dates):
                for j, m in enumerate(uni):
                    w.writerow([mode.value, date.isoformat(), j, m.family.value, _fmt(res.ell[t, j]),
                                _fmt(weights[t, j])])
    for mode in bt.results:
        fam = bt.family_weights(mode)
        with (out / f"posterior_{mode.value}.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "family", "weight"])
            for t, date in enumerate(bt.results[mode].dates):
                for f, path in fam.items():
                    w.writerow([date.isoformat(), f.value, _fmt(path[t])])
        if cfg.products:
            write_products(out / f"products_{mode.value}.csv", bt, mode, cfg.quantiles)
    if cfg.gnuplot:
        write_gnuplot(out / "posterior.gp", bt)
    write_universe(out / "universe.txt", uni, universe_meta)
    manifest = {
        "version": __version__,
        "config": cfg.echo(),
        "lambda": bt.lam,
        "universe_sha256": universe_digest(uni),
        "universe_size": len(uni),
        "snapshot_dates": universe_meta.get("snapshot_dates", ""),
        "data_range": [bt.series[0].date.isoformat(), bt.series[-1].date.isoformat()],
        "n_days": len(bt.series),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_products(path: Path, bt: BacktestResult, mode: Mode, quantiles) -> None:
    """Posterior mean price, price quantiles and mixture delta per date and grid
    instrument. Prices are in currency for the forward-moneyness strikes."""
    res = bt.results[mode]
    weights = res.weights(bt.universe)
    grid = bt.series[0].grid
    cache: dict[float, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "expiry", "moneyness", "price"] + [f"price_q{q:g}" for q in quantiles] + ["delta"])
        for t, obs in enumerate(bt.series):
            if obs.rate not in cache:
                unit = np.stack([model_surface(m, obs.rate, grid).z[:, 1:].ravel() for m in bt.universe])
                deltas = np.stack([model_deltas(m, obs.rate, grid).ravel() for m in bt.universe])
                cache[obs.rate] = (unit, deltas, np.argsort(unit, axis=0, kind="stable"))
            unit, deltas, order = cache[obs.rate]
            pi = weights[t]
            mean = pi @ unit
            hedge = pi @ deltas
            cdf = np.cumsum(pi[order], axis=0)
            qs = []
            for q in quantiles:
                # left-continuous inverse of the weighted empirical distribution
                i = np.minimum((cdf < q).sum(axis=0), len(pi) - 1)
                qs.append(unit[order[i, np.arange(unit.shape[1])], np.arange(unit.shape[1])])
            for a in range(unit.shape[1]):
                mi, ji = divmod(a, grid.shape[1])
                w.writerow([obs.date.isoformat(), _fmt(grid.expiries[mi]), _fmt(grid.moneyness[ji]),
                            _fmt(obs.spot * mean[a])] + [_fmt(obs.spot * qv[a]) for qv in qs] + [_fmt(hedge[a])])


def write_gnuplot(path: Path, bt: BacktestResult) -> None:
    lines = ["set datafile separator ','", "set xdata time", "set timefmt '%Y-%m-%d'", "set format x '%Y-%m'",
             "set yrange [0:1]", "set key outside", "set terminal pngcairo size 1000,600"]
    for mode in bt.results:
        fams = list(bt.family_weights(mode))
        lines.append(f"set output 'posterior_{mode.value}.png'")
        lines.append(f"set title 'Posterior by family ({mode.value})'")
        plots = [f"'posterior_{mode.value}.csv' using 1:(strcol(2) eq '{f.value}' ? $3 : NaN) with lines title '{f.value}'"
                 for f in fams]
        lines.append("plot " + ", \\\n     ".join(plots))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def run_from_config(cfg: RunConfig, out: Path) -> BacktestResult:
    if cfg.data is None or cfg.universe is None:
        raise ValueError("run needs both 'data' and 'universe' keys")
    series = load_series(cfg.data, cfg.grid)
    if len(series) < 2:
        raise ValueError(f"{cfg.data}: need at least two complete dates, found {len(series)}")
    universe, meta = read_universe(cfg.universe)
    bt = backtest(cfg, series, universe)
    write_outputs(Path(out), bt, cfg, meta)
    return bt


def build_universe(cfg: RunConfig, series: list[SurfaceObservation] | None = None,
                   extra: list[ModelInstance] = ()) -> tuple[list[ModelInstance], dict[str, str]]:
    """Snapshot calibration, grid spanning, then pruning over the whole series."""
    if series is None:
        if cfg.data is None:
            raise ValueError("build-universe needs a 'data' key")
        series = load_series(cfg.data, cfg.grid)
    dates = cfg.snapshot_dates
    if not dates:
        lo = min(cfg.window, len(series) - 1)
        picks = np.linspace(lo, len(series) - 1, max(cfg.snapshot_count, 2)).round().astype(int)
        dates = tuple(series[i].date for i in sorted(set(picks.tolist())))
    snaps = calibrate_snapshots(series, dates, cfg.families, window=cfg.window, h=cfg.h,
                                maxiter=cfg.fit_iterations, restarts=cfg.fit_restarts, seed=cfg.seed)
    spec = UniverseSpec(n_points=cfg.n_points, max_per_family=cfg.max_per_family, max_grid=cfg.max_grid)
    candidates = span_grid(snaps, spec, rate=series[0].rate, grid=series[0].grid)
    extra = list(extra)
    if cfg.include is not None:
        extra += read_universe(cfg.include)[0]
    candidates += [m for m in extra if m not in set(candidates)]
    lam = resolve_lambda(cfg, series, candidates)
    pruned = prune(candidates, series, cfg.max_per_family, engine_config(cfg, lam, Mode.COMBINED))
    if cfg.prune_log is not None:
        write_prune_log(cfg.prune_log, pruned.log)
    meta = {"snapshot_dates": ",".join(d.isoformat() for d in dates), "lambda": repr(float(lam)),
            "candidates": str(len(candidates)), "instances": str(len(pruned.universe))}
    return pruned.universe, meta
