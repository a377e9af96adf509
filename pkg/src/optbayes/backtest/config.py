"""Flat ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored. Relative paths resolve against the
directory holding the config file. Recognized keys and defaults are listed in
``DEFAULTS``.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, fields
from pathlib import Path

from ..engine import Mode
from ..market_data import DEFAULT_EXPIRIES, DEFAULT_MONEYNESS, TRADING_DAY, OptionGrid
from ..models.density import LOG_DENSITY_FLOOR
from ..models.families import ModelFamily
from ..penalty import DEFAULT_NAIVE_WEIGHT, PenaltyMode


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _names(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _dates(text: str) -> tuple[dt.date, ...]:
    return tuple(dt.date.fromisoformat(v) for v in _names(text))


@dataclass(frozen=True)
class RunConfig:
    data: Path | None = None
    universe: Path | None = None
    beta: float = 0.99
    h: float = TRADING_DAY
    # a number, or "auto" to calibrate on the training window
    lam: str = "auto"
    lambda_variant: str = "universe"
    training_days: int = 60
    modes: tuple[str, ...] = tuple(m.value for m in Mode)
    penalty: str = PenaltyMode.STRUCTURED.value
    naive_weight: float = DEFAULT_NAIVE_WEIGHT
    floor: float = LOG_DENSITY_FLOOR
    family_prior: bool = False
    expiries: tuple[float, ...] = DEFAULT_EXPIRIES
    moneyness: tuple[float, ...] = DEFAULT_MONEYNESS
    products: bool = True
    quantiles: tuple[float, ...] = (0.1, 0.9)
    gnuplot: bool = False
    # universe building
    families: tuple[str, ...] = tuple(f.value for f in ModelFamily)
    snapshot_dates: tuple[dt.date, ...] = ()
    snapshot_count: int = 3
    window: int = 250
    n_points: int = 7
    max_per_family: int = 100
    max_grid: int = 5000
    fit_iterations: int = 500
    fit_restarts: int = 5
    seed: int = 0
    include: Path | None = None
    universe_out: Path | None = None
    prune_log: Path | None = None

    @property
    def grid(self) -> OptionGrid:
        return OptionGrid(self.expiries, self.moneyness)

    @property
    def mode_list(self) -> tuple[Mode, ...]:
        return tuple(Mode(m) for m in self.modes)

    def echo(self) -> dict[str, str]:
        """Every setting as text, for the manifest."""
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(x.isoformat() if isinstance(x, dt.date) else repr(x) if isinstance(x, float) else str(x)
                             for x in v)
            elif isinstance(v, float):
                v = repr(v)
            elif isinstance(v, Path):
                v = v.as_posix()
            out[f.name] = "" if v is None else str(v)
        return out


_KEYS = {"lambda": "lam"}
_PARSERS = {
    "data": Path, "universe": Path, "include": Path, "universe_out": Path, "prune_log": Path,
    "beta": float, "h": float, "lam": str, "lambda_variant": str, "training_days": int,
    "modes": _names, "penalty": str, "naive_weight": float, "floor": float, "family_prior": _bool,
    "expiries": _floats, "moneyness": _floats, "products": _bool, "quantiles": _floats, "gnuplot": _bool,
    "families": _names, "snapshot_dates": _dates, "snapshot_count": int, "window": int, "n_points": int,
    "max_per_family": int, "max_grid": int, "fit_iterations": int, "fit_restarts": int, "seed": int,
}
DEFAULTS = RunConfig()


def parse_config(text: str, base: Path = Path("."), source: str = "<config>") -> RunConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = _KEYS.get(key.strip(), key.strip())
        where = f"{source}:{lineno}"
        if not sep:
            raise ConfigError(f"{where}: expected key = value")
        if key not in _PARSERS:
            raise ConfigError(f"{where}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{where}: duplicate key {key!r}")
        try:
            parsed = _PARSERS[key](value.strip())
        except ValueError as exc:
            raise ConfigError(f"{where}: bad value for {key}: {exc}") from None
        if isinstance(parsed, Path) and not parsed.is_absolute():
            parsed = base / parsed
        values[key] = parsed
    cfg = RunConfig(**values)
    _validate(cfg, source)
    return cfg


def _validate(cfg: RunConfig, source: str) -> None:
    try:
        cfg.grid
        cfg.mode_list
        PenaltyMode(cfg.penalty)
        for f in cfg.families:
            ModelFamily(f)
        if cfg.lam != "auto" and not float(cfg.lam) > 0:
            raise ValueError("lambda must be positive or 'auto'")
        if cfg.lambda_variant not in ("universe", "black_scholes"):
            raise ValueError(f"unknown lambda_variant {cfg.lambda_variant!r}")
        if not 0 <= cfg.beta <= 1:
            raise ValueError("beta must lie in [0, 1]")
        if any(not 0 <= q <= 1 for q in cfg.quantiles):
            raise ValueError("quantiles must lie in [0, 1]")
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_config(text, path.parent, str(path))
