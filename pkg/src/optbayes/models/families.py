"""Model families, parameter layouts and immutable model instances."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum


class ModelFamily(str, Enum):
    BLACK_SCHOLES = "BlackScholes"
    CEV = "CEV"
    HESTON = "Heston"
    SABR = "SABR"
    BATES = "Bates"
    MERTON = "Merton"
    KOU = "Kou"
    VARIANCE_GAMMA = "VarianceGamma"
    NIG = "NIG"

    def __str__(self) -> str:
        return self.value

    @property
    def params(self) -> tuple[ParamSpec, ...]:
        return PARAMS[self]

    @property
    def param_names(self) -> tuple[str, ...]:
        return tuple(p.name for p in PARAMS[self])

    @property
    def param_count(self) -> int:
        """Number of free parameters (auxiliary vol state and fixed slots excluded)."""
        return sum(p.role == "free" for p in PARAMS[self])

    @property
    def vol_state(self) -> str | None:
        return VOL_STATE.get(self)

    @property
    def is_stochastic_vol(self) -> bool:
        return self in VOL_STATE

    @property
    def has_char_fn(self) -> bool:
        return self not in (ModelFamily.CEV, ModelFamily.SABR)


@dataclass(frozen=True)
class ParamSpec:
    name: str
    default: float
    # "scale" axes are gridded log-uniformly, "shape" axes uniformly
    kind: str = "scale"
    # "free": counted and fitted; "state": auxiliary vol state; "fixed": held at default
    role: str = "free"
    # calibration box, typical of published fits; keeps fits out of degenerate limits
    bounds: tuple[float, float] = (0.01, 2.0)


_F = ModelFamily
_VOL = (0.01, 2.0)
_RHO = (-0.99, 0.99)
_VAR = (1e-3, 1.0)
_LAM = (0.01, 10.0)
_JUMP = (-0.5, 0.5)
PARAMS: dict[ModelFamily, tuple[ParamSpec, ...]] = {
    _F.BLACK_SCHOLES: (ParamSpec("sigma", 0.2, bounds=_VOL),),
    _F.CEV: (ParamSpec("sigma", 0.2, bounds=_VOL), ParamSpec("beta", 0.5, "shape", bounds=(0.01, 1.0))),
    _F.HESTON: (
        ParamSpec("kappa", 2.0, bounds=(0.05, 20.0)), ParamSpec("theta", 0.04, bounds=_VAR),
        ParamSpec("xi", 0.5, bounds=(0.01, 3.0)), ParamSpec("rho", -0.7, "shape", bounds=_RHO),
        ParamSpec("v0", 0.04, role="state", bounds=_VAR),
    ),
    _F.SABR: (
        ParamSpec("alpha", 0.2, bounds=_VOL), ParamSpec("rho", -0.5, "shape", bounds=_RHO),
        ParamSpec("nu", 0.6, bounds=(0.01, 3.0)), ParamSpec("beta", 0.5, "shape", role="fixed", bounds=(0.0, 1.0)),
    ),
    _F.BATES: (
        ParamSpec("kappa", 2.0, bounds=(0.05, 20.0)), ParamSpec("theta", 0.04, bounds=_VAR),
        ParamSpec("xi", 0.4, bounds=(0.01, 3.0)), ParamSpec("rho", -0.7, "shape", bounds=_RHO),
        ParamSpec("lam", 0.5, bounds=_LAM), ParamSpec("mu_j", -0.1, "shape", bounds=_JUMP),
        ParamSpec("v0", 0.04, role="state", bounds=_VAR),
    ),
    _F.MERTON: (
        ParamSpec("sigma", 0.15, bounds=_VOL), ParamSpec("lam", 0.5, bounds=_LAM),
        ParamSpec("mu_j", -0.1, "shape", bounds=_JUMP), ParamSpec("sigma_j", 0.1, bounds=(0.005, 0.5)),
    ),
    _F.KOU: (
        ParamSpec("sigma", 0.15, bounds=_VOL), ParamSpec("lam", 1.0, bounds=_LAM),
        ParamSpec("p_up", 0.3, "shape", bounds=(0.01, 0.99)), ParamSpec("eta", 10.0, bounds=(1.5, 100.0)),
    ),
    _F.VARIANCE_GAMMA: (
        ParamSpec("sigma", 0.2, bounds=_VOL), ParamSpec("nu", 0.2, bounds=(0.005, 2.0)),
        ParamSpec("theta", -0.15, "shape", bounds=(-1.0, 1.0)),
    ),
    # NIG beta is further confined by alpha; see the calibration coordinates
    _F.NIG: (
        ParamSpec("alpha", 10.0, bounds=(1.0, 100.0)), ParamSpec("beta", -3.0, "shape", bounds=(-100.0, 99.0)),
        ParamSpec("delta", 0.2, bounds=(0.01, 5.0)),
    ),
}

VOL_STATE = {_F.HESTON: "v0", _F.BATES: "v0", _F.SABR: "alpha"}


class InadmissibleError(ValueError):
    pass


@dataclass(frozen=True)
class ModelInstance:
    """A (family, parameter vector) pair. Hashable, so it can key caches."""

    family: ModelFamily
    values: tuple[float, ...]

    def __post_init__(self):
        fam = ModelFamily(self.family)
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "values", vals)
        if len(vals) != len(fam.params):
            raise ValueError(f"{fam} takes {len(fam.params)} values, got {len(vals)}")

    @classmethod
    def create(cls, family: ModelFamily | str, **params: float) -> ModelInstance:
        fam = ModelFamily(family)
        unknown = set(params) - set(fam.param_names)
        if unknown:
            raise ValueError(f"unknown {fam} parameters: {sorted(unknown)}")
        return cls(fam, tuple(params.get(p.name, p.default) for p in fam.params))

    @property
    def params(self) -> dict[str, float]:
        return dict(zip(self.family.param_names, self.values))

    def __getitem__(self, name: str) -> float:
        return self.values[self.family.param_names.index(name)]

    def replace(self, **params: float) -> ModelInstance:
        return ModelInstance.create(self.family, **{**self.params, **params})

    @property
    def vol_state(self) -> float | None:
        name = self.family.vol_state
        return None if name is None else self[name]

    def with_vol_state(self, vstate: float | None) -> ModelInstance:
        if vstate is None:
            return self
        if not self.family.is_stochastic_vol:
            raise ValueError(f"{self.family} carries no volatility state")
        return self.replace(**{self.family.vol_state: vstate})

    def serialize(self) -> str:
        return ",".join([self.family.value] + [f"{n}={v!r}" for n, v in zip(self.family.param_names, self.values)])

    @classmethod
    def parse(cls, line: str) -> ModelInstance:
        family, *pairs = [s.strip() for s in line.strip().split(",")]
        params = {}
        for pair in pairs:
            name, _, value = pair.partition("=")
            params[name.strip()] = float(value)
        return cls.create(family, **params)

    def __str__(self) -> str:
        return self.serialize()

    def admissible(self) -> bool:
        try:
            check_admissible(self)
        except InadmissibleError:
            return False
        return True


def check_admissible(m: ModelInstance) -> None:
    """Raise InadmissibleError unless the instance defines a valid risk-neutral model
    whose characteristic function (where defined) exists on the pricing strip."""
    p = m.params
    f = m.family
    bad = []

    def need(cond, what):
        if not cond:
            bad.append(what)

    if any(not math.isfinite(v) for v in m.values):
        raise InadmissibleError(f"{m}: non-finite parameter")
    if f in (_F.BLACK_SCHOLES, _F.CEV, _F.MERTON, _F.KOU, _F.VARIANCE_GAMMA):
        need(p["sigma"] > 0, "sigma > 0")
    if f is _F.CEV:
        need(0 < p["beta"] <= 1, "0 < beta <= 1")
    if f in (_F.HESTON, _F.BATES):
        need(p["kappa"] > 0 and p["theta"] > 0 and p["xi"] > 0, "kappa, theta, xi > 0")
        need(p["v0"] > 0, "v0 > 0")
    if f in (_F.HESTON, _F.BATES, _F.SABR):
        need(abs(p["rho"]) < 1, "|rho| < 1")
    if f is _F.SABR:
        need(p["alpha"] > 0 and p["nu"] >= 0, "alpha > 0, nu >= 0")
        need(0 <= p["beta"] <= 1, "0 <= beta <= 1")
    if f in (_F.BATES, _F.MERTON, _F.KOU):
        need(p["lam"] >= 0, "lam >= 0")
    if f is _F.MERTON:
        need(p["sigma_j"] >= 0, "sigma_j >= 0")
    if f is _F.KOU:
        need(0 <= p["p_up"] <= 1, "0 <= p_up <= 1")
        need(p["eta"] > 1, "eta > 1")
    if f is _F.VARIANCE_GAMMA:
        need(p["nu"] > 0, "nu > 0")
        need(1 - p["theta"] * p["nu"] - 0.5 * p["sigma"] ** 2 * p["nu"] > 0, "1 - theta nu - sigma^2 nu / 2 > 0")
    if f is _F.NIG:
        need(p["alpha"] > 0 and p["delta"] > 0, "alpha, delta > 0")
        need(p["alpha"] > abs(p["beta"]) and p["alpha"] > abs(p["beta"] + 1), "alpha > |beta|, |beta + 1|")
    if bad:
        raise InadmissibleError(f"{m}: requires {'; '.join(bad)}")


def read_universe(path) -> tuple[list[ModelInstance], dict[str, str]]:
    """Parse a universe file: one serialized instance per line; ``# key: value``
    header comments are returned as metadata."""
    universe, meta = [], {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, sep, value = line[1:].partition(":")
                if sep:
                    meta[key.strip()] = value.strip()
                continue
            try:
                universe.append(ModelInstance.parse(line))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return universe, meta


def universe_text(universe, meta: dict[str, str] | None = None) -> str:
    lines = [f"# {k}: {v}" for k, v in (meta or {}).items()]
    lines += [m.serialize() for m in universe]
    return "\n".join(lines) + "\n"


def write_universe(path, universe, meta: dict[str, str] | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(universe_text(universe, meta))
