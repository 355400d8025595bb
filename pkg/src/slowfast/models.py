"""Registry of the slow-fast ODE systems.

Each model is a plain data object holding its parameter schema, state
labels, admissible sign region and evaluation callbacks.  Models whose
right-hand side has the Kolmogorov form ``x_i' = x_i * g_i(x)`` in some
coordinates also expose the per-capita rates ``g_i`` so the integrator can
work in logarithmic coordinates there (see :mod:`slowfast.integrator`).
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

POSITIVE = "positive"
NONNEGATIVE = "nonnegative"
REAL = "real"

RhsFn = Callable[[Mapping[str, float], np.ndarray], np.ndarray]


class ModelError(ValueError):
    """Raised for unknown models, bad parameter sets and bad states."""


@dataclass(frozen=True)
class Param:
    name: str
    default: float
    sign: str = POSITIVE

    def admits(self, value: float) -> bool:
        if not math.isfinite(value):
            return False
        if self.sign == POSITIVE:
            return value > 0
        if self.sign == NONNEGATIVE:
            return value >= 0
        return True


@dataclass(frozen=True)
class ModelDef:
    id: str
    dim: int
    param_schema: tuple[Param, ...]
    state_labels: tuple[str, ...]
    citation: str
    fn: RhsFn
    jac: RhsFn | None = None
    # per-capita rates g_i for the coordinates listed in log_coords
    per_capita: RhsFn | None = None
    log_coords: tuple[int, ...] = ()
    # +1: coordinate must stay >= 0, -1: must stay <= 0, 0: unconstrained
    domain: tuple[int, ...] = ()
    x0: tuple[float, ...] = ()
    bif_param: str | None = None
    bif_range: tuple[float, float] | None = None
    observable: int = 0
    seed_fn: Callable[[Mapping[str, float]], list[np.ndarray]] | None = None
    # parameter values at which the equilibrium problem degenerates
    degenerate: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.state_labels) != self.dim:
            raise ModelError(f"{self.id}: state_labels length != dim")
        if not self.domain:
            object.__setattr__(self, "domain", (0,) * self.dim)
        if not self.x0:
            object.__setattr__(self, "x0", (0.0,) * self.dim)

    @property
    def param_names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.param_schema)

    def param(self, name: str) -> Param:
        for p in self.param_schema:
            if p.name == name:
                return p
        raise ModelError(f"{self.id}: unknown parameter {name!r}")

    def defaults(self) -> dict[str, float]:
        return {p.name: float(p.default) for p in self.param_schema}

    def params(self, bif_param: str | None = None, allow_cross: bool = False,
               **overrides: float) -> "ParameterSet":
        values = self.defaults()
        for k, v in overrides.items():
            if k not in values:
                raise ModelError(f"{self.id}: unknown parameter {k!r}")
            values[k] = float(v)
        return ParameterSet(self, values, bif_param, allow_cross)

    def seeds(self, values: Mapping[str, float]) -> list[np.ndarray]:
        if self.seed_fn is None:
            return [np.asarray(self.x0, dtype=float)]
        return self.seed_fn(values)


@dataclass(frozen=True, eq=False)
class ParameterSet:
    """Complete, validated parameter values for one model."""

    model_id: str
    values: Mapping[str, float]
    bif_param: str | None = None
    allow_cross: bool = False

    def __post_init__(self) -> None:
        # an unregistered ModelDef may be passed in place of its id
        model = get_model(self.model_id)
        object.__setattr__(self, "model_id", model.id)
        object.__setattr__(self, "_model", model)
        vals = {k: float(v) for k, v in dict(self.values).items()}
        unknown = set(vals) - set(model.param_names)
        if unknown:
            raise ModelError(f"{model.id}: unknown parameters {sorted(unknown)}")
        missing = [n for n in model.param_names if n not in vals]
        if missing:
            raise ModelError(f"{model.id}: incomplete parameter set, missing {missing}")
        if self.bif_param is not None and self.bif_param not in vals:
            raise ModelError(f"{model.id}: unknown bifurcation parameter {self.bif_param!r}")
        for p in model.param_schema:
            v = vals[p.name]
            if not math.isfinite(v):
                raise ModelError(f"{model.id}: parameter {p.name} is not finite")
            if p.admits(v):
                continue
            if self.allow_cross and p.name == self.bif_param:
                continue
            raise ModelError(f"{model.id}: parameter {p.name}={v} violates sign constraint {p.sign}")
        object.__setattr__(self, "values", vals)

    def __getitem__(self, name: str) -> float:
        return self.values[name]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ParameterSet):
            return NotImplemented
        return (self.model_id, dict(self.values), self.bif_param, self.allow_cross) == (
            other.model_id, dict(other.values), other.bif_param, other.allow_cross)

    @property
    def model(self) -> "ModelDef":
        return self._model

    def with_value(self, name: str, value: float) -> "ParameterSet":
        vals = dict(self.values)
        vals[name] = float(value)
        return ParameterSet(self._model, vals, self.bif_param, self.allow_cross)

    def crossing(self, bif_param: str) -> "ParameterSet":
        """Copy that lets ``bif_param`` leave its sign region."""
        return ParameterSet(self._model, self.values, bif_param, True)

    def to_dict(self) -> dict:
        return {"model": self.model_id, "params": dict(self.values)}


# ---------------------------------------------------------------------------
# model equations


def _ushape(p, s):
    x, y = s
    return np.array([y - 0.5 * x * x, -p["eps"] * x * (1.0 + x * x)])


def _ushape_jac(p, s):
    x, _ = s
    return np.array([[-x, 1.0], [-p["eps"] * (1.0 + 3.0 * x * x), 0.0]])


def _vanderpol(p, s):
    x, y = s
    return np.array([(x - x ** 3 / 3.0 + y) / p["eps"], -x])


def _vanderpol_jac(p, s):
    x, _ = s
    e = p["eps"]
    return np.array([[(1.0 - x * x) / e, 1.0 / e], [-1.0, 0.0]])


def _hiv_rate(p, x, y):
    return p["B"] + p["A"] * y / (y + p["C"])


def _hiv(p, s):
    x, y = s
    inf = _hiv_rate(p, x, y) * x * y
    return np.array([1.0 - p["D"] * x - inf, inf - y])


def _hiv_jac(p, s):
    x, y = s
    q = _hiv_rate(p, x, y)
    dx = q * y
    dy = x * (q + y * p["A"] * p["C"] / (y + p["C"]) ** 2)
    return np.array([[-p["D"] - dx, -dy], [dx, dy - 1.0]])


def _hiv_pc(p, s):
    x, y = s
    return np.array([_hiv_rate(p, x, y) * x - 1.0])


def _gause_pc(p, s):
    x, y = s
    return np.array([
        p["r"] * (1.0 - x / p["K"]) - y * p["m"] / (p["a"] + x),
        -p["eps"] + p["c"] * p["m"] * x / (p["a"] + x),
    ])


def _gause(p, s):
    return np.asarray(s, dtype=float) * _gause_pc(p, s)


def _gause_jac(p, s):
    x, y = s
    r, K, m, a, c = p["r"], p["K"], p["m"], p["a"], p["c"]
    dp = m * a / (a + x) ** 2
    return np.array([
        [r * (1.0 - 2.0 * x / K) - y * dp, -m * x / (a + x)],
        [c * y * dp, -p["eps"] + c * m * x / (a + x)],
    ])


def _sir(p, s):
    S, I, N = s
    h = p["beta"] * S / (p["K"] + S)
    g = N * (1.0 - N / p["N_star"])
    a = p["d"] + p["alpha"] + p["gamma"]
    eps = p["eps"]
    return np.array([
        p["d"] * N + eps * g - h * I - (p["d"] + p["p"]) * S,
        h * I - a * I,
        eps * g - p["alpha"] * I,
    ])


def _sir_jac(p, s):
    S, I, N = s
    h = p["beta"] * S / (p["K"] + S)
    dh = p["beta"] * p["K"] / (p["K"] + S) ** 2
    dg = 1.0 - 2.0 * N / p["N_star"]
    a = p["d"] + p["alpha"] + p["gamma"]
    eps = p["eps"]
    return np.array([
        [-dh * I - (p["d"] + p["p"]), -h, p["d"] + eps * dg],
        [dh * I, h - a, 0.0],
        [0.0, -p["alpha"], eps * dg],
    ])


def _sir_pc(p, s):
    S = s[0]
    h = p["beta"] * S / (p["K"] + S)
    return np.array([h - (p["d"] + p["alpha"] + p["gamma"])])


def _fear_pc(p, s):
    x, y = s
    q = (1.0 + x) / (1.0 + x + p["kappa"] * y)
    w = x / (p["theta"] + y + x)
    return np.array([q - p["delta1"] - p["gamma"] * x, p["eps"] * (w - p["delta2"])])


def _fear(p, s):
    return np.asarray(s, dtype=float) * _fear_pc(p, s)


def _fear_jac(p, s):
    x, y = s
    kap, th, eps = p["kappa"], p["theta"], p["eps"]
    g1, g2 = _fear_pc(p, s)
    den = (1.0 + x + kap * y) ** 2
    dqx = kap * y / den
    dqy = -kap * (1.0 + x) / den
    den2 = (th + y + x) ** 2
    dwx = (th + y) / den2
    dwy = -x / den2
    return np.array([
        [g1 + x * (dqx - p["gamma"]), x * dqy],
        [eps * y * dwx, g2 + eps * y * dwy],
    ])


def _foodweb_pc(p, s):
    x, y, z = s
    return np.array([
        1.0 - x - y - p["gamma_bar"] * z,
        -p["d1"] + p["alpha"] * x - p["beta"] * z,
        -p["d2"] + p["gamma"] * x + p["delta"] * y,
    ])


def _foodweb(p, s):
    return np.asarray(s, dtype=float) * _foodweb_pc(p, s)


def _foodweb_jac(p, s):
    x, y, z = s
    g1, g2, g3 = _foodweb_pc(p, s)
    return np.array([
        [g1 - x, -x, -p["gamma_bar"] * x],
        [p["alpha"] * y, g2, -p["beta"] * y],
        [p["gamma"] * z, p["delta"] * z, g3],
    ])


def _enso_pc(p, s):
    x, y, z = s
    rd = p["rho"] * p["delta"]
    return np.array([x + y + p["c"] * (1.0 - math.tanh(x + z)) + rd * (x - p["a"])])


def _enso(p, s):
    x, y, z = s
    rd = p["rho"] * p["delta"]
    return np.array([
        x * _enso_pc(p, s)[0],
        -rd * (p["a"] * y + x * x),
        p["delta"] * (p["k"] - z - 0.5 * x),
    ])


def _enso_jac(p, s):
    x, y, z = s
    rd = p["rho"] * p["delta"]
    c = p["c"]
    sech2 = 1.0 - math.tanh(x + z) ** 2
    g1 = _enso_pc(p, s)[0]
    return np.array([
        [g1 + x * (1.0 - c * sech2 + rd), x, -x * c * sech2],
        [-2.0 * rd * x, -rd * p["a"], 0.0],
        [-0.5 * p["delta"], 0.0, -p["delta"]],
    ])


_GOODWIN_B = ("b1", "b2", "b3", "b4", "b5", "b6")


def _goodwin(p, s):
    b = [p[k] for k in _GOODWIN_B]
    out = np.empty(6)
    out[0] = p["K"] / (1.0 + p["alpha"] * s[5] ** p["rho"]) - b[0] * s[0]
    for i in range(1, 6):
        out[i] = b[i - 1] * s[i - 1] - b[i] * s[i]
    return out


def _goodwin_jac(p, s):
    b = [p[k] for k in _GOODWIN_B]
    J = np.zeros((6, 6))
    for i in range(6):
        J[i, i] = -b[i]
        if i:
            J[i, i - 1] = b[i - 1]
    s6, rho, al = s[5], p["rho"], p["alpha"]
    J[0, 5] = -p["K"] * al * rho * s6 ** (rho - 1.0) / (1.0 + al * s6 ** rho) ** 2
    return J


def _sirsec(p, s):
    x, y, z = s
    u = x + y
    return np.array([
        u * (1.0 - u) - p["c1"] * x * y - x * z,
        p["c1"] * x * y + x * z - p["c2"] * y,
        p["c3"] * (p["c4"] * y - z),
    ])


def _sirsec_jac(p, s):
    x, y, z = s
    u = x + y
    c1 = p["c1"]
    return np.array([
        [1.0 - 2.0 * u - c1 * y - z, 1.0 - 2.0 * u - c1 * x, -x],
        [c1 * y + z, c1 * x - p["c2"], x],
        [0.0, p["c3"] * p["c4"], -p["c3"]],
    ])


# ---------------------------------------------------------------------------
# seed grids for equilibrium scans


def box_grid(bounds: Sequence[tuple[float, float]], n: int) -> list[np.ndarray]:
    axes = [np.linspace(lo, hi, n) for lo, hi in bounds]
    return [np.array(pt, dtype=float) for pt in itertools.product(*axes)]


def _box_seeds(bounds, n):
    return lambda p: box_grid(bounds, n)


def _hiv_seeds(p):
    return box_grid([(0.0, 2.0 / p["D"]), (0.0, 15.0)], 7) + [np.array([1.0 / p["D"], 0.0])]


def _gause_seeds(p):
    return box_grid([(0.0, p["K"]), (0.0, p["K"])], 6)


def _enso_seeds(p):
    xs = np.linspace(-3.0, 0.0, 13)
    return [np.array([x, -x * x / p["a"], p["k"] - 0.5 * x]) for x in xs]


def _goodwin_seeds(p):
    out = []
    for s in np.linspace(0.25, 5.0, 8):
        st = [s]
        for i in range(1, 6):
            st.append(st[-1] * p[_GOODWIN_B[i - 1]] / p[_GOODWIN_B[i]] if p[_GOODWIN_B[i]] > 0 else s)
        out.append(np.array(st))
    return out


def _sir_seeds(p):
    return box_grid([(0.0, p["N_star"]), (0.0, 40.0), (0.0, p["N_star"])], 5)


# ---------------------------------------------------------------------------
# registry

_REGISTRY: dict[str, ModelDef] = {}


def register(model: ModelDef) -> ModelDef:
    if model.id in _REGISTRY:
        raise ModelError(f"model {model.id!r} already registered")
    _REGISTRY[model.id] = model
    return model


def unregister(model_id: str) -> None:
    _REGISTRY.pop(model_id, None)


def _P(spec: str, sign: str = POSITIVE) -> list[Param]:
    out = []
    for tok in spec.split():
        name, val = tok.split("=")
        out.append(Param(name, float(val), sign))
    return out


register(ModelDef(
    id="ushape", dim=2,
    param_schema=tuple(_P("eps=0.005")),
    state_labels=("x", "y"),
    citation="planar fast-slow system x'=y-x^2/2, y'=-eps*x*(1+x^2) with a U-shaped critical manifold",
    fn=_ushape, jac=_ushape_jac,
    x0=(0.0, 1.0), bif_param="eps", bif_range=(0.001, 0.05),
    seed_fn=_box_seeds([(-2.0, 2.0), (-2.0, 2.0)], 5),
))

register(ModelDef(
    id="vanderpol", dim=2,
    param_schema=tuple(_P("eps=0.01")),
    state_labels=("x", "y"),
    citation="Van der Pol oscillator in Lienard form with an S-shaped critical manifold",
    fn=_vanderpol, jac=_vanderpol_jac,
    x0=(0.5, 0.5), bif_param="eps", bif_range=(0.001, 0.1),
    seed_fn=_box_seeds([(-2.0, 2.0), (-2.0, 2.0)], 5),
))

register(ModelDef(
    id="hiv", dim=2,
    param_schema=tuple(_P("A=0.364 B=0.06 C=0.823 D=0.057")),
    state_labels=("x", "y"),
    citation="healthy (x) and infected (y) cell model with saturating infection rate",
    fn=_hiv, jac=_hiv_jac, per_capita=_hiv_pc, log_coords=(1,),
    domain=(1, 1), x0=(5.0, 13.0), bif_param="D", bif_range=(0.04, 0.08),
    observable=1, seed_fn=_hiv_seeds,
))

register(ModelDef(
    id="gause", dim=2,
    param_schema=tuple(_P("r=1 K=15 m=1 a=10 c=1") + _P("eps=0.05", NONNEGATIVE)),
    state_labels=("x", "y"),
    citation="Gause predator-prey system with logistic prey growth and Holling II response",
    fn=_gause, jac=_gause_jac, per_capita=_gause_pc, log_coords=(0, 1),
    domain=(1, 1), x0=(5.0, 10.0), bif_param="eps", bif_range=(0.0, 0.6),
    seed_fn=_gause_seeds, degenerate={"eps": 0.0},
))

register(ModelDef(
    id="sir-epidemic", dim=3,
    param_schema=tuple(_P("alpha=0.048 beta=1 gamma=0.75 d=0.2 p=0.01 K=0.1 N_star=400")
                       + _P("eps=0.005", NONNEGATIVE)),
    state_labels=("S", "I", "N"),
    citation="SIR epidemic model with demography and slow logistic recruitment",
    fn=_sir, jac=_sir_jac, per_capita=_sir_pc, log_coords=(1,),
    domain=(1, 1, 1), x0=(40.0, 20.0, 150.0), bif_param="eps", bif_range=(0.0, 0.02),
    observable=1, seed_fn=_sir_seeds, degenerate={"eps": 0.0},
))

register(ModelDef(
    id="fear", dim=2,
    param_schema=tuple(_P("delta1=0.2 delta2=0.1 kappa=5 gamma=0.1 theta=2")
                       + _P("eps=0.05", NONNEGATIVE)),
    state_labels=("x", "y"),
    citation="predator-prey system with fear and carry-over effects",
    fn=_fear, jac=_fear_jac, per_capita=_fear_pc, log_coords=(0, 1),
    domain=(1, 1), x0=(0.2, 0.9), bif_param="eps", bif_range=(0.0, 0.6),
    seed_fn=_box_seeds([(0.0, 10.0), (0.0, 10.0)], 11), degenerate={"eps": 0.0},
))

register(ModelDef(
    id="foodweb", dim=3,
    param_schema=tuple(_P("alpha=2.5 gamma_bar=1 gamma=0.25 delta=1 d1=0.5 d2=0.26")
                       + _P("beta=0.2", NONNEGATIVE)),
    state_labels=("x", "y", "z"),
    citation="three-species Lotka-Volterra food web with omnivory",
    fn=_foodweb, jac=_foodweb_jac, per_capita=_foodweb_pc, log_coords=(0, 1, 2),
    domain=(1, 1, 1), x0=(1.0, 1.0, 1.0), bif_param="beta", bif_range=(-0.1, 1.0),
    observable=0, seed_fn=_box_seeds([(0.0, 1.5)] * 3, 6),
))

register(ModelDef(
    id="enso", dim=3,
    param_schema=tuple(_P("a=2 c=1.4 k=0.7 rho=0.01") + _P("delta=0.1", NONNEGATIVE)),
    state_labels=("x", "y", "z"),
    citation="three-timescale El Nino Southern Oscillation model",
    fn=_enso, jac=_enso_jac, per_capita=_enso_pc, log_coords=(0,),
    domain=(-1, 0, 1), x0=(-0.001, -0.4, 0.8), bif_param="delta", bif_range=(0.0, 0.4),
    seed_fn=_enso_seeds, degenerate={"delta": 0.0},
))

register(ModelDef(
    id="goodwin", dim=6,
    param_schema=tuple(_P("alpha=1 K=50 rho=9 b1=1 b2=1 b3=1 b4=1 b5=1") + _P("b6=1", NONNEGATIVE)),
    state_labels=("S1", "S2", "S3", "S4", "S5", "S6"),
    citation="Goodwin-type chemical control chain with end-product negative feedback",
    fn=_goodwin, jac=_goodwin_jac,
    domain=(1,) * 6, bif_param="b6", bif_range=(0.0, 45.0),
    seed_fn=_goodwin_seeds, degenerate={"b6": 0.0},
))

register(ModelDef(
    id="sir-secondary", dim=3,
    param_schema=tuple(_P("c1=1 c2=5") + _P("c3=5", NONNEGATIVE) + _P("c4=90")),
    state_labels=("x", "y", "z"),
    citation="SIR model with a secondary (environmental) transmission route",
    fn=_sirsec, jac=_sirsec_jac,
    domain=(1, 1, 1), x0=(0.09777, 0.02081, 1.04290), bif_param="c3", bif_range=(0.0, 12.0),
    observable=1, seed_fn=_box_seeds([(0.0, 1.0), (0.0, 0.2), (0.0, 20.0)], 5),
    degenerate={"c3": 0.0},
))


# ---------------------------------------------------------------------------
# public evaluation API


def get_model(model: str | ModelDef) -> ModelDef:
    if isinstance(model, ModelDef):
        return model
    try:
        return _REGISTRY[model]
    except KeyError:
        raise ModelError(f"unknown model id {model!r}") from None


def list_models() -> list[tuple[str, int, tuple[Param, ...], str]]:
    return [(m.id, m.dim, m.param_schema, m.citation) for m in _REGISTRY.values()]


def default_params(model: str | ModelDef, **overrides: float) -> ParameterSet:
    return get_model(model).params(**overrides)


def _check(model: str | ModelDef, params: ParameterSet, state) -> tuple[ModelDef, np.ndarray]:
    m = get_model(model)
    if not isinstance(params, ParameterSet):
        raise ModelError("params must be a ParameterSet")
    if params.model_id != m.id:
        raise ModelError(f"parameter set belongs to {params.model_id!r}, not {m.id!r}")
    x = np.asarray(state, dtype=float)
    if x.shape != (m.dim,):
        raise ModelError(f"{m.id}: state must have length {m.dim}")
    if not np.all(np.isfinite(x)):
        raise ModelError(f"{m.id}: non-finite state")
    return m, x


def rhs(model: str | ModelDef, params: ParameterSet, state) -> np.ndarray:
    m, x = _check(model, params, state)
    return np.asarray(m.fn(params.values, x), dtype=float)


def fd_jacobian(fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray) -> np.ndarray:
    """Central differences with step max(1e-7, 1e-7*|x_i|)."""
    n = x.size
    J = np.empty((n, n))
    for i in range(n):
        h = max(1e-7, 1e-7 * abs(x[i]))
        e = np.zeros(n)
        e[i] = h
        J[:, i] = (fn(x + e) - fn(x - e)) / (2.0 * h)
    return J


def jacobian(model: str | ModelDef, params: ParameterSet, state) -> np.ndarray:
    m, x = _check(model, params, state)
    if m.jac is not None:
        return np.asarray(m.jac(params.values, x), dtype=float)
    return fd_jacobian(lambda s: m.fn(params.values, s), x)


def param_derivative(model: ModelDef, params: ParameterSet, name: str, x: np.ndarray) -> np.ndarray:
    """Central-difference derivative of the right-hand side in one parameter."""
    v = params.values
    p0 = v[name]
    h = 1e-7 * max(1.0, abs(p0))
    lo = dict(v)
    hi = dict(v)
    lo[name] = p0 - h
    hi[name] = p0 + h
    return (model.fn(hi, x) - model.fn(lo, x)) / (2.0 * h)


def in_domain(model: str | ModelDef, state, tol: float = 1e-6) -> bool:
    m = get_model(model)
    x = np.asarray(state, dtype=float)
    for sgn, v in zip(m.domain, x):
        if sgn > 0 and v < -tol:
            return False
        if sgn < 0 and v > tol:
            return False
    return True


def load_param_config(source: str | Path | Mapping) -> ParameterSet:
    """Read ``{"model": id, "params": {...}}`` and return the overridden set.

    Keys other than ``model`` and ``params`` are rejected, as are unknown
    parameter names.
    """
    if isinstance(source, Mapping):
        doc = dict(source)
    else:
        doc = json.loads(Path(source).read_text())
    extra = set(doc) - {"model", "params"}
    if extra:
        raise ModelError(f"unknown configuration keys {sorted(extra)}")
    if "model" not in doc:
        raise ModelError("configuration lacks 'model'")
    m = get_model(doc["model"])
    return m.params(**dict(doc.get("params") or {}))


def models_iter() -> Iterable[ModelDef]:
    return iter(_REGISTRY.values())
