"""Command-line front end.

Exit codes: 0 success, 2 configuration or usage error, 3 numerical failure.
Settings are merged as CLI flags over a JSON config file over model defaults.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import warnings
from importlib import resources
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .continuation import ContinuationError, detect_events, trace_branch
from .criterion import check_criterion
from .equilibria import EquilibriumError, find_equilibrium, scan_equilibria
from .integrator import IntegratorConfig, integrate
from .models import ModelDef, ModelError, ParameterSet, get_model, in_domain, list_models
from .oscillation import OscillationError, extract_limit_cycle, manifold_proximity, scan_parameter

OUT_ENV = "SLOWFAST_OUT_DIR"
DEFAULT_OUT = "slowfast-out"
COMMANDS = ("simulate", "equilibria", "branch", "scan", "criterion", "cycle", "plot", "list-models")
CONFIG_KEYS = {"command", "model", "params", "bif_param", "range", "grid", "x0", "tspan", "integrator",
               "out_dir", "plot", "grid_density", "what"}


class ConfigError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    pass


@dataclass
class RunConfig:
    command: str
    model: str | None = None
    params: dict[str, float] = field(default_factory=dict)
    bif_param: str | None = None
    range: list[float] | None = None
    grid: list[float] | None = None
    x0: list[float] | None = None
    tspan: list[float] | None = None
    integrator: dict = field(default_factory=dict)
    out_dir: str | None = None
    plot: bool = True
    grid_density: int = 9
    what: str = "branch"

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        unknown = set(doc) - CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown configuration keys {sorted(unknown)}")
        if "command" not in doc:
            raise ConfigError("configuration lacks 'command'")
        return cls(**doc)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    # resolved pieces

    def model_def(self) -> ModelDef:
        if not self.model:
            raise ConfigError("--model is required")
        try:
            return get_model(self.model)
        except (KeyError, ModelError) as exc:
            raise ConfigError(str(exc)) from exc

    def param_set(self) -> ParameterSet:
        m = self.model_def()
        try:
            ps = m.params(**self.params)
            name = self.bif_param or m.bif_param
            return ps.crossing(name) if name else ps
        except ModelError as exc:
            raise ConfigError(str(exc)) from exc

    def integrator_config(self) -> IntegratorConfig:
        try:
            return IntegratorConfig(**self.integrator)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"integrator settings: {exc}") from exc

    def out_path(self) -> Path:
        p = Path(self.out_dir or os.environ.get(OUT_ENV) or DEFAULT_OUT)
        p.mkdir(parents=True, exist_ok=True)
        return p


# ---------------------------------------------------------------------------
# argument parsing


def _floats(text: str, sep: str = ",") -> list[float]:
    try:
        return [float(v) for v in text.split(sep) if v.strip() != ""]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad number list {text!r}") from exc


def _interval(text: str) -> list[float]:
    vals = _floats(text, ":")
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"expected lo:hi, got {text!r}")
    return vals


def _assignment(text: str) -> tuple[str, float]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected name=value, got {text!r}")
    k, v = text.split("=", 1)
    try:
        return k.strip(), float(v)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad value in {text!r}") from exc


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model")
    common.add_argument("--set", dest="sets", action="append", type=_assignment, default=[],
                        metavar="NAME=VALUE", help="parameter override, repeatable")
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--param", dest="bif_param", help="bifurcation parameter")
    common.add_argument("--range", type=_interval, metavar="LO:HI")
    common.add_argument("--grid", type=_floats, metavar="V1,V2,...")
    common.add_argument("--grid-density", type=int)
    common.add_argument("--x0", type=_floats, metavar="X1,X2,...")
    common.add_argument("--tspan", type=_interval, metavar="T0:T1")
    common.add_argument("--out", dest="out_dir", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    common.add_argument("--rtol", type=float)
    common.add_argument("--atol", type=float)
    common.add_argument("--max-step", type=float)
    common.add_argument("--method", choices=("explicit-adaptive-RK", "implicit-stiff", "RK45"))
    common.add_argument("--no-plot", action="store_true")

    parser = _Parser(prog="slowfast", description="Bifurcation analysis of slow-fast ODE models.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "plot":
            sp.add_argument("--what", choices=("branch", "timeseries"), default=None)
    return parser


_VALUED = {"--range", "--tspan", "--x0", "--grid", "--set"}


def _join_values(argv: Sequence[str]) -> list[str]:
    """Bind values such as ``-0.1:1.0`` to their flag so they are not read as options."""
    out: list[str] = []
    it = iter(argv)
    for tok in it:
        if tok in _VALUED:
            nxt = next(it, None)
            out.append(tok if nxt is None else f"{tok}={nxt}")
        else:
            out.append(tok)
    return out


def parse_config(argv: Sequence[str]) -> RunConfig:
    args = build_parser().parse_args(_join_values(argv))
    if args.command is None:
        raise ConfigError(f"a subcommand is required: {', '.join(COMMANDS)}")
    doc: dict = {"command": args.command}
    if args.config:
        try:
            file_doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        if not isinstance(file_doc, dict):
            raise ConfigError("config must be a JSON object")
        file_doc = dict(file_doc)
        file_doc.pop("command", None)
        doc.update(file_doc)
    cfg = RunConfig.from_dict(doc)
    cfg.params = dict(cfg.params)
    cfg.integrator = dict(cfg.integrator)
    for key in ("model", "bif_param", "range", "grid", "x0", "tspan", "out_dir", "grid_density"):
        v = getattr(args, key)
        if v is not None:
            setattr(cfg, key, v)
    for k, v in args.sets:
        cfg.params[k] = v
    for key in ("rtol", "atol", "max_step", "method"):
        v = getattr(args, key)
        if v is not None:
            cfg.integrator[key] = v
    if args.no_plot:
        cfg.plot = False
    if getattr(args, "what", None):
        cfg.what = args.what
    return cfg


# ---------------------------------------------------------------------------
# output helpers


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path: Path, header: Sequence[str], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def load_schema(name: str) -> dict:
    """JSON schema shipped with the package, e.g. ``load_schema("criterion")``."""
    return json.loads(resources.files("slowfast").joinpath("schemas", f"{name}.json").read_text())


def write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _labels(m: ModelDef) -> list[str]:
    return list(m.state_labels) if m.state_labels else [f"x{i}" for i in range(m.dim)]


def _x0(cfg: RunConfig, m: ModelDef) -> np.ndarray:
    x0 = np.asarray(cfg.x0 if cfg.x0 is not None else m.x0, dtype=float)
    if x0.shape != (m.dim,):
        raise ConfigError(f"x0 must have {m.dim} components")
    return x0


def _range(cfg: RunConfig, m: ModelDef) -> tuple[str, tuple[float, float]]:
    name = cfg.bif_param or m.bif_param
    if name is None:
        raise ConfigError("--param is required for this model")
    if name not in m.param_names:
        raise ConfigError(f"{m.id}: unknown parameter {name!r}")
    rng = cfg.range or (m.bif_range if name == m.bif_param else None)
    if rng is None:
        raise ConfigError("--range is required")
    lo, hi = float(rng[0]), float(rng[1])
    if not lo < hi:
        raise ConfigError("range must satisfy lo < hi")
    return name, (lo, hi)


# ---------------------------------------------------------------------------
# commands


def cmd_list_models(cfg: RunConfig) -> int:
    for mid, dim, schema, citation in list_models():
        names = ", ".join(f"{p.name}={p.default:g}" for p in schema)
        print(f"{mid:14s} dim={dim}  {names}")
    return 0


def cmd_simulate(cfg: RunConfig) -> int:
    m = cfg.model_def()
    ps = cfg.param_set()
    x0 = _x0(cfg, m)
    t0, t1 = cfg.tspan or (0.0, 500.0)
    try:
        traj = integrate(m, ps, x0, (t0, t1), cfg.integrator_config())
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = cfg.out_path()
    write_csv(out / "trajectory.csv", ["t", *_labels(m)],
              ([t, *x] for t, x in zip(traj.times, traj.states)))
    if cfg.plot:
        from .plotting import render_timeseries_svg
        (out / "trajectory.svg").write_text(render_timeseries_svg(traj, m.observable))
    if traj.failed:
        raise NumericalFailure(f"integration stopped early: {', '.join(traj.flags)}")
    return 0


def cmd_equilibria(cfg: RunConfig) -> int:
    m = cfg.model_def()
    ps = cfg.param_set()
    seeds = m.seeds(ps.values)
    if cfg.x0 is not None:
        seeds = [_x0(cfg, m), *seeds]
    with np.errstate(all="ignore"):
        res = scan_equilibria(m, ps, seeds)
    inside = [e for e in res.equilibria if in_domain(m, e.state)]
    outside = [e for e in res.equilibria if not in_domain(m, e.state)]
    doc = {"model": m.id, "params": dict(ps.values), "equilibria": [e.to_dict() for e in inside],
           "outside_domain": [e.to_dict() for e in outside], "failed_seeds": res.failed_seeds}
    write_json(cfg.out_path() / "equilibria.json", doc)
    for e in inside:
        print(" ".join(_fmt(v) for v in e.state), e.stability)
    if not inside:
        raise NumericalFailure("no equilibrium found")
    return 0


def _start_equilibrium(m: ModelDef, ps: ParameterSet, cfg: RunConfig):
    try:
        return find_equilibrium(m, ps, _x0(cfg, m))
    except (EquilibriumError, np.linalg.LinAlgError):
        with np.errstate(all="ignore"):
            eqs = scan_equilibria(m, ps, m.seeds(ps.values)).equilibria
        if not eqs:
            raise NumericalFailure("no starting equilibrium found")
        eqs.sort(key=lambda e: (e.stability != "stable", -float(np.min(e.state))))
        return eqs[0]


def _trace(cfg: RunConfig):
    m = cfg.model_def()
    name, (lo, hi) = _range(cfg, m)
    ps = cfg.param_set().crossing(name)
    v = min(max(ps[name], lo), hi)
    ps = ps.with_value(name, v)
    start = _start_equilibrium(m, ps, cfg)
    try:
        with np.errstate(all="ignore"):
            br = trace_branch(m, ps, name, (lo, hi), start)
            events = detect_events(br)
    except (ContinuationError, EquilibriumError) as exc:
        raise NumericalFailure(str(exc)) from exc
    return m, br, events


def cmd_branch(cfg: RunConfig) -> int:
    m, br, events = _trace(cfg)
    out = cfg.out_path()
    write_csv(out / "branch.csv", [br.bif_param, *_labels(m), "stability"],
              ([pt.param, *pt.state, pt.stability] for pt in br.points))
    write_json(out / "events.json", {"model": m.id, "bif_param": br.bif_param,
                                     "events": [e.to_dict() for e in events],
                                     "diagnostics": list(br.diagnostics)})
    if cfg.plot:
        from .plotting import render_bifurcation_svg
        (out / "bifurcation.svg").write_text(render_bifurcation_svg(br, events))
    for e in events:
        print(f"{e.kind:12s} {br.bif_param}={_fmt(e.param_at)}")
    return 0


def cmd_scan(cfg: RunConfig) -> int:
    m = cfg.model_def()
    name, (lo, hi) = _range(cfg, m)
    grid = cfg.grid or np.linspace(lo, hi, cfg.grid_density + 2).tolist()
    ps = cfg.param_set().crossing(name)
    try:
        res = scan_parameter(m, ps, name, sorted(grid), _x0(cfg, m), config=cfg.integrator_config())
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    cols = ["param", "class", "amplitude", "period", "quiescence_fraction", "spike_count"]
    write_csv(cfg.out_path() / "scan.csv", cols, ([r.to_row()[c] for c in cols] for r in res.records))
    for r in res.records:
        print(f"{_fmt(r.param)} {r.cls}")
    return 0


def cmd_criterion(cfg: RunConfig) -> int:
    m = cfg.model_def()
    name, rng = _range(cfg, m)
    ps = cfg.param_set().crossing(name)
    with warnings.catch_warnings(), np.errstate(all="ignore"):
        warnings.simplefilter("ignore")
        rep = check_criterion(m, ps, name, rng, _x0(cfg, m), grid_density=cfg.grid_density,
                              config=cfg.integrator_config())
    out = cfg.out_path()
    write_json(out / "criterion.json", rep.to_dict())
    if cfg.plot and rep.plot_data is not None:
        from .plotting import render_bifurcation_svg
        br, events, stop, others = rep.plot_data
        (out / "bifurcation.svg").write_text(render_bifurcation_svg(br, events, stop=stop, others=others))
    print(rep.summary())
    return 0


def cmd_cycle(cfg: RunConfig) -> int:
    m = cfg.model_def()
    ps = cfg.param_set()
    try:
        cyc = extract_limit_cycle(m, ps, _x0(cfg, m))
    except OscillationError as exc:
        raise NumericalFailure(str(exc)) from exc
    out = cfg.out_path()
    write_csv(out / "cycle.csv", ["t", *_labels(m)], ([t, *x] for t, x in zip(cyc.times, cyc.points)))
    header = {"model": m.id, "params": dict(ps.values), "period": cyc.period, "observable": cyc.observable,
              "obs_min": cyc.obs_min, "obs_max": cyc.obs_max, "degenerate": cyc.degenerate,
              "section_level": cyc.section_level, "closure_error": cyc.closure_error,
              "axis_proximity": manifold_proximity(cyc, "axes"), "n_points": int(len(cyc.points))}
    header = {k: (None if isinstance(v, float) and not np.isfinite(v) else v) for k, v in header.items()}
    write_json(out / "cycle.json", header)
    print(f"period {_fmt(cyc.period)}  degenerate {cyc.degenerate}")
    return 0


def cmd_plot(cfg: RunConfig) -> int:
    from .plotting import render_bifurcation_svg, render_timeseries_svg
    out = cfg.out_path()
    if cfg.what == "timeseries":
        m = cfg.model_def()
        t0, t1 = cfg.tspan or (0.0, 500.0)
        traj = integrate(m, cfg.param_set(), _x0(cfg, m), (t0, t1), cfg.integrator_config())
        (out / "trajectory.svg").write_text(render_timeseries_svg(traj, m.observable))
        return 0
    _, br, events = _trace(cfg)
    (out / "bifurcation.svg").write_text(render_bifurcation_svg(br, events))
    return 0


_DISPATCH = {
    "simulate": cmd_simulate, "equilibria": cmd_equilibria, "branch": cmd_branch, "scan": cmd_scan,
    "criterion": cmd_criterion, "cycle": cmd_cycle, "plot": cmd_plot, "list-models": cmd_list_models,
}


def run(argv: Sequence[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        cfg = parse_config(argv)
        if cfg.command != "list-models":
            cfg.model_def()
        code = _DISPATCH[cfg.command](cfg)
        if cfg.command != "list-models":
            write_json(cfg.out_path() / "config.json", cfg.to_dict())
        return code
    except ConfigError as exc:
        print(f"slowfast: error: {exc}", file=sys.stderr)
        return 2
    except (NumericalFailure, EquilibriumError, ContinuationError, OscillationError,
            np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"slowfast: numerical failure: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run())


__all__ = ["RunConfig", "ConfigError", "build_parser", "parse_config", "run", "main", "load_schema"]
