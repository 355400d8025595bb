"""Recurrence decision procedure.

The pipeline checks, for one model and one parameter axis:

* c1: an equilibrium exists inside the oscillation window,
* c2: sustained oscillation stops at some parameter value (and how),
* c3: a Hopf point on the equilibrium branch,
* c4: oscillation persists at every interior grid point of the window
  bounded by the Hopf point and the stop.

A stop not accompanied by any real eigenvalue crossing zero or by another
branch coinciding is a sudden stop.  The older variant of the test accepts
only transcritical or saddle-node stops; it is reported alongside.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .continuation import (BRANCH_POINT, FOLD, HOPF, ArcStep, BifurcationEvent, Branch,
                           ContinuationError, detect_events, trace_branch)
from .equilibria import Equilibrium, EquilibriumError, dedupe, find_equilibrium, scan_equilibria
from .integrator import IntegratorConfig
from .models import ModelDef, ParameterSet, get_model, in_domain
from .oscillation import (DAMPED, SUSTAINED, OscillationError, OscillationRecord, ScanResult,
                          duration_heuristic, find_stop_point, scan_parameter, simulate_and_classify)

SUDDEN_STOP = "SuddenStop"
TRANSCRITICAL = "Transcritical"
SADDLE_NODE = "SaddleNode"
NO_STOP = "NoStop"

RECURRENCE = "recurrence"
SEMI_RECURRENCE = "semi-recurrence"
NEITHER = "none"

COINCIDE_TOL = 1e-4
# equilibria slightly outside the physical domain still matter (transcritical partners)
DOMAIN_SLACK = 1e-2
TRACE_STEP = ArcStep(max_points=6000)
_SEVERITY = {NO_STOP: 0, SUDDEN_STOP: 1, TRANSCRITICAL: 2, SADDLE_NODE: 3}


@dataclass
class StopClassification:
    param_at: float
    eigen_zero_crossing: bool
    coinciding_branches: bool
    kind: str
    fold: bool = False
    boundary: bool = False
    crossings: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


class StopKindError(ValueError):
    pass


def _sub_branch(branch: Branch, lo: float, hi: float) -> Branch:
    p = branch.params
    inside = np.flatnonzero((p >= lo) & (p <= hi))
    if inside.size == 0:
        # neighbourhood falls between two points
        idx = [i for i in range(len(p) - 1) if min(p[i], p[i + 1]) <= hi and max(p[i], p[i + 1]) >= lo]
        if not idx:
            return Branch(branch.bif_param, [], branch.model_id, branch.base_params, scale=branch.scale)
        inside = np.array(idx)
    i0 = max(int(inside.min()) - 1, 0)
    i1 = min(int(inside.max()) + 1, len(p) - 1)
    return Branch(branch.bif_param, branch.points[i0:i1 + 1], branch.model_id, branch.base_params,
                  scale=branch.scale)


def _other_state(other: Branch, value: float, end_side: str | None) -> list[np.ndarray]:
    """States of ``other`` at ``value``; extrapolated limits are used at a degenerate end."""
    out = []
    s = other.state_at(value)
    if s is not None:
        out.append(s)
    if end_side and end_side in other.extrapolated:
        out.append(other.extrapolated[end_side])
    # a branch can pass the same parameter more than once
    p = other.params
    X = other.states
    for i in range(len(p) - 1):
        if min(p[i], p[i + 1]) <= value <= max(p[i], p[i + 1]) and p[i] != p[i + 1]:
            w = (value - p[i]) / (p[i + 1] - p[i])
            out.append(X[i] + w * (X[i + 1] - X[i]))
    return out


def classify_stop_kind(branch: Branch, other_branches: Sequence[Branch], stop_param: float,
                       neighborhood: float) -> StopClassification:
    if len(branch) < 2:
        raise StopKindError("branch has fewer than two points")
    lo_b, hi_b = branch.span()
    neighborhood = abs(neighborhood)
    lo, hi = stop_param - neighborhood, stop_param + neighborhood
    if hi < lo_b or lo > hi_b:
        raise StopKindError("branch does not cover the stop neighbourhood")
    sub = _sub_branch(branch, lo, hi)
    events = [e for e in detect_events(sub, kinds=(FOLD, BRANCH_POINT)) if lo <= e.param_at <= hi] if len(sub) >= 2 else []
    crossing = bool(events)
    fold = any(e.kind == FOLD for e in events)

    # one-sided neighbourhood when the branch ends inside it
    end_side = None
    tol = 1e-9 * max(1.0, abs(stop_param))
    if lo < lo_b - tol and "lo" in branch.extrapolated:
        end_side = "lo"
    elif hi > hi_b + tol and "hi" in branch.extrapolated:
        end_side = "hi"
    boundary = lo < lo_b - tol or hi > hi_b + tol

    coinciding = False
    probes: list[tuple[float, np.ndarray | None]] = [(e.param_at, e.state_at) for e in events]
    here = branch.state_at(stop_param)
    probes.append((stop_param, here))
    for q, s in probes:
        if s is None:
            continue
        for other in other_branches:
            if other is branch:
                continue
            for t in _other_state(other, q, None):
                if np.max(np.abs(t - s)) < COINCIDE_TOL:
                    coinciding = True
    if end_side is not None and not coinciding:
        mine = branch.extrapolated[end_side]
        for other in other_branches:
            if other is branch or end_side not in other.extrapolated:
                continue
            if np.max(np.abs(other.extrapolated[end_side] - mine)) < COINCIDE_TOL:
                coinciding = True

    if crossing and fold:
        kind = SADDLE_NODE
    elif crossing:
        # a branch point with no second branch located is still an exchange of stability
        kind = TRANSCRITICAL
    elif coinciding:
        kind = TRANSCRITICAL
    else:
        kind = SUDDEN_STOP
    return StopClassification(float(stop_param), crossing, coinciding, kind, fold, boundary,
                              [float(e.param_at) for e in events])


@dataclass
class WindowReport:
    interval: tuple[float, float]
    continuity: bool
    interior: list[tuple[float, str]]


def window_report(hopf: BifurcationEvent | float, stop: float, scan: ScanResult,
                  stable_side: int | None = None) -> WindowReport:
    h = float(hopf.param_at if isinstance(hopf, BifurcationEvent) else hopf)
    s = float(stop)
    if not (np.isfinite(h) and np.isfinite(s)):
        raise ValueError("hopf and stop must be finite")
    if stable_side is not None and np.sign(s - h) == stable_side and s != h:
        raise ValueError("stop lies on the stable side of the Hopf point")
    a, b = min(h, s), max(h, s)
    interior = [(r.param, r.cls) for r in scan.records if r.param is not None and a < r.param < b]
    if a == b or not interior:
        return WindowReport((a, b), False, interior)
    return WindowReport((a, b), all(c == SUSTAINED for _, c in interior), interior)


@dataclass
class CriterionReport:
    model: str
    bif_param: str
    range: tuple[float, float]
    c1: dict = field(default_factory=dict)
    c2: dict = field(default_factory=dict)
    c3: list = field(default_factory=list)
    c4: dict = field(default_factory=dict)
    verdict: str = NEITHER
    stop_kind: str = NO_STOP
    verdict_classic: str = NEITHER
    indeterminate: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    scan: list = field(default_factory=list)
    branches: list = field(default_factory=list)
    elapsed: float = 0.0
    plot_data = None  # (branch, events, stop, other branches); unannotated, so not a field

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def summary(self) -> str:
        rows = [
            ("model", self.model),
            ("parameter", f"{self.bif_param} in [{self.range[0]:g}, {self.range[1]:g}]"),
            ("C1 equilibrium", _yn(self.c1.get("holds"))),
            ("C2 stop", f"{_yn(self.c2.get('holds'))} {_num(self.c2.get('param'))} {self.c2.get('kind', '')}"),
            ("C3 Hopf", ", ".join(_num(e["param_at"]) for e in self.c3) or "none"),
            ("C4 window", f"{_yn(self.c4.get('continuity'))} {self.c4.get('window')}"),
            ("stop kind", self.stop_kind),
            ("verdict", self.verdict),
            ("older criterion", self.verdict_classic),
        ]
        w = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(w)}  {v}" for k, v in rows)


def _yn(v) -> str:
    return "yes" if v else ("no" if v is not None else "n/a")


def _num(v) -> str:
    return "-" if v is None else f"{v:.6g}"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


# ---------------------------------------------------------------------------
# pipeline helpers


def collect_branches(model: ModelDef, base: ParameterSet, name: str, lo: float, hi: float,
                     samples: Sequence[float], step: ArcStep | None = None) -> tuple[list[Branch], list[Equilibrium]]:
    """Trace a branch from every distinct equilibrium found at the sample parameters."""
    branches: list[Branch] = []
    found: list[Equilibrium] = []
    crossing = base.crossing(name)
    for v in samples:
        ps = crossing.with_value(name, v)
        with np.errstate(all="ignore"):
            eqs = scan_equilibria(model, ps, model.seeds(ps.values)).equilibria
        found.extend(eqs)
        for e in eqs:
            if not in_domain(model, e.state, tol=DOMAIN_SLACK * max(1.0, float(np.max(np.abs(e.state))))):
                continue
            if any(_on_branch(model, ps, b, v, e.state) for b in branches):
                continue
            try:
                br = trace_branch(model, base, name, (lo, hi), e, step or TRACE_STEP)
            except (ContinuationError, EquilibriumError, np.linalg.LinAlgError):
                continue
            if len(br) >= 2:
                branches.append(br)
    return branches, found


def _on_branch(model: ModelDef, ps: ParameterSet, br: Branch, v: float, x: np.ndarray) -> bool:
    # interpolated branch states are only first-order accurate, so polish before comparing
    scale = max(1.0, float(np.max(np.abs(x))))
    for s in _other_state(br, v, None):
        if np.max(np.abs(s - x)) > 1e-2 * scale:
            continue
        try:
            s = find_equilibrium(model, ps, s).state
        except (EquilibriumError, np.linalg.LinAlgError):
            continue
        if np.max(np.abs(s - x)) < 1e-6 * scale:
            return True
    return False


def _sample_params(model: ModelDef, name: str, lo: float, hi: float, base: ParameterSet) -> list[float]:
    # keep clear of degenerate ends, where distinct equilibria merge
    eps = 0.01 * (hi - lo)
    pts = [0.5 * (lo + hi), lo + eps, hi - eps]
    v0 = base[name]
    if lo < v0 < hi:
        pts.insert(0, v0)
    # interior samples first: branch scaling is taken from the start point
    return list(dict.fromkeys(pts))


def _scan_grid(lo: float, hi: float, cuts: Sequence[float], per: int = 3) -> list[float]:
    edges = [lo] + sorted(c for c in cuts if lo < c < hi) + [hi]
    pts = [lo, hi]
    for a, b in zip(edges, edges[1:]):
        pts.extend(np.linspace(a, b, per + 2)[1:-1].tolist())
    return sorted(set(float(round(p, 15)) for p in pts))


@dataclass
class _Run:
    end: float
    neighbour: float | None
    hopf: BifurcationEvent | None


def _run_ends(grid: list[float], classes: list[str], hopfs: list[BifurcationEvent]):
    """Longest contiguous sustained run and what bounds it on each side."""
    best = None
    i = 0
    while i < len(grid):
        if classes[i] != SUSTAINED:
            i += 1
            continue
        j = i
        while j + 1 < len(grid) and classes[j + 1] == SUSTAINED:
            j += 1
        if best is None or (j - i) > (best[1] - best[0]):
            best = (i, j)
        i = j + 1
    if best is None:
        return None
    i, j = best
    ends = []
    for end_idx, nb_idx in ((i, i - 1), (j, j + 1)):
        end = grid[end_idx]
        nb = grid[nb_idx] if 0 <= nb_idx < len(grid) else None
        hopf = None
        if nb is not None:
            a, b = min(end, nb), max(end, nb)
            inside = [h for h in hopfs if a <= h.param_at <= b]
            if inside:
                hopf = min(inside, key=lambda h: abs(h.param_at - end))
        ends.append(_Run(end, nb, hopf))
    return ends


def check_criterion(model: str | ModelDef, params: ParameterSet | None = None, bif_param: str | None = None,
                    range: tuple[float, float] | None = None, x0=None, grid_density: int = 9,
                    neighborhood: float | None = None, config: IntegratorConfig | None = None,
                    step: ArcStep | None = None) -> CriterionReport:
    t_start = time.perf_counter()
    m = get_model(model)
    name = bif_param or m.bif_param
    if name is None:
        raise ValueError(f"{m.id}: no bifurcation parameter given")
    rng = range or m.bif_range
    if rng is None:
        raise ValueError(f"{m.id}: no parameter range given")
    lo, hi = float(min(rng)), float(max(rng))
    base = (params or m.params()).crossing(name)
    x0 = np.asarray(m.x0 if x0 is None else x0, dtype=float)
    nb = neighborhood if neighborhood is not None else 0.01 * max(1.0, hi - lo)
    rep = CriterionReport(m.id, name, (lo, hi))

    # c3: branches and events
    branches: list[Branch] = []
    events_by_branch: list[list[BifurcationEvent]] = []
    try:
        branches, _ = collect_branches(m, base, name, lo, hi, _sample_params(m, name, lo, hi, base), step)
        events_by_branch = [detect_events(b) for b in branches]
    except Exception as exc:  # stage failure must not crash the report
        rep.indeterminate.append("c3")
        rep.diagnostics.append(f"branch stage: {exc!r}")
    primary_idx = None
    best = 0
    for k, evs in enumerate(events_by_branch):
        n_h = sum(e.kind == HOPF for e in evs)
        if n_h > best:
            best, primary_idx = n_h, k
    hopfs = [e for e in events_by_branch[primary_idx] if e.kind == HOPF] if primary_idx is not None else []
    rep.c3 = [e.to_dict() for e in hopfs]
    rep.branches = [{"points": len(b), "span": list(b.span()), "diagnostics": b.diagnostics,
                     "events": [e.to_dict() for e in evs]} for b, evs in zip(branches, events_by_branch)]

    freqs = [abs(e.frequency) for e in hopfs if e.frequency]
    duration = duration_heuristic(min(freqs) if freqs else None)

    # coarse oscillation scan over the whole range
    scan = None
    try:
        grid = _scan_grid(lo, hi, [h.param_at for h in hopfs])
        scan = scan_parameter(m, base, name, grid, x0, duration=duration, config=config)
        rep.scan = [r.to_row() for r in scan.records]
    except Exception as exc:
        rep.indeterminate.append("scan")
        rep.diagnostics.append(f"scan stage: {exc!r}")

    stop = None
    stop_hopf = None
    ends = _run_ends(scan.grid, scan.classes(), hopfs) if scan is not None else None
    semi = None
    if ends is not None:
        hopf_ends = [e for e in ends if e.hopf is not None]
        stop_ends = [e for e in ends if e.hopf is None and e.neighbour is not None]
        if len(hopf_ends) == 2:
            semi = _semi_recurrence(m, base, name, lo, hi, hopf_ends, x0, duration, config, rep,
                                    branches[primary_idx], grid_density)
        elif stop_ends:
            se = stop_ends[0]
            stop_hopf = hopf_ends[0].hopf if hopf_ends else None
            try:
                stop = find_stop_point(m, base, name, (se.end, se.neighbour), x0, duration=duration, config=config)
            except Exception as exc:
                rep.indeterminate.append("c2")
                rep.diagnostics.append(f"stop stage: {exc!r}")
        else:
            rep.diagnostics.append("sustained oscillation reaches the range ends without stopping")
    elif scan is not None:
        rep.diagnostics.append("no sustained oscillation found in the range")

    # c2: stop kind
    stop_cls = None
    stop_param = stop if stop is not None else (semi["stop"] if semi else None)
    if stop_param is not None and branches:
        stop_cls = _stop_kind_all(branches, stop_param, nb, rep)
    if stop_param is not None:
        rep.c2 = {"holds": stop_cls is not None and stop_cls.kind != NO_STOP, "param": stop_param,
                  "kind": stop_cls.kind if stop_cls else None,
                  "boundary": bool(stop_cls.boundary) if stop_cls else None,
                  "classification": stop_cls.to_dict() if stop_cls else None,
                  "damped_stop": bool(semi)}
        rep.stop_kind = stop_cls.kind if stop_cls else NO_STOP
    else:
        rep.c2 = {"holds": False, "param": None, "kind": NO_STOP}

    # c4: window continuity on a fresh interior grid
    window = None
    if stop is not None and stop_hopf is not None:
        a, b = sorted((stop, stop_hopf.param_at))
        interior = np.linspace(a, b, grid_density + 2).tolist()
        try:
            wscan = scan_parameter(m, base, name, interior, x0, duration=duration, config=config)
            window = window_report(stop_hopf, stop, wscan)
            rep.c4 = {"window": list(window.interval), "continuity": window.continuity,
                      "grid": [p for p, _ in window.interior], "classes": [c for _, c in window.interior]}
        except Exception as exc:
            rep.indeterminate.append("c4")
            rep.diagnostics.append(f"window stage: {exc!r}")
    elif semi is not None:
        rep.c4 = {"window": semi["window"], "continuity": semi["continuity"],
                  "grid": semi["grid"], "classes": semi["classes"]}
    else:
        rep.c4 = {"window": None, "continuity": False}

    # c1: equilibria at the window midpoint
    mid = None
    if rep.c4.get("window"):
        mid = 0.5 * sum(rep.c4["window"])
    elif stop_param is not None:
        mid = stop_param
    if mid is not None:
        pts = [b.state_at(mid) for b in branches]
        eqs = []
        for s in pts:
            if s is None:
                continue
            try:
                eqs.append(find_equilibrium(m, base.with_value(name, mid), s))
            except (EquilibriumError, np.linalg.LinAlgError):
                pass
        eqs = dedupe(eqs)
        rep.c1 = {"holds": bool(eqs), "count": len(eqs), "params": [mid],
                  "states": [e.state.tolist() for e in eqs]}
    else:
        rep.c1 = {"holds": None, "count": 0, "params": []}

    # verdicts
    c1 = bool(rep.c1.get("holds"))
    c2 = bool(rep.c2.get("holds"))
    c3 = bool(hopfs)
    c4 = bool(rep.c4.get("continuity"))
    if semi is not None:
        rep.verdict = SEMI_RECURRENCE if (semi["holds"] and c2 and len(hopfs) == 2) else NEITHER
        rep.verdict_classic = NEITHER
    else:
        single = stop_hopf is not None and window is not None and not any(
            window.interval[0] < h.param_at < window.interval[1] for h in hopfs)
        new_ok = c1 and c2 and c3 and c4 and single
        rep.verdict = RECURRENCE if new_ok else NEITHER
        rep.verdict_classic = RECURRENCE if (new_ok and rep.stop_kind in (TRANSCRITICAL, SADDLE_NODE)) else NEITHER
    rep.elapsed = time.perf_counter() - t_start
    # kept for plotting; not part of the serialized report
    if primary_idx is not None:
        rep.plot_data = (branches[primary_idx], events_by_branch[primary_idx], stop_param,
                         [b for k, b in enumerate(branches) if k != primary_idx])
    elif branches:
        rep.plot_data = (branches[0], events_by_branch[0], stop_param, branches[1:])
    return rep


def _stop_kind_all(branches: list[Branch], stop: float, nb: float, rep: CriterionReport) -> StopClassification | None:
    best = None
    for br in branches:
        others = [b for b in branches if b is not br]
        try:
            c = classify_stop_kind(br, others, stop, nb)
        except StopKindError:
            continue
        if best is None or _SEVERITY[c.kind] > _SEVERITY[best.kind]:
            best = c
    if best is None:
        rep.indeterminate.append("c2")
    return best


_FAST_DECAY = "damped-fast"
PROBE_PERIODS = 12


def _damped_probe(m: ModelDef, ps: ParameterSet, primary: Branch, v: float, config) -> str:
    """Classify the approach to the equilibrium from a small kick.

    Damped oscillation beyond the inner Hopf point often decays within the
    transient of a run from the default initial state, so the probe starts
    next to the equilibrium and lasts a fixed number of local periods.  When
    the decay is too fast to show enough peaks but the leading pair is
    complex and stable, the cell is reported as fast decay.
    """
    s = primary.state_at(v)
    if s is None:
        return "error: outside branch"
    try:
        e = find_equilibrium(m, ps, s)
    except (EquilibriumError, np.linalg.LinAlgError) as exc:
        return f"error: {exc}"
    pairs = e.spectrum.complex_pairs()
    if not pairs:
        return "none"
    lead = max(pairs, key=lambda z: z.real)
    if lead.real >= 0:
        return "unstable"
    period = 2 * np.pi / abs(lead.imag)
    kick = e.state * 1.05 + 0.01 * max(1.0, float(np.max(np.abs(e.state))))
    try:
        rec, _ = simulate_and_classify(m, ps, kick, PROBE_PERIODS * period, config=config,
                                       settle_fraction=0.0, max_extension=1, param=v)
    except (OscillationError, ValueError, ArithmeticError) as exc:
        return f"error: {exc}"
    if rec.cls == DAMPED or rec.cls == SUSTAINED:
        return rec.cls
    return _FAST_DECAY if e.spectrum.max_real < 0 else rec.cls


def _semi_recurrence(m: ModelDef, base: ParameterSet, name: str, lo: float, hi: float, hopf_ends: list[_Run],
                     x0, duration: float, config, rep: CriterionReport, primary: Branch,
                     grid_density: int = 9) -> dict:
    """Two Hopf points bound the sustained region; look for damped oscillation beyond the inner one."""
    h1, h2 = sorted((e.hopf for e in hopf_ends), key=lambda h: h.param_at)
    boundary = m.degenerate.get(name)
    if boundary is not None and abs(boundary - lo) <= abs(boundary - hi):
        side = "lo"
    elif boundary is not None:
        side = "hi"
    else:
        side = None
    candidates = [("lo", lo, h1), ("hi", hi, h2)] if side is None else \
        ([("lo", lo, h1)] if side == "lo" else [("hi", hi, h2)])
    out = {"holds": False, "stop": None, "window": [h1.param_at, h2.param_at], "continuity": False,
           "grid": [], "classes": [], "inner_hopf": None, "damped_probe": []}
    # sustained continuity between the two Hopf points
    inner = np.linspace(h1.param_at, h2.param_at, grid_density + 2)[1:-1]
    try:
        s = scan_parameter(m, base, name, inner.tolist(), x0, duration=duration, config=config)
        out["grid"] = s.grid
        out["classes"] = s.classes()
        out["continuity"] = all(c == SUSTAINED for c in s.classes())
    except Exception as exc:
        rep.diagnostics.append(f"semi-recurrence scan: {exc!r}")
    for sd, end, h in candidates:
        probes = np.linspace(end, h.param_at, 5)[1:-1]
        classes = [_damped_probe(m, base.with_value(name, float(v)), primary, float(v), config) for v in probes]
        out["damped_probe"].append({"side": sd, "params": probes.tolist(), "classes": classes})
        if DAMPED in classes and SUSTAINED not in classes and all(c in (DAMPED, _FAST_DECAY) for c in classes):
            out["holds"] = out["continuity"]
            out["stop"] = end
            out["inner_hopf"] = h.param_at
            break
    return out


__all__ = [
    "CriterionReport", "StopClassification", "WindowReport", "check_criterion", "classify_stop_kind",
    "window_report", "collect_branches", "SUDDEN_STOP", "TRANSCRITICAL", "SADDLE_NODE", "NO_STOP",
    "RECURRENCE", "SEMI_RECURRENCE", "NEITHER",
]
