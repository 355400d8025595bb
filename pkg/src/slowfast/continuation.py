"""Pseudo-arclength continuation of equilibria and bifurcation detection.

Branches are traced in scaled coordinates ``((p - p0)/P, x_i/X_i)`` so one
arc-step configuration works for parameters spanning 0.02 or 45 units and
for states of size 1e-2 or 1e2.  Events are refined by bisection along the
chord between the two bracketing branch points, with each trial point
corrected back onto the branch on the hyperplane orthogonal to the chord.
That works identically for Hopf points, branch points and folds.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .eigen import EigenSpectrum, eigenvalues
from .equilibria import Equilibrium, EquilibriumError, find_equilibrium, newton_solve
from .models import ModelDef, ParameterSet, fd_jacobian, get_model, jacobian, param_derivative

HOPF = "Hopf"
FOLD = "Fold"
BRANCH_POINT = "BranchPoint"
OSCILLATION_STOP = "OscillationStop"

BRANCH_RESIDUAL = 1e-9
DEAD_BAND = 1e-12
DEAD_BAND_SHIFT = 1e-9
DEGENERATE_OFFSET = 1e-6


class ContinuationError(RuntimeError):
    pass


@dataclass
class ArcStep:
    ds0: float = 0.005
    ds_min: float = 1e-6
    ds_max: float = 0.02
    shrink: float = 0.5
    grow: float = 1.3
    grow_after: int = 4
    max_points: int = 20000
    newton_tol: float = 1e-11
    newton_maxiter: int = 12


@dataclass
class BranchPoint:
    param: float
    state: np.ndarray
    spectrum: EigenSpectrum
    stability: str


@dataclass
class BifurcationEvent:
    kind: str
    param_at: float
    state_at: np.ndarray
    test_value: float
    frequency: float | None = None
    spectrum: EigenSpectrum | None = None
    index: int | None = None    # branch segment (index, index+1) that bracketed the event

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "param_at": float(self.param_at),
             "state_at": [float(v) for v in np.atleast_1d(self.state_at)],
             "test_value": float(self.test_value)}
        if self.frequency is not None:
            d["frequency"] = float(self.frequency)
        return d


@dataclass
class Branch:
    bif_param: str
    points: list[BranchPoint]
    model_id: str = ""
    base_params: ParameterSet | None = None
    arclength_steps: list[float] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)
    scale: np.ndarray | None = None          # (P, X_1..X_n)
    extrapolated: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def params(self) -> np.ndarray:
        return np.array([pt.param for pt in self.points])

    @property
    def states(self) -> np.ndarray:
        return np.array([pt.state for pt in self.points])

    @property
    def stability(self) -> list[str]:
        return [pt.stability for pt in self.points]

    def __len__(self) -> int:
        return len(self.points)

    def span(self) -> tuple[float, float]:
        p = self.params
        return float(p.min()), float(p.max())

    def state_at(self, value: float) -> np.ndarray | None:
        """Linear interpolation on the first segment that brackets ``value``."""
        p = self.params
        X = self.states
        for i in range(len(p) - 1):
            a, b = p[i], p[i + 1]
            if min(a, b) <= value <= max(a, b):
                w = 0.0 if b == a else (value - a) / (b - a)
                return X[i] + w * (X[i + 1] - X[i])
        return None


class _System:
    """Extended system F(p, x) = f(x; p) in scaled coordinates."""

    def __init__(self, model: ModelDef, base: ParameterSet, name: str, scale: np.ndarray):
        self.m = model
        self.base = base.crossing(name)
        self.name = name
        self.P = scale[0]
        self.X = scale[1:]

    def params(self, p: float) -> ParameterSet:
        return self.base.with_value(self.name, p)

    def f(self, p: float, x: np.ndarray) -> np.ndarray:
        vals = dict(self.base.values)
        vals[self.name] = p
        return self.m.fn(vals, x)

    def jac_ext(self, p: float, x: np.ndarray) -> np.ndarray:
        ps = self.params(p)
        J = jacobian(self.m, ps, x)
        fp = param_derivative(self.m, ps, self.name, x)
        return np.column_stack([fp * self.P, J * self.X[None, :]])

    def to_z(self, p: float, x: np.ndarray) -> np.ndarray:
        return np.concatenate([[p / self.P], x / self.X])

    def from_z(self, z: np.ndarray) -> tuple[float, np.ndarray]:
        return float(z[0] * self.P), z[1:] * self.X

    def null_tangent(self, p: float, x: np.ndarray) -> np.ndarray:
        A = self.jac_ext(p, x)
        _, _, vt = np.linalg.svd(A)
        return vt[-1] / np.linalg.norm(vt[-1])

    def correct(self, z_pred: np.ndarray, normal: np.ndarray, tol: float, maxiter: int) -> np.ndarray | None:
        """Newton on [F(z); normal.(z - z_pred)] = 0."""
        z = z_pred.copy()
        for _ in range(maxiter):
            p, x = self.from_z(z)
            F = self.f(p, x)
            if not np.all(np.isfinite(F)):
                return None
            G = np.concatenate([F, [normal @ (z - z_pred)]])
            A = np.vstack([self.jac_ext(p, x), normal])
            try:
                dz = np.linalg.solve(A, -G)
            except np.linalg.LinAlgError:
                return None
            z = z + dz
            if not np.all(np.isfinite(z)):
                return None
            if np.linalg.norm(dz) < 1e-12 * max(1.0, np.linalg.norm(z)):
                p, x = self.from_z(z)
                if np.linalg.norm(self.f(p, x)) < tol:
                    return z
        p, x = self.from_z(z)
        F = self.f(p, x)
        if np.all(np.isfinite(F)) and np.linalg.norm(F) < tol:
            return z
        return None

    def point(self, p: float, x: np.ndarray) -> BranchPoint:
        spec = eigenvalues(jacobian(self.m, self.params(p), x))
        return BranchPoint(float(p), np.array(x, dtype=float), spec, spec.stability())

    def natural(self, p: float, seed: np.ndarray, tol: float) -> np.ndarray | None:
        vals = dict(self.base.values)
        vals[self.name] = p
        ps = self.params(p)
        try:
            x, _, _ = newton_solve(lambda s: self.m.fn(vals, s), lambda s: jacobian(self.m, ps, s),
                                   seed, tol=tol, max_iter=30)
        except (EquilibriumError, np.linalg.LinAlgError):
            return None
        return self._polish(vals, ps, x)

    def _polish(self, vals: dict, ps: ParameterSet, x: np.ndarray, iters: int = 40) -> np.ndarray:
        # Newton is only linear at singular points (branch crossings), where a small
        # residual still leaves an O(sqrt(residual)) state error; iterate while it helps
        r = np.linalg.norm(self.m.fn(vals, x))
        for _ in range(iters):
            if r == 0.0:
                break
            try:
                dx = np.linalg.solve(jacobian(self.m, ps, x), -self.m.fn(vals, x))
            except np.linalg.LinAlgError:
                break
            x_new = x + dx
            r_new = np.linalg.norm(self.m.fn(vals, x_new))
            if not (np.all(np.isfinite(x_new)) and r_new < r):
                break
            x, r = x_new, r_new
        return self._per_capita_polish(vals, x)

    def _per_capita_polish(self, vals: dict, x: np.ndarray) -> np.ndarray:
        """Re-solve with x_i g_i replaced by g_i on the log coordinates.

        Where an interior branch meets an invariant axis the full system is
        singular but the per-capita one is not.  The refined point is kept
        only if it stays within the accuracy of the full-system solve.
        """
        m = self.m
        if m.per_capita is None or not m.log_coords:
            return x
        idx = list(m.log_coords)

        def red(z):
            F = np.array(m.fn(vals, z), dtype=float)
            F[idx] = m.per_capita(vals, z)
            return F

        z = x.copy()
        try:
            for _ in range(20):
                F = red(z)
                if not np.all(np.isfinite(F)):
                    return x
                dz = np.linalg.solve(fd_jacobian(red, z), -F)
                z = z + dz
                if np.linalg.norm(dz) <= 1e-15 * max(1.0, np.linalg.norm(z)):
                    break
        except np.linalg.LinAlgError:
            return x
        scale = max(1.0, float(np.max(np.abs(x))))
        if np.all(np.isfinite(z)) and np.max(np.abs(z - x)) < 1e-6 * scale and \
                np.linalg.norm(m.fn(vals, z)) <= max(np.linalg.norm(m.fn(vals, x)), 1e-14 * scale):
            return z
        return x


def _effective_range(model: ModelDef, name: str, lo: float, hi: float) -> tuple[float, float]:
    v = model.degenerate.get(name)
    if v is not None:
        if abs(lo - v) <= DEGENERATE_OFFSET:
            lo = v + DEGENERATE_OFFSET
        if abs(hi - v) <= DEGENERATE_OFFSET:
            hi = v - DEGENERATE_OFFSET
    return lo, hi


def trace_branch(model: str | ModelDef, base_params: ParameterSet, bif_param: str,
                 range: tuple[float, float], start: Equilibrium, step: ArcStep | None = None) -> Branch:
    m = get_model(model)
    cfg = step or ArcStep()
    lo, hi = float(min(range)), float(max(range))
    if hi == lo:
        raise ContinuationError("zero-length range")
    lo_eff, hi_eff = _effective_range(m, bif_param, lo, hi)
    p0 = float(start.params[bif_param])
    x0 = np.asarray(start.state, dtype=float)
    base = base_params.crossing(bif_param)
    if not np.all(np.isfinite(x0)) or np.linalg.norm(m.fn(base.with_value(bif_param, p0).values, x0)) > BRANCH_RESIDUAL:
        raise ContinuationError("start equilibrium is not converged")
    tol_in = 1e-9 * max(1.0, abs(p0))
    if p0 < lo - tol_in or p0 > hi + tol_in:
        raise ContinuationError(f"start parameter {p0} lies outside {lo, hi}")
    p0 = min(max(p0, lo_eff), hi_eff)

    X = np.maximum(np.abs(x0), max(0.1 * float(np.max(np.abs(x0))), 1e-6))
    scale = np.concatenate([[hi - lo], X])
    sys = _System(m, base, bif_param, scale)
    x0 = sys.natural(p0, x0, cfg.newton_tol) if abs(p0 - float(start.params[bif_param])) > 0 else x0
    if x0 is None:
        raise ContinuationError("could not re-converge the start equilibrium")

    diags: list[str] = []
    steps: list[float] = []
    halves = []
    for direction in (+1, -1):
        pts, ds_log, why = _trace_one(sys, p0, x0, direction, lo_eff, hi_eff, cfg)
        halves.append(pts)
        steps.extend(ds_log)
        diags.append(f"{'up' if direction > 0 else 'down'}: {why}")
    up, down = halves
    points = list(reversed(down[1:])) + up
    if points and points[0].param > points[-1].param:
        points.reverse()
    br = Branch(bif_param, points, m.id, base_params, steps, diags, scale)
    _extrapolate_degenerate(br, m, lo, hi, lo_eff, hi_eff)
    return br


def _trace_one(sys: _System, p0: float, x0: np.ndarray, direction: int, lo: float, hi: float,
               cfg: ArcStep) -> tuple[list[BranchPoint], list[float], str]:
    pts = [sys.point(p0, x0)]
    z = sys.to_z(p0, x0)
    t = sys.null_tangent(p0, x0)
    if t[0] * direction < 0:
        t = -t
    if abs(t[0]) < 1e-14:
        t = t * direction
    ds = cfg.ds0
    ok_run = 0
    ds_log: list[float] = []
    while len(pts) < cfg.max_points:
        z_pred = z + ds * t
        z_new = sys.correct(z_pred, t, cfg.newton_tol, cfg.newton_maxiter)
        if z_new is not None:
            dist = float(np.linalg.norm(z_new - z))
            if dist > min(2.0 * ds, cfg.ds_max) or dist == 0.0:
                z_new = None
        if z_new is None:
            ds *= cfg.shrink
            ok_run = 0
            if ds < cfg.ds_min:
                return pts, ds_log, "corrector failure at minimum step"
            continue
        p_new, x_new = sys.from_z(z_new)
        if p_new > hi or p_new < lo:
            end = hi if p_new > hi else lo
            p_cur = pts[-1].param
            w = (end - p_cur) / (p_new - p_cur) if p_new != p_cur else 1.0
            seed = pts[-1].state + w * (x_new - pts[-1].state)
            x_end = sys.natural(end, seed, cfg.newton_tol)
            if x_end is None:
                ds *= cfg.shrink
                if ds < cfg.ds_min:
                    return pts, ds_log, "could not land on range end"
                continue
            if np.linalg.norm(sys.to_z(end, x_end) - z) <= cfg.ds_max:
                pts.append(sys.point(end, x_end))
                ds_log.append(float(np.linalg.norm(sys.to_z(end, x_end) - z)))
                return pts, ds_log, "reached range end"
            ds *= cfg.shrink
            continue
        pts.append(sys.point(p_new, x_new))
        ds_log.append(float(np.linalg.norm(z_new - z)))
        t = (z_new - z) / np.linalg.norm(z_new - z)
        z = z_new
        ok_run += 1
        if ok_run >= cfg.grow_after:
            ds = min(ds * cfg.grow, cfg.ds_max)
            ok_run = 0
    return pts, ds_log, "maximum number of points"


def _extrapolate_degenerate(br: Branch, m: ModelDef, lo, hi, lo_eff, hi_eff) -> None:
    """Quadratic extrapolation of the last 5 points to a degenerate range end (plotting only)."""
    if len(br.points) < 5:
        return
    p = br.params
    X = br.states
    for side, end, eff in (("lo", lo, lo_eff), ("hi", hi, hi_eff)):
        if end == eff:
            continue
        idx = np.argsort(np.abs(p - eff))[:5]
        if np.min(np.abs(p[idx] - eff)) > 1e-3 * (hi - lo):
            continue
        A = np.vander(p[idx] - eff, 3)
        coef, *_ = np.linalg.lstsq(A, X[idx], rcond=None)
        br.extrapolated[side] = np.array([np.polyval(coef[:, j], end - eff) for j in range(X.shape[1])])
        br.extrapolated[side + "_param"] = np.array([end])


# ---------------------------------------------------------------------------
# events


def _hopf_test(spec: EigenSpectrum) -> float | None:
    return spec.complex_pair_real


def _real_test(spec: EigenSpectrum) -> float:
    reals = spec.real_eigenvalues()
    if not reals:
        return 1.0
    return spec.det_sign * min(abs(r) for r in reals)


def _nudged(sys: _System, pt: BranchPoint, toward: BranchPoint, fn: Callable) -> float | None:
    """Dead-band handling: re-evaluate slightly away from the neighbour."""
    v = fn(pt.spectrum)
    if v is None or abs(v) >= DEAD_BAND:
        return v
    shift = DEAD_BAND_SHIFT * (1.0 if pt.param > toward.param else -1.0)
    x = sys.natural(pt.param + shift, pt.state, 1e-12)
    if x is None:
        return v
    return fn(sys.point(pt.param + shift, x).spectrum)


def _system_for(branch: Branch) -> _System:
    if branch.base_params is None or branch.scale is None:
        raise ContinuationError("branch lacks model context")
    return _System(get_model(branch.base_params.model), branch.base_params, branch.bif_param, branch.scale)


def detect_events(branch: Branch, kinds: tuple[str, ...] = (HOPF, FOLD, BRANCH_POINT)) -> list[BifurcationEvent]:
    if len(branch.points) < 2:
        return []
    sys = _system_for(branch)
    pts = branch.points
    p = branch.params
    events: list[BifurcationEvent] = []
    for i in range(len(pts) - 1):
        a, b = pts[i], pts[i + 1]
        if HOPF in kinds:
            ha, hb = _nudged(sys, a, b, _hopf_test), _nudged(sys, b, a, _hopf_test)
            if ha is not None and hb is not None and ha * hb < 0:
                ev = _refine_on_chord(sys, a, b, _hopf_test, HOPF)
                if ev is not None:
                    ev.index = i
                    events.append(ev)
        if FOLD in kinds or BRANCH_POINT in kinds:
            ra, rb = _nudged(sys, a, b, _real_test), _nudged(sys, b, a, _real_test)
            if ra * rb < 0:
                before = np.sign(p[i] - p[i - 1]) if i > 0 else np.sign(p[i + 1] - p[i])
                after = np.sign(p[i + 2] - p[i + 1]) if i + 2 < len(p) else np.sign(p[i + 1] - p[i])
                kind = FOLD if before * after < 0 else BRANCH_POINT
                if kind in kinds:
                    ev = _refine_on_chord(sys, a, b, _real_test, kind)
                    if ev is not None:
                        ev.index = i
                        events.append(ev)
    events.sort(key=lambda e: e.param_at)
    return events


def _refine_on_chord(sys: _System, a: BranchPoint, b: BranchPoint, test: Callable, kind: str,
                     max_iter: int = 200) -> BifurcationEvent | None:
    za, zb = sys.to_z(a.param, a.state), sys.to_z(b.param, b.state)
    d = zb - za
    normal = d / np.linalg.norm(d)

    def at(theta: float):
        if theta == 0.0:
            return a.param, a.state, a.spectrum
        if theta == 1.0:
            return b.param, b.state, b.spectrum
        zp = za + theta * d
        z = sys.correct(zp, normal, 1e-11, 20)
        if z is None:
            return None
        p, x = sys.from_z(z)
        return p, x, eigenvalues(jacobian(sys.m, sys.params(p), x))

    lo, hi = 0.0, 1.0
    f_lo, f_hi = test(a.spectrum), test(b.spectrum)
    if f_lo is None or f_hi is None:
        return None
    p_lo, p_hi = a.param, b.param
    best = None
    for _ in range(max_iter):
        if abs(p_hi - p_lo) < 1e-10 * max(1.0, abs(p_lo)) and best is not None:
            break
        if hi - lo < 1e-15:
            break
        mid = 0.5 * (lo + hi)
        r = at(mid)
        if r is None:
            return None
        pm, xm, sm = r
        fm = test(sm)
        if fm is None:
            return None
        best = (mid, pm, xm, sm, fm)
        if fm == 0.0:
            lo = hi = mid
            p_lo = p_hi = pm
            f_lo = f_hi = 0.0
            break
        if (fm < 0) == (f_lo < 0):
            lo, f_lo, p_lo = mid, fm, pm
        else:
            hi, f_hi, p_hi = mid, fm, pm
    # final secant step inside the bracket
    if f_hi != f_lo and lo != hi:
        th = lo - f_lo * (hi - lo) / (f_hi - f_lo)
        r = at(min(max(th, lo), hi))
        if r is None and best is not None:
            # the secant can land exactly on a singular point of the corrector
            r = (best[1], best[2], best[3])
    else:
        r = at(lo) if best is None else (best[1], best[2], best[3])
    if r is None:
        return None
    pr, xr, sr = r
    val = test(sr)
    freq = sr.complex_pair_imag if kind == HOPF else None
    return BifurcationEvent(kind, float(pr), np.array(xr), float(val if val is not None else float("nan")),
                            freq, sr)


# ---------------------------------------------------------------------------
# standalone Hopf refinement


def refine_hopf(model: str | ModelDef, params: ParameterSet, bif_param: str, bracket: tuple[float, float],
                seed=None) -> BifurcationEvent:
    """Natural-parameter bisection on the leading complex pair's real part."""
    m = get_model(model)
    base = params.crossing(bif_param)
    lo, hi = float(bracket[0]), float(bracket[1])

    def solve(v: float, s) -> Equilibrium | None:
        try:
            return find_equilibrium(m, base.with_value(bif_param, v), s)
        except (EquilibriumError, np.linalg.LinAlgError):
            return None

    seeds = [np.asarray(seed, dtype=float)] if seed is not None else m.seeds(base.with_value(bif_param, lo).values)
    pair = None
    for s in seeds:
        e_lo = solve(lo, s)
        if e_lo is None or e_lo.spectrum.complex_pair_real is None:
            continue
        e_hi = solve(hi, e_lo.state)
        if e_hi is None or e_hi.spectrum.complex_pair_real is None:
            continue
        if e_lo.spectrum.complex_pair_real * e_hi.spectrum.complex_pair_real < 0:
            pair = (e_lo, e_hi)
            break
    if pair is None:
        raise ContinuationError("no sign change of the complex pair's real part in the bracket")
    e_lo, e_hi = pair
    f_lo = e_lo.spectrum.complex_pair_real
    f_hi = e_hi.spectrum.complex_pair_real
    cur = e_lo
    for _ in range(200):
        if abs(hi - lo) < 1e-10 * max(1.0, abs(lo)):
            break
        mid = 0.5 * (lo + hi)
        e = solve(mid, cur.state)
        if e is None or e.spectrum.complex_pair_real is None:
            raise ContinuationError(f"lost the equilibrium at {bif_param}={mid}")
        fm = e.spectrum.complex_pair_real
        cur = e
        if fm == 0.0:
            lo = hi = mid
            f_lo = f_hi = 0.0
            break
        if (fm < 0) == (f_lo < 0):
            lo, f_lo = mid, fm
        else:
            hi, f_hi = mid, fm
    root = lo if f_hi == f_lo else lo - f_lo * (hi - lo) / (f_hi - f_lo)
    e = solve(root, cur.state) or cur
    return BifurcationEvent(HOPF, float(e.params[bif_param]), e.state, float(e.spectrum.complex_pair_real),
                            e.spectrum.complex_pair_imag, e.spectrum)


__all__ = [
    "ArcStep", "Branch", "BranchPoint", "BifurcationEvent", "ContinuationError",
    "HOPF", "FOLD", "BRANCH_POINT", "OSCILLATION_STOP",
    "trace_branch", "detect_events", "refine_hopf",
]
