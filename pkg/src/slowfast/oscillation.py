"""Oscillation classification, parameter scans, stop location and limit cycles."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.signal import find_peaks
from scipy.stats import theilslopes

from .equilibria import EquilibriumError, find_equilibrium
from .integrator import (IntegratorConfig, Trajectory, continue_trajectory, integrate,
                         section_hits)
from .models import ModelDef, ParameterSet, get_model

SUSTAINED = "sustained"
DAMPED = "damped"
NONE = "none"

RATIO_LO, RATIO_HI = 0.99, 1.01
MIN_SUSTAINED_PEAKS = 5
MIN_DAMPED_PEAKS = 3
TARGET_PEAKS = 8
MAX_EXTENSION = 8
DEFAULT_DURATION = 500.0
HISTOGRAM_BINS = 64


class OscillationError(RuntimeError):
    pass


@dataclass
class OscillationRecord:
    param: float | None
    cls: str
    amplitude: float
    period: float
    quiescence_fraction: float
    spike_count: int
    n_peaks: int = 0
    decay_ratio: float = float("nan")
    duration: float = 0.0
    flags: list[str] = field(default_factory=list)

    def to_row(self) -> dict:
        return {"param": self.param, "class": self.cls, "amplitude": self.amplitude,
                "period": self.period, "quiescence_fraction": self.quiescence_fraction,
                "spike_count": self.spike_count}


@dataclass
class ScanResult:
    grid: list[float]
    records: list[OscillationRecord]
    stop_bracket: tuple[float, float] | None = None

    def classes(self) -> list[str]:
        return [r.cls for r in self.records]


@dataclass
class LimitCycle:
    points: np.ndarray
    times: np.ndarray
    period: float
    observable: int
    obs_min: float
    obs_max: float
    degenerate: bool = False
    section_level: float = float("nan")

    @property
    def diameter(self) -> float:
        P = self.points
        return float(np.max(np.ptp(P, axis=0))) if len(P) > 1 else 0.0

    @property
    def closure_error(self) -> float:
        return float(np.max(np.abs(self.points[0] - self.points[-1])))


def duration_heuristic(hopf_freq: float | None = None) -> float:
    if hopf_freq is not None and abs(hopf_freq) > 0:
        return 200.0 / abs(hopf_freq)
    return DEFAULT_DURATION


def _settled(traj: Trajectory, observable: int, settle_fraction: float) -> tuple[np.ndarray, np.ndarray]:
    n = len(traj.times)
    i0 = min(int(math.floor(settle_fraction * n)), n - 1)
    return traj.times[i0:], traj.states[i0:, observable]


def recurrence_metrics(traj: Trajectory, observable: int, quiescence_band: float = 0.05,
                       settle_fraction: float = 0.5) -> tuple[float, int, float]:
    """(quiescence fraction, spike count, mean inter-spike interval)."""
    t, s = _settled(traj, observable, settle_fraction)
    return _recurrence(t, s, quiescence_band)


def _recurrence(t: np.ndarray, s: np.ndarray, band: float) -> tuple[float, int, float]:
    amp = float(np.ptp(s)) if s.size else 0.0
    if s.size < 3 or amp <= 1e-12 * max(1.0, float(np.max(np.abs(s)))):
        return 1.0, 0, float("nan")
    counts, edges = np.histogram(s, bins=HISTOGRAM_BINS)
    k = int(np.argmax(counts))
    mode = 0.5 * (edges[k] + edges[k + 1])
    dev = np.abs(s - mode)
    frac = float(np.mean(dev <= band * amp))
    idx, _ = find_peaks(np.concatenate([[0.0], dev, [0.0]]), height=0.5 * amp, prominence=0.5 * amp)
    idx = idx - 1
    spikes = len(idx)
    isi = float(np.mean(np.diff(t[idx]))) if spikes >= 2 else float("nan")
    return frac, spikes, isi


def _peak_trend(t: np.ndarray, s: np.ndarray, floor: float) -> tuple[np.ndarray, float, float]:
    idx, props = find_peaks(s, prominence=floor)
    if len(idx) < 2:
        return idx, float("nan"), float("nan")
    prom = props["prominences"]
    period = float(np.mean(np.diff(t[idx])))
    if len(idx) < MIN_DAMPED_PEAKS:
        return idx, period, float("nan")
    slope = theilslopes(np.log(prom), np.arange(len(prom)))[0]
    return idx, period, float(math.exp(slope))


def classify_oscillation(traj: Trajectory, observable: int, settle_fraction: float = 0.5,
                         amp_floor: float | None = None, param: float | None = None,
                         quiescence_band: float = 0.05) -> OscillationRecord:
    if traj.failed:
        raise OscillationError(f"trajectory carries failure flags {traj.flags}")
    full = traj.states[:, observable]
    scale = float(np.max(np.abs(full))) if full.size else 0.0
    floor = amp_floor if amp_floor is not None else 1e-4 * max(scale, 1e-12)
    t, s = _settled(traj, observable, settle_fraction)
    amp = float(np.ptp(s)) if s.size else 0.0
    idx, period, r = _peak_trend(t, s, floor)
    n = len(idx)
    if amp > floor and n >= MIN_SUSTAINED_PEAKS and RATIO_LO <= r <= RATIO_HI:
        cls = SUSTAINED
    elif amp > floor and n >= MIN_DAMPED_PEAKS and r < RATIO_LO:
        cls = DAMPED
    else:
        cls = NONE
    qf, spikes, _ = _recurrence(t, s, quiescence_band)
    return OscillationRecord(param, cls, amp, period, qf, spikes, n, r,
                             float(traj.times[-1] - traj.times[0]), list(traj.flags))


def simulate_and_classify(model: str | ModelDef, params: ParameterSet, x0, duration: float,
                          observable: int | None = None, config: IntegratorConfig | None = None,
                          settle_fraction: float = 0.5, max_extension: int = MAX_EXTENSION,
                          param: float | None = None) -> tuple[OscillationRecord, Trajectory]:
    """Integrate, classify and extend the run (x2, up to ``max_extension``x) while undecided.

    A run is extended while it shows fewer than the target number of peaks
    above the floor, while the peak trend is still growing, or while it
    looks damped (slow convergence onto a cycle is indistinguishable from
    decay over a short window).  A cell that was damped and decays below
    the floor after extension keeps the damped label.
    """
    m = get_model(model)
    obs = m.observable if observable is None else observable
    traj = integrate(m, params, x0, (0.0, duration), config)
    if traj.failed:
        return _failed_record(param, traj), traj
    rec = classify_oscillation(traj, obs, settle_fraction, param=param)
    seen_damped = rec.cls == DAMPED
    total = duration
    while total < max_extension * duration * (1 - 1e-12):
        floor = 1e-4 * max(float(np.max(np.abs(traj.states[:, obs]))), 1e-12)
        undecided = (rec.n_peaks < TARGET_PEAKS and rec.amplitude > floor) or rec.cls == DAMPED \
            or (rec.cls == NONE and rec.decay_ratio > RATIO_HI)
        if not undecided:
            break
        traj = continue_trajectory(m, params, traj, total, config)
        total *= 2
        if traj.failed:
            return _failed_record(param, traj), traj
        rec = classify_oscillation(traj, obs, settle_fraction, param=param)
        seen_damped = seen_damped or rec.cls == DAMPED
    if rec.cls == NONE and seen_damped and not (rec.decay_ratio > RATIO_HI):
        rec.cls = DAMPED
    return rec, traj


def _failed_record(param, traj: Trajectory) -> OscillationRecord:
    return OscillationRecord(param, NONE, float("nan"), float("nan"), float("nan"), 0, 0,
                             float("nan"), float(traj.times[-1] - traj.times[0]), list(traj.flags))


def scan_parameter(model: str | ModelDef, params: ParameterSet, bif_param: str, grid: Sequence[float],
                   x0=None, duration: float | None = None, hopf_freq: float | None = None,
                   config: IntegratorConfig | None = None, observable: int | None = None,
                   settle_fraction: float = 0.5) -> ScanResult:
    m = get_model(model)
    g = [float(v) for v in grid]
    if len(g) < 3:
        raise ValueError("scan grid needs at least 3 values")
    if any(b < a for a, b in zip(g, g[1:])) and any(b > a for a, b in zip(g, g[1:])):
        raise ValueError("scan grid must be sorted")
    x0 = np.asarray(m.x0 if x0 is None else x0, dtype=float)
    D = duration if duration is not None else duration_heuristic(hopf_freq)
    base = params.crossing(bif_param)
    records = []
    for v in g:
        try:
            rec, _ = simulate_and_classify(m, base.with_value(bif_param, v), x0, D, observable,
                                           config, settle_fraction, param=v)
        except (ValueError, ArithmeticError, OscillationError) as exc:
            rec = OscillationRecord(v, NONE, float("nan"), float("nan"), float("nan"), 0,
                                    flags=[f"error: {exc}"])
        records.append(rec)
    return ScanResult(g, records, _stop_bracket(g, records))


def _stop_bracket(grid: list[float], records: list[OscillationRecord]) -> tuple[float, float] | None:
    for i in range(len(grid) - 1):
        a, b = records[i].cls, records[i + 1].cls
        if a == SUSTAINED and b != SUSTAINED:
            return grid[i], grid[i + 1]
        if b == SUSTAINED and a != SUSTAINED:
            return grid[i + 1], grid[i]
    return None


@dataclass
class StopSearch:
    param: float
    bracket: tuple[float, float]
    history: list[tuple[float, str]]


def find_stop_point(model: str | ModelDef, params: ParameterSet, bif_param: str,
                    bracket: tuple[float, float], x0=None, duration: float | None = None,
                    hopf_freq: float | None = None, config: IntegratorConfig | None = None,
                    observable: int | None = None, max_iter: int = 12,
                    rel_width: float = 1e-3, detailed: bool = False) -> float | StopSearch:
    """Bisection on the sustained/non-sustained classification.

    A cell counts as non-oscillating when the run diverges or ends without
    sustained oscillation after maximal extension.
    """
    m = get_model(model)
    x0 = np.asarray(m.x0 if x0 is None else x0, dtype=float)
    D = duration if duration is not None else duration_heuristic(hopf_freq)
    base = params.crossing(bif_param)
    osc, non = float(bracket[0]), float(bracket[1])
    width0 = abs(non - osc)
    if width0 == 0:
        raise ValueError("degenerate bracket")

    def cls(v: float) -> str:
        rec, _ = simulate_and_classify(m, base.with_value(bif_param, v), x0, D, observable, config, param=v)
        return rec.cls

    history = []
    c_osc, c_non = cls(osc), cls(non)
    history += [(osc, c_osc), (non, c_non)]
    if c_osc != SUSTAINED or c_non == SUSTAINED:
        raise OscillationError(f"bracket not pre-classified: {osc}->{c_osc}, {non}->{c_non}")
    for _ in range(max_iter):
        if abs(non - osc) <= rel_width * width0:
            break
        mid = 0.5 * (osc + non)
        c = cls(mid)
        history.append((mid, c))
        if c == SUSTAINED:
            osc = mid
        else:
            non = mid
    result = 0.5 * (osc + non)
    if detailed:
        return StopSearch(result, (osc, non), history)
    return result


# ---------------------------------------------------------------------------
# limit cycles


def _section_level(s: np.ndarray) -> float:
    """Histogram mode of the observable, kept 10% inside its range."""
    lo, hi = float(np.min(s)), float(np.max(s))
    counts, edges = np.histogram(s, bins=HISTOGRAM_BINS)
    k = int(np.argmax(counts))
    mode = 0.5 * (edges[k] + edges[k + 1])
    pad = 0.1 * (hi - lo)
    return min(max(mode, lo + pad), hi - pad)


def extract_limit_cycle(model: str | ModelDef, params: ParameterSet, x0=None, observable: int | None = None,
                        duration: float | None = None, hopf_freq: float | None = None,
                        tol: float = 1e-8, max_loops: int = 8, samples: int = 4000) -> LimitCycle:
    """One period of the attracting cycle reached from ``x0``.

    Returns are collected on the section {observable = level, increasing}.
    The cycle is accepted when the latest hit agrees with the hit q returns
    earlier (q = 1 for simple cycles, larger for multi-loop ones).  When the
    trajectory instead spirals into an equilibrium, a degenerate one-point
    cycle at that equilibrium is returned.
    """
    m = get_model(model)
    obs = m.observable if observable is None else observable
    x = np.asarray(m.x0 if x0 is None else x0, dtype=float)
    D = duration if duration is not None else duration_heuristic(hopf_freq)
    cfg = IntegratorConfig(rtol=1e-10, atol=1e-12)

    # transient, then choose the section from the settled signal
    traj = integrate(m, params, x, (0.0, D), cfg)
    if traj.failed:
        raise OscillationError(f"integration failed: {traj.flags}")
    t_now = D
    x = traj.final
    s = traj.states[len(traj.times) // 2:, obs]
    scale = max(float(np.max(np.abs(traj.states[:, obs]))), 1e-12)
    budget = MAX_EXTENSION * D
    hit_t: list[float] = []
    hit_x: list[np.ndarray] = []
    level = _section_level(s)
    chunk = D
    amps: list[float] = []
    while t_now < budget:
        amps.append(float(np.ptp(s)))
        if amps[-1] < 1e-6 * scale:
            return _point_cycle(m, params, x, obs)
        sh = section_hits(m, params, x, (t_now, t_now + chunk), obs, level, cfg)
        if sh.failed:
            raise OscillationError("integration failed while collecting returns")
        hit_t.extend(sh.times.tolist())
        hit_x.extend(list(sh.states))
        found = _match_return(hit_t, hit_x, tol, max_loops)
        if found is not None:
            i0, i1 = found
            return _one_period(m, params, hit_x[i0], hit_t[i1] - hit_t[i0], obs, level, samples, cfg)
        S = sh.step_states
        s = S[len(S) // 2:, obs]
        x = sh.final_state
        t_now += chunk
        if len(sh.times) == 0:
            # slow algebraic decay can leave the section behind; re-centre it
            level = _section_level(s)
            hit_t, hit_x = [], []
    if _spirals_in(hit_t, hit_x, obs) or _shrinking(amps + [float(np.ptp(s))]):
        return _point_cycle(m, params, x, obs)
    raise OscillationError("no converged return within the duration budget")


def _match_return(ts: list[float], xs: list[np.ndarray], tol: float, max_loops: int):
    if len(xs) < 2:
        return None
    last = xs[-1]
    for q in range(1, min(max_loops, len(xs) - 1) + 1):
        ref = xs[-1 - q]
        if np.max(np.abs(last - ref)) < tol * max(1.0, float(np.max(np.abs(last)))) and ts[-1] > ts[-1 - q]:
            return len(xs) - 1 - q, len(xs) - 1
    return None


def _spirals_in(ts, xs, obs) -> bool:
    if len(xs) < 6:
        return len(xs) == 0
    X = np.array(xs[-6:])
    steps = np.linalg.norm(np.diff(X, axis=0), axis=1)
    return bool(np.all(np.diff(steps) < 0))


def _shrinking(amps: list[float], n: int = 3) -> bool:
    return len(amps) > n and bool(np.all(np.diff(amps[-n - 1:]) < 0))


def _point_cycle(m: ModelDef, params: ParameterSet, x: np.ndarray, obs: int) -> LimitCycle:
    try:
        eq = find_equilibrium(m, params, x)
        p = eq.state
    except EquilibriumError:
        p = np.asarray(x, dtype=float)
    pts = np.vstack([p, p])
    return LimitCycle(pts, np.array([0.0, 0.0]), 0.0, obs, float(p[obs]), float(p[obs]), degenerate=True)


def _one_period(m, params, x_start, period, obs, level, samples, cfg) -> LimitCycle:
    traj = integrate(m, params, x_start, (0.0, period),
                     IntegratorConfig(cfg.rtol, cfg.atol, None, cfg.method, period / samples))
    P = traj.states
    return LimitCycle(P, traj.times, float(period), obs, float(P[:, obs].min()), float(P[:, obs].max()),
                      False, level)


def manifold_proximity(cycle: LimitCycle, mode: str | Sequence[float] = "axes") -> float:
    P = np.asarray(cycle.points, dtype=float)
    if isinstance(mode, str):
        if mode != "axes":
            raise ValueError(f"unknown proximity mode {mode!r}")
        if P.shape[1] != 2:
            raise ValueError("axes mode needs a 2-d cycle")
        return float(np.min(np.minimum(np.abs(P[:, 0]), np.abs(P[:, 1]))))
    q = np.asarray(mode, dtype=float)
    if q.shape != (P.shape[1],):
        raise ValueError("point dimension does not match the cycle")
    return float(np.min(np.linalg.norm(P - q, axis=1)))
