"""Acceptance criteria 1-9, one PASS/FAIL line each (also printed in the session summary).

Run alone with ``pytest tests/test_acceptance.py -v -s`` or ``python3 tests/test_acceptance.py``.
"""
from __future__ import annotations

import math
import sys
import time

import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.signal import find_peaks

from slowfast.continuation import HOPF, detect_events, trace_branch
from slowfast.criterion import (RECURRENCE, SEMI_RECURRENCE, SUDDEN_STOP, TRANSCRITICAL, check_criterion,
                                classify_stop_kind)
from slowfast.eigen import charpoly_residual, eigenvalues
from slowfast.equilibria import find_equilibrium, scan_equilibria
from slowfast.integrator import EXPLICIT, IMPLICIT, IntegratorConfig, integrate
from slowfast.models import ModelDef, Param, ParameterSet, get_model, models_iter, rhs
from slowfast.oscillation import (duration_heuristic, extract_limit_cycle, find_stop_point, manifold_proximity,
                                  simulate_and_classify)

from conftest import ACCEPTANCE_LINES


def _report(k: int, ok: bool, detail: str, elapsed: float, limit: float) -> bool:
    timed = elapsed < limit
    line = (f"criterion {k}: {'PASS' if ok and timed else 'FAIL'}  {detail}  "
            f"[{elapsed:.1f} s, limit {limit:.0f} s]")
    ACCEPTANCE_LINES.append(line)
    print(line, file=sys.__stdout__, flush=True)
    return ok and timed


def _hopfs(mid, name, rng, seed, at, **over):
    m = get_model(mid)
    base = m.params(**over).crossing(name)
    start = find_equilibrium(m, base.with_value(name, at), seed)
    br = trace_branch(m, base, name, rng, start)
    return sorted(e.param_at for e in detect_events(br) if e.kind == HOPF), br


def test_criterion_1_sir_secondary_hopf():
    t = time.perf_counter()
    m = get_model("sir-secondary")
    h, _ = _hopfs("sir-secondary", "c3", (0.1, 12.0), m.x0, 0.5, c1=1.0, c2=5.0, c4=90.0)
    ok = len(h) == 2 and abs(h[0] - 0.9523) <= 0.01 and abs(h[1] - 9.0259) <= 0.01
    assert _report(1, ok, f"Hopf c3 = {[round(v, 5) for v in h]} (targets 0.9523, 9.0259 +/- 0.01)",
                   time.perf_counter() - t, 30)


def test_criterion_2_enso_hopf():
    t = time.perf_counter()
    h, _ = _hopfs("enso", "delta", (0.01, 0.4), [-0.7, -0.25, 1.05], 0.1, a=2.0, c=1.4, k=0.7, rho=0.01)
    ok = len(h) == 1 and abs(h[0] - 0.1634) <= 0.002
    assert _report(2, ok, f"Hopf delta = {[round(v, 5) for v in h]} (target 0.1634 +/- 0.002)",
                   time.perf_counter() - t, 30)


def test_criterion_3_goodwin_hopf():
    t = time.perf_counter()
    m = get_model("goodwin")
    seed = m.seeds(m.params(b6=1.0).values)[0]
    h, _ = _hopfs("goodwin", m.bif_param, m.bif_range, seed, 1.0)
    ok = len(h) == 2 and abs(h[0] - 0.05) <= 0.01 and abs(h[1] - 37.2) <= 0.5
    assert _report(3, ok, f"Hopf {m.bif_param} = {[round(v, 4) for v in h]} (targets 0.05 +/- 0.01, 37.2 +/- 0.5)",
                   time.perf_counter() - t, 60)


def test_criterion_4_foodweb_stop():
    t = time.perf_counter()
    m = get_model("foodweb")
    ps = m.params().crossing("beta")
    stop = find_stop_point(m, ps, "beta", (0.0, -0.1), m.x0, hopf_freq=0.5055)
    _, br = _hopfs("foodweb", "beta", (-0.1, 1.0), [0.2, 0.2, 0.6], 0.1)
    sc = classify_stop_kind(br, [], stop, 0.01)
    near_target = classify_stop_kind(br, [], -0.022, 0.01)
    ok = abs(stop + 0.022) <= 0.005 and sc.kind == SUDDEN_STOP and not near_target.eigen_zero_crossing
    assert _report(4, ok, f"stop beta = {stop:.5f} (target -0.022 +/- 0.005), kind {sc.kind}, "
                          f"real-part crossing within 0.01: {sc.eigen_zero_crossing}",
                   time.perf_counter() - t, 120)


def test_criterion_5_gause_closed_form():
    t = time.perf_counter()
    m = get_model("gause")
    p = m.params()
    r, K, mm, a, c = (p[k] for k in ("r", "K", "m", "a", "c"))
    _, br = _hopfs("gause", "eps", (0.0, 0.6), [2.0, 9.0], 0.1)
    worst = 0.0
    for pt in br.points:
        e = pt.param
        x = e * a / (c * mm - e)
        y = (r / mm) * (1 - x / K) * (x + a)
        worst = max(worst, abs(pt.state[0] - x), abs(pt.state[1] - y) / max(1.0, y))
    lim = br.extrapolated.get("lo")
    lim_err = float(np.max(np.abs(lim - [0.0, 10.0]))) if lim is not None else math.inf
    ok = worst < 1e-8 and lim_err < 1e-6
    assert _report(5, ok, f"max deviation {worst:.2e} over {len(br)} points, eps=0 limit error {lim_err:.1e}",
                   time.perf_counter() - t, 10)


EXPECTED = {
    "gause": (RECURRENCE, SUDDEN_STOP), "sir-epidemic": (RECURRENCE, SUDDEN_STOP),
    "fear": (RECURRENCE, SUDDEN_STOP), "foodweb": (RECURRENCE, SUDDEN_STOP), "enso": (RECURRENCE, SUDDEN_STOP),
    "goodwin": (SEMI_RECURRENCE, None), "sir-secondary": (SEMI_RECURRENCE, None), "hiv": (None, TRANSCRITICAL),
}


def test_criterion_6_verdict_table():
    t = time.perf_counter()
    rows, ok = [], True
    for mid, (verdict, kind) in EXPECTED.items():
        rep = check_criterion(mid)
        good = (verdict is None or rep.verdict == verdict) and (kind is None or rep.stop_kind == kind)
        ok &= good
        rows.append(f"{mid}={rep.verdict}/{rep.stop_kind}{'' if good else '(!)'}")
    assert _report(6, ok, ", ".join(rows), time.perf_counter() - t, 600)


def _nondecreasing(seq, max_inversions=1, size=0.02) -> bool:
    drops = [a - b for a, b in zip(seq, seq[1:]) if b < a]
    return len(drops) <= max_inversions and all(d < size for d in drops)


def test_criterion_7_quiescence_monotone():
    t = time.perf_counter()
    g = get_model("gause")
    dg = duration_heuristic(0.3651)
    qg = [simulate_and_classify(g, g.params(eps=e), [5.0, 10.0], dg)[0].quiescence_fraction
          for e in (0.3, 0.2, 0.1, 0.05, 0.02)]
    f = get_model("fear")
    qf = [simulate_and_classify(f, f.params(eps=e), f.x0, 2500.0)[0].quiescence_fraction
          for e in (0.3, 0.1, 0.05, 0.01, 0.005)]
    ok = _nondecreasing(qg) and _nondecreasing(qf)
    assert _report(7, ok, f"gause {np.round(qg, 3).tolist()} ({'ok' if _nondecreasing(qg) else 'not monotone'}), "
                          f"fear {np.round(qf, 3).tolist()} ({'ok' if _nondecreasing(qf) else 'not monotone'})",
                   time.perf_counter() - t, 180)


def test_criterion_8_manifold_proximity():
    t = time.perf_counter()
    m = get_model("gause")
    prox = [manifold_proximity(extract_limit_cycle(m, m.params(eps=e), [5.0, 10.0]), "axes")
            for e in (0.3, 0.2, 0.1, 0.05)]
    ok = all(b < a for a, b in zip(prox, prox[1:]))
    assert _report(8, ok, f"axis proximity {[float(f'{v:.3g}') for v in prox]}", time.perf_counter() - t, 120)


DECAY = ModelDef(id="decay", dim=1, param_schema=(Param("k", 1.0),), state_labels=("x",),
                 citation="linear decay", fn=lambda p, s: np.array([-p["k"] * s[0]]), x0=(1.0,))


def _property_suites() -> dict[str, bool]:
    out = {}
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        A = rng.standard_normal((4, 4))
        n4 = np.linalg.norm(A, 2) ** 4
        worst = max(worst, max(charpoly_residual(A, z) / n4 for z in eigenvalues(A).eigenvalues))
    out["eigen"] = worst < 1e-8

    certs = True
    for m in models_iter():
        p = m.params()
        with np.errstate(all="ignore"):
            for e in scan_equilibria(m, p, m.seeds(p.values)).equilibria:
                certs &= bool(np.linalg.norm(rhs(m, p, e.state)) < 1e-10)
    out["newton"] = certs

    ha, _ = _hopfs("enso", "delta", (0.01, 0.4), [-0.7, -0.25, 1.05], 0.05)
    hb, _ = _hopfs("enso", "delta", (0.01, 0.4), [-0.7, -0.25, 1.05], 0.35)
    out["direction"] = len(ha) == len(hb) == 1 and abs(ha[0] - hb[0]) < 1e-8

    order = True
    for method in (EXPLICIT, IMPLICIT):
        errs = []
        for rtol in (1e-4, 1e-7, 1e-10):
            cfg = IntegratorConfig(rtol=rtol, atol=rtol * 1e-2, method=method, log_coords=False)
            tr = integrate(DECAY, ParameterSet(DECAY, {"k": 1.0}), [1.0], (0.0, 5.0), cfg)
            errs.append(abs(tr.final[0] - math.exp(-5.0)))
        order &= (errs[0] > errs[1] > errs[2] or errs[2] < 1e-12) and errs[2] < 1e-9
    out["order"] = order

    e = 0.01
    vdp = get_model("vanderpol")
    tr = integrate(vdp, vdp.params(eps=e), [2.0, 0.0], (0.0, 20.0))
    keep = tr.times > 6.0
    pk, _ = find_peaks(tr.states[keep, 0])
    ours = float(np.median(np.diff(tr.times[keep][pk])))
    f = lambda _t, s: [(s[0] - s[0] ** 3 / 3 + s[1]) / e, -s[0]]
    ref = solve_ivp(f, (0, 20), [2.0, 0.0], method="Radau", rtol=1e-12, atol=1e-12, dense_output=True)
    tt = np.linspace(6, 20, 200001)
    rp, _ = find_peaks(ref.sol(tt)[0])
    out["vanderpol"] = abs(ours / float(np.median(np.diff(tt[rp]))) - 1) < 0.05
    return out


def test_criterion_9_property_suites():
    t = time.perf_counter()
    res = _property_suites()
    ok = all(res.values())
    assert _report(9, ok, ", ".join(f"{k} {'ok' if v else 'FAILED'}" for k, v in res.items()),
                   time.perf_counter() - t, 120)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
