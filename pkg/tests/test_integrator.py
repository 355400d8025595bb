from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.signal import find_peaks

from slowfast.integrator import (EXPLICIT, HARMONIC, IMPLICIT, IntegratorConfig, continue_trajectory,
                                 energy_drift_check, integrate)
from slowfast.models import ModelDef, Param, ParameterSet, get_model
from slowfast.oscillation import classify_oscillation

from conftest import linear_model

DECAY = linear_model([[-1.0]], "decay")
DECAY_P = ParameterSet(DECAY, {"k": 1.0})


def test_linear_decay():
    tr = integrate(DECAY, DECAY_P, [1.0], (0.0, 1.0))
    assert tr.final[0] == pytest.approx(math.exp(-1.0), abs=1e-8)
    assert tr.times[0] == 0.0 and tr.times[-1] == pytest.approx(1.0)


def test_order_consistency():
    # error shrinks as the tolerance tightens, for both solver families
    for method in (EXPLICIT, IMPLICIT):
        errs = []
        for rtol in (1e-4, 1e-7, 1e-10):
            cfg = IntegratorConfig(rtol=rtol, atol=rtol * 1e-2, method=method, log_coords=False)
            tr = integrate(DECAY, DECAY_P, [1.0], (0.0, 5.0), cfg)
            errs.append(abs(tr.final[0] - math.exp(-5.0)))
        assert errs[0] > errs[1] > errs[2] or errs[2] < 1e-12
        assert errs[-1] < 1e-9


@pytest.mark.parametrize("rtol,limit", [(1e-8, 1e-6), (1e-4, 1e-2)])
def test_energy_drift(rtol, limit):
    p = ParameterSet(HARMONIC, {"omega": 1.0})
    tr = integrate(HARMONIC, p, [1.0, 0.0], (0.0, 100.0), IntegratorConfig(rtol=rtol, atol=rtol * 1e-2))
    assert energy_drift_check(tr) < limit


def test_energy_drift_zero_state():
    p = ParameterSet(HARMONIC, {"omega": 1.0})
    tr = integrate(HARMONIC, p, [0.0, 0.0], (0.0, 10.0))
    assert energy_drift_check(tr) == 0.0


def _period(t, x):
    idx, _ = find_peaks(x)
    return float(np.median(np.diff(t[idx])))


def test_vanderpol_period_against_reference():
    m = get_model("vanderpol")
    p = m.params(eps=0.01)
    tr = integrate(m, p, [2.0, 0.0], (0.0, 20.0))
    half = tr.times > 6.0
    ours = _period(tr.times[half], tr.states[half, 0])
    # independent reference: scipy Radau at tight tolerance on the raw equations
    e = 0.01
    f = lambda t, s: [(s[0] - s[0] ** 3 / 3 + s[1]) / e, -s[0]]
    ref = solve_ivp(f, (0, 20), [2.0, 0.0], method="Radau", rtol=1e-12, atol=1e-12, dense_output=True)
    tt = np.linspace(6, 20, 200001)
    ref_period = _period(tt, ref.sol(tt)[0])
    assert ours == pytest.approx(ref_period, rel=0.05)
    # relaxation asymptotics with the first Airy-zero correction
    asym = 3 - 2 * math.log(2) + 3 * 2.338107 * e ** (2 / 3)
    assert ref_period == pytest.approx(asym, rel=0.05)


def test_gause_eps_zero_settles():
    m = get_model("gause")
    tr = integrate(m, m.params(eps=0.0), [5.0, 10.0], (0.0, 500.0))
    assert not tr.failed
    rec = classify_oscillation(tr, 0)
    assert rec.cls == "none"
    tail = tr.states[tr.times > 400]
    assert np.ptp(tail[:, 0]) < 1e-3


def test_log_coordinates_keep_positivity():
    m = get_model("gause")
    tr = integrate(m, m.params(eps=0.02), [5.0, 10.0], (0.0, 2000.0))
    assert np.all(tr.states > 0)


def test_out_of_domain_start_rejected():
    m = get_model("gause")
    with pytest.raises(ValueError):
        integrate(m, m.params(), [-1.0, 1.0], (0.0, 1.0))
    with pytest.raises(ValueError):
        integrate(m, m.params(), [1.0, 1.0], (1.0, 0.0))


def _blowup(p, s):
    return np.array([s[0] ** 2])


BLOWUP = ModelDef(id="blowup", dim=1, param_schema=(Param("k", 1.0),), state_labels=("x",),
                  citation="finite-time blow-up", fn=_blowup, x0=(1.0,))


def test_blowup_flagged():
    tr = integrate(BLOWUP, ParameterSet(BLOWUP, {"k": 1.0}), [1.0], (0.0, 2.0))
    assert tr.failed
    assert tr.times[-1] < 1.0 + 1e-6


def test_continue_trajectory_matches_single_run():
    m = get_model("fear")
    p = m.params(eps=0.2)
    cfg = IntegratorConfig(dense_dt=0.1, max_step=0.5)
    a = integrate(m, p, m.x0, (0.0, 200.0), cfg)
    b = continue_trajectory(m, p, integrate(m, p, m.x0, (0.0, 100.0), cfg), 100.0, cfg)
    assert b.times[-1] == pytest.approx(200.0)
    assert np.allclose(a.final, b.final, rtol=1e-5, atol=1e-7)


def test_stiff_switch_on_step_collapse():
    # explicit stability needs h < ~3e-12 here, below 1e-10 of the span
    stiff = linear_model([[-1e12]], "stiff")
    tr = integrate(stiff, ParameterSet(stiff, {"k": 1.0}), [1.0], (0.0, 1.0),
                   IntegratorConfig(log_coords=False))
    assert not tr.failed
    assert tr.switched_at is not None and tr.switched_at < 1e-6
    assert abs(tr.final[0]) < 1e-8


def test_reproducible():
    m = get_model("enso")
    p = m.params(delta=0.05)
    a = integrate(m, p, m.x0, (0.0, 300.0))
    b = integrate(m, p, m.x0, (0.0, 300.0))
    assert np.array_equal(a.states, b.states) and np.array_equal(a.times, b.times)


def test_times_strictly_increasing():
    m = get_model("sir-epidemic")
    tr = integrate(m, m.params(), m.x0, (0.0, 1000.0))
    assert np.all(np.diff(tr.times) > 0)
    assert np.all(np.isfinite(tr.states))


def test_ushape_slow_segment():
    m = get_model("ushape")
    p = m.params(eps=0.005)
    tr = integrate(m, p, m.x0, (0.0, 1500.0), IntegratorConfig(dense_dt=0.05))
    x, y = tr.states[:, 0], tr.states[:, 1]
    # one period after transients, located from successive maxima of x
    late = tr.times > 500
    idx, _ = find_peaks(x[late])
    assert len(idx) >= 2
    seg = slice(idx[-2], idx[-1])
    near = np.abs(y[late][seg] - 0.5 * x[late][seg] ** 2) < 0.05
    assert near.mean() > 0.5
