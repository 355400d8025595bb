from __future__ import annotations

import numpy as np
import pytest
from scipy.optimize import brentq

from slowfast.equilibria import (EquilibriumError, dedupe, find_equilibria_scan, find_equilibrium,
                                 scan_equilibria)
from slowfast.models import ParameterSet, box_grid, get_model, rhs

from conftest import linear_model


def test_gause_closed_form():
    m = get_model("gause")
    p = m.params(eps=0.2)
    e = find_equilibrium(m, p, [2.0, 9.0])
    assert np.allclose(e.state, [2.5, (1 - 2.5 / 15) * 12.5], atol=1e-9)
    assert e.residual_norm < 1e-10


def test_gause_equilibrium_line_at_zero():
    # at eps = 0 every point of x = 0 is an equilibrium; the (0, 10) limit is checked on the branch
    m = get_model("gause")
    p = m.params(eps=0.0)
    e = find_equilibrium(m, p, [0.01, 9.9])
    assert abs(e.state[0]) < 1e-9
    assert np.linalg.norm(rhs(m, p, e.state)) < 1e-12
    assert abs(e.spectrum.eigenvalues[-1]) < 1e-9 or abs(e.spectrum.eigenvalues[0]) < 1e-9


def test_goodwin_scalar_oracle():
    m = get_model("goodwin")
    p = m.params(b6=1.0)
    e = find_equilibrium(m, p, np.full(6, 2.0))
    s = brentq(lambda v: v * (1 + v ** 9) - 50.0, 0.0, 5.0, xtol=1e-14)
    assert np.allclose(e.state, s, atol=1e-9)


def test_fear_three_equilibria():
    m = get_model("fear")
    p = m.params(eps=0.1)
    eqs = find_equilibria_scan(m, p, box_grid([(0, 10), (0, 10)], 11))
    states = [e.state for e in eqs]
    assert any(np.allclose(s, [0, 0], atol=1e-8) for s in states)
    assert any(np.allclose(s, [8, 0], atol=1e-8) for s in states)
    interior = [s for s in states if s[0] > 1e-6 and s[1] > 1e-6]
    assert len(interior) == 1


def test_foodweb_origin_and_positive():
    m = get_model("foodweb")
    p = m.params(beta=0.2)
    eqs = find_equilibria_scan(m, p, box_grid([(0, 1.5)] * 3, 6))
    states = [e.state for e in eqs]
    assert any(np.allclose(s, 0, atol=1e-8) for s in states)
    assert any(np.all(s > 1e-6) for s in states)


def test_enso_two_solutions_with_nonpositive_x():
    m = get_model("enso")
    p = m.params(delta=0.1)
    a, k = p["a"], p["k"]
    seeds = [np.array([x, -x * x / a, k - x / 2]) for x in np.linspace(-3, 0, 13)]
    eqs = [e for e in find_equilibria_scan(m, p, seeds) if e.state[0] <= 1e-12]
    assert len(eqs) == 2
    assert not np.allclose(eqs[0].state, eqs[1].state)


@pytest.mark.parametrize("mid", ["hiv", "gause", "sir-epidemic", "fear", "foodweb", "enso", "goodwin",
                                 "sir-secondary"])
def test_residual_certificates(mid):
    m = get_model(mid)
    p = m.params()
    res = scan_equilibria(m, p, m.seeds(p.values))
    assert res.equilibria
    for e in res.equilibria:
        # independent evaluation of the residual
        assert np.linalg.norm(rhs(m, p, e.state)) < 1e-10
        assert e.residual_norm < 1e-10


def test_singular_jacobian_reported():
    lm = linear_model([[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(EquilibriumError) as err:
        find_equilibrium(lm, ParameterSet(lm, {"k": 1.0}), [1.0, 2.0])
    assert err.value.cond is None or err.value.cond > 1e10 or np.isinf(err.value.cond)


def test_dedupe():
    m = get_model("gause")
    p = m.params(eps=0.2)
    e1 = find_equilibrium(m, p, [2.0, 9.0])
    e2 = find_equilibrium(m, p, [3.0, 11.0])
    assert len(dedupe([e1, e2])) == 1


def test_serialization_shape():
    m = get_model("gause")
    d = find_equilibrium(m, m.params(eps=0.2), [2.0, 9.0]).to_dict()
    assert set(d) == {"state", "residual_norm", "eigenvalues", "stability"}
