from __future__ import annotations

import re
import xml.etree.ElementTree as ET

import pytest

from slowfast.continuation import trace_branch
from slowfast.criterion import check_criterion
from slowfast.equilibria import find_equilibrium
from slowfast.integrator import Trajectory, integrate
from slowfast.models import get_model
from slowfast.oscillation import duration_heuristic, recurrence_metrics
from slowfast.plotting import render_bifurcation_svg, render_timeseries_svg

import numpy as np


def _gids(svg: str) -> set[str]:
    root = ET.fromstring(svg)
    return {el.get("id") for el in root.iter() if el.get("id")}


def _count(gids, prefix):
    return len([g for g in gids if re.fullmatch(prefix + r"-\d+", g)])


def _fill_of(svg: str, gid: str) -> str:
    root = ET.fromstring(svg)
    for el in root.iter():
        if el.get("id") == gid:
            return " ".join(ET.tostring(el, encoding="unicode").split())
    raise KeyError(gid)


@pytest.fixture(scope="module")
def gause_svg():
    rep = check_criterion("gause")
    br, events, stop, others = rep.plot_data
    return render_bifurcation_svg(br, events, stop=stop, others=others)


def test_gause_markers(gause_svg):
    g = _gids(gause_svg)
    assert _count(g, "hopf") == 1
    assert _count(g, "stop") == 1
    assert "#ff0000" in _fill_of(gause_svg, "hopf-0")
    assert "#0000ff" in _fill_of(gause_svg, "stop-0")


def test_foodweb_markers():
    rep = check_criterion("foodweb", range=(-1.0, 1.0))
    br, events, stop, others = rep.plot_data
    svg = render_bifurcation_svg(br, events, stop=stop, others=others)
    g = _gids(svg)
    assert _count(g, "hopf") >= 1 and _count(g, "stop") == 1 and _count(g, "branchpoint") >= 1
    assert "#ffa500" in _fill_of(svg, "branchpoint-0")


def _gause_branch():
    m = get_model("gause")
    base = m.params().crossing("eps")
    start = find_equilibrium(m, base.with_value("eps", 0.1), [2.0, 9.0])
    return trace_branch(m, base, "eps", (0.0, 0.6), start)


def test_no_events_no_markers():
    svg = render_bifurcation_svg(_gause_branch(), [])
    g = _gids(svg)
    assert not any(re.fullmatch(r"(hopf|stop|branchpoint|fold)-\d+", x) for x in g)
    assert any(x.startswith("branch0-") for x in g)


def test_bifurcation_svg_deterministic():
    br = _gause_branch()
    assert render_bifurcation_svg(br, [], stop=0.0) == render_bifurcation_svg(br, [], stop=0.0)


def test_empty_branch_rejected():
    br = _gause_branch()
    br.points = []
    with pytest.raises(ValueError):
        render_bifurcation_svg(br)


def test_gause_timeseries_spikes():
    m = get_model("gause")
    tr = integrate(m, m.params(eps=0.02), [5.0, 10.0], (0.0, 600.0))
    svg = render_timeseries_svg(tr, observable=1)
    assert "timeseries" in _gids(svg)
    _, spikes, _ = recurrence_metrics(tr, 1)
    assert spikes >= 3


def test_enso_timeseries_spikes():
    m = get_model("enso")
    # relaxation period is about 160 here, so use the scan-length duration
    tr = integrate(m, m.params(delta=0.02), m.x0, (0.0, duration_heuristic(0.2107)))
    svg = render_timeseries_svg(tr, observable=m.observable)
    assert "timeseries" in _gids(svg)
    _, spikes, _ = recurrence_metrics(tr, m.observable)
    assert spikes >= 3


def test_constant_timeseries():
    t = np.linspace(0, 10, 11)
    tr = Trajectory(t, np.ones((11, 1)), labels=("x",))
    svg = render_timeseries_svg(tr)
    assert "timeseries" in _gids(svg)
    _, spikes, _ = recurrence_metrics(tr, 0)
    assert spikes == 0
