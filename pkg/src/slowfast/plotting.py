"""SVG rendering of bifurcation diagrams and time histories.

Markers carry ``gid`` attributes (``hopf-<k>``, ``stop-<k>``,
``branchpoint-<k>``, ``fold-<k>``) so the SVG can be inspected as text.
"""
from __future__ import annotations

import io
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .continuation import BRANCH_POINT, FOLD, HOPF, BifurcationEvent, Branch  # noqa: E402
from .integrator import Trajectory  # noqa: E402
from .models import get_model  # noqa: E402
from .oscillation import ScanResult  # noqa: E402

HOPF_COLOR = "red"
STOP_COLOR = "blue"
BRANCH_POINT_COLOR = "orange"
FOLD_COLOR = "green"

_MARKERS = {HOPF: ("hopf", HOPF_COLOR), BRANCH_POINT: ("branchpoint", BRANCH_POINT_COLOR),
            FOLD: ("fold", FOLD_COLOR)}

_RC = {
    "svg.hashsalt": "slowfast",
    "svg.fonttype": "none",
    "figure.figsize": (6.0, 4.0),
    "axes.linewidth": 0.8,
    "font.size": 10,
}


def _to_svg(fig) -> str:
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    return buf.getvalue()


def _runs(labels: Sequence[str]) -> list[tuple[int, int, bool]]:
    """(start, end inclusive, stable) runs; neighbouring runs share their boundary point."""
    out = []
    i = 0
    n = len(labels)
    while i < n:
        stable = labels[i] == "stable"
        j = i
        while j + 1 < n and (labels[j + 1] == "stable") == stable:
            j += 1
        out.append((i, min(j + 1, n - 1), stable))
        i = j + 1
    return out


def _label(model_id: str, observable: int) -> str:
    try:
        labels = get_model(model_id).state_labels
        return labels[observable]
    except (KeyError, ValueError, IndexError):
        return f"x{observable}"


def render_bifurcation_svg(branch: Branch, events: Sequence[BifurcationEvent] = (),
                           scan: ScanResult | None = None, stop: float | None = None,
                           observable: int | None = None, others: Sequence[Branch] = (),
                           title: str | None = None) -> str:
    if len(branch) == 0:
        raise ValueError("branch is empty")
    if observable is None:
        try:
            observable = get_model(branch.model_id).observable
        except (KeyError, ValueError):
            observable = 0
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        for k, br in enumerate([branch, *others]):
            if len(br) == 0:
                continue
            p = br.params
            y = br.states[:, observable]
            for r, (i, j, stable) in enumerate(_runs(br.stability)):
                line, = ax.plot(p[i:j + 1], y[i:j + 1], color="black", lw=1.2,
                                ls="-" if stable else "--")
                line.set_gid(f"branch{k}-{'stable' if stable else 'unstable'}-{r}")
            for side in ("lo", "hi"):
                if side not in br.extrapolated:
                    continue
                i_end = int(np.argmin(p)) if side == "lo" else int(np.argmax(p))
                bound = float(br.extrapolated[side + "_param"][0])
                ext, = ax.plot([p[i_end], bound], [y[i_end], br.extrapolated[side][observable]], color="black",
                               lw=1.2, ls="-" if br.stability[i_end] == "stable" else "--")
                ext.set_gid(f"branch{k}-extrapolated-{side}")

        counts: dict[str, int] = {}
        for e in events:
            if e.kind not in _MARKERS:
                continue
            name, color = _MARKERS[e.kind]
            k = counts.get(name, 0)
            counts[name] = k + 1
            mk, = ax.plot([e.param_at], [e.state_at[observable]], "o", ms=7, mfc=color, mec="black",
                          mew=0.6, zorder=5)
            mk.set_gid(f"{name}-{k}")

        if stop is None and scan is not None and scan.stop_bracket is not None:
            stop = 0.5 * (scan.stop_bracket[0] + scan.stop_bracket[1])
        if stop is not None:
            s = _stop_state(branch, stop)
            if s is not None:
                mk, = ax.plot([stop], [s[observable]], "o", ms=7, mfc=STOP_COLOR, mec="black",
                              mew=0.6, zorder=5)
                mk.set_gid("stop-0")

        ax.set_xlabel(branch.bif_param)
        ax.set_ylabel(_label(branch.model_id, observable))
        if title:
            ax.set_title(title)
        fig.tight_layout()
        return _to_svg(fig)


def _stop_state(branch: Branch, stop: float) -> np.ndarray | None:
    s = branch.state_at(stop)
    if s is not None:
        return s
    lo, _ = branch.span()
    if stop <= lo:
        return branch.extrapolated.get("lo", branch.states[int(np.argmin(branch.params))])
    return branch.extrapolated.get("hi", branch.states[int(np.argmax(branch.params))])


def render_timeseries_svg(traj: Trajectory, observable: int = 0, title: str | None = None,
                          label: str | None = None) -> str:
    if len(traj) == 0:
        raise ValueError("trajectory is empty")
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        line, = ax.plot(traj.times, traj.states[:, observable], color="black", lw=0.9)
        line.set_gid("timeseries")
        ax.set_xlabel("t")
        if label is None:
            label = traj.labels[observable] if len(traj.labels) > observable else f"x{observable}"
        ax.set_ylabel(label)
        if title:
            ax.set_title(title)
        fig.tight_layout()
        return _to_svg(fig)


__all__ = ["render_bifurcation_svg", "render_timeseries_svg", "HOPF_COLOR", "STOP_COLOR",
           "BRANCH_POINT_COLOR"]
