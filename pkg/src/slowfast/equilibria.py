"""Damped Newton equilibrium location and seed-grid scans."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .eigen import EigenSpectrum, eigenvalues
from .models import ModelDef, ParameterSet, get_model, jacobian, rhs

NEWTON_TOL = 1e-12
MAX_ITER = 200
MAX_HALVINGS = 60
SINGULAR_COND = 1e14
DEDUP_RADIUS = 1e-6


class EquilibriumError(RuntimeError):
    """Newton failed to converge or met a singular Jacobian."""

    def __init__(self, msg: str, *, cond: float | None = None, residual: float | None = None):
        super().__init__(msg)
        self.cond = cond
        self.residual = residual


@dataclass
class Equilibrium:
    state: np.ndarray
    params: ParameterSet
    residual_norm: float
    spectrum: EigenSpectrum
    stability: str
    iterations: int = 0

    def to_dict(self) -> dict:
        return {
            "state": [float(v) for v in self.state],
            "residual_norm": float(self.residual_norm),
            "eigenvalues": [{"re": float(z.real), "im": float(z.imag)} for z in self.spectrum.eigenvalues],
            "stability": self.stability,
        }


def analyse(model: str | ModelDef, params: ParameterSet, state, iterations: int = 0) -> Equilibrium:
    """Wrap a converged state with its residual and spectrum."""
    m = get_model(model)
    x = np.asarray(state, dtype=float)
    spec = eigenvalues(jacobian(m, params, x))
    res = float(np.linalg.norm(rhs(m, params, x)))
    return Equilibrium(x.copy(), params, res, spec, spec.stability(), iterations)


def newton_solve(f, J, x0: np.ndarray, tol: float = NEWTON_TOL, max_iter: int = MAX_ITER,
                 max_halvings: int = MAX_HALVINGS) -> tuple[np.ndarray, float, int]:
    """Damped Newton on f(x)=0 with step halving.  Returns (x, ||f||, iterations)."""
    x = np.array(x0, dtype=float)
    fx = f(x)
    r = float(np.linalg.norm(fx))
    for it in range(max_iter):
        if not np.isfinite(r):
            raise EquilibriumError("non-finite residual", residual=r)
        if r < tol:
            return x, r, it
        Jx = J(x)
        cond = np.linalg.cond(Jx)
        if not np.isfinite(cond) or cond > SINGULAR_COND:
            raise EquilibriumError(f"singular Jacobian (cond={cond:.3g})", cond=cond, residual=r)
        dx = np.linalg.solve(Jx, -fx)
        lam = 1.0
        for _ in range(max_halvings + 1):
            xn = x + lam * dx
            fn = f(xn)
            rn = float(np.linalg.norm(fn))
            if np.isfinite(rn) and rn < r:
                break
            lam *= 0.5
        else:
            raise EquilibriumError(f"line search stalled at residual {r:.3g}", residual=r)
        x, fx, r = xn, fn, rn
    if r < tol:
        return x, r, max_iter
    raise EquilibriumError(f"no convergence in {max_iter} iterations (residual {r:.3g})", residual=r)


def find_equilibrium(model: str | ModelDef, params: ParameterSet, seed, tol: float = NEWTON_TOL) -> Equilibrium:
    m = get_model(model)
    if tol <= 0:
        raise ValueError("tol must be positive")
    x0 = np.asarray(seed, dtype=float)
    if x0.shape != (m.dim,) or not np.all(np.isfinite(x0)):
        raise EquilibriumError("seed must be a finite vector of the model dimension")
    p = params.values
    x, _, it = newton_solve(lambda s: m.fn(p, s), lambda s: jacobian(m, params, s), x0, tol)
    return analyse(m, params, x, it)


@dataclass
class ScanOutcome:
    equilibria: list[Equilibrium]
    failed_seeds: int = 0
    failures: list[str] = field(default_factory=list)


def dedupe(eqs: Iterable[Equilibrium], radius: float = DEDUP_RADIUS) -> list[Equilibrium]:
    ordered = sorted(eqs, key=lambda e: tuple(np.round(e.state, 12)))
    out: list[Equilibrium] = []
    for e in ordered:
        if all(np.max(np.abs(e.state - o.state)) > radius for o in out):
            out.append(e)
    return out


def scan_equilibria(model: str | ModelDef, params: ParameterSet, seed_grid: Sequence,
                    tol: float = NEWTON_TOL) -> ScanOutcome:
    if len(seed_grid) == 0:
        raise ValueError("seed grid is empty")
    found, failed, msgs = [], 0, []
    for seed in seed_grid:
        try:
            found.append(find_equilibrium(model, params, seed, tol))
        except (EquilibriumError, np.linalg.LinAlgError, FloatingPointError) as exc:
            failed += 1
            msgs.append(str(exc))
    return ScanOutcome(dedupe(found), failed, msgs)


def find_equilibria_scan(model: str | ModelDef, params: ParameterSet, seed_grid: Sequence,
                         tol: float = NEWTON_TOL) -> list[Equilibrium]:
    return scan_equilibria(model, params, seed_grid, tol).equilibria
