"""Small dense eigenvalue problems.

Dimensions 2 and 3 use the quadratic and cubic formulas (trigonometric
form for three real roots, Cardano otherwise) followed by a Newton polish
on the characteristic polynomial.  Larger matrices go to LAPACK's shifted
Hessenberg QR through ``numpy.linalg.eigvals``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MAX_DIM = 8
CUBIC_TIE = 1e-12


class EigenError(ValueError):
    pass


@dataclass(frozen=True)
class EigenSpectrum:
    eigenvalues: tuple[complex, ...]

    @property
    def max_real(self) -> float:
        return float(self.eigenvalues[0].real)

    @property
    def real_parts(self) -> np.ndarray:
        return np.array([z.real for z in self.eigenvalues])

    @property
    def imag_parts(self) -> np.ndarray:
        return np.array([z.imag for z in self.eigenvalues])

    def complex_pairs(self) -> list[complex]:
        """Upper members (Im > 0) of the non-real conjugate pairs, leading first."""
        return [z for z in self.eigenvalues if _is_complex(z) and z.imag > 0]

    @property
    def complex_pair_real(self) -> float | None:
        pairs = self.complex_pairs()
        return float(pairs[0].real) if pairs else None

    @property
    def complex_pair_imag(self) -> float | None:
        pairs = self.complex_pairs()
        return float(pairs[0].imag) if pairs else None

    def real_eigenvalues(self) -> list[float]:
        return [z.real for z in self.eigenvalues if not _is_complex(z)]

    @property
    def det_sign(self) -> int:
        """Sign of the product of all eigenvalues (complex pairs contribute +)."""
        prod = 1.0
        for r in self.real_eigenvalues():
            if r == 0.0:
                return 0
            prod *= math.copysign(1.0, r)
        return int(prod)

    def stability(self) -> str:
        return classify_stability(self.real_parts)

    def __len__(self) -> int:
        return len(self.eigenvalues)


def _is_complex(z: complex) -> bool:
    return abs(z.imag) > 1e-10 * max(1.0, abs(z))


def classify_stability(real_parts) -> str:
    re = np.asarray(real_parts, dtype=float)
    if np.all(re < 0):
        return "stable"
    if np.any(re < 0) and np.any(re > 0):
        return "saddle"
    return "unstable"


def _charpoly(A: np.ndarray) -> np.ndarray:
    """Monic characteristic polynomial coefficients, highest power first."""
    n = A.shape[0]
    if n == 2:
        return np.array([1.0, -np.trace(A), A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]])
    if n == 3:
        m2 = (A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
              + A[0, 0] * A[2, 2] - A[0, 2] * A[2, 0]
              + A[1, 1] * A[2, 2] - A[1, 2] * A[2, 1])
        return np.array([1.0, -np.trace(A), m2, -np.linalg.det(A)])
    return np.poly(A)


def _polish(coef: np.ndarray, z: complex, iters: int = 4) -> complex:
    dcoef = np.polyder(coef)
    best, best_res = z, abs(np.polyval(coef, z))
    for _ in range(iters):
        d = np.polyval(dcoef, z)
        if d == 0:
            break
        z = z - np.polyval(coef, z) / d
        res = abs(np.polyval(coef, z))
        if res < best_res:
            best, best_res = z, res
        else:
            break
    return best


def _quadratic(b: float, c: float) -> list[complex]:
    """Roots of l^2 + b l + c."""
    disc = b * b - 4.0 * c
    if disc >= 0:
        sq = math.sqrt(disc)
        q = -0.5 * (b + math.copysign(sq, b))
        if q == 0.0:
            return [0.0 + 0j, 0.0 + 0j]
        return [complex(q), complex(c / q)]
    im = 0.5 * math.sqrt(-disc)
    return [complex(-0.5 * b, im), complex(-0.5 * b, -im)]


def _cubic(c2: float, c1: float, c0: float) -> list[complex]:
    """Roots of l^3 + c2 l^2 + c1 l + c0."""
    shift = c2 / 3.0
    p = c1 - c2 * c2 / 3.0
    q = 2.0 * c2 ** 3 / 27.0 - c2 * c1 / 3.0 + c0
    term_p = 4.0 * p ** 3
    term_q = 27.0 * q * q
    delta = -(term_p + term_q)
    scale = abs(term_p) + term_q
    if abs(delta) <= CUBIC_TIE * max(scale, 1e-300):
        # repeated root
        if abs(p) <= 1e-300 or scale == 0.0:
            ts = [0.0, 0.0, 0.0]
        else:
            ts = [3.0 * q / p, -1.5 * q / p, -1.5 * q / p]
        return [complex(t - shift) for t in ts]
    if delta > 0:
        # three distinct real roots, trigonometric form (p < 0 here)
        r = 2.0 * math.sqrt(-p / 3.0)
        arg = 3.0 * q / (p * r)
        arg = min(1.0, max(-1.0, arg))
        phi = math.acos(arg) / 3.0
        ts = [r * math.cos(phi - 2.0 * math.pi * k / 3.0) for k in range(3)]
        return [complex(t - shift) for t in ts]
    # one real root and a conjugate pair (Cardano)
    D = q * q / 4.0 + p ** 3 / 27.0
    A = -math.copysign(1.0, q) * (abs(q) / 2.0 + math.sqrt(D)) ** (1.0 / 3.0)
    B = -p / (3.0 * A) if A != 0.0 else 0.0
    root = A + B - shift
    return [complex(root)] + _deflated_pair(c2, c1, c0, root)


def _deflated_pair(c2: float, c1: float, c0: float, root: float) -> list[complex]:
    b = c2 + root
    c = c1 + root * b
    if abs(root) > 1e-8 and abs(c0) > 0:
        c = -c0 / root
    return _quadratic(b, c)


def eigenvalues(matrix) -> EigenSpectrum:
    A = np.asarray(matrix, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise EigenError("matrix must be square")
    n = A.shape[0]
    if n == 0 or n > MAX_DIM:
        raise EigenError(f"dimension {n} outside 1..{MAX_DIM}")
    if not np.all(np.isfinite(A)):
        raise EigenError("matrix has non-finite entries")
    if n == 1:
        vals = [complex(A[0, 0])]
    elif n == 2:
        coef = _charpoly(A)
        vals = _quadratic(coef[1], coef[2])
    elif n == 3:
        coef = _charpoly(A)
        raw = _cubic(coef[1], coef[2], coef[3])
        vals = []
        for z in raw:
            zp = _polish(coef, z)
            if z.imag == 0.0:
                zp = complex(zp.real)
            vals.append(zp)
        if any(z.imag != 0.0 for z in vals):
            # keep exact conjugate symmetry after polishing
            re_root = vals[0].real
            up = vals[1] if vals[1].imag > 0 else vals[2]
            vals = [complex(re_root), up, up.conjugate()]
    else:
        vals = [complex(z) for z in np.linalg.eigvals(A)]
        vals = _symmetrize(vals)
    vals.sort(key=lambda z: (-z.real, -z.imag))
    return EigenSpectrum(tuple(vals))


def _symmetrize(vals: list[complex]) -> list[complex]:
    out: list[complex] = []
    used = [False] * len(vals)
    for i, z in enumerate(vals):
        if used[i]:
            continue
        used[i] = True
        if not _is_complex(z):
            out.append(complex(z.real))
            continue
        j = min((k for k in range(len(vals)) if not used[k]),
                key=lambda k: abs(vals[k] - z.conjugate()), default=None)
        if j is None:
            out.append(z)
            continue
        used[j] = True
        w = 0.5 * (z + vals[j].conjugate())
        out.extend([w, w.conjugate()])
    return out


def charpoly_residual(matrix, lam: complex) -> float:
    """|det(lam I - A)| evaluated directly, independent of the eigen solver."""
    A = np.asarray(matrix, dtype=complex)
    return abs(np.linalg.det(lam * np.eye(A.shape[0]) - A))


__all__ = ["EigenSpectrum", "EigenError", "eigenvalues", "classify_stability", "charpoly_residual"]
