"""Admissible initial data: symmetric, monotone on [0, 1/2], compatible at order two.

The canonical datum is built from a piecewise polynomial ``psi`` on ``[0, 1/2]``
by ``phi(x) = int_0^x int_0^y psi``, mirrored about ``x = 1/2``. Then
``phi'' = psi`` exactly and ``phi'(0) = phi''(0) = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import Polynomial

from .grid import GridFunction, diff1, diff2, nodes

__all__ = [
    "ConstructionError",
    "PiecewisePoly",
    "PsiSpec",
    "InitialDatum",
    "CompatReport",
    "HypReport",
    "canonical_psi",
    "build_phi_from_psi",
    "canonical_datum",
    "analytic_datum",
    "table_datum",
    "check_compat2",
    "zero_count",
    "sign_changes",
    "check_hyp_class",
]


class ConstructionError(ValueError):
    """A psi that violates one of the construction hypotheses."""


@dataclass(frozen=True)
class PiecewisePoly:
    """Polynomial pieces on consecutive intervals ``[breaks[i], breaks[i+1]]``."""

    breaks: tuple
    pieces: tuple

    def __post_init__(self):
        b = np.asarray(self.breaks, dtype=float)
        if b.ndim != 1 or b.size != len(self.pieces) + 1 or np.any(np.diff(b) <= 0):
            raise ValueError("breaks must be increasing with one more entry than pieces")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        b = np.asarray(self.breaks)
        idx = np.clip(np.searchsorted(b, x, side="right") - 1, 0, len(self.pieces) - 1)
        out = np.zeros_like(x)
        for i, poly in enumerate(self.pieces):
            sel = idx == i
            if np.any(sel):
                out[sel] = poly(x[sel])
        return out[()] if out.ndim == 0 else out

    def antiderivative(self) -> "PiecewisePoly":
        """Continuous antiderivative vanishing at ``breaks[0]``."""
        out = []
        value = 0.0
        for lo, hi, poly in zip(self.breaks[:-1], self.breaks[1:], self.pieces):
            P = poly.integ()
            P = P + (value - P(lo))
            out.append(P)
            value = P(hi)
        return PiecewisePoly(self.breaks, tuple(out))

    def deriv(self) -> "PiecewisePoly":
        return PiecewisePoly(self.breaks, tuple(p.deriv() for p in self.pieces))


@dataclass(frozen=True)
class PsiSpec:
    psi: PiecewisePoly
    x0: float
    name: str = "psi"


def canonical_psi(x0: float = 0.25) -> PsiSpec:
    """``psi = x (x0 - x)`` on ``[0, x0]`` and ``-c (x - x0)`` beyond, with zero mean."""
    if not 0 < x0 < 0.5:
        raise ConstructionError("x0 must lie in (0, 1/2)")
    c = (x0**3 / 6.0) / ((0.5 - x0) ** 2 / 2.0)
    pieces = (Polynomial([0.0, x0, -1.0]), Polynomial([c * x0, -c]))
    return PsiSpec(PiecewisePoly((0.0, x0, 0.5), pieces), x0, name=f"canonical(x0={x0:g})")


@dataclass(frozen=True, eq=False)
class InitialDatum:
    """Nodal values of ``lam * phi`` with optional closed-form derivatives of ``phi``.

    ``phi``, ``dphi`` and ``d2phi`` act on the unit-scale profile over ``[0, 1]``;
    they are ``None`` for table data.
    """

    grid: GridFunction
    lam: float = 1.0
    phi: Callable | None = None
    dphi: Callable | None = None
    d2phi: Callable | None = None
    kind: str = "table"
    meta: dict = field(default_factory=dict)

    @property
    def analytic(self) -> bool:
        return self.phi is not None and self.dphi is not None and self.d2phi is not None

    @property
    def values(self) -> np.ndarray:
        return self.grid.values

    @property
    def n(self) -> int:
        return self.grid.n

    def scaled(self, lam: float) -> "InitialDatum":
        """Same shape with scaling ``lam`` (replaces, does not multiply)."""
        if lam < 0:
            raise ValueError("lam must be >= 0")
        base = self.grid.values / self.lam if self.lam != 0 else None
        if self.analytic:
            vals = lam * np.asarray(self.phi(self.grid.x))
        elif base is not None:
            vals = lam * base
        else:
            raise ValueError("cannot rescale a table datum with lam = 0")
        return InitialDatum(GridFunction(vals), lam, self.phi, self.dphi, self.d2phi, self.kind, dict(self.meta))

    def on_grid(self, n: int) -> GridFunction:
        """Nodal values of ``lam * phi`` on an ``n``-node grid."""
        if n == self.n:
            return self.grid
        if self.analytic:
            return GridFunction(self.lam * np.asarray(self.phi(nodes(n))))
        return GridFunction(np.interp(nodes(n), self.grid.x, self.grid.values))

    def derivatives_at(self, x) -> tuple:
        """``(lam phi, lam phi', lam phi'')`` at ``x`` from the closed forms."""
        if not self.analytic:
            raise ValueError("table datum has no closed-form derivatives")
        lam = self.lam
        return lam * np.asarray(self.phi(x)), lam * np.asarray(self.dphi(x)), lam * np.asarray(self.d2phi(x))


def _check_psi(spec: PsiSpec, samples: int = 4001) -> None:
    psi, x0 = spec.psi, spec.x0
    if not 0 < x0 < 0.5:
        raise ConstructionError("x0 must lie in (0, 1/2)")
    if abs(psi.breaks[0]) > 0 or abs(psi.breaks[-1] - 0.5) > 1e-15:
        raise ConstructionError("psi must be given on [0, 1/2]")
    scale = max(float(np.max(np.abs(psi(np.linspace(0, 0.5, samples))))), 1e-300)
    if abs(float(psi(0.0))) > 1e-14 * scale:
        raise ConstructionError("psi(0) = 0 violated")
    mean = float(psi.antiderivative()(0.5))
    if abs(mean) > 1e-12 * scale:
        raise ConstructionError(f"zero mean on [0, 1/2] violated (integral {mean:.3e})")
    left = np.linspace(0.0, x0, samples)[1:-1]
    if np.any(psi(left) <= 0):
        raise ConstructionError("psi > 0 on (0, x0) violated")
    right = np.linspace(x0, 0.5, samples)[1:]
    vr = psi(right)
    if np.any(vr >= 0):
        raise ConstructionError("psi < 0 on (x0, 1/2] violated")
    if np.any(np.diff(vr) > 1e-14 * scale):
        raise ConstructionError("psi nonincreasing on (x0, 1/2] violated")


def _mirror(f, parity: int):
    def g(x):
        x = np.asarray(x, dtype=float)
        y = np.where(x <= 0.5, x, 1.0 - x)
        s = np.where(x <= 0.5, 1.0, float(parity))
        out = s * f(y)
        return out[()] if out.ndim == 0 else out

    return g


def build_phi_from_psi(psi_spec: PsiSpec, x0: float | None = None, grid=2001, lam: float = 1.0) -> InitialDatum:
    """Double integral of ``psi`` on ``[0, 1/2]``, mirrored to ``[0, 1]``.

    ``grid`` is a node count or a :class:`GridFunction`-compatible node array.
    """
    if x0 is not None and x0 != psi_spec.x0:
        psi_spec = PsiSpec(psi_spec.psi, x0, psi_spec.name)
    _check_psi(psi_spec)
    d1 = psi_spec.psi.antiderivative()
    d0 = d1.antiderivative()
    phi = _mirror(d0, +1)
    dphi = _mirror(d1, -1)
    d2phi = _mirror(psi_spec.psi, +1)
    n = grid if isinstance(grid, (int, np.integer)) else len(grid)
    vals = lam * np.asarray(phi(nodes(int(n))))
    vals[0] = vals[-1] = 0.0
    return InitialDatum(GridFunction(vals), lam, phi, dphi, d2phi, kind="canonical-psi",
                        meta={"x0": psi_spec.x0, "psi": psi_spec.name})


def canonical_datum(lam: float = 1.0, x0: float = 0.25, n: int = 2001) -> InitialDatum:
    return build_phi_from_psi(canonical_psi(x0), grid=n, lam=lam)


def analytic_datum(phi, dphi, d2phi, n: int = 2001, lam: float = 1.0, kind: str = "analytic") -> InitialDatum:
    return InitialDatum(GridFunction(lam * np.asarray(phi(nodes(n))) * np.ones(n)), lam, phi, dphi, d2phi, kind)


def table_datum(values: Sequence[float], lam: float = 1.0) -> InitialDatum:
    """Datum given by node values (already including any scaling)."""
    return InitialDatum(GridFunction(np.asarray(values, dtype=float)), lam, kind="table")


@dataclass
class CompatReport:
    passed: bool
    value_residual: float
    equation_residual: float
    tol: float
    analytic: bool


def check_compat2(datum: InitialDatum, p: float) -> CompatReport:
    """Check ``phi = 0`` and ``phi'' + |phi'|^p = 0`` at both endpoints.

    Closed-form derivatives are used when present (tolerance 1e-10), otherwise
    one-sided differences of the node values (tolerance ``10 h^2``).
    """
    ends = np.array([0.0, 1.0])
    if datum.analytic:
        v, d1, d2 = datum.derivatives_at(ends)
        tol = 1e-10
    else:
        vals, h = datum.grid.values, datum.grid.h
        v = vals[[0, -1]]
        d1 = diff1(vals, h)[[0, -1]]
        d2 = diff2(vals, h)[[0, -1]]
        tol = 10 * h * h
    value_res = float(np.max(np.abs(v)))
    eq_res = float(np.max(np.abs(d2 + np.abs(d1) ** p)))
    return CompatReport(value_res <= tol and eq_res <= tol, value_res, eq_res, tol, datum.analytic)


def sign_changes(samples, x=None):
    """Count strict sign alternations (zeros skipped) and locate them.

    Returns ``(count, locations)``; each location is the linear interpolant of the
    zero between the two nonzero samples that straddle it.
    """
    v = np.asarray(samples, dtype=float)
    if v.size < 2:
        raise ValueError("need at least 2 samples")
    if x is None:
        x = np.linspace(0.0, 1.0, v.size)
    idx = np.flatnonzero(v != 0)
    if idx.size < 2:
        return 0, []
    s = np.sign(v[idx])
    flips = np.flatnonzero(s[1:] != s[:-1])
    locs = []
    for f in flips:
        i, j = idx[f], idx[f + 1]
        locs.append(float(x[i] + (x[j] - x[i]) * v[i] / (v[i] - v[j])))
    return int(flips.size), locs


def zero_count(samples) -> int:
    """Largest ``m`` with ``m + 1`` samples of strictly alternating sign."""
    return sign_changes(samples)[0]


@dataclass
class HypReport:
    symmetric: bool
    monotone: bool
    compat: CompatReport
    sign_structure: bool
    n0: int
    turning_point: float | None

    @property
    def passed(self) -> bool:
        return self.symmetric and self.monotone and self.compat.passed and self.sign_structure


def _compat_quantity(datum: InitialDatum, p: float, m: int = 4001):
    """``phi'' + |phi'|^p`` on interior sample points of (0, 1)."""
    if datum.analytic:
        x = np.linspace(0.0, 1.0, m)[1:-1]
        _, d1, d2 = datum.derivatives_at(x)
    else:
        g = datum.grid
        x = g.x[1:-1]
        d1 = g.ux()[1:-1]
        d2 = g.uxx()[1:-1]
    return x, d2 + np.abs(d1) ** p


def check_hyp_class(datum: InitialDatum, p: float) -> HypReport:
    """Symmetry, monotonicity on [0, 1/2], compatibility and the sign pattern of ``phi'' + |phi'|^p``."""
    g = datum.grid
    vals = g.values
    scale = max(float(np.max(np.abs(vals))), 1.0)
    symmetric = bool(g.mirror_defect() <= 1e-12 * scale)
    half = vals[: (g.n + 1) // 2]
    monotone = bool(np.all(np.diff(half) >= -1e-12 * scale))
    compat = check_compat2(datum, p)
    x, q = _compat_quantity(datum, p)
    tol = 1e-12 * max(float(np.max(np.abs(q))), 1.0) if datum.analytic else 10 * g.h**2
    qc = np.where(np.abs(q) <= tol, 0.0, q)
    left = x <= 0.5
    count_half, locs = sign_changes(qc[left], x[left])
    nz = qc[left][qc[left] != 0]
    sign_ok = count_half == 0 or (count_half == 1 and nz[0] > 0)
    n0 = zero_count(qc)
    return HypReport(symmetric, monotone, compat, bool(sign_ok), n0, locs[0] if locs else None)
