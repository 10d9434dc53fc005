"""Truncated power nonlinearity F_k.

``F_k(s) = |s|^p`` for ``|s| <= k`` and the second order Taylor polynomial of
``|s|^p`` at ``|s| = k`` beyond. The family is even, convex, C^2, grows
quadratically at infinity and increases to ``|s|^p`` as ``k`` grows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ConfigurationError",
    "TruncationSpec",
    "StructureReport",
    "eval_trunc",
    "eval_trunc_deriv",
    "eval_trunc_second",
    "check_structure",
]


class ConfigurationError(ValueError):
    """Invalid parameters for a model object."""


@dataclass(frozen=True)
class TruncationSpec:
    """One member of the truncated family: exponent ``p`` and level ``k``."""

    p: float
    k: float
    theta: float = 0.5

    def __post_init__(self):
        if not np.isfinite(self.p) or self.p <= 2:
            raise ConfigurationError(f"p must exceed 2, got {self.p!r}")
        if not self.k > 0:
            raise ConfigurationError(f"k must be positive, got {self.k!r}")
        if not 0 < self.theta < 1:
            raise ConfigurationError(f"theta must lie in (0, 1), got {self.theta!r}")


def eval_trunc(spec: TruncationSpec, s):
    """Evaluate F_k at ``s`` (scalar or array)."""
    p, k = spec.p, spec.k
    a = np.abs(np.asarray(s, dtype=float))
    d = a - k
    # np.where evaluates both branches; keep the power branch finite for huge |s|.
    inner = np.minimum(a, k) ** p
    outer = k**p + p * k ** (p - 1) * d + 0.5 * p * (p - 1) * k ** (p - 2) * d * d
    out = np.where(a <= k, inner, outer)
    return out[()] if out.ndim == 0 else out


def eval_trunc_deriv(spec: TruncationSpec, s):
    """Derivative of F_k; odd in ``s``."""
    p, k = spec.p, spec.k
    s = np.asarray(s, dtype=float)
    a = np.abs(s)
    inner = p * np.minimum(a, k) ** (p - 1)
    outer = p * k ** (p - 1) + p * (p - 1) * k ** (p - 2) * (a - k)
    out = np.sign(s) * np.where(a <= k, inner, outer)
    return out[()] if out.ndim == 0 else out


def eval_trunc_second(spec: TruncationSpec, s):
    """Second derivative of F_k (continuous, even, nonnegative)."""
    p, k = spec.p, spec.k
    a = np.abs(np.asarray(s, dtype=float))
    out = p * (p - 1) * np.minimum(a, k) ** (p - 2)
    return out[()] if out.ndim == 0 else out


@dataclass
class InequalityResult:
    passed: bool
    violations: int
    worst_slack: float


@dataclass
class StructureReport:
    """Outcome of :func:`check_structure`.

    ``worst_slack`` is the smallest value of (rhs - lhs) over the samples,
    scaled by the magnitude of the compared quantities; negative means violated.
    """

    spec: TruncationSpec
    sample_count: int
    checks: dict = field(default_factory=dict)
    growth_constant: float = float("nan")
    gradient_constant: float = float("nan")

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def summary(self) -> str:
        lines = [f"F_k structure p={self.spec.p:g} k={self.spec.k:g} n={self.sample_count}"]
        for name, c in self.checks.items():
            flag = "ok" if c.passed else "FAIL"
            lines.append(f"  {name:<16} {flag:<4} violations={c.violations} slack={c.worst_slack:.3e}")
        lines.append(f"  C2 (growth) = {self.growth_constant:.6g}, C1 (gradient) = {self.gradient_constant:.6g}")
        return "\n".join(lines)


_RTOL = 8 * np.finfo(float).eps


def _compare(lhs, rhs, scale) -> InequalityResult:
    # lhs <= rhs up to a few ulps of the compared magnitudes
    slack = (rhs - lhs) / np.maximum(scale, np.finfo(float).tiny)
    bad = int(np.count_nonzero(slack < -_RTOL))
    worst = float(np.min(slack)) if slack.size else 0.0
    return InequalityResult(bad == 0, bad, worst)


def check_structure(spec: TruncationSpec, sample_count: int = 10_000, seed: int = 0) -> StructureReport:
    """Sample the structural inequalities of F_k at deterministic points.

    Checks ``0 <= F <= |s|^p``, ``2F <= sF' <= pF`` (s >= 0), convexity by
    second differences, monotonicity in ``k`` (against ``2k``), continuity of
    ``F`` and ``F'`` at ``|s| = k``, and reports the growth constant
    ``C2 = min F(s)/s^2`` over ``|s| >= 1`` and the gradient constant of the
    approximation hypothesis with the stored ``theta``.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    rng = np.random.default_rng(seed)
    k = spec.k
    # log-uniform magnitudes spanning both branches, random signs, plus the break points and 0
    mags = k * 10.0 ** rng.uniform(-3.0, 1.5, size=sample_count)
    s = np.concatenate([mags * rng.choice([-1.0, 1.0], size=sample_count), [0.0, k, -k]])
    a = np.abs(s)
    p = spec.p

    F = eval_trunc(spec, s)
    dF = eval_trunc_deriv(spec, s)
    power = a**p
    rep = StructureReport(spec=spec, sample_count=sample_count)

    rep.checks["nonnegative"] = _compare(np.zeros_like(F), F, np.maximum(power, 1.0))
    rep.checks["below_power"] = _compare(F, power, np.maximum(power, 1.0))

    pos = s >= 0
    Fp, dFp, sp = F[pos], dF[pos], s[pos]
    scale = np.maximum(p * Fp, np.finfo(float).tiny)
    rep.checks["lower_euler"] = _compare(2 * Fp, sp * dFp, scale)
    rep.checks["upper_euler"] = _compare(sp * dFp, p * Fp, scale)

    d = 1e-3 * np.maximum(a, 1e-3 * k)
    second = eval_trunc(spec, s - d) - 2 * F + eval_trunc(spec, s + d)
    rep.checks["convexity"] = _compare(np.zeros_like(second), second, np.maximum(np.abs(F), 1.0))

    wider = TruncationSpec(spec.p, 2 * spec.k, spec.theta)
    rep.checks["monotone_in_k"] = _compare(F, eval_trunc(wider, s), np.maximum(power, 1.0))

    below = np.nextafter(k, 0.0)
    above = np.nextafter(k, np.inf)
    jump_F = abs(float(eval_trunc(spec, above)) - float(eval_trunc(spec, below)))
    jump_dF = abs(float(eval_trunc_deriv(spec, above)) - float(eval_trunc_deriv(spec, below)))
    # the one-sided values differ by the (tiny) increment itself, plus rounding
    ulp_F = 4 * np.spacing(k**p) + p * k ** (p - 1) * (above - below)
    ulp_dF = 4 * np.spacing(p * k ** (p - 1)) + p * (p - 1) * k ** (p - 2) * (above - below)
    rep.checks["continuity"] = InequalityResult(
        jump_F <= ulp_F and jump_dF <= ulp_dF, int(jump_F > ulp_F) + int(jump_dF > ulp_dF),
        float(min(ulp_F - jump_F, ulp_dF - jump_dF)),
    )

    big = a >= 1.0
    rep.growth_constant = float(np.min(F[big] / a[big] ** 2)) if np.any(big) else float("nan")
    rep.checks["growth"] = InequalityResult(
        bool(np.isnan(rep.growth_constant) or rep.growth_constant > 0), 0,
        0.0 if np.isnan(rep.growth_constant) else rep.growth_constant,
    )
    nz = a > 0
    bound = 1.0 + a[nz] ** -2.0 * F[nz] ** (2.0 - spec.theta)
    rep.gradient_constant = float(np.max(np.abs(dF[nz]) / bound)) if np.any(nz) else 0.0
    return rep
