"""Uniform grids on [0, 1] and finite-difference derivatives of nodal data."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["GridFunction", "nodes", "diff1", "diff2"]


def nodes(n: int) -> np.ndarray:
    if n < 4:
        raise ValueError("need at least 4 nodes")
    return np.linspace(0.0, 1.0, n)


def diff1(v: np.ndarray, h: float) -> np.ndarray:
    """First derivative: centered in the interior, 4-point one-sided at the ends.

    The end stencil is third order so that smooth data keep an O(h^2) error
    everywhere, including the node where the gradient is largest.
    """
    v = np.asarray(v, dtype=float)
    d = np.empty_like(v)
    d[1:-1] = (v[2:] - v[:-2]) / (2 * h)
    d[0] = (-11 * v[0] + 18 * v[1] - 9 * v[2] + 2 * v[3]) / (6 * h)
    d[-1] = (11 * v[-1] - 18 * v[-2] + 9 * v[-3] - 2 * v[-4]) / (6 * h)
    return d


def diff2(v: np.ndarray, h: float) -> np.ndarray:
    """Second derivative: centered in the interior, second order one-sided at the ends."""
    v = np.asarray(v, dtype=float)
    d = np.empty_like(v)
    d[1:-1] = (v[2:] - 2 * v[1:-1] + v[:-2]) / (h * h)
    d[0] = (2 * v[0] - 5 * v[1] + 4 * v[2] - v[3]) / (h * h)
    d[-1] = (2 * v[-1] - 5 * v[-2] + 4 * v[-3] - v[-4]) / (h * h)
    return d


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Nodal values on the uniform grid ``x_i = i h``, ``h = 1/(n-1)``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 1 or v.size < 4:
            raise ValueError("GridFunction needs a 1-d array of at least 4 values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_callable(cls, f, n: int) -> "GridFunction":
        return cls(np.asarray(f(nodes(n)), dtype=float) * np.ones(n))

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def h(self) -> float:
        return 1.0 / (self.n - 1)

    @property
    def x(self) -> np.ndarray:
        return nodes(self.n)

    def ux(self) -> np.ndarray:
        return diff1(self.values, self.h)

    def uxx(self) -> np.ndarray:
        return diff2(self.values, self.h)

    def dirichlet_defect(self) -> float:
        return float(max(abs(self.values[0]), abs(self.values[-1])))

    def mirror_defect(self) -> float:
        return float(np.max(np.abs(self.values - self.values[::-1])))

    def __len__(self):
        return self.n

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)
