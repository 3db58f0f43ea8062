"""Axis-aligned boxes used for state domains and input constraint sets."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Box:
    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lo) != len(hi):
            raise ValueError("box bounds must have equal length")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"empty box: lower={lo}, upper={hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def cube(cls, lo: float, hi: float, dim: int) -> "Box":
        return cls((lo,) * dim, (hi,) * dim)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.lower)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.upper)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    def contains(self, x, tol: float = 0.0) -> np.ndarray | bool:
        """Membership test; works row-wise on arrays of points."""
        x = np.asarray(x, dtype=float)
        inside = np.all((x >= self.lo - tol) & (x <= self.hi + tol), axis=-1)
        return bool(inside) if inside.ndim == 0 else inside

    def contains_interior(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all((x > self.lo) & (x < self.hi)))

    def project(self, x) -> np.ndarray:
        return np.clip(x, self.lo, self.hi)

    def shift(self, offset) -> "Box":
        """Box translated by ``-offset`` (coordinates relative to ``offset``)."""
        offset = np.asarray(offset, dtype=float)
        return Box(tuple(self.lo - offset), tuple(self.hi - offset))

    def vertices(self) -> np.ndarray:
        return np.array(list(itertools.product(*zip(self.lower, self.upper))), dtype=float)

    def lattice(self, per_axis: int) -> np.ndarray:
        """Tensor lattice with ``per_axis`` equispaced points per coordinate."""
        axes = [np.linspace(a, b, per_axis) for a, b in zip(self.lower, self.upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper)}

    @classmethod
    def from_dict(cls, d: dict) -> "Box":
        return cls(tuple(d["lower"]), tuple(d["upper"]))
