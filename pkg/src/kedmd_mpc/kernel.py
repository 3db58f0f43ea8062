"""Wendland kernels, factorized kernel matrices and node sets.

The smoothness-one Wendland function for dimension ``n`` is

    phi_{n,1}(r) = (1 - r)_+^p (1 + p r) / (p (p + 1)),   p = floor(n/2) + 3,

which reproduces ``(1-r)^4 (4r+1) / 20`` for ``n in {2, 3}`` and
``(1-r)^5 (5r+1) / 30`` for ``n in {4, 5}``.  Its derivative satisfies
``phi'(r) / r = -(1 - r)_+^(p-1)``, so kernel gradients have no removable
singularity at the center.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.linalg import lapack
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .errors import CapabilityError, DataError, NumericalError
from .geometry import Box

SUPPORTED_SMOOTHNESS = (1,)


def _wendland_power(n: int, k: int) -> int:
    if k not in SUPPORTED_SMOOTHNESS:
        # higher smoothness needs the next integral-operator step; not shipped
        raise CapabilityError(f"Wendland smoothness k={k} not supported (available: k=1)")
    if n < 1:
        raise CapabilityError(f"Wendland kernel needs dimension >= 1, got {n}")
    return n // 2 + 3


def wendland_phi(n: int, k: int, r):
    """Compactly supported Wendland function ``phi_{n,k}`` evaluated at ``r >= 0``."""
    p = _wendland_power(n, k)
    r = np.asarray(r, dtype=float)
    t = np.clip(1.0 - r, 0.0, None)
    out = t**p * (1.0 + p * r) / (p * (p + 1))
    return out if out.ndim else float(out)


def wendland_dphi_over_r(n: int, k: int, r):
    """``phi'(r) / r``, continuous at ``r = 0``."""
    p = _wendland_power(n, k)
    t = np.clip(1.0 - np.asarray(r, dtype=float), 0.0, None)
    return -(t ** (p - 1))


@dataclass(frozen=True)
class KernelSpec:
    """Radial kernel ``k(x, y) = phi_{dim,smoothness}(|x - y| / scale)``.

    ``reg`` is the Tikhonov shift added to the kernel matrix before
    factorization.
    """

    dim: int
    smoothness: int = 1
    scale: float = 1.0
    reg: float = 0.0

    def __post_init__(self):
        _wendland_power(self.dim, self.smoothness)
        if not self.scale > 0:
            raise ValueError("kernel scale must be positive")
        if self.reg < 0:
            raise ValueError("regularization must be nonnegative")

    @property
    def phi0(self) -> float:
        return wendland_phi(self.dim, self.smoothness, 0.0)

    def phi(self, r):
        return wendland_phi(self.dim, self.smoothness, r)

    def block(self, A, B) -> np.ndarray:
        """Kernel values between the rows of ``A`` and the rows of ``B``."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.atleast_2d(np.asarray(B, dtype=float))
        return self.phi(cdist(A, B) / self.scale)

    def features_and_gradients(self, x, centers):
        """Feature vector ``k(x, x_i)`` and its gradient in ``x`` (``d x n``)."""
        diff = np.asarray(x, dtype=float)[None, :] - centers
        r = np.sqrt(np.einsum("ij,ij->i", diff, diff)) / self.scale
        feats = self.phi(r)
        grads = wendland_dphi_over_r(self.dim, self.smoothness, r)[:, None] * diff / self.scale**2
        return feats, grads

    def gradients_batch(self, X, centers) -> np.ndarray:
        """Gradients of ``k(x, x_i)`` at every row of ``X``: shape ``(P, d, n)``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        diff = X[:, None, :] - centers[None, :, :]
        r = np.sqrt(np.einsum("pdk,pdk->pd", diff, diff)) / self.scale
        return wendland_dphi_over_r(self.dim, self.smoothness, r)[:, :, None] * diff / self.scale**2

    def to_dict(self) -> dict:
        return {"dim": self.dim, "smoothness": self.smoothness, "scale": self.scale, "reg": self.reg}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(int(d["dim"]), int(d["smoothness"]), float(d["scale"]), float(d["reg"]))


def default_scale(box: Box) -> float:
    """Default support radius: half the diameter of the domain box."""
    return 0.5 * box.diameter


def kernel_eval(spec: KernelSpec, x, y) -> float:
    d = np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
    return float(spec.phi(d / spec.scale))


@dataclass(frozen=True)
class FactorizedKernelMatrix:
    """Cholesky factorization of ``K_X + reg I`` with reusable solves."""

    centers: np.ndarray
    matrix: np.ndarray
    factor: tuple = field(repr=False)
    condition_estimate: float
    reg: float

    @property
    def size(self) -> int:
        return self.centers.shape[0]

    def solve(self, rhs) -> np.ndarray:
        return scipy.linalg.cho_solve(self.factor, rhs, check_finite=False)

    def inverse(self) -> np.ndarray:
        return self.solve(np.eye(self.size))

    def inverse_norm(self) -> float:
        """Spectral norm of ``(K_X + reg I)^-1``."""
        lam_min = scipy.linalg.eigvalsh(self.matrix, subset_by_index=[0, 0], check_finite=False)[0]
        return float(1.0 / (lam_min + self.reg))


def kernel_matrix(spec: KernelSpec, X) -> FactorizedKernelMatrix:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != spec.dim:
        raise DataError(f"centers have dimension {X.shape[1]}, kernel expects {spec.dim}")
    if X.shape[0] > 1:
        dist, _ = cKDTree(X).query(X, k=2)
        dup = np.flatnonzero(dist[:, 1] == 0.0)
        if dup.size:
            raise DataError(f"duplicate kernel centers at indices {dup.tolist()}")
    dist = cdist(X, X)
    dist = 0.5 * (dist + dist.T)
    K = spec.phi(dist / spec.scale)
    A = K + spec.reg * np.eye(X.shape[0])
    try:
        factor = scipy.linalg.cho_factor(A, lower=False, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            "kernel matrix is not numerically positive definite",
            suggestion=f"increase the regularization above {spec.reg:g}, e.g. {max(1e-12, 10 * spec.reg) * spec.phi0:g}",
        ) from exc
    anorm = float(np.max(np.sum(np.abs(A), axis=0)))
    rcond, info = lapack.dpocon(np.triu(factor[0]), anorm)
    cond = float(1.0 / rcond) if info == 0 and rcond > 0 else float("inf")
    return FactorizedKernelMatrix(X.copy(), K, factor, cond, spec.reg)


def _append_origin(points: np.ndarray, include_origin: bool, origin=None) -> np.ndarray:
    if not include_origin:
        return points
    origin = np.zeros(points.shape[1]) if origin is None else np.asarray(origin, dtype=float)
    hit = np.all(points == origin, axis=1)
    if np.any(hit):
        rest = points[~hit]
    else:
        rest = points
    out = np.vstack([origin[None, :], rest])
    return out


def _check_distinct(points: np.ndarray) -> None:
    if points.shape[0] > 1:
        dist, _ = cKDTree(points).query(points, k=2)
        if np.any(dist[:, 1] == 0.0):
            raise DataError("grid contains duplicate points")


def padua_points(order: int, box: Box, include_origin: bool = True) -> np.ndarray:
    """Padua points of order ``p`` mapped affinely from ``[-1, 1]^2`` to ``box``.

    With ``include_origin`` the origin is placed first (and only once).
    """
    if box.dim != 2:
        raise CapabilityError("Padua points are defined for two-dimensional boxes only")
    p = int(order)
    if p < 1:
        raise ValueError("Padua order must be >= 1")
    pts = []
    for j in range(p + 1):
        mu = np.cos(j * np.pi / p)
        delta = 1 if (p % 2 == 1 and j % 2 == 1) else 0
        for k in range(1, p // 2 + 1 + delta + 1):
            if j % 2 == 1:
                eta = np.cos((2 * k - 2) * np.pi / (p + 1))
            else:
                eta = np.cos((2 * k - 1) * np.pi / (p + 1))
            pts.append((mu, eta))
    ref = np.array(pts)
    lo, hi = box.lo, box.hi
    pts = lo + 0.5 * (ref + 1.0) * (hi - lo)
    out = _append_origin(pts, include_origin)
    _check_distinct(out)
    return out


def uniform_grid(per_axis: int, box: Box, include_origin: bool = True, origin=None) -> np.ndarray:
    """Tensor lattice with ``per_axis`` points per axis; origin first when flagged."""
    if per_axis < 2:
        raise ValueError("uniform grid needs at least two points per axis")
    out = _append_origin(box.lattice(per_axis), include_origin, origin)
    _check_distinct(out)
    return out


def fill_distance(X, box: Box, resolution: int | None = None) -> float:
    """Largest distance from a test lattice in ``box`` to its nearest point of ``X``.

    The lattice maximum is a lower bound of the supremum over the box.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] == 0:
        raise ValueError("fill distance of an empty set")
    if resolution is None:
        resolution = 200 if box.dim <= 2 else 25
    dist, _ = cKDTree(X).query(box.lattice(resolution))
    return float(np.max(dist))


def signvector_quadform_bound(K: FactorizedKernelMatrix, samples: int = 256, seed: int = 0):
    """Bracket ``max_{v in {-1,1}^d} v^T K^-1 v`` as ``(upper, lower)``.

    The upper bound is the entrywise absolute sum of ``K^-1``.  The lower bound
    is exact for ``d <= 16`` and otherwise the best of ``samples`` random sign
    vectors improved by greedy single-sign flips.
    """
    Kinv = K.inverse()
    Kinv = 0.5 * (Kinv + Kinv.T)
    d = Kinv.shape[0]
    upper = float(np.sum(np.abs(Kinv)))
    if d <= 16:
        signs = np.array(np.meshgrid(*[[-1.0, 1.0]] * d, indexing="ij")).reshape(d, -1).T
        lower = float(np.max(np.einsum("ij,jk,ik->i", signs, Kinv, signs)))
        return upper, min(lower, upper)
    rng = np.random.default_rng(seed)
    V = rng.choice([-1.0, 1.0], size=(samples, d))
    vals = np.einsum("ij,ij->i", V @ Kinv, V)
    v = V[int(np.argmax(vals))].copy()
    best = float(np.max(vals))
    diag = np.diag(Kinv)
    w = Kinv @ v
    for _ in range(10 * d):
        # flipping v_i changes the form by -4 v_i w_i + 4 K_ii
        gain = -4.0 * v * w + 4.0 * diag
        i = int(np.argmax(gain))
        if gain[i] <= 1e-14 * abs(best):
            break
        w -= 2.0 * v[i] * Kinv[:, i]
        v[i] = -v[i]
        best += gain[i]
    best = float(v @ Kinv @ v)
    return upper, min(best, upper)
