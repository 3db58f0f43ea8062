"""Clustered training data around virtual observation points.

Each cluster ``i`` holds ``d_i`` triplets ``(x_ij, u_ij, x_ij+)`` with states in
the ball of radius ``r_X`` around the center ``x_i`` (intersected with the
domain) and pairwise distinct inputs whose augmented matrix
``U_i = [1 ... 1; u_i1 ... u_id_i]`` has full row rank.  Cluster 0 sits at
the origin.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, ExcitationError
from .geometry import Box
from .systems import ControlAffineSystem

MAX_INPUT_RETRIES = 100
MAX_STATE_REJECTIONS = 10_000
SIGMA_FLOOR_FACTOR = 1e-3


@dataclass
class Cluster:
    center: np.ndarray
    states: np.ndarray  # (d_i, n)
    inputs: np.ndarray  # (d_i, m)
    successors: np.ndarray  # (d_i, n)

    @property
    def size(self) -> int:
        return self.states.shape[0]

    @property
    def U(self) -> np.ndarray:
        """Augmented input matrix of shape ``(m + 1, d_i)``."""
        return np.vstack([np.ones((1, self.size)), self.inputs.T])

    @property
    def pinv_norm(self) -> float:
        return excitation_diagnostics(self)[1]


@dataclass
class ClusterDataset:
    clusters: list
    r_X: float
    rng_seed: int
    source: dict = field(default_factory=dict)

    @property
    def centers(self) -> np.ndarray:
        return np.array([c.center for c in self.clusters])

    @property
    def total_samples(self) -> int:
        return sum(c.size for c in self.clusters)

    @property
    def state_dim(self) -> int:
        return self.clusters[0].states.shape[1]

    @property
    def input_dim(self) -> int:
        return self.clusters[0].inputs.shape[1]

    def excitation_score(self) -> float:
        """``max_i sqrt(d_i) ||U_i^+||``."""
        return max(excitation_diagnostics(c)[2] for c in self.clusters)


def excitation_diagnostics(c: Cluster):
    """Return ``(rank, ||U_i^+||, sqrt(d_i) ||U_i^+||)`` from the singular values of ``U_i``."""
    sv = np.linalg.svd(c.U, compute_uv=False)
    tol = max(c.U.shape) * np.finfo(float).eps * (sv[0] if sv.size else 0.0)
    rank = int(np.sum(sv > tol))
    if rank < c.U.shape[0]:
        return rank, float("inf"), float("inf")
    pinv_norm = float(1.0 / sv[-1])
    return rank, pinv_norm, float(np.sqrt(c.size) * pinv_norm)


def _sample_ball(rng, center, radius, box: Box, count):
    n = center.size
    if radius == 0.0:
        return np.repeat(center[None, :], count, axis=0)
    out = []
    tries = 0
    while len(out) < count:
        tries += 1
        if tries > MAX_STATE_REJECTIONS * count:
            raise DataError(f"could not sample states around {center} inside the domain")
        direction = rng.standard_normal(n)
        direction /= np.linalg.norm(direction)
        x = center + radius * rng.random() ** (1.0 / n) * direction
        if np.linalg.norm(x - center) <= radius and box.contains(x):
            out.append(x)
    return np.array(out)


def _sample_inputs(rng, box: Box, count, origin_cluster: bool):
    m = box.dim
    floor = SIGMA_FLOOR_FACTOR * box.diameter
    for _ in range(MAX_INPUT_RETRIES):
        u = box.lo + rng.random((count, m)) * (box.hi - box.lo)
        if np.unique(u, axis=0).shape[0] < count:
            continue
        if origin_cluster:
            if np.any(np.all(u == 0.0, axis=1)):
                continue
            sv = np.linalg.svd(u.T, compute_uv=False)
            if sv.size < m or sv[-1] < floor:
                continue
        U = np.vstack([np.ones((1, count)), u.T])
        sv = np.linalg.svd(U, compute_uv=False)
        if sv.size == m + 1 and sv[-1] >= floor:
            return u
    raise ExcitationError(
        f"no sufficiently exciting inputs after {MAX_INPUT_RETRIES} draws "
        f"(d_i={count}, m={m}, singular value floor {floor:.2e})"
    )


def generate_dataset(
    sys: ControlAffineSystem, X, r_X: float, d_i: int, seed: int, source: dict | None = None
) -> ClusterDataset:
    """Sample ``d_i`` triplets around each center of ``X`` (origin first).

    Each cluster draws from its own generator seeded with ``(seed, i)``, so the
    result does not depend on the order in which clusters are processed.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != sys.n:
        raise DataError(f"centers have dimension {X.shape[1]}, system has {sys.n}")
    if np.any(X[0] != 0.0):
        raise DataError("the first virtual observation point must be the origin")
    if r_X < 0:
        raise DataError("cluster radius must be nonnegative")
    if d_i < sys.m + 1:
        raise DataError(f"need d_i >= m + 1 = {sys.m + 1} samples per cluster")
    outside = np.flatnonzero(~sys.domain.contains(X))
    if outside.size:
        raise DataError(f"centers outside the domain at indices {outside.tolist()}")
    clusters = []
    for i, center in enumerate(X):
        rng = np.random.default_rng([int(seed), i])
        states = _sample_ball(rng, center, float(r_X), sys.domain, d_i)
        inputs = _sample_inputs(rng, sys.input_box, d_i, origin_cluster=(i == 0))
        succ = sys.step(states, inputs)
        clusters.append(Cluster(center.copy(), states, inputs, succ))
    src = {"system": sys.name, "d_i": int(d_i)}
    src.update(source or {})
    return ClusterDataset(clusters, float(r_X), int(seed), src)


@dataclass
class ClauseResult:
    passed: bool
    offending: list = field(default_factory=list)
    detail: str = ""


@dataclass
class ValidationReport:
    clauses: dict

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.clauses.values())

    def failures(self) -> list:
        return [name for name, c in self.clauses.items() if not c.passed]

    def format(self) -> str:
        lines = []
        for name, c in self.clauses.items():
            status = "pass" if c.passed else "FAIL"
            extra = f" indices={c.offending[:10]}" if c.offending else ""
            lines.append(f"{status:4s} {name}{extra} {c.detail}".rstrip())
        return "\n".join(lines)


def validate_dataset(ds: ClusterDataset, omega: Box, U: Box, pi: bool = True) -> ValidationReport:
    """Check every data requirement; offending cluster indices are reported per clause."""
    m = U.dim
    clauses = {}
    centers = ds.centers
    clauses["origin_first"] = ClauseResult(bool(len(ds.clusters)) and not np.any(centers[0]))
    order = np.lexsort(centers.T[::-1])
    sorted_c = centers[order]
    same = np.all(sorted_c[1:] == sorted_c[:-1], axis=1)
    dup = sorted(set(order[1:][same].tolist()))
    clauses["distinct_centers"] = ClauseResult(not dup, dup)
    radius, member_x, member_u, rank, distinct, count, finite = ([] for _ in range(7))
    for i, c in enumerate(ds.clusters):
        if np.any(np.linalg.norm(c.states - c.center, axis=1) > ds.r_X):
            radius.append(i)
        if not np.all(omega.contains(c.states)):
            member_x.append(i)
        if not np.all(U.contains(c.inputs, tol=1e-12)):
            member_u.append(i)
        if excitation_diagnostics(c)[0] < m + 1:
            rank.append(i)
        if np.unique(c.inputs, axis=0).shape[0] < c.size:
            distinct.append(i)
        need = m + (0 if i == 0 else 1)
        if c.size < need:
            count.append(i)
        if not np.all(np.isfinite(c.successors)):
            finite.append(i)
    clauses["cluster_radius"] = ClauseResult(not radius, radius, f"r_X={ds.r_X:g}")
    clauses["states_in_domain"] = ClauseResult(not member_x, member_x)
    clauses["inputs_in_box"] = ClauseResult(not member_u, member_u)
    clauses["rank_U"] = ClauseResult(not rank, rank, f"required rank {m + 1}")
    clauses["distinct_inputs"] = ClauseResult(not distinct, distinct)
    clauses["sample_count"] = ClauseResult(not count, count)
    clauses["finite_successors"] = ClauseResult(not finite, finite)
    if pi and ds.clusters:
        c0 = ds.clusters[0]
        ok = np.linalg.matrix_rank(c0.inputs) == m and not np.any(np.all(c0.inputs == 0.0, axis=1))
        clauses["origin_inputs_reduced_rank"] = ClauseResult(bool(ok), [] if ok else [0])
    return ValidationReport(clauses)


# --- serialization -----------------------------------------------------------

CSV_SCHEMA_VERSION = 1


def save_dataset(ds: ClusterDataset, path, extra: dict | None = None) -> tuple:
    """Write ``<path>.csv`` and ``<path>.json``; returns both paths."""
    path = Path(path)
    csv_path = path.with_suffix(".csv")
    json_path = path.with_suffix(".json")
    path.parent.mkdir(parents=True, exist_ok=True)
    n, m = ds.state_dim, ds.input_dim
    header = (
        ["cluster_id"]
        + [f"x{k}" for k in range(n)]
        + [f"u{k}" for k in range(m)]
        + [f"x_plus{k}" for k in range(n)]
    )
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, c in enumerate(ds.clusters):
            for x, u, xp in zip(c.states, c.inputs, c.successors):
                w.writerow([i] + [repr(float(v)) for v in (*x, *u, *xp)])
    sidecar = {
        "schema": CSV_SCHEMA_VERSION,
        "seed": ds.rng_seed,
        "r_X": ds.r_X,
        "state_dim": n,
        "input_dim": m,
        "centers": ds.centers.tolist(),
        "source": ds.source,
    }
    if extra:
        sidecar.update(extra)
    json_path.write_text(json.dumps(sidecar, indent=1, sort_keys=True) + "\n")
    return csv_path, json_path


def load_dataset(path) -> ClusterDataset:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    n, m = meta["state_dim"], meta["input_dim"]
    data = np.loadtxt(path.with_suffix(".csv"), delimiter=",", skiprows=1, ndmin=2)
    centers = np.array(meta["centers"], dtype=float).reshape(-1, n)
    ids = data[:, 0].astype(int)
    clusters = []
    for i, center in enumerate(centers):
        rows = data[ids == i]
        clusters.append(
            Cluster(center, rows[:, 1 : 1 + n], rows[:, 1 + n : 1 + n + m], rows[:, 1 + n + m :])
        )
    return ClusterDataset(clusters, float(meta["r_X"]), int(meta["seed"]), meta.get("source", {}))
