"""Growth bounds of cost controllability and the suboptimality index.

A growth bound ``(B_N)`` certifies ``J_N(x, u) <= B_N l*(x)`` for some
admissible input sequence, where ``l*(x) = min_u l(x, u) = x'Qx``.  From it,

    alpha_N = 1 - (B_2 - 1)(B_N - 1) prod_{i=3}^N (B_i - 1)
                  / (prod_{i=2}^N B_i - (B_2 - 1) prod_{i=3}^N (B_i - 1)),

with empty products equal to one.  Model errors with proportional constants
``c_x, c_u`` inflate the sequence to ``B_N^eps`` (``propagate_growth_to_surrogate``).
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .errors import CertificateRefused, ConfigurationError, DomainError
from .geometry import Box

DIVERGENCE_RATIO = 1e6


@dataclass
class GrowthBoundSequence:
    """Values ``B_1 .. B_Nbar`` stored zero-based: ``values[N - 1] = B_N``."""

    values: np.ndarray
    source: str = "supplied"
    sample_spec: dict = field(default_factory=dict)
    argmax_states: np.ndarray | None = None
    flagged: list = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()

    def __len__(self) -> int:
        return self.values.size

    def B(self, N: int) -> float:
        if not 1 <= N <= self.values.size:
            raise IndexError(f"B_{N} not available (sequence length {self.values.size})")
        return float(self.values[N - 1])

    def is_monotone(self) -> bool:
        return bool(np.all(np.diff(self.values) >= 0))

    def monotonized(self) -> "GrowthBoundSequence":
        return GrowthBoundSequence(np.maximum.accumulate(self.values), self.source, dict(self.sample_spec))


@dataclass(frozen=True)
class SuboptimalityIndex:
    alpha: float
    N: int
    inputs_hash: str

    @property
    def valid(self) -> bool:
        return 0.0 < self.alpha <= 1.0


def _hash_values(values) -> str:
    return hashlib.sha256(np.ascontiguousarray(values, dtype="<f8").tobytes()).hexdigest()[:16]


def alpha_value(B, N: int) -> float:
    """``alpha_N`` from the raw values ``B[0] = B_1, ..., B[N-1] = B_N``."""
    B = np.asarray(B, dtype=float)
    if N < 2:
        raise ValueError("alpha_N needs N >= 2")
    if B.size < N:
        raise ValueError(f"need B_1..B_{N}, got {B.size} values")
    b2, bN = B[1], B[N - 1]
    tail = float(np.prod(B[2:N] - 1.0))  # prod_{i=3}^N (B_i - 1)
    num = (b2 - 1.0) * (bN - 1.0) * tail
    den = float(np.prod(B[1:N])) - (b2 - 1.0) * tail
    if not den > 0.0:
        return -np.inf
    return 1.0 - num / den


def alpha_from_growth(B: GrowthBoundSequence, N: int) -> SuboptimalityIndex:
    """Suboptimality index; a nonpositive denominator yields the ``-inf`` sentinel."""
    vals = B.values[:N]
    return SuboptimalityIndex(alpha_value(B.values, N), int(N), _hash_values(vals))


def alpha_sweep(B: GrowthBoundSequence, N_max: int | None = None) -> np.ndarray:
    N_max = len(B) if N_max is None else min(N_max, len(B))
    return np.array([alpha_value(B.values, N) for N in range(2, N_max + 1)])


def minimal_stabilizing_horizon(B: GrowthBoundSequence) -> int | None:
    for N in range(2, len(B) + 1):
        if alpha_value(B.values, N) > 0.0:
            return N
    return None


# --- probes ---------------------------------------------------------------------


def lqr_probe(model, Q, R, input_box: Box):
    """Saturated infinite-horizon LQR of the model's linearization at the origin."""
    n, m = Q.shape[0], R.shape[0]
    _, A, Bm = model.linearize(np.zeros(n), np.zeros(m))
    P = scipy.linalg.solve_discrete_are(A, Bm, Q, R)
    K = np.linalg.solve(R + Bm.T @ P @ Bm, Bm.T @ P @ A)

    def policy(k, x):
        return input_box.project(-K @ x)

    return policy


def zero_probe(m: int):
    def policy(k, x):
        return np.zeros(m)

    return policy


def estimate_growth_bounds(
    stepper, samples, N_bar: int, Q, R, input_box: Box, probe="lqr", probe_model=None
) -> GrowthBoundSequence:
    """Sampled growth bound from probe-policy rollouts.

    For every sample ``x``, ``J_N / l*(x)`` is evaluated for ``N = 1..N_bar``
    along the probe's closed loop; ``B_N`` is the maximum over samples,
    monotonized by a running maximum.  Rollouts whose ratio exceeds
    ``1e6`` (or that leave the stepper's validity domain) are flagged and
    excluded.  The bound certifies the sampled states only.

    ``probe_model`` supplies the linearization for the LQR probe (defaults
    to ``stepper``), so a surrogate's gain can drive rollouts of the truth.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if callable(probe):
        policy, probe_name = probe, getattr(probe, "__name__", "custom")
    elif probe == "lqr":
        policy, probe_name = lqr_probe(stepper if probe_model is None else probe_model, Q, R, input_box), "lqr"
    elif probe == "zero":
        policy, probe_name = zero_probe(R.shape[0]), "zero"
    else:
        raise ConfigurationError(f"unknown probe policy {probe!r}")
    ratios = []
    kept = []
    flagged = []
    for idx, x0 in enumerate(samples):
        ell_star = float(x0 @ Q @ x0)
        if ell_star <= 0.0:
            raise ConfigurationError(f"sample {idx} is the origin; growth ratios need x != 0")
        costs = np.empty(N_bar)
        x = x0.copy()
        ok = True
        try:
            for k in range(N_bar):
                u = np.asarray(policy(k, x), dtype=float)
                costs[k] = x @ Q @ x + u @ R @ u
                if k + 1 < N_bar:
                    x = stepper.predict(x, u)
                    if not np.all(np.isfinite(x)):
                        ok = False
                        break
        except DomainError:
            ok = False
        r = np.cumsum(costs) / ell_star if ok else None
        if r is None or not np.all(np.isfinite(r)) or r[-1] > DIVERGENCE_RATIO:
            flagged.append(idx)
            continue
        ratios.append(r)
        kept.append(idx)
    if not ratios:
        raise CertificateRefused("every probe rollout diverged; no growth bound available")
    ratios = np.array(ratios)
    arg = np.argmax(ratios, axis=0)
    raw = ratios[arg, np.arange(N_bar)]
    spec = {"probe": probe_name, "samples": int(samples.shape[0]), "used": len(kept), "N_bar": int(N_bar)}
    return GrowthBoundSequence(
        np.maximum.accumulate(raw), "estimated", spec, samples[np.array(kept)[arg]], flagged
    )


# --- surrogate propagation ------------------------------------------------------


def _lambda_min(M) -> float:
    return float(np.linalg.eigvalsh(np.atleast_2d(M))[0])


def propagate_growth_to_surrogate(B: GrowthBoundSequence, c_x, c_u, L_f, Q, R, N_bar: int | None = None):
    """``B_N^eps = B_N + cbar^2 c_N + cbar cbar_N`` for ``N = 1..N_bar``.

    With ``d = L_f + c_x``, ``cbar = max(c_x, c_u)`` and ``lam = min(lambda_min(Q), lambda_min(R))``:

        c_N    = 4/lam sum_{j=1}^{N-1} (2 d^2)^(j-1) B_{N-j}
        cbar_N = 1/(2 lam) [sum_{j=1}^{N-1} d^(j-1) B_{N-j} + 2 B_N max_{j in [1:N-1]} d^(j-1) (N-j)]

    Empty sums and maxima are zero (``N = 1``).
    """
    N_bar = len(B) if N_bar is None else int(N_bar)
    if N_bar > len(B):
        raise ValueError(f"B has {len(B)} entries, N_bar={N_bar} requested")
    lam = min(_lambda_min(Q), _lambda_min(R))
    cbar = max(float(c_x), float(c_u))
    d = float(L_f) + float(c_x)
    vals = B.values
    out = np.empty(N_bar)
    for N in range(1, N_bar + 1):
        j = np.arange(1, N)
        prev = vals[N - j - 1]  # B_{N-j}
        c_N = 4.0 / lam * float(np.sum((2.0 * d * d) ** (j - 1) * prev))
        peak = float(np.max(d ** (j - 1) * (N - j))) if N > 1 else 0.0
        cbar_N = (float(np.sum(d ** (j - 1) * prev)) + 2.0 * vals[N - 1] * peak) / (2.0 * lam)
        out[N - 1] = vals[N - 1] + cbar**2 * c_N + cbar * cbar_N
    spec = {"c_x": float(c_x), "c_u": float(c_u), "L_f": float(L_f), "lambda": lam, "from": B.source}
    return GrowthBoundSequence(out, "propagated", spec)


def extend_growth_sequence(B_eps: GrowthBoundSequence, alpha_eps: float, N: int, k_max: int) -> GrowthBoundSequence:
    """Keep ``B_1..B_N`` and set ``B_k = B_N / alpha`` for ``N < k <= k_max``."""
    if not alpha_eps > 0.0:
        raise CertificateRefused(f"extension needs alpha > 0, got {alpha_eps}")
    if alpha_eps > 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    head = B_eps.values[:N]
    tail = np.full(max(k_max - N, 0), head[-1] / alpha_eps)
    spec = {**B_eps.sample_spec, "extended_from": int(N), "alpha": float(alpha_eps)}
    return GrowthBoundSequence(np.concatenate([head, tail]), "extended", spec)


def growth_table(B: GrowthBoundSequence, B_eps: GrowthBoundSequence | None = None) -> list:
    """Rows ``(N, B_N, B_N^eps, alpha_N, alpha_N^eps)``; alpha is blank for ``N = 1``."""
    rows = []
    for N in range(1, len(B) + 1):
        a = alpha_value(B.values, N) if N >= 2 else float("nan")
        be = B_eps.B(N) if B_eps is not None and N <= len(B_eps) else float("nan")
        ae = alpha_value(B_eps.values, N) if B_eps is not None and 2 <= N <= len(B_eps) else float("nan")
        rows.append((N, B.B(N), be, a, ae))
    return rows


def write_growth_csv(path, B: GrowthBoundSequence, B_eps: GrowthBoundSequence | None = None) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["N", "B_N", "B_N_eps", "alpha_N", "alpha_N_eps"])
        for row in growth_table(B, B_eps):
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
    return path


def growth_to_dict(B: GrowthBoundSequence) -> dict:
    return {
        "values": B.values.tolist(),
        "source": B.source,
        "sample_spec": B.sample_spec,
        "flagged": list(B.flagged),
        "monotone": B.is_monotone(),
    }


def dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True)
