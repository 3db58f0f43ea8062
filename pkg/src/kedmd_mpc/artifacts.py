"""File formats shared by the CLI: trace CSVs, grid CSVs and run manifests."""
from __future__ import annotations

import csv
import hashlib
import json
import platform
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

TRACE_SCHEMA = 1


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _num(v) -> str:
    return "" if v is None or (isinstance(v, float) and np.isnan(v)) else repr(float(v))


def trace_header(n: int, m: int) -> list:
    return ["k"] + [f"x{i}" for i in range(n)] + [f"u{j}" for j in range(m)] + ["ell", "V", "alpha_hat", "iterations", "status"]


def write_trace_csv(path, trace) -> Path:
    """Columns ``k, x.., u.., ell, V, alpha_hat, iterations, status``.

    The last row holds the final state and its value; its input columns are empty.
    """
    path = Path(path)
    n = trace.states.shape[1]
    m = trace.inputs.shape[1] if trace.inputs.ndim == 2 else 0
    K = trace.inputs.shape[0]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trace_header(n, m))
        for k in range(trace.states.shape[0]):
            u = trace.inputs[k] if k < K else [None] * m
            ell = trace.stage_costs[k] if k < K else None
            V = trace.values[k] if k < trace.values.size else None
            a = trace.lyapunov_alphas[k] if k < trace.lyapunov_alphas.size else None
            it = int(trace.iterations[k]) if k < trace.iterations.size else ""
            st = trace.statuses[k] if k < len(trace.statuses) else ""
            w.writerow([k] + [_num(v) for v in trace.states[k]] + [_num(v) for v in u] + [_num(ell), _num(V), _num(a), it, st])
    return path


def write_empty_trace_csv(path, n: int, m: int) -> Path:
    """Header-only trace file (zero closed-loop steps)."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerow(trace_header(n, m))
    return path


def read_trace_csv(path) -> dict:
    """Parse a trace CSV into arrays (``nan`` for empty cells)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    out = {}
    for j, name in enumerate(header):
        col = [r[j] for r in body]
        if name == "status":
            out[name] = col
        elif name in ("k", "iterations"):
            out[name] = np.array([int(v) if v else -1 for v in col])
        else:
            out[name] = np.array([float(v) if v else np.nan for v in col])
    xs = sorted((c for c in header if c[0] == "x" and c[1:].isdigit()), key=lambda c: int(c[1:]))
    us = sorted((c for c in header if c[0] == "u" and c[1:].isdigit()), key=lambda c: int(c[1:]))
    out["states"] = np.column_stack([out[c] for c in xs]) if xs else np.zeros((len(body), 0))
    out["inputs"] = np.column_stack([out[c] for c in us])[:-1] if us else np.zeros((max(len(body) - 1, 0), 0))
    return out


def write_points_csv(path, X, prefix="x") -> Path:
    X = np.atleast_2d(X)
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"{prefix}{i}" for i in range(X.shape[1])])
        for row in X:
            w.writerow([repr(float(v)) for v in row])
    return path


def read_points_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


@dataclass
class RunManifest:
    command: list
    config: dict
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    nondeterministic: list = field(default_factory=list)
    versions: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def add_output(self, path, deterministic: bool = True, root=None):
        path = Path(path)
        key = str(path.relative_to(root)) if root is not None else path.name
        self.outputs[key] = sha256_file(path)
        if not deterministic:
            self.nondeterministic.append(key)

    def add_input(self, path):
        self.inputs[str(path)] = sha256_file(path)

    def deterministic_hashes(self) -> dict:
        return {k: v for k, v in sorted(self.outputs.items()) if k not in self.nondeterministic}

    def write(self, path) -> Path:
        import scipy

        from . import __version__

        self.versions = {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "kedmd_mpc": __version__,
            "platform": sys.platform,
        }
        path = Path(path)
        path.write_text(json.dumps(asdict(self), indent=1, sort_keys=True, default=str) + "\n")
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()
