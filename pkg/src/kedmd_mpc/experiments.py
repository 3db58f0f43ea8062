"""Benchmark pipelines: data, fits, closed loops and certificate bundles.

The command-line interface is a thin layer over these functions, and the
acceptance tests call them directly.
"""
from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bounds, mpc, stability, svg
from .artifacts import RunManifest, read_points_csv, write_trace_csv
from .errors import CertificateRefused, ConfigurationError, DataError
from .geometry import Box
from .kernel import KernelSpec, default_scale, padua_points, uniform_grid
from .sampling import ClusterDataset, generate_dataset
from .surrogate import SurrogateModel, fit_surrogate
from .systems import ControlAffineSystem, make_system

THREADS_ENV = "KEDMD_MPC_THREADS"

SUITES = {
    "vdp": {
        "system": "vdp",
        "grid_kind": "padua",
        "grids": (25, 50),
        "horizons": (10, 30),
        "steps": 300,
        "x0": (0.5, 0.5),
    },
    "tanks": {
        "system": "tanks",
        "grid_kind": "uniform",
        "grids": (5, 6, 7),
        "horizons": (10,),
        "steps": 200,
        "x0": (1.0, 1.0, 1.0, 1.0),
    },
}

# cluster radius r_X = numerator / d
RX_NUMERATOR = {"vdp": float(np.sqrt(2.0)), "tanks": 2.0}
SAMPLES_PER_CLUSTER = 25
R_WEIGHT = 1e-4


def worker_count(default: int = 1) -> int:
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigurationError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None


def make_grid(spec: str, box: Box) -> np.ndarray:
    """Grid from ``padua:<order>``, ``uniform:<per_axis>`` or ``file:<csv path>``."""
    kind, _, arg = spec.partition(":")
    if kind == "padua":
        return padua_points(int(arg), box)
    if kind == "uniform":
        return uniform_grid(int(arg), box)
    if kind == "file":
        return read_points_csv(arg)
    raise ConfigurationError(f"unknown grid spec {spec!r}")


def auto_radius(system_name: str, d: int) -> float:
    if system_name not in RX_NUMERATOR:
        raise ConfigurationError(f"no default cluster radius for {system_name!r}")
    return RX_NUMERATOR[system_name] / d


def to_shifted(sys: ControlAffineSystem, x) -> np.ndarray:
    """Physical coordinates to the shifted coordinates of ``sys``."""
    return np.asarray(x, dtype=float) - np.asarray(sys.params.get("shift_x", np.zeros(sys.n)))


def mpc_config(sys: ControlAffineSystem, horizon: int, **solver) -> mpc.MpcConfig:
    return mpc.MpcConfig(horizon, np.eye(sys.n), R_WEIGHT * np.eye(sys.m), sys.input_box, **solver)


def build_dataset(sys: ControlAffineSystem, grid: str, seed: int, r_X=None, d_i: int = SAMPLES_PER_CLUSTER) -> ClusterDataset:
    X = make_grid(grid, sys.domain)
    rx = auto_radius(sys.name, len(X)) if r_X in (None, "auto") else float(r_X)
    return generate_dataset(sys, X, rx, d_i, seed, source={"grid": grid})


def build_model(ds: ClusterDataset, sys: ControlAffineSystem, pi: bool, scale=None, reg=None) -> SurrogateModel:
    kernel = KernelSpec(sys.n, 1, default_scale(sys.domain) if scale is None else float(scale))
    model = fit_surrogate(ds, kernel, pi, reg)
    model.metadata["system"] = sys.name
    return model


# --- closed-loop cells -------------------------------------------------------


@dataclass
class CellResult:
    label: str
    variant: str
    d: int
    N: int
    trace: mpc.ClosedLoopTrace
    origin_residual: float
    condition_estimate: float

    def errors(self) -> np.ndarray:
        return self.trace.errors()


def cell_label(pi: bool, d: int, N: int) -> str:
    return f"{'pi' if pi else 'kedmd'}_d{d}_N{N}"


def first_below(errors, level) -> int:
    hit = np.flatnonzero(np.asarray(errors) < level)
    return int(hit[0]) if hit.size else -1


def _grid_task(args):
    system, grid, seed, horizons, steps, x0 = args
    sys = make_system(system)
    ds = build_dataset(sys, grid, seed)
    d = len(ds.clusters)
    out = []
    for pi in (True, False):
        model = build_model(ds, sys, pi)
        for N in horizons:
            cfg = mpc_config(sys, N)
            trace = mpc.run_closed_loop(sys, model, cfg, to_shifted(sys, x0), steps)
            out.append(
                CellResult(cell_label(pi, d, N), "PI-kEDMD" if pi else "kEDMD", d, N, trace, model.origin_residual(), model.K.condition_estimate)
            )
    return out


def run_cells(suite: str, seed: int = 1, steps=None, grids=None, horizons=None, jobs: int = 1) -> list:
    cfg = SUITES[suite]
    steps = cfg["steps"] if steps is None else int(steps)
    grids = cfg["grids"] if grids is None else tuple(grids)
    horizons = cfg["horizons"] if horizons is None else tuple(horizons)
    tasks = [(cfg["system"], f"{cfg['grid_kind']}:{g}", seed, horizons, steps, cfg["x0"]) for g in grids]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_grid_task, tasks))
    else:
        chunks = [_grid_task(t) for t in tasks]
    return [c for chunk in chunks for c in chunk]


SUMMARY_COLUMNS = [
    "label", "variant", "d", "N", "steps", "final_error", "min_error", "median_last200",
    "first_below_1e-2", "first_below_1e-4", "first_below_1e-6", "min_alpha_hat", "origin_residual",
    "condition_estimate", "non_converged_solves", "left_domain", "failure",
]


def summary_row(c: CellResult) -> dict:
    e = c.errors()
    a = c.trace.lyapunov_alphas
    a = a[np.isfinite(a)]
    return {
        "label": c.label,
        "variant": c.variant,
        "d": c.d,
        "N": c.N,
        "steps": c.trace.steps,
        "final_error": float(e[-1]),
        "min_error": float(e.min()),
        "median_last200": float(np.median(e[-200:])),
        "first_below_1e-2": first_below(e, 1e-2),
        "first_below_1e-4": first_below(e, 1e-4),
        "first_below_1e-6": first_below(e, 1e-6),
        "min_alpha_hat": float(a.min()) if a.size else float("nan"),
        "origin_residual": c.origin_residual,
        # an estimate; threaded BLAS moves its last digits between runs
        "condition_estimate": float(f"{c.condition_estimate:.6e}"),
        "non_converged_solves": sum(s != "converged" for s in c.trace.statuses),
        "left_domain": int(np.sum(c.trace.left_domain)),
        "failure": c.trace.failure or "",
    }


def _cell(v):
    return repr(v) if isinstance(v, float) else v


def write_rows(path, columns, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r[c]) for c in columns])
    return Path(path)


def bench(suite: str, out_dir, seed: int = 1, steps=None, grids=None, horizons=None, jobs=None, command=None):
    """Run a benchmark suite and write traces, summary, timing table, figures and a manifest."""
    if suite not in SUITES:
        raise ConfigurationError(f"unknown suite {suite!r} (expected one of {sorted(SUITES)})")
    out = Path(out_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    jobs = worker_count() if jobs is None else jobs
    t0 = time.perf_counter()
    cells = run_cells(suite, seed, steps, grids, horizons, jobs)
    wall = time.perf_counter() - t0
    manifest = RunManifest(
        command=list(command or []),
        config={"suite": suite, "seed": seed, "steps": steps, "grids": grids, "horizons": horizons, "r_weight": R_WEIGHT},
    )
    for c in cells:
        manifest.add_output(write_trace_csv(out / "traces" / f"{c.label}.csv", c.trace), root=out)
    manifest.add_output(write_rows(out / "summary.csv", SUMMARY_COLUMNS, [summary_row(c) for c in cells]), root=out)
    # timing table shaped like (d, N) x variant; wall-clock, hence excluded from reproducibility checks
    timing = []
    for d in sorted({c.d for c in cells}):
        for N in sorted({c.N for c in cells}):
            row = {"d": d, "N": N}
            for c in cells:
                if c.d == d and c.N == N:
                    key = "pi_mean_s" if c.variant == "PI-kEDMD" else "kedmd_mean_s"
                    row[key] = float(np.mean(c.trace.solve_times)) if c.trace.solve_times.size else float("nan")
            timing.append(row)
    manifest.add_output(write_rows(out / "timing.csv", ["d", "N", "pi_mean_s", "kedmd_mean_s"], timing), deterministic=False, root=out)
    styles = {("PI-kEDMD", 0): "solid", ("PI-kEDMD", 1): "dashdot", ("kEDMD", 0): "dash", ("kEDMD", 1): "dot"}
    Ns = sorted({c.N for c in cells})
    lines = [(f"{c.variant} d={c.d} N={c.N}", c.errors(), styles.get((c.variant, Ns.index(c.N) % 2), "solid")) for c in cells]
    title = "Van der Pol: closed-loop error" if suite == "vdp" else "four-tank: closed-loop error"
    manifest.add_output(svg.error_plot(out / "error.svg", lines, title=title), root=out)
    if cells and cells[0].trace.states.shape[1] == 2:
        traj = [(f"{c.variant} d={c.d} N={c.N}", c.trace.states, styles.get((c.variant, Ns.index(c.N) % 2), "solid")) for c in cells]
        manifest.add_output(svg.phase_plot(out / "phase.svg", traj, title="Van der Pol: phase portrait"), root=out)
    manifest.timings = {"wall_s": wall, "mean_solve_s": {c.label: float(np.mean(c.trace.solve_times)) for c in cells}}
    manifest.write(out / "manifest.json")
    return cells, manifest


# --- certificate bundle ---------------------------------------------------------


def test_lattices(sys: ControlAffineSystem):
    """Default scan sets: states on a lattice of Omega, inputs on a lattice of U."""
    per_state = 41 if sys.n <= 2 else 7
    per_input = 9 if sys.m == 1 else 5
    return sys.domain.lattice(per_state), sys.input_box.lattice(per_input)


def growth_samples(sys: ControlAffineSystem, count: int = 100, seed: int = 0, shrink: float = 0.5) -> np.ndarray:
    """Uniform samples in ``shrink * Omega`` (nonzero states)."""
    rng = np.random.default_rng(seed)
    lo, hi = shrink * sys.domain.lo, shrink * sys.domain.hi
    pts = lo + rng.random((count, sys.n)) * (hi - lo)
    return pts[np.linalg.norm(pts, axis=1) > 0]


def certify(sys: ControlAffineSystem, model, horizon: int, out_dir, N_bar: int = 30, trace=None, excitation_score=None, kappa_steps: int = 100):
    """Error scan, Lipschitz estimate, growth bounds, alpha sweep, propagation and margin.

    Refused sub-certificates are recorded in the bundle instead of aborting.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = mpc_config(sys, horizon)
    N_bar = max(int(N_bar), int(horizon))
    bundle = {"system": sys.name, "horizon": int(horizon), "N_bar": N_bar, "refused": {}, "verdicts": {}}
    states, inputs = test_lattices(sys)
    report = bounds.empirical_error_scan(sys, model, states, inputs, excitation_score=excitation_score)
    resolution = 60 if sys.n <= 2 else 8
    report.L_hat = bounds.lipschitz_estimate(model, sys.domain, sys.input_box, resolution)
    bundle["error_report"] = report.to_dict()
    try:
        B = stability.estimate_growth_bounds(sys, growth_samples(sys), N_bar, cfg.Q, cfg.R, sys.input_box, probe_model=model)
    except CertificateRefused as exc:
        bundle["refused"]["growth_bound"] = str(exc)
        bundle["verdicts"]["alpha_N"] = "refused"
        _write_bundle(out, bundle)
        return bundle
    bundle["growth"] = stability.growth_to_dict(B)
    alphas = stability.alpha_sweep(B)
    bundle["alpha_sweep"] = {str(N): float(a) for N, a in zip(range(2, N_bar + 1), alphas)}
    N_min = stability.minimal_stabilizing_horizon(B)
    bundle["minimal_stabilizing_horizon"] = N_min
    bundle["verdicts"]["alpha_N"] = "horizon insufficient" if N_min is None or N_min > horizon else "pass"
    B_eps = stability.propagate_growth_to_surrogate(B, report.c_x_hat, report.c_u_hat, report.L_hat, cfg.Q, cfg.R)
    bundle["growth_eps"] = stability.growth_to_dict(B_eps)
    stability.write_growth_csv(out / "growth.csv", B, B_eps)
    alpha_eps = stability.alpha_value(B_eps.values, horizon) if horizon >= 2 else -np.inf
    bundle["alpha_eps"] = float(alpha_eps)
    if alpha_eps > 0:
        ext = stability.extend_growth_sequence(B_eps, alpha_eps, horizon, 2 * N_bar)
        bundle["growth_eps_extended"] = stability.growth_to_dict(ext)
    else:
        bundle["refused"]["extension"] = f"alpha_eps = {alpha_eps} <= 0"
    if trace is None:
        trace = mpc.run_closed_loop(sys, model, cfg, growth_samples(sys, 1, seed=1)[0], kappa_steps)
    kappa = bounds.input_state_ratio(trace)
    bundle["kappa"] = kappa
    try:
        margin = bounds.stability_margin(report, cfg, B_eps, report.L_hat, kappa)
        bundle["margin"] = margin.to_dict()
        bundle["verdicts"]["margin"] = margin.verdict
    except CertificateRefused as exc:
        bundle["refused"]["margin"] = str(exc)
        bundle["verdicts"]["margin"] = "refused"
    bounds.write_scan_csv(out / "scan.csv", [(getattr(model, "metadata", {}).get("system", sys.name), report)])
    _write_bundle(out, bundle)
    return bundle


def _write_bundle(out: Path, bundle: dict) -> None:
    bounds.write_report_json(out / "certificate.json", bundle)
