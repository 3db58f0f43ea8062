"""Command-line interface: ``kedmd-mpc generate | fit | simulate | certify | bench``.

Options may also come from a JSON file given with ``--config``; flags given
on the command line override its fields.  Exit codes: 0 success, 2 invalid
input or data, 3 numerical failure, 4 solver failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, experiments, mpc, svg
from .artifacts import RunManifest, write_empty_trace_csv, write_trace_csv
from .errors import (
    CapabilityError,
    CertificateRefused,
    ConfigurationError,
    DataError,
    DomainError,
    ExcitationError,
    NumericalError,
)
from .sampling import load_dataset, save_dataset, validate_dataset
from .surrogate import load_model, save_model
from .systems import make_system

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_SOLVER = 0, 2, 3, 4

# built-in fallbacks for options left unset by both the command line and --config
DEFAULTS = {
    "generate": {"system": "vdp", "grid": None, "rx": "auto", "di": experiments.SAMPLES_PER_CLUSTER, "seed": 1},
    "fit": {"pi": False, "scale": None, "reg": None},
    "simulate": {"system": None, "horizon": 10, "steps": None, "x0": None, "max_iterations": 2000, "tolerance": 1e-12},
    "certify": {"system": None, "horizon": 10, "n_bar": 30, "exact": False},
    "bench": {"seed": 1, "steps": None, "jobs": None},
}


def _floats(text):
    return [float(v) for v in str(text).replace(",", " ").split()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kedmd-mpc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="JSON file with option values")
        return sp

    g = add("generate", "sample clustered data and write CSV plus sidecar")
    g.add_argument("--system", choices=["vdp", "tanks"])
    g.add_argument("--grid", help="padua:<order>, uniform:<per axis> or file:<csv>")
    g.add_argument("--rx", help="cluster radius or 'auto'")
    g.add_argument("--di", type=int, help="samples per cluster")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True, help="output prefix (writes .csv and .json)")

    f = add("fit", "fit a surrogate from a dataset")
    f.add_argument("--data", required=True, help="dataset prefix or .csv path")
    f.add_argument("--pi", action="store_true", default=None, help="physics-informed origin regression")
    f.add_argument("--scale", type=float, help="kernel scale (default: half the domain diameter)")
    f.add_argument("--reg", type=float, help="Tikhonov regularization (default: size based)")
    f.add_argument("--out", required=True, help=".kedmd output path")

    s = add("simulate", "run the MPC closed loop on the true system")
    s.add_argument("--model", help=".kedmd model (omit with --exact)")
    s.add_argument("--exact", action="store_true", default=None, help="use the true system as prediction model")
    s.add_argument("--system", choices=["vdp", "tanks"])
    s.add_argument("--horizon", type=int)
    s.add_argument("--steps", type=int)
    s.add_argument("--x0", help="initial state in physical coordinates, e.g. '0.5,0.5'")
    s.add_argument("--max-iterations", dest="max_iterations", type=int)
    s.add_argument("--tolerance", type=float, help="projected-gradient tolerance")
    s.add_argument("--out", required=True, help="output directory")

    c = add("certify", "error scan, growth bounds, alpha sweep and stability margin")
    c.add_argument("--model", help=".kedmd model (omit with --exact)")
    c.add_argument("--exact", action="store_true", default=None, help="certify the true system against itself")
    c.add_argument("--system", choices=["vdp", "tanks"])
    c.add_argument("--horizon", type=int)
    c.add_argument("--n-bar", dest="n_bar", type=int, help="largest horizon of the growth bound")
    c.add_argument("--out", required=True, help="output directory")

    b = add("bench", "run a benchmark suite")
    b.add_argument("--suite", required=True, choices=sorted(experiments.SUITES))
    b.add_argument("--seed", type=int)
    b.add_argument("--steps", type=int)
    b.add_argument("--jobs", type=int, help=f"worker processes (default: ${experiments.THREADS_ENV} or 1)")
    b.add_argument("--out", required=True, help="output directory")
    return p


def resolve(args) -> dict:
    """Merge command line, config file and built-in defaults (in that order of priority)."""
    opts = {}
    if args.config:
        try:
            opts = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(opts, dict):
            raise ConfigurationError("config file must hold a JSON object")
    merged = dict(DEFAULTS.get(args.command, {}))
    merged.update({k.replace("-", "_"): v for k, v in opts.items()})
    merged.update({k: v for k, v in vars(args).items() if v is not None})
    return merged


def _system_for(opts, model=None):
    name = opts.get("system") or (model.metadata.get("system") if model is not None else None)
    if name is None:
        raise ConfigurationError("--system is required")
    return make_system(name)


def cmd_generate(opts) -> int:
    sys_ = make_system(opts["system"])
    grid = opts["grid"] or f"{experiments.SUITES[opts['system']]['grid_kind']}:{experiments.SUITES[opts['system']]['grids'][0]}"
    rx = None if str(opts["rx"]) == "auto" else float(opts["rx"])
    ds = experiments.build_dataset(sys_, grid, int(opts["seed"]), rx, int(opts["di"]))
    report = validate_dataset(ds, sys_.domain, sys_.input_box, pi=True)
    print(report.format())
    if not report.passed:
        print(f"dataset validation failed: {', '.join(report.failures())}", file=sys.stderr)
        return EXIT_INVALID
    csv_path, json_path = save_dataset(ds, opts["out"], extra={"grid": grid})
    print(f"wrote {len(ds.clusters)} clusters ({ds.total_samples} samples, r_X={ds.r_X:.6g}) to {csv_path} and {json_path}")
    return EXIT_OK


def cmd_fit(opts) -> int:
    ds = load_dataset(Path(opts["data"]).with_suffix(""))
    name = ds.source.get("system")
    if name is None:
        raise DataError("dataset sidecar names no system")
    sys_ = make_system(name)
    model = experiments.build_model(ds, sys_, bool(opts["pi"]), opts["scale"], opts["reg"])
    save_model(model, opts["out"])
    res = model.step1_residuals
    print(f"centers: {len(ds.clusters)}  variant: {'PI-kEDMD' if model.pi_variant else 'kEDMD'}")
    print(f"condition estimate: {model.K.condition_estimate:.3e}")
    print(f"step-1 residuals: max {res.max():.3e}  median {np.median(res):.3e}")
    r0 = model.origin_residual()
    if model.pi_variant:
        print(f"origin residual: {r0:.3e} ({'exact' if r0 <= 1e-10 else 'NOT exact'} to 1e-10)")
    else:
        print(f"origin residual: {r0:.3e}")
    print(f"wrote {opts['out']}")
    return EXIT_OK


def _model_and_system(opts):
    if opts.get("exact"):
        sys_ = _system_for(opts)
        return sys_, sys_
    if not opts.get("model"):
        raise ConfigurationError("give --model or --exact")
    model = load_model(opts["model"])
    return model, _system_for(opts, model)


def cmd_simulate(opts) -> int:
    model, sys_ = _model_and_system(opts)
    suite = experiments.SUITES[sys_.name if sys_.name in experiments.SUITES else "tanks"]
    steps = suite["steps"] if opts["steps"] is None else int(opts["steps"])
    if steps < 0:
        raise ConfigurationError("--steps must be nonnegative")
    x0 = suite["x0"] if opts["x0"] is None else _floats(opts["x0"])
    if len(x0) != sys_.n:
        raise ConfigurationError(f"x0 needs {sys_.n} entries")
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(sys.argv[:], {k: v for k, v in opts.items() if k != "config"})
    if opts.get("model"):
        manifest.add_input(opts["model"])
    if steps == 0:
        manifest.add_output(write_empty_trace_csv(out / "trace.csv", sys_.n, sys_.m), root=out)
        manifest.write(out / "manifest.json")
        print("zero steps requested; wrote header-only trace.csv")
        return EXIT_OK
    cfg = experiments.mpc_config(
        sys_, int(opts["horizon"]), max_iterations=int(opts["max_iterations"]), gradient_tolerance=float(opts["tolerance"])
    )
    trace = mpc.run_closed_loop(sys_, model, cfg, experiments.to_shifted(sys_, x0), steps)
    manifest.add_output(write_trace_csv(out / "trace.csv", trace), root=out)
    e = trace.errors()
    manifest.add_output(svg.error_plot(out / "error.svg", [("closed loop", e, "solid")]), root=out)
    if sys_.n == 2:
        manifest.add_output(svg.phase_plot(out / "phase.svg", [("closed loop", trace.states, "solid")]), root=out)
    mean_t = float(np.mean(trace.solve_times)) if trace.solve_times.size else float("nan")
    manifest.timings = {"mean_solve_s": mean_t}
    manifest.write(out / "manifest.json")
    summary = mpc.alpha_summary(trace.lyapunov_alphas)
    print(f"steps: {trace.steps}  final error: {e[-1]:.3e}  min error: {e.min():.3e}")
    print(f"mean solve time: {mean_t:.4f} s  non-converged solves: {sum(s != 'converged' for s in trace.statuses)}")
    print(f"alpha_hat: {json.dumps(summary)}")
    if trace.failure:
        print(f"solver failure: {trace.failure}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_certify(opts) -> int:
    model, sys_ = _model_and_system(opts)
    bundle = experiments.certify(sys_, model, int(opts["horizon"]), opts["out"], N_bar=int(opts["n_bar"]))
    for key, verdict in bundle["verdicts"].items():
        print(f"{key}: {verdict}")
    for key, why in bundle["refused"].items():
        print(f"refused {key}: {why}")
    print(f"wrote {Path(opts['out']) / 'certificate.json'}")
    return EXIT_OK


def cmd_bench(opts) -> int:
    cells, _ = experiments.bench(
        opts["suite"], opts["out"], seed=int(opts["seed"]), steps=opts["steps"], jobs=opts["jobs"], command=sys.argv[:]
    )
    for c in cells:
        row = experiments.summary_row(c)
        print(f"{c.label:>20s}  final {row['final_error']:.3e}  first<1e-6 {row['first_below_1e-6']:>4d}  {row['failure']}")
    print(f"wrote {opts['out']}")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "fit": cmd_fit, "simulate": cmd_simulate, "certify": cmd_certify, "bench": cmd_bench}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](resolve(args))
    except (ConfigurationError, DataError, DomainError, ExcitationError, CapabilityError, CertificateRefused, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
