"""Empirical error-bound constants and the closed-loop stability margin.

The surrogate error ``e(x, u) = |f(x, u) - f_eps(x, u)|`` is measured on a
product test set.  From it we report the uniform bound ``eta_hat`` and a
proportional envelope ``e <= c_x |x| + c_u |u|``.  The RKHS constants of the
uniform error theorem are not computable; ``theoretical_bound_skeleton`` fits
them to several scans and labels the result "fitted".
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import nnls
from scipy.spatial import cKDTree

from .errors import CertificateRefused, ConfigurationError
from .geometry import Box
from .kernel import fill_distance, signvector_quadform_bound
from .stability import GrowthBoundSequence, alpha_value

SWEEP_POINTS = 400
COVER_INFLATION = 1.0 + 1e-12


@dataclass
class ErrorBoundReport:
    eta_hat: float
    c_x_hat: float
    c_u_hat: float
    L_hat: float | None = None
    h_X: float | None = None
    r_X: float | None = None
    excitation_score: float | None = None
    quadform_bracket: tuple | None = None  # (lower, upper)
    inverse_norm: float | None = None
    phi0: float | None = None
    origin_error: float | None = None
    samples: int = 0
    test_spec: dict = field(default_factory=dict)

    @property
    def theorem_constant(self) -> float | None:
        """``c = max sqrt(d_i)|U_i^+| * phi(0)^(1/2) * max_v sqrt(v'K^-1 v)`` from the bracket's upper end."""
        if None in (self.excitation_score, self.quadform_bracket, self.phi0):
            return None
        return float(self.excitation_score * np.sqrt(self.phi0) * np.sqrt(self.quadform_bracket[1]))

    def covers(self, err, xnorm, unorm) -> np.ndarray:
        """Boolean mask of samples satisfying both fitted bounds."""
        err = np.asarray(err)
        ok_u = err <= self.eta_hat
        ok_p = err <= self.c_x_hat * np.asarray(xnorm) + self.c_u_hat * np.asarray(unorm)
        return ok_u & ok_p

    def to_dict(self) -> dict:
        d = asdict(self)
        d["theorem_constant"] = self.theorem_constant
        return d


def _product(states, inputs):
    P, M = states.shape[0], inputs.shape[0]
    return np.repeat(states, M, axis=0), np.tile(inputs, (P, 1))


def proportional_envelope(err, xnorm, unorm, weight_u: float = 1.0):
    """Covering pair ``(c_x, c_u)`` minimising ``c_x + weight_u * c_u`` over a log sweep of ``c_x``.

    For a candidate ``c_x``, ``c_u`` is the smallest value covering every
    sample with ``u != 0``; samples with ``u = 0`` fix the lower end of the
    sweep.  Samples with ``x = u = 0`` are ignored.
    """
    err, xnorm, unorm = (np.asarray(a, dtype=float).ravel() for a in (err, xnorm, unorm))
    keep = (xnorm > 0) | (unorm > 0)
    err, xnorm, unorm = err[keep], xnorm[keep], unorm[keep]
    if not err.size or not np.any(err > 0):
        return 0.0, 0.0
    u0 = unorm == 0
    cx_min = float(np.max(err[u0] / xnorm[u0])) if np.any(u0) else 0.0
    xpos = xnorm > 0
    cx_max = float(np.max(err[xpos] / xnorm[xpos])) if np.any(xpos) else 0.0
    cx_max = max(cx_max, cx_min)
    if cx_max > 0:
        lo = max(cx_min, cx_max * 1e-10)
        grid = np.unique(np.concatenate([[cx_min, cx_max], np.geomspace(lo, cx_max, SWEEP_POINTS)]))
    else:
        grid = np.array([0.0])
    grid = grid[grid >= cx_min]
    up = ~u0
    best = None
    for cx in grid:
        cu = float(np.max(np.clip(err[up] - cx * xnorm[up], 0.0, None) / unorm[up])) if np.any(up) else 0.0
        score = cx + weight_u * cu
        if best is None or score < best[0]:
            best = (score, cx, cu)
    _, cx, cu = best
    return cx * COVER_INFLATION, cu * COVER_INFLATION


def empirical_error_scan(
    truth,
    model,
    test_states,
    test_inputs,
    omega: Box | None = None,
    input_box: Box | None = None,
    min_distance: float = 0.0,
    excitation_score: float | None = None,
    quadform: bool = True,
    fill_resolution: int | None = None,
) -> ErrorBoundReport:
    """Measure the model error on ``test_states x test_inputs``.

    Test states within ``min_distance`` of a kernel center (any coincident
    point when ``min_distance = 0``) are dropped so the scan does not sit on
    interpolation nodes.  The error at ``(0, 0)`` is reported separately.
    """
    states = np.atleast_2d(np.asarray(test_states, dtype=float))
    inputs = np.atleast_2d(np.asarray(test_inputs, dtype=float))
    centers = getattr(model, "centers", None)
    if centers is not None and states.size:
        dist, _ = cKDTree(centers).query(states)
        states = states[dist > min_distance]
    if states.shape[0] == 0 or inputs.shape[0] == 0:
        raise ConfigurationError("empty test set after filtering")
    omega = omega if omega is not None else getattr(truth, "domain", None)
    input_box = input_box if input_box is not None else getattr(truth, "input_box", None)
    xs, us = _product(states, inputs)
    err = scan_errors(truth, model, states, inputs)
    xnorm = np.linalg.norm(xs, axis=1)
    unorm = np.linalg.norm(us, axis=1)
    weight = input_box.diameter / omega.diameter if (omega is not None and input_box is not None) else 1.0
    c_x, c_u = proportional_envelope(err, xnorm, unorm, weight)
    n, m = states.shape[1], inputs.shape[1]
    origin_error = float(np.linalg.norm(truth.predict(np.zeros(n), np.zeros(m)) - model.predict(np.zeros(n), np.zeros(m))))
    report = ErrorBoundReport(
        eta_hat=float(err.max()),
        c_x_hat=c_x,
        c_u_hat=c_u,
        origin_error=origin_error,
        samples=int(err.size),
        test_spec={"states": int(states.shape[0]), "inputs": int(inputs.shape[0]), "min_distance": min_distance},
    )
    kfact = getattr(model, "K", None)
    if kfact is not None:
        report.r_X = model.metadata.get("r_X")
        report.phi0 = model.kernel.phi0
        report.inverse_norm = kfact.inverse_norm()
        if omega is not None:
            report.h_X = fill_distance(model.centers, omega, fill_resolution)
        if quadform:
            upper, lower = signvector_quadform_bound(kfact)
            report.quadform_bracket = (lower, upper)
    report.excitation_score = excitation_score
    return report


def _predict_product(model, states, inputs, chunk=512):
    """Predictions for every (state, input) pair, state-major: shape ``(P * M, n)``."""
    if not hasattr(model, "maps"):
        xs, us = _product(states, inputs)
        return model.predict(xs, us)
    out = []
    for start in range(0, states.shape[0], chunk):
        W = model.maps(states[start : start + chunk])  # (p, n, m+1)
        pred = W[:, None, :, 0] + np.einsum("pnj,qj->pqn", W[:, :, 1:], inputs)
        out.append(pred.reshape(-1, W.shape[1]))
    return np.vstack(out)


def scan_errors(truth, model, states, inputs) -> np.ndarray:
    """Error norms on the product set (no filtering), state-major order."""
    states, inputs = np.atleast_2d(states), np.atleast_2d(inputs)
    return np.linalg.norm(_predict_product(truth, states, inputs) - _predict_product(model, states, inputs), axis=1)


def lipschitz_estimate(model, omega: Box, input_box: Box | None, resolution: int = 30, chunk: int = 256) -> float:
    """Largest spectral norm of ``J_x`` over a lattice of ``omega`` and the input-box vertices.

    ``J_x`` is affine in ``u``, so its norm is maximised at a vertex for each
    state.  The lattice maximum is a lower estimate of the true constant.
    """
    pts = omega.lattice(resolution)
    if not hasattr(model, "coeff"):
        m = getattr(model, "m", 0)
        verts = input_box.vertices() if (m and input_box is not None) else np.zeros((1, m))
        return max(float(np.linalg.norm(model.linearize(x, u)[1], 2)) for x in pts for u in verts)
    coeff = model.coeff
    m = coeff.shape[0] - 1
    verts = input_box.vertices() if (m and input_box is not None) else np.zeros((1, m))
    weights = np.hstack([np.ones((verts.shape[0], 1)), verts])  # (V, m+1)
    C = np.einsum("vj,jdn->vdn", weights, coeff)  # (V, d, n)
    best = 0.0
    for start in range(0, pts.shape[0], chunk):
        grads = model.kernel.gradients_batch(pts[start : start + chunk], model.centers)  # (P, d, n)
        J = np.einsum("vdi,pdk->pvik", C, grads)
        if J.size:
            best = max(best, float(np.max(np.linalg.norm(J, ord=2, axis=(-2, -1)))))
    return best


# --- theorem skeleton -------------------------------------------------------------


@dataclass
class BoundDecomposition:
    k: int
    uniform_exponent: float
    proportional_exponent: float
    structure: str
    status: str  # "fitted" or "symbolic-only"
    C1: float | None
    C2: float | None
    scans: list
    rate_comparisons: list

    def to_dict(self) -> dict:
        return asdict(self)


def theoretical_bound_skeleton(reports, k: int = 1) -> BoundDecomposition:
    """Structural terms ``h^(k+1/2)`` and ``c |K^-1| r_X`` per scan, with fitted ``C1, C2``.

    ``C1, C2`` come from nonnegative least squares on at least three scans
    and are labelled "fitted", never "certified".  For consecutive scans the
    predicted uniform-error ratio ``(h_a/h_b)^(k+1/2)`` is listed beside the
    measured ratio.
    """
    if isinstance(reports, ErrorBoundReport):
        reports = [reports]
    p_uni, p_prop = k + 0.5, k - 0.5
    scans = []
    for r in reports:
        if r.h_X is None or r.r_X is None:
            raise ConfigurationError("scan report lacks h_X or r_X")
        c = r.theorem_constant
        r_term = 0.0 if r.r_X == 0 else (c if c is not None else np.nan) * (r.inverse_norm or np.nan) * r.r_X
        scans.append(
            {
                "h_X": r.h_X,
                "r_X": r.r_X,
                "eta_hat": r.eta_hat,
                "h_term": r.h_X**p_uni,
                "r_term": float(r_term),
                "h_term_proportional": r.h_X**p_prop,
                "theorem_constant": c,
            }
        )
    C1 = C2 = None
    status = "symbolic-only"
    if len(scans) >= 3:
        A = np.array([[s["h_term"], s["r_term"]] for s in scans])
        b = np.array([s["eta_hat"] for s in scans])
        if np.all(np.isfinite(A)):
            coef, _ = nnls(A, b)
            C1, C2 = float(coef[0]), float(coef[1])
            status = "fitted"
            for s in scans:
                s["fitted_h_contribution"] = C1 * s["h_term"]
                s["fitted_r_contribution"] = C2 * s["r_term"]
    comps = []
    for a, b in zip(scans, scans[1:]):
        comps.append(
            {
                "h_ratio": a["h_X"] / b["h_X"],
                "predicted_error_ratio": (a["h_X"] / b["h_X"]) ** p_uni,
                "measured_error_ratio": a["eta_hat"] / b["eta_hat"] if b["eta_hat"] > 0 else float("inf"),
            }
        )
    structure = f"eta <= C1 h_X^{p_uni:g} + C2 c |K_X^-1| r_X ; c_u ~ C1 h_X^{p_prop:g}"
    return BoundDecomposition(k, p_uni, p_prop, structure, status, C1, C2, scans, comps)


# --- stability margin ---------------------------------------------------------


@dataclass
class StabilityMarginReport:
    C_x: float
    C_u: float
    alpha_eps: float
    kappa: float
    margin: float
    verdict: str  # "pass" or "fail"
    inputs: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        return asdict(self)


def margin_constants(c_x, c_u, L, B_eps_N, Q, N):
    """``(C_x, C_u)`` of the relaxed Lyapunov decrease with model error."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    ev = np.linalg.eigvalsh(Q)
    lam_lo, lam_hi = ev[0], ev[-1]
    qnorm = lam_hi  # spectral norm of a symmetric positive definite Q
    root = np.sqrt(B_eps_N * lam_hi / lam_lo)
    Li = float(L) ** np.arange(N)
    C_x = 2.0 * qnorm * float(np.sum(root * Li * (c_x + 0.5 * c_u) + (Li * c_x) ** 2))
    C_u = 2.0 * qnorm * float(np.sum(root * Li * 0.5 * c_u + (Li * c_u) ** 2))
    return C_x, C_u


def stability_margin(err: ErrorBoundReport, mpc_cfg, B_eps: GrowthBoundSequence, L_hat: float, kappa: float = 0.0):
    """Worst-case normalised decrease ``C_x + C_u kappa^2 - alpha_eps lambda_min(Q)``.

    ``kappa`` is the largest observed ``|u| / |x|`` in closed loop.  The
    verdict is "pass" iff the margin is negative.
    """
    N = int(mpc_cfg.horizon)
    alpha = alpha_value(B_eps.values, N) if N >= 2 else -np.inf
    if not alpha > 0.0:
        raise CertificateRefused(f"alpha_eps = {alpha} <= 0 at N = {N}; horizon insufficient")
    C_x, C_u = margin_constants(err.c_x_hat, err.c_u_hat, L_hat, B_eps.B(N), mpc_cfg.Q, N)
    lam_lo = float(np.linalg.eigvalsh(mpc_cfg.Q)[0])
    margin = C_x + C_u * kappa**2 - alpha * lam_lo
    inputs = {"c_x": err.c_x_hat, "c_u": err.c_u_hat, "L_hat": float(L_hat), "B_eps_N": B_eps.B(N), "N": N}
    return StabilityMarginReport(C_x, C_u, float(alpha), float(kappa), float(margin), "pass" if margin < 0 else "fail", inputs)


def input_state_ratio(trace, floor: float = 1e-12) -> float:
    """Largest ``|u(k)| / |x(k)|`` along a closed-loop trace (states above ``floor``)."""
    K = trace.inputs.shape[0]
    xn = np.linalg.norm(trace.states[:K], axis=1)
    un = np.linalg.norm(trace.inputs, axis=1)
    ok = xn > floor
    return float(np.max(un[ok] / xn[ok])) if np.any(ok) else 0.0


# --- output -------------------------------------------------------------------


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_report_json(path, obj) -> Path:
    path = Path(path)
    data = obj.to_dict() if hasattr(obj, "to_dict") else obj
    path.write_text(json.dumps(_clean(data), indent=1, sort_keys=True) + "\n")
    return path


SCAN_COLUMNS = ["label", "eta_hat", "c_x_hat", "c_u_hat", "L_hat", "h_X", "r_X", "excitation_score", "origin_error", "samples"]


def write_scan_csv(path, rows) -> Path:
    """One scan per row; ``rows`` are ``(label, ErrorBoundReport)`` pairs."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCAN_COLUMNS)
        for label, r in rows:
            d = r.to_dict()
            w.writerow([label] + [repr(d[c]) if isinstance(d[c], float) else d[c] for c in SCAN_COLUMNS[1:]])
    return path
