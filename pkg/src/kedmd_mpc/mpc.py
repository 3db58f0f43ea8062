"""Receding-horizon control on a prediction model with box input constraints.

The optimal control problem is solved by direct single shooting.  Gradients
come from an adjoint (backward) sweep through the model Jacobians.  Each
iteration minimises the Gauss-Newton model of the cost over the input box
(a small bounded least-squares problem) and backtracks along the feasible
segment with an Armijo test, so every iterate stays inside the box.

Any object with ``predict(x, u)`` and ``linearize(x, u) -> (x+, J_x, J_u)``
can serve as prediction model: fitted surrogates as well as systems.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import lsq_linear

from .errors import ConfigurationError, DomainError, KedmdError
from .geometry import Box

ARMIJO_SIGMA = 1e-4
BACKTRACK = 0.5
MAX_BACKTRACKS = 40
COST_NOISE = 1e-12  # relative cost change treated as evaluation noise
ALPHA_GUARD = 1e-14


def _check_spd(M, name):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1] or not np.allclose(M, M.T, rtol=0, atol=1e-14 * max(1.0, np.abs(M).max())):
        raise ConfigurationError(f"{name} must be a symmetric square matrix")
    if np.linalg.eigvalsh(M)[0] <= 0:
        raise ConfigurationError(f"{name} must be positive definite")
    return M


@dataclass(frozen=True)
class MpcConfig:
    horizon: int
    Q: np.ndarray
    R: np.ndarray
    input_box: Box
    max_iterations: int = 2000
    gradient_tolerance: float = 1e-12
    warm_start: bool = True

    def __post_init__(self):
        if int(self.horizon) < 1:
            raise ConfigurationError("horizon must be >= 1")
        object.__setattr__(self, "Q", _check_spd(self.Q, "Q"))
        object.__setattr__(self, "R", _check_spd(self.R, "R"))
        if self.R.shape[0] != self.input_box.dim:
            raise ConfigurationError("R does not match the input dimension")

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def m(self) -> int:
        return self.R.shape[0]

    def stage_cost(self, x, u) -> float:
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        return float(x @ self.Q @ x + u @ self.R @ u)

    def to_dict(self) -> dict:
        return {
            "horizon": int(self.horizon),
            "Q": self.Q.tolist(),
            "R": self.R.tolist(),
            "input_box": self.input_box.to_dict(),
            "max_iterations": self.max_iterations,
            "gradient_tolerance": self.gradient_tolerance,
            "warm_start": self.warm_start,
        }


@dataclass
class OcpSolution:
    u_star: np.ndarray  # (N, m)
    predicted_states: np.ndarray  # (N + 1, n)
    value: float
    iterations: int
    kkt_residual: float
    status: str = "converged"

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def _rollout(model, cfg: MpcConfig, x0, u, with_jacobians: bool):
    N = u.shape[0]
    xs = np.empty((N + 1, cfg.n))
    xs[0] = x0
    A = np.empty((N, cfg.n, cfg.n)) if with_jacobians else None
    B = np.empty((N, cfg.n, cfg.m)) if with_jacobians else None
    for k in range(N):
        if with_jacobians:
            xs[k + 1], A[k], B[k] = model.linearize(xs[k], u[k])
        else:
            xs[k + 1] = model.predict(xs[k], u[k])
        if not np.all(np.isfinite(xs[k + 1])):
            raise FloatingPointError(k + 1)
    cost = float(
        np.einsum("ki,ij,kj->", xs[:N], cfg.Q, xs[:N]) + np.einsum("ki,ij,kj->", u, cfg.R, u)
    )
    return xs, A, B, cost


def _adjoint_gradient(cfg: MpcConfig, xs, u, A, B):
    N = u.shape[0]
    grad = np.empty_like(u)
    p = np.zeros(cfg.n)  # sensitivity of the cost w.r.t. x_{k+1}
    for k in range(N - 1, -1, -1):
        grad[k] = 2.0 * cfg.R @ u[k] + B[k].T @ p
        p = 2.0 * cfg.Q @ xs[k] + A[k].T @ p
    return grad


def _gauss_newton_hessian(cfg: MpcConfig, A, B):
    N, n, m = B.shape
    S = np.zeros((n, N * m))  # d x_k / d u
    H = np.kron(np.eye(N), 2.0 * cfg.R)
    for k in range(N - 1):
        S = A[k] @ S
        S[:, k * m : (k + 1) * m] += B[k]
        H += 2.0 * S.T @ cfg.Q @ S
    return 0.5 * (H + H.T)


def _projected_gradient_norm(u, grad, lo, hi):
    return float(np.max(np.abs(np.clip(u - grad, lo, hi) - u))) if u.size else 0.0


def _box_qp_step(H, g, lo, hi):
    """Minimise ``0.5 d'Hd + g'd`` subject to ``lo <= d <= hi`` (bounded least squares)."""
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        return None
    b = -scipy.linalg.solve_triangular(L, g, lower=True)
    free = np.linalg.solve(H, -g)
    if np.all(free >= lo) and np.all(free <= hi):
        return free
    res = lsq_linear(L.T, b, bounds=(lo, hi), method="bvls", tol=1e-15, max_iter=200)
    return np.clip(res.x, lo, hi)


def _trial_rollout(model, cfg, x_hat, flat):
    u = flat.reshape(cfg.horizon, cfg.m)
    try:
        xs, A, B, cost = _rollout(model, cfg, x_hat, u, True)
    except (FloatingPointError, DomainError):
        return None
    return u, xs, A, B, cost


def _armijo(model, cfg, x_hat, flat, direction, grad, cost, lo, hi):
    slope = float(grad @ direction)
    t = 1.0
    for _ in range(MAX_BACKTRACKS):
        trial = _trial_rollout(model, cfg, x_hat, np.clip(flat + t * direction, lo, hi))
        if trial is not None and trial[4] < cost and trial[4] <= cost + ARMIJO_SIGMA * t * slope:
            return trial
        t *= BACKTRACK
    return None


def solve_ocp(model, cfg: MpcConfig, x_hat, warm=None) -> OcpSolution:
    """Local minimiser of the finite-horizon cost over box-constrained inputs."""
    N, m = int(cfg.horizon), cfg.m
    lo_b = np.tile(cfg.input_box.lo, N)
    hi_b = np.tile(cfg.input_box.hi, N)
    x_hat = np.asarray(x_hat, dtype=float)
    u = np.zeros((N, m)) if warm is None else np.array(warm, dtype=float).reshape(N, m)
    u = np.clip(u.ravel(), lo_b, hi_b).reshape(N, m)
    try:
        xs, A, B, cost = _rollout(model, cfg, x_hat, u, True)
    except FloatingPointError as exc:
        raise KedmdError(f"non-finite prediction at stage {exc.args[0]} for x_hat={x_hat}") from None
    status = "max_iterations"
    pg = np.inf
    it = 0
    while True:
        grad = _adjoint_gradient(cfg, xs, u, A, B).ravel()
        flat = u.ravel()
        pg = _projected_gradient_norm(flat, grad, lo_b, hi_b)
        if it > 0 and pg <= cfg.gradient_tolerance:
            status = "converged"
            break
        if it >= cfg.max_iterations:
            break
        it += 1
        H = _gauss_newton_hessian(cfg, A, B)
        step = _box_qp_step(H, grad, lo_b - flat, hi_b - flat)
        found = None
        if step is not None and -float(grad @ step) > COST_NOISE * abs(cost):
            for direction in (step, np.clip(flat - grad, lo_b, hi_b) - flat):
                if float(grad @ direction) >= 0.0:
                    continue
                found = _armijo(model, cfg, x_hat, flat, direction, grad, cost, lo_b, hi_b)
                if found is not None:
                    break
        if found is None and step is not None:
            # decrease not resolvable in the cost: judge the full step by the projected gradient
            trial = _trial_rollout(model, cfg, x_hat, np.clip(flat + step, lo_b, hi_b))
            if trial is not None and trial[4] <= cost + COST_NOISE * abs(cost):
                g_new = _adjoint_gradient(cfg, trial[1], trial[0], trial[2], trial[3]).ravel()
                if _projected_gradient_norm(trial[0].ravel(), g_new, lo_b, hi_b) < pg:
                    found = trial
        if found is None:
            status = "stalled"
            break
        u, xs, A, B, cost = found
    if pg <= cfg.gradient_tolerance:
        status = "converged"
    return OcpSolution(u, xs, cost, it, pg, status)


def stage_costs(cfg: MpcConfig, xs, us) -> np.ndarray:
    xs = np.atleast_2d(xs)
    us = np.atleast_2d(us)
    return np.einsum("ki,ij,kj->k", xs, cfg.Q, xs) + np.einsum("ki,ij,kj->k", us, cfg.R, us)


def shift_warm_start(u_star) -> np.ndarray:
    """Drop the applied input and repeat the last one."""
    u_star = np.asarray(u_star)
    return np.vstack([u_star[1:], u_star[-1:]])


def value_function(model, cfg: MpcConfig, x_hat, warm=None, starts: int = 3, seed: int = 0) -> float:
    """Optimal value ``V_N(x_hat)`` as the best of several solver starts.

    Starts: zero inputs, ``warm`` (if given) and ``starts - 2`` random
    sequences from a generator seeded by ``seed``.
    """
    return best_solution(model, cfg, x_hat, warm, starts, seed).value


def best_solution(model, cfg: MpcConfig, x_hat, warm=None, starts: int = 3, seed: int = 0) -> OcpSolution:
    N, m = int(cfg.horizon), cfg.m
    inits = [np.zeros((N, m))]
    if warm is not None:
        inits.append(np.asarray(warm, dtype=float).reshape(N, m))
    rng = np.random.default_rng(seed)
    lo, hi = cfg.input_box.lo, cfg.input_box.hi
    while len(inits) < max(starts, 1 + (warm is not None)):
        inits.append(lo + rng.random((N, m)) * (hi - lo))
    sols = [solve_ocp(model, cfg, x_hat, w) for w in inits]
    # smallest value, then lexicographically smallest first input
    return min(sols, key=lambda s: (s.value, tuple(s.u_star[0])))


@dataclass
class ClosedLoopTrace:
    states: np.ndarray  # (K + 1, n) true states
    inputs: np.ndarray  # (K, m) applied inputs
    stage_costs: np.ndarray  # (K,)
    values: np.ndarray  # (K + 1,) V_N at each measured state
    lyapunov_alphas: np.ndarray  # (K,)
    iterations: np.ndarray
    kkt_residuals: np.ndarray
    statuses: list
    solve_times: np.ndarray
    left_domain: np.ndarray  # predicted trajectory left the sampling domain
    failure: str | None = None

    @property
    def steps(self) -> int:
        return self.inputs.shape[0]

    def errors(self) -> np.ndarray:
        return np.linalg.norm(self.states, axis=1)


def run_closed_loop(truth, model, cfg: MpcConfig, x0, steps: int, domain: Box | None = None) -> ClosedLoopTrace:
    """Apply the first optimal input to ``truth`` for ``steps`` sampling instants."""
    x = np.asarray(x0, dtype=float)
    domain = getattr(truth, "domain", None) if domain is None else domain
    states, inputs, values, iters, kkts, statuses, times, left = [x.copy()], [], [], [], [], [], [], []
    warm = None
    failure = None
    for k in range(steps + 1):
        t0 = time.perf_counter()
        try:
            sol = solve_ocp(model, cfg, x, warm if cfg.warm_start else None)
        except KedmdError as exc:
            failure = f"solver abort at k={k}: {exc}"
            break
        times.append(time.perf_counter() - t0)
        values.append(sol.value)
        iters.append(sol.iterations)
        kkts.append(sol.kkt_residual)
        statuses.append(sol.status)
        left.append(bool(domain is not None and not np.all(domain.contains(sol.predicted_states))))
        if k == steps:
            break
        u = sol.u_star[0]
        try:
            x = truth.step(x, u)
        except DomainError as exc:
            failure = f"truth domain violation at k={k}: {exc}"
            inputs.append(u)
            break
        inputs.append(u.copy())
        states.append(x.copy())
        warm = shift_warm_start(sol.u_star)
    states = np.array(states)
    inputs = np.array(inputs).reshape(-1, cfg.m)
    K = min(inputs.shape[0], states.shape[0] - 1)
    inputs = inputs[:K]
    costs = stage_costs(cfg, states[:K], inputs) if K else np.zeros(0)
    values = np.array(values)
    trace = ClosedLoopTrace(
        states=states,
        inputs=inputs,
        stage_costs=costs,
        values=values,
        lyapunov_alphas=np.zeros(0),
        iterations=np.array(iters),
        kkt_residuals=np.array(kkts),
        statuses=statuses,
        solve_times=np.array(times),
        left_domain=np.array(left),
        failure=failure,
    )
    trace.lyapunov_alphas = lyapunov_diagnostics(trace, cfg, model)
    return trace


def lyapunov_diagnostics(trace: ClosedLoopTrace, cfg: MpcConfig = None, model=None) -> np.ndarray:
    """Observed decrease ratios ``(V(k) - V(k+1)) / l(x(k), u(k))``.

    Steps with a stage cost below ``1e-14`` or without a successor value are NaN.
    """
    K = min(trace.stage_costs.size, trace.values.size - 1)
    out = np.full(trace.stage_costs.size, np.nan)
    for k in range(K):
        ell = trace.stage_costs[k]
        if ell >= ALPHA_GUARD:
            out[k] = (trace.values[k] - trace.values[k + 1]) / ell
    return out


def alpha_summary(alphas) -> dict:
    a = np.asarray(alphas, dtype=float)
    a = a[np.isfinite(a)]
    if not a.size:
        return {"count": 0, "min": float("nan"), "mean": float("nan")}
    return {"count": int(a.size), "min": float(a.min()), "mean": float(a.mean())}
