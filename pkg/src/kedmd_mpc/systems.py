"""Discrete-time control-affine benchmark systems.

Every system has the form ``x+ = g0(x) + G(x) u``.  The maps accept single
points as well as stacks of points (leading batch axes), which keeps data
generation vectorised.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, DomainError
from .geometry import Box

DEFAULT_EQUILIBRIUM_TOL = 1e-6
INPUT_BOX_TOL = 1e-12


@dataclass(frozen=True)
class EquilibriumSpec:
    x_bar: tuple
    u_bar: tuple

    def __post_init__(self):
        object.__setattr__(self, "x_bar", tuple(float(v) for v in np.atleast_1d(self.x_bar)))
        object.__setattr__(self, "u_bar", tuple(float(v) for v in np.atleast_1d(self.u_bar)))

    def residual(self, sys: "ControlAffineSystem") -> float:
        x, u = np.array(self.x_bar), np.array(self.u_bar)
        return float(np.linalg.norm(sys.step(x, u, check=False) - x))


@dataclass(frozen=True)
class ControlAffineSystem:
    """Immutable description of ``x+ = g0(x) + G(x) u``.

    ``drift`` maps ``(..., n)`` to ``(..., n)`` and ``input_matrix`` maps
    ``(..., n)`` to ``(..., n, m)``.  ``state_jacobian(x, u)`` returns the
    ``n x n`` Jacobian of the full map in ``x`` and is optional; it is only
    needed when the system itself is used as a prediction model.
    ``validity`` raises :class:`DomainError` for states where the map is not
    defined.
    """

    name: str
    state_dim: int
    input_dim: int
    drift: Callable
    input_matrix: Callable
    input_box: Box
    domain: Box
    dt: float = 1.0
    state_jacobian: Optional[Callable] = None
    validity: Optional[Callable] = None
    equilibrium: Optional[EquilibriumSpec] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.input_box.dim != self.input_dim or self.domain.dim != self.state_dim:
            raise ConfigurationError("box dimensions do not match the system dimensions")

    @property
    def n(self) -> int:
        return self.state_dim

    @property
    def m(self) -> int:
        return self.input_dim

    def g(self, x, j: int) -> np.ndarray:
        """``g_0`` for ``j == 0``, else the ``j``-th column of ``G``."""
        if j == 0:
            return self.drift(np.asarray(x, dtype=float))
        return self.input_matrix(np.asarray(x, dtype=float))[..., :, j - 1]

    def step(self, x, u, check: bool = True) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        if check:
            if not np.all(self.input_box.contains(u, tol=INPUT_BOX_TOL)):
                raise DomainError(f"{self.name}: input {u} outside the input box")
        if self.validity is not None:
            self.validity(x)
        out = self.drift(x) + np.einsum("...ij,...j->...i", self.input_matrix(x), u)
        if not np.all(np.isfinite(out)):
            raise DomainError(f"{self.name}: non-finite successor for state {x}")
        return out

    # prediction-model protocol used by the MPC layer
    def predict(self, x, u) -> np.ndarray:
        return self.step(x, u, check=False)

    def linearize(self, x, u):
        if self.state_jacobian is None:
            raise NotImplementedError(f"{self.name} provides no analytic Jacobian")
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        return self.predict(x, u), self.state_jacobian(x, u), self.input_matrix(x)


def step_truth(sys: ControlAffineSystem, x, u) -> np.ndarray:
    """Ground-truth successor ``g0(x) + G(x) u``."""
    return sys.step(x, u)


def make_van_der_pol(dt: float = 0.05, nu: float = 0.1) -> ControlAffineSystem:
    """Explicit-Euler Van der Pol oscillator with ``U = [-2, 2]``, ``Omega = [-2, 2]^2``.

    The drift uses the damping term ``nu (1 - x1)^2 x2``.
    """

    def drift(x):
        x1, x2 = x[..., 0], x[..., 1]
        return np.stack([x1 + dt * x2, x2 + dt * (nu * (1.0 - x1) ** 2 * x2 - x1)], axis=-1)

    b = np.array([[0.0], [dt]])

    def input_matrix(x):
        return np.broadcast_to(b, x.shape[:-1] + (2, 1)).copy()

    def state_jacobian(x, u):
        x1, x2 = x
        return np.array(
            [
                [1.0, dt],
                [dt * (-2.0 * nu * (1.0 - x1) * x2 - 1.0), 1.0 + dt * nu * (1.0 - x1) ** 2],
            ]
        )

    return ControlAffineSystem(
        name="vdp",
        state_dim=2,
        input_dim=1,
        drift=drift,
        input_matrix=input_matrix,
        input_box=Box((-2.0,), (2.0,)),
        domain=Box.cube(-2.0, 2.0, 2),
        dt=dt,
        state_jacobian=state_jacobian,
        equilibrium=EquilibriumSpec((0.0, 0.0), (0.0,)),
        params={"dt": dt, "nu": nu},
    )


@dataclass(frozen=True)
class TankParams:
    """Physical constants of the four-tank process (SI units, flows in m^3/h)."""

    a: tuple
    S: float
    gamma_a: float
    gamma_b: float
    g: float
    dt: float
    x_bar: tuple
    u_bar: tuple
    state_box: Box
    input_box: Box
    flow_scale: float = 3600.0
    quote_tolerance: float = 1e-3

    def __post_init__(self):
        values = list(self.a) + [self.S, self.g, self.dt, self.flow_scale]
        if len(self.a) != 4 or any(not v > 0 for v in values):
            raise ConfigurationError("tank parameters must be positive (four outlet areas)")
        if not (0.0 < self.gamma_a < 1.0 and 0.0 < self.gamma_b < 1.0):
            raise ConfigurationError("valve splits must lie in (0, 1)")

    @classmethod
    def from_json(cls, path=None) -> "TankParams":
        if path is None:
            text = resources.files("kedmd_mpc").joinpath("data/four_tank.json").read_text()
        else:
            text = Path(path).read_text()
        cfg = json.loads(text)
        return cls(
            a=tuple(cfg["a"]),
            S=cfg["S"],
            gamma_a=cfg["gamma_a"],
            gamma_b=cfg["gamma_b"],
            g=cfg["g"],
            dt=cfg["dt"],
            x_bar=tuple(cfg["x_bar"]),
            u_bar=tuple(cfg["u_bar"]),
            state_box=Box.from_dict(cfg["state_box"]),
            input_box=Box.from_dict(cfg["input_box"]),
            flow_scale=cfg.get("flow_scale", 3600.0),
            quote_tolerance=cfg.get("quote_tolerance", 1e-3),
        )

    def steady_state(self, u_bar=None) -> np.ndarray:
        """Levels at which the Euler map is stationary for constant flows ``u_bar``."""
        qa, qb = np.asarray(self.u_bar if u_bar is None else u_bar, dtype=float) / self.flow_scale
        a1, a2, a3, a4 = self.a
        c = np.sqrt(2.0 * self.g)
        out3 = (1.0 - self.gamma_b) * qb
        out4 = (1.0 - self.gamma_a) * qa
        out1 = out3 + self.gamma_a * qa
        out2 = out4 + self.gamma_b * qb
        return (np.array([out1 / a1, out2 / a2, out3 / a3, out4 / a4]) / c) ** 2


def make_four_tank(params: TankParams | None = None) -> ControlAffineSystem:
    """Forward-Euler four-tank process in physical coordinates.

    Tanks 3 and 4 drain into tanks 1 and 2.  The returned system carries
    the exact steady state for ``params.u_bar`` as its equilibrium; the
    quoted ``params.x_bar`` must agree with it to ``quote_tolerance``.
    """
    p = TankParams.from_json() if params is None else params
    a = np.asarray(p.a)
    c = np.sqrt(2.0 * p.g) / p.S
    dt = p.dt
    k = p.flow_scale
    b = dt / (p.S * k) * np.array(
        [
            [p.gamma_a, 0.0],
            [0.0, p.gamma_b],
            [0.0, 1.0 - p.gamma_b],
            [1.0 - p.gamma_a, 0.0],
        ]
    )

    def validity(x):
        x = np.asarray(x)
        if np.any(x < 0.0) or not np.all(np.isfinite(x)):
            raise DomainError(f"four-tank: negative or non-finite tank level {x}")

    def drift(x):
        validity(x)
        s = np.sqrt(x) * a
        rate = np.stack(
            [
                -s[..., 0] + s[..., 2],
                -s[..., 1] + s[..., 3],
                -s[..., 2],
                -s[..., 3],
            ],
            axis=-1,
        )
        return x + dt * c * rate

    def input_matrix(x):
        return np.broadcast_to(b, np.shape(x)[:-1] + (4, 2)).copy()

    def state_jacobian(x, u):
        validity(x)
        if np.any(x == 0.0):
            raise DomainError("four-tank: Jacobian undefined at an empty tank")
        d = dt * c * a / (2.0 * np.sqrt(x))
        jac = np.eye(4)
        jac[0, 0] -= d[0]
        jac[0, 2] += d[2]
        jac[1, 1] -= d[1]
        jac[1, 3] += d[3]
        jac[2, 2] -= d[2]
        jac[3, 3] -= d[3]
        return jac

    x_exact = p.steady_state()
    deviation = float(np.max(np.abs(x_exact - np.asarray(p.x_bar))))
    if deviation > p.quote_tolerance:
        raise ConfigurationError(
            f"quoted equilibrium {p.x_bar} deviates by {deviation:.2e} m from the steady "
            f"state of the configured parameters (tolerance {p.quote_tolerance})"
        )
    sys = ControlAffineSystem(
        name="tanks",
        state_dim=4,
        input_dim=2,
        drift=drift,
        input_matrix=input_matrix,
        input_box=p.input_box,
        domain=p.state_box,
        dt=dt,
        state_jacobian=state_jacobian,
        validity=validity,
        equilibrium=EquilibriumSpec(x_exact, p.u_bar),
        params={"quoted_x_bar": list(p.x_bar), "quote_deviation": deviation},
    )
    residual = sys.equilibrium.residual(sys)
    if residual > DEFAULT_EQUILIBRIUM_TOL:
        raise ConfigurationError(f"equilibrium residual {residual:.2e} above tolerance")
    return sys


def shift_to_origin(
    sys: ControlAffineSystem, eq: EquilibriumSpec | None = None, tol: float = DEFAULT_EQUILIBRIUM_TOL
) -> ControlAffineSystem:
    """Express ``sys`` in coordinates ``z = x - x_bar``, ``v = u - u_bar``.

    The (at most ``tol``) equilibrium residual is subtracted from the shifted
    drift so that the origin is an exact fixed point.
    """
    eq = sys.equilibrium if eq is None else eq
    if eq is None:
        raise ConfigurationError(f"{sys.name}: no equilibrium to shift to")
    residual = eq.residual(sys)
    if residual > tol:
        raise ConfigurationError(
            f"{sys.name}: equilibrium residual {residual:.3e} exceeds {tol:.1e}; refusing to shift"
        )
    x_bar = np.array(eq.x_bar)
    u_bar = np.array(eq.u_bar)
    if not np.any(x_bar) and not np.any(u_bar):
        return sys
    offset = sys.step(x_bar, u_bar, check=False) - x_bar

    def drift(z):
        x = z + x_bar
        return sys.drift(x) + np.einsum("...ij,j->...i", sys.input_matrix(x), u_bar) - x_bar - offset

    def input_matrix(z):
        return sys.input_matrix(z + x_bar)

    state_jacobian = None
    if sys.state_jacobian is not None:
        def state_jacobian(z, v):
            return sys.state_jacobian(z + x_bar, v + u_bar)

    validity = None
    if sys.validity is not None:
        def validity(z):
            sys.validity(np.asarray(z) + x_bar)

    return replace(
        sys,
        name=sys.name,
        drift=drift,
        input_matrix=input_matrix,
        input_box=sys.input_box.shift(u_bar),
        domain=sys.domain.shift(x_bar),
        state_jacobian=state_jacobian,
        validity=validity,
        equilibrium=EquilibriumSpec(np.zeros(sys.n), np.zeros(sys.m)),
        params={**sys.params, "shift_x": x_bar.tolist(), "shift_u": u_bar.tolist()},
    )


def make_linear(A, B, input_box: Box | None = None, domain: Box | None = None, name="linear"):
    """``x+ = A x + B u`` as a control-affine system (used for nominal checks)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    n, m = B.shape
    input_box = Box.cube(-1e6, 1e6, m) if input_box is None else input_box
    domain = Box.cube(-1e6, 1e6, n) if domain is None else domain
    return ControlAffineSystem(
        name=name,
        state_dim=n,
        input_dim=m,
        drift=lambda x: x @ A.T,
        input_matrix=lambda x: np.broadcast_to(B, np.shape(x)[:-1] + (n, m)).copy(),
        input_box=input_box,
        domain=domain,
        state_jacobian=lambda x, u: A.copy(),
        equilibrium=EquilibriumSpec(np.zeros(n), np.zeros(m)),
    )


def make_system(name: str) -> ControlAffineSystem:
    """Benchmark by name, already shifted to the origin."""
    if name == "vdp":
        return make_van_der_pol()
    if name == "tanks":
        return shift_to_origin(make_four_tank())
    raise ConfigurationError(f"unknown system {name!r} (expected 'vdp' or 'tanks')")
