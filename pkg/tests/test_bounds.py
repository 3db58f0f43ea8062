import numpy as np
import pytest

from kedmd_mpc import bounds
from kedmd_mpc.bounds import (
    ErrorBoundReport,
    empirical_error_scan,
    input_state_ratio,
    lipschitz_estimate,
    margin_constants,
    proportional_envelope,
    stability_margin,
    theoretical_bound_skeleton,
)
from kedmd_mpc.errors import CertificateRefused
from kedmd_mpc.geometry import Box
from kedmd_mpc.mpc import MpcConfig
from kedmd_mpc.stability import GrowthBoundSequence
from kedmd_mpc.systems import make_linear


def test_envelope_covers_and_recovers_linear_errors():
    rng = np.random.default_rng(0)
    xn, un = rng.uniform(0, 1, 500), rng.uniform(0, 1, 500)
    err = 0.3 * xn + 0.2 * un
    cx, cu = proportional_envelope(err, xn, un)
    assert np.all(err <= cx * xn + cu * un)
    assert cx + cu <= 0.5 * 1.02


def test_envelope_zero_errors():
    assert proportional_envelope(np.zeros(4), np.ones(4), np.ones(4)) == (0.0, 0.0)


def test_exact_model_scan(stable_linear):
    rep = empirical_error_scan(stable_linear, stable_linear, stable_linear.domain.lattice(5), stable_linear.input_box.lattice(3))
    assert rep.eta_hat == 0.0 and rep.c_x_hat == 0.0 and rep.c_u_hat == 0.0 and rep.origin_error == 0.0
    assert rep.samples == 75


def test_scan_on_surrogate(vdp, vdp_pi):
    rep = empirical_error_scan(vdp, vdp_pi, vdp.domain.lattice(21), vdp.input_box.lattice(5), excitation_score=3.0)
    assert rep.origin_error <= 1e-10
    assert rep.h_X > 0 and rep.r_X == vdp_pi.metadata["r_X"]
    assert rep.quadform_bracket[0] <= rep.quadform_bracket[1]
    assert rep.theorem_constant == pytest.approx(3.0 * np.sqrt(rep.phi0) * np.sqrt(rep.quadform_bracket[1]))
    # fitted envelope covers every scanned pair
    states = vdp.domain.lattice(21)
    on_center = np.min(np.linalg.norm(states[:, None] - vdp_pi.centers[None], axis=2), axis=1) == 0
    states = states[~on_center]
    inputs = vdp.input_box.lattice(5)
    err = bounds.scan_errors(vdp, vdp_pi, states, inputs)
    xs, us = np.repeat(states, 5, axis=0), np.tile(inputs, (len(states), 1))
    mask = rep.covers(err, np.linalg.norm(xs, axis=1), np.linalg.norm(us, axis=1))
    assert np.all(mask)


def test_scan_drops_centers(vdp, vdp_pi):
    from kedmd_mpc.errors import ConfigurationError

    with pytest.raises(ConfigurationError):
        empirical_error_scan(vdp, vdp_pi, vdp_pi.centers[:5], [[0.0]], quadform=False)
    rep = empirical_error_scan(vdp, vdp_pi, np.vstack([vdp_pi.centers[:5], [[0.123, 0.456]]]), [[0.0]], quadform=False)
    assert rep.test_spec["states"] == 1


def test_lipschitz_linear_exact(stable_linear):
    A = np.array([[0.9, 0.1], [0.0, 0.8]])
    assert lipschitz_estimate(stable_linear, stable_linear.domain, stable_linear.input_box, 3) == pytest.approx(np.linalg.norm(A, 2))


def test_lipschitz_fast_path_matches_jacobians(vdp, vdp_pi):
    L = lipschitz_estimate(vdp_pi, vdp.domain, vdp.input_box, 9)
    ref = max(
        np.linalg.norm(vdp_pi.linearize(x, u)[1], 2) for x in vdp.domain.lattice(9) for u in vdp.input_box.vertices()
    )
    assert L == pytest.approx(ref, rel=1e-10)


def report(h, r, eta, c=1.0):
    return ErrorBoundReport(eta, 0.0, 0.0, h_X=h, r_X=r, excitation_score=c, quadform_bracket=(1.0, 1.0), inverse_norm=2.0, phi0=1.0)


def test_skeleton_needs_three_scans():
    dec = theoretical_bound_skeleton([report(0.5, 0.01, 0.1), report(0.25, 0.01, 0.04)])
    assert dec.status == "symbolic-only" and dec.C1 is None
    assert dec.rate_comparisons[0]["predicted_error_ratio"] == pytest.approx(2**1.5)


def test_skeleton_zero_radius_has_no_r_term():
    dec = theoretical_bound_skeleton([report(h, 0.0, 2.0 * h**1.5) for h in (0.4, 0.2, 0.1)])
    assert dec.status == "fitted"
    assert dec.C1 == pytest.approx(2.0)
    assert all(s["r_term"] == 0.0 and s["fitted_r_contribution"] == 0.0 for s in dec.scans)


def test_skeleton_recovers_synthetic_constants():
    scans = [report(h, r, 0.7 * h**1.5 + 0.05 * 2.0 * r) for h, r in ((0.4, 0.1), (0.2, 0.03), (0.1, 0.2))]
    dec = theoretical_bound_skeleton(scans)
    assert dec.C1 == pytest.approx(0.7, rel=1e-8) and dec.C2 == pytest.approx(0.05, rel=1e-8)


def test_margin_constants_single_step():
    Q = np.diag([1.0, 4.0])
    C_x, C_u = margin_constants(0.1, 0.2, 1.5, 9.0, Q, 1)
    root = np.sqrt(9.0 * 4.0 / 1.0)
    assert C_x == pytest.approx(2 * 4.0 * (root * (0.1 + 0.1) + 0.01))
    assert C_u == pytest.approx(2 * 4.0 * (root * 0.1 + 0.04))


def test_margin_exact_model_passes(stable_linear):
    cfg = MpcConfig(3, np.eye(2), np.eye(1), stable_linear.input_box)
    B = GrowthBoundSequence([1.0, 1.1, 1.2])
    m = stability_margin(ErrorBoundReport(0.0, 0.0, 0.0), cfg, B, 0.9, kappa=2.0)
    assert m.passed and m.margin == pytest.approx(-m.alpha_eps)


def test_margin_refused_without_alpha(stable_linear):
    cfg = MpcConfig(2, np.eye(2), np.eye(1), stable_linear.input_box)
    with pytest.raises(CertificateRefused):
        stability_margin(ErrorBoundReport(0.0, 0.0, 0.0), cfg, GrowthBoundSequence([1.0, 3.0]), 1.0)


def test_input_state_ratio():
    class T:
        states = np.array([[1.0, 0.0], [0.0, 0.5], [0.0, 0.0]])
        inputs = np.array([[2.0], [3.0]])

    assert input_state_ratio(T()) == pytest.approx(6.0)


def test_report_json_handles_nonfinite(tmp_path):
    import json

    path = bounds.write_report_json(tmp_path / "r.json", {"a": float("nan"), "b": [float("inf"), 1.0]})
    data = json.loads(path.read_text())
    assert data["a"] is None or isinstance(data["a"], str)
