import numpy as np
import pytest

from kedmd_mpc.errors import DataError, ExcitationError
from kedmd_mpc.geometry import Box
from kedmd_mpc.kernel import padua_points
from kedmd_mpc.sampling import Cluster, excitation_diagnostics, generate_dataset, load_dataset, save_dataset, validate_dataset
from kedmd_mpc.systems import make_linear


def test_dataset_passes_validation(vdp, vdp_data):
    report = validate_dataset(vdp_data, vdp.domain, vdp.input_box)
    assert report.passed, report.format()
    assert len(vdp_data.clusters) == 67
    assert vdp_data.total_samples == 67 * 25


def test_states_within_radius_and_successors_exact(vdp, vdp_data):
    for c in vdp_data.clusters:
        assert np.all(np.linalg.norm(c.states - c.center, axis=1) <= vdp_data.r_X)
        np.testing.assert_array_equal(c.successors, vdp.step(c.states, c.inputs))


def test_seed_determinism(vdp):
    X = padua_points(4, vdp.domain)
    a = generate_dataset(vdp, X, 0.01, 5, seed=7)
    b = generate_dataset(vdp, X, 0.01, 5, seed=7)
    c = generate_dataset(vdp, X, 0.01, 5, seed=8)
    for ca, cb in zip(a.clusters, b.clusters):
        np.testing.assert_array_equal(ca.states, cb.states)
        np.testing.assert_array_equal(ca.inputs, cb.inputs)
    assert not np.array_equal(a.clusters[1].inputs, c.clusters[1].inputs)


def test_cluster_streams_independent_of_grid_size(vdp):
    # cluster i draws from its own (seed, i) stream
    X = padua_points(6, vdp.domain)
    full = generate_dataset(vdp, X, 0.02, 4, seed=3)
    head = generate_dataset(vdp, X[:5], 0.02, 4, seed=3)
    for ca, cb in zip(full.clusters[:5], head.clusters):
        np.testing.assert_array_equal(ca.states, cb.states)


def test_zero_radius_puts_states_on_centers(vdp):
    X = padua_points(3, vdp.domain)
    ds = generate_dataset(vdp, X, 0.0, 3, seed=0)
    for c in ds.clusters:
        assert np.all(c.states == c.center)


def test_origin_must_come_first(vdp):
    X = np.array([[0.5, 0.5], [0.0, 0.0]])
    with pytest.raises(DataError):
        generate_dataset(vdp, X, 0.01, 5, seed=0)


def test_centers_outside_domain(vdp):
    with pytest.raises(DataError):
        generate_dataset(vdp, np.array([[0.0, 0.0], [3.0, 0.0]]), 0.01, 5, seed=0)


def test_too_few_samples(vdp):
    with pytest.raises(DataError):
        generate_dataset(vdp, np.zeros((1, 2)), 0.01, 1, seed=0)


def test_degenerate_input_box_cannot_excite():
    sys = make_linear(np.eye(2), np.ones((2, 1)), Box((0.0,), (0.0,)), Box.cube(-1, 1, 2))
    with pytest.raises(ExcitationError):
        generate_dataset(sys, np.zeros((1, 2)), 0.1, 3, seed=0)


def test_excitation_score_definition():
    u = np.array([[-1.0], [0.0], [1.0]])
    c = Cluster(np.zeros(1), np.zeros((3, 1)), u, np.zeros((3, 1)))
    rank, pinv_norm, score = excitation_diagnostics(c)
    U = np.vstack([np.ones(3), u.T])
    assert rank == 2
    assert pinv_norm == pytest.approx(np.linalg.norm(np.linalg.pinv(U), 2))
    assert score == pytest.approx(np.sqrt(3) * pinv_norm)


def test_validation_reports_offending_clusters(vdp, vdp_data):
    import copy

    ds = copy.deepcopy(vdp_data)
    ds.clusters[3].states[0] = ds.clusters[3].center + 1.0
    report = validate_dataset(ds, vdp.domain, vdp.input_box)
    assert not report.passed
    assert report.clauses["cluster_radius"].offending == [3]


def test_round_trip(tmp_path, vdp_data):
    csv_path, json_path = save_dataset(vdp_data, tmp_path / "data")
    back = load_dataset(tmp_path / "data")
    assert back.r_X == vdp_data.r_X and back.rng_seed == vdp_data.rng_seed
    for a, b in zip(vdp_data.clusters, back.clusters):
        np.testing.assert_array_equal(a.states, b.states)
        np.testing.assert_array_equal(a.inputs, b.inputs)
        np.testing.assert_array_equal(a.successors, b.successors)
    # writing the loaded copy reproduces the file byte for byte
    save_dataset(back, tmp_path / "again")
    assert (tmp_path / "again.csv").read_bytes() == csv_path.read_bytes()
