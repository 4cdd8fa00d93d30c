import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from delaylqr.data import (
    DataSet, NoiseModel, build_data, compute_psi, consistency_margin, dataset_from_dict,
    dataset_to_dict, is_consistent, least_squares_model, load_dataset, make_sigma_phi,
    min_consistent_sigma, preflight, sample_consistent_models, save_dataset,
)
from delaylqr.plant import DelayPlant, Trajectory, simulate

from conftest import A_BENCH, B_BENCH


def test_build_data_scalar_unrolled():
    # x0 = 1, x1 = 2, u_{-1} = 3 with d = 1
    traj = Trajectory(np.array([[1.0], [2.0]]), np.array([[3.0], [0.0]]), 1)
    D = build_data(traj, T=1)
    assert D.X_minus.tolist() == [[1.0]]
    assert D.X_plus.tolist() == [[2.0]]
    assert D.U_minus_d.tolist() == [[3.0]]


def test_benchmark_data_shapes(noisy_data):
    D = noisy_data
    assert D.X_plus.shape == (2, 10)
    assert D.X_minus.shape == (2, 10)
    assert D.U_minus_d.shape == (1, 10)
    assert D.W_minus.shape == (2, 10)


def test_noiseless_data_satisfy_model_exactly(clean_data):
    D = clean_data
    R = D.X_plus - A_BENCH @ D.X_minus - B_BENCH @ D.U_minus_d
    assert np.max(np.abs(R)) < 1e-12


def test_noisy_data_residual_is_recorded_noise(noisy_data):
    D = noisy_data
    R = D.X_plus - A_BENCH @ D.X_minus - B_BENCH @ D.U_minus_d
    np.testing.assert_allclose(R, D.W_minus, atol=1e-12)


def test_build_data_uses_delayed_inputs():
    plant = DelayPlant([[0.5]], [[1.0]], 2)
    u = np.arange(1.0, 8.0)[:, None]  # u_{-2}..u_{4}
    traj = simulate(plant, [0.0], u[:2], inputs=u[2:])
    D = build_data(traj, t0=1, T=3)
    # U_minus_d starts at u_{t0 - d} = u_{-1}
    assert D.U_minus_d.tolist() == [[2.0, 3.0, 4.0]]
    with pytest.raises(ValueError):
        build_data(traj, d=3)


def test_dataset_rejects_broken_shift():
    with pytest.raises(ValueError):
        DataSet(np.array([[1.0, 2.0]]), np.array([[0.0, 5.0]]), np.array([[0.0, 0.0]]), 1)
    with pytest.raises(ValueError):
        DataSet(np.zeros((1, 0)), np.zeros((1, 0)), np.zeros((1, 0)), 1)


def test_sigma_phi_blocks():
    Phi = make_sigma_phi(0.1, 2, 10)
    np.testing.assert_allclose(Phi.Phi11, 0.1 * np.eye(2), rtol=1e-14)
    np.testing.assert_array_equal(Phi.Phi22, -np.eye(10))
    np.testing.assert_array_equal(make_sigma_phi(0.0, 2, 10).Phi11, np.zeros((2, 2)))


@given(seed=st.integers(0, 2**31 - 1), sigma=st.floats(0.01, 2.0))
@settings(max_examples=40, deadline=None)
def test_sigma_bound_admits_noise_within_energy(seed, sigma):
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((2, 10))
    Phi = make_sigma_phi(sigma, 2, 10)
    top = np.linalg.eigvalsh(W @ W.T)[-1]
    # scale just inside and just outside the bound
    inside = W * np.sqrt(0.99 * sigma**2 * 10 / top)
    outside = W * np.sqrt(1.01 * sigma**2 * 10 / top)
    assert Phi.admits(inside)
    assert not Phi.admits(outside)


def test_noise_model_validation():
    with pytest.raises(ValueError):
        NoiseModel(np.eye(1), np.zeros((1, 2)), np.eye(2))
    with pytest.raises(ValueError):
        NoiseModel(np.eye(1), np.zeros((1, 3)), -np.eye(2))


def test_psi_zero_data():
    D = DataSet(np.zeros((2, 3)), np.zeros((2, 3)), np.zeros((1, 3)), 1)
    psi = compute_psi(D, make_sigma_phi(0.5, 2, 3))
    expected = np.zeros((5, 5))
    expected[:2, :2] = 0.75 * np.eye(2)
    np.testing.assert_allclose(psi.Psi, expected, atol=1e-15)


def test_psi_scalar_hand_product():
    D = DataSet([[1.0]], [[1.0]], [[1.0]], 1)
    psi = compute_psi(D, NoiseModel([[0.0]], [[0.0]], [[-1.0]]))
    np.testing.assert_allclose(psi.Psi, [[-1, 1, 1], [1, -1, -1], [1, -1, -1]], atol=1e-15)


@given(seed=st.integers(0, 2**31 - 1))
@settings(max_examples=30, deadline=None)
def test_psi_equals_triple_product(seed):
    rng = np.random.default_rng(seed)
    n, m, T = 2, 1, 6
    x = rng.standard_normal((n, T + 1))
    D = DataSet(x[:, 1:], x[:, :-1], rng.standard_normal((m, T)), 2)
    G = rng.standard_normal((T, T))
    Phi = NoiseModel(np.eye(n), 0.1 * rng.standard_normal((n, T)), -(G @ G.T + np.eye(T)))
    M = np.zeros((2 * n + m, n + T))
    M[:n, :n] = np.eye(n)
    M[:n, n:] = D.X_plus
    M[n:2 * n, n:] = -D.X_minus
    M[2 * n:, n:] = -D.U_minus_d
    ref = M @ Phi.matrix @ M.T
    psi = compute_psi(D, Phi)
    assert np.max(np.abs(psi.Psi - ref)) <= 1e-10 * np.max(np.abs(ref))


def test_psi_blocks_and_aliases(noisy_data):
    psi = compute_psi(noisy_data, make_sigma_phi(0.1, 2, 10))
    assert psi.Psi.shape == (5, 5)
    assert np.linalg.eigvalsh(psi.Psi22)[-1] < 0
    np.testing.assert_array_equal(psi.b, psi.Psi12.T)
    np.testing.assert_array_equal(psi.c, psi.Psi22)


def test_true_model_consistent_noiseless(clean_data):
    psi = compute_psi(clean_data, make_sigma_phi(0.1, 2, 10))
    ok, margin = is_consistent(A_BENCH, B_BENCH, psi)
    assert ok
    assert margin == pytest.approx(0.1, rel=1e-6)


def test_true_model_consistent_with_recorded_noise(noisy_data):
    D = noisy_data
    top = np.linalg.eigvalsh(D.W_minus @ D.W_minus.T)[-1]
    sigma = np.sqrt(top / D.T) * 1.001
    assert make_sigma_phi(sigma, 2, 10).admits(D.W_minus)
    assert is_consistent(A_BENCH, B_BENCH, compute_psi(D, make_sigma_phi(sigma, 2, 10))).ok


def test_large_perturbation_inconsistent(noisy_data):
    psi = compute_psi(noisy_data, make_sigma_phi(0.1, 2, 10))
    A = A_BENCH.copy()
    A[0, 0] += 10.0
    ok, margin = is_consistent(A, B_BENCH, psi)
    assert not ok and margin < -1.0


def test_noiseless_identifiability(clean_data):
    psi = compute_psi(clean_data, make_sigma_phi(0.0, 2, 10))
    assert is_consistent(A_BENCH, B_BENCH, psi).ok
    rng = np.random.default_rng(0)
    for _ in range(50):
        dZ = rng.standard_normal((3, 2))
        dZ *= 1e-2 / np.linalg.norm(dZ)
        A = A_BENCH + dZ[:2].T
        B = B_BENCH + dZ[2:].T
        assert not is_consistent(A, B, psi).ok


def test_sigma_monotonicity_of_consistent_set(noisy_data):
    D = noisy_data
    lo = min_consistent_sigma(D)
    psi1 = compute_psi(D, make_sigma_phi(1.1 * lo, 2, 10))
    psi2 = compute_psi(D, make_sigma_phi(1.5 * lo, 2, 10))
    for A, B in sample_consistent_models(psi1, 100, seed=2):
        assert is_consistent(A, B, psi2).ok


def test_min_consistent_sigma_is_sharp(noisy_data):
    D = noisy_data
    lo = min_consistent_sigma(D)
    A, B = least_squares_model(D)
    assert is_consistent(A, B, compute_psi(D, make_sigma_phi(lo * (1 + 1e-6), 2, 10))).ok
    assert not preflight(D, compute_psi(D, make_sigma_phi(0.99 * lo, 2, 10))).nonempty
    assert preflight(D, compute_psi(D, make_sigma_phi(1.01 * lo, 2, 10))).nonempty


def test_samples_are_consistent_and_include_least_squares(noisy_data):
    psi = compute_psi(noisy_data, make_sigma_phi(0.1, 2, 10))
    models = sample_consistent_models(psi, 200, seed=5)
    assert len(models) == 200
    A_ls, B_ls = least_squares_model(noisy_data)
    np.testing.assert_allclose(models[0][0], A_ls, atol=1e-9)
    np.testing.assert_allclose(models[0][1], B_ls, atol=1e-9)
    margins = np.array([consistency_margin(A, B, psi) for A, B in models])
    assert np.all(margins >= -psi.tol)
    # the boundary half sits on the edge of the set
    assert np.sum(np.abs(margins) <= 1e-6 * (1 + psi.norm)) >= 90


def test_noiseless_sampling_returns_true_model(clean_data):
    psi = compute_psi(clean_data, make_sigma_phi(0.0, 2, 10))
    for A, B in sample_consistent_models(psi, 20, seed=1):
        np.testing.assert_allclose(A, A_BENCH, atol=1e-6)
        np.testing.assert_allclose(B, B_BENCH, atol=1e-6)


def test_preflight_flags_rank_deficiency():
    # constant state and zero input: [X_minus; U] has rank 1 < n + m
    D = DataSet(np.ones((1, 4)), np.ones((1, 4)), np.zeros((1, 4)), 1)
    with pytest.warns(UserWarning, match="rank"):
        pf = preflight(D, compute_psi(D, make_sigma_phi(0.1, 1, 4)))
    assert pf.rank == 1 and not pf.full_row_rank


def test_preflight_passes_on_benchmark(noisy_data):
    pf = preflight(noisy_data, compute_psi(noisy_data, make_sigma_phi(0.1, 2, 10)))
    assert pf.ok and pf.full_row_rank and pf.rank == 3


def test_dataset_json_roundtrip(tmp_path, noisy_data):
    path = tmp_path / "data.json"
    save_dataset(path, noisy_data)
    back = load_dataset(path)
    np.testing.assert_array_equal(back.X_plus, noisy_data.X_plus)
    np.testing.assert_array_equal(back.U_minus_d, noisy_data.U_minus_d)
    np.testing.assert_array_equal(back.W_minus, noisy_data.W_minus)
    assert dataset_to_dict(dataset_from_dict(dataset_to_dict(back))) == dataset_to_dict(noisy_data)
