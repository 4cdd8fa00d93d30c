import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from delaylqr.plant import (
    CostWeights, DelayPlant, SimulationError, UnstableClosedLoopError, closed_loop, cost_matrix,
    evaluate_cost, lift_augmented, read_trajectory_csv, simulate, split_gain, stack_state,
    unstack_state, write_trajectory_csv,
)

from conftest import X0_BENCH, random_stable


def test_lift_scalar_delay_one():
    M = lift_augmented(DelayPlant([[0.5]], [[2.0]], 1))
    np.testing.assert_array_equal(M.calA, [[0.5, 2.0], [0.0, 0.0]])
    np.testing.assert_array_equal(M.calB, [[0.0], [1.0]])


def test_lift_benchmark_structure(plant):
    M = lift_augmented(plant)
    expected = np.array([
        [1.3, 0.5, 1, 0, 0, 0],
        [0.0, 1.2, 1, 0, 0, 0],
        [0, 0, 0, 1, 0, 0],
        [0, 0, 0, 0, 1, 0],
        [0, 0, 0, 0, 0, 1],
        [0, 0, 0, 0, 0, 0],
    ], dtype=float)
    np.testing.assert_array_equal(M.calA, expected)
    np.testing.assert_array_equal(M.calB, np.eye(6)[:, [5]])
    assert M.dim == 6


def test_lift_multi_input():
    A = np.diag([0.1, 0.2, 0.3])
    B = np.arange(6.0).reshape(3, 2)
    M = lift_augmented(DelayPlant(A, B, 3))
    assert M.calA.shape == (9, 9)
    np.testing.assert_array_equal(M.calA[:3, 3:5], B)
    np.testing.assert_array_equal(M.calA[3:5, 5:7], np.eye(2))
    np.testing.assert_array_equal(M.calA[5:7, 7:9], np.eye(2))
    np.testing.assert_array_equal(M.calA[7:], 0.0)


@pytest.mark.parametrize("d", [0, -1, 1.5])
def test_rejects_bad_delay(d):
    with pytest.raises(ValueError):
        DelayPlant([[1.0]], [[1.0]], d)


def test_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        DelayPlant(np.eye(2), np.ones((3, 1)), 1)


def test_simulation_matches_hand_recursion(plant):
    # x0 = e1, unit inputs with zero history: input reaches the state after d steps
    traj = simulate(plant, [1.0, 0.0], np.zeros((4, 1)), inputs=np.ones((6, 1)))
    A, B = plant.A, plant.B
    x = np.array([1.0, 0.0])
    ref = [x]
    for t in range(6):
        u_delayed = 0.0 if t < 4 else 1.0
        x = A @ x + B[:, 0] * u_delayed
        ref.append(x)
    np.testing.assert_allclose(traj.x, np.array(ref), rtol=0, atol=1e-14)
    np.testing.assert_allclose(traj.x[1], [1.3, 0.0])
    np.testing.assert_allclose(traj.x[4], [2.8561, 0.0])
    np.testing.assert_allclose(traj.x[5], [4.71293, 1.0])


@given(seed=st.integers(0, 2**31 - 1), d=st.integers(1, 4))
@settings(max_examples=25, deadline=None)
def test_augmented_and_delayed_simulations_agree(seed, d):
    rng = np.random.default_rng(seed)
    n, m = 2, 2
    plant = DelayPlant(0.5 * rng.standard_normal((n, n)), rng.standard_normal((n, m)), d)
    M = lift_augmented(plant)
    x0, uh = rng.standard_normal(n), rng.standard_normal((d, m))
    u = rng.standard_normal((8, m))
    traj = simulate(plant, x0, uh, inputs=u)
    X = stack_state(x0, uh)
    for t in range(8):
        np.testing.assert_allclose(X, traj.augmented(t), atol=1e-12)
        X = M.calA @ X + M.calB @ u[t]
    x_back, uh_back = unstack_state(X, n, m, d)
    np.testing.assert_allclose(x_back, traj.x[8], atol=1e-12)


def test_feedback_simulation_uses_augmented_state(plant):
    M = lift_augmented(plant)
    K = np.array([[-3.7490, -6.1393, -6.7617, -4.5652, -2.9629, -1.8011]])
    traj = simulate(plant, X0_BENCH[:2], X0_BENCH[2:].reshape(4, 1), gain=K, horizon=5)
    X = X0_BENCH.copy()
    for t in range(5):
        X = closed_loop(M, K) @ X
    np.testing.assert_allclose(traj.augmented(5), X, atol=1e-12)


def test_simulation_requires_one_input_source(plant):
    with pytest.raises(ValueError):
        simulate(plant, [0, 0], inputs=np.ones((3, 1)), gain=np.zeros((1, 6)))
    with pytest.raises(ValueError):
        simulate(plant, [0, 0], horizon=3)


def test_simulation_overflow_is_reported():
    plant = DelayPlant([[1e200]], [[1.0]], 1)
    with pytest.raises(SimulationError) as err:
        simulate(plant, [1e200], inputs=np.zeros((5, 1)))
    assert err.value.step == 1


def test_split_gain_blocks():
    K = np.arange(6.0).reshape(1, 6)
    K0, Ks = split_gain(K, 2, 1, 4)
    np.testing.assert_array_equal(K0, [[0.0, 1.0]])
    assert [k.item() for k in Ks] == [2.0, 3.0, 4.0, 5.0]


def test_weights_validation():
    with pytest.raises(ValueError):
        CostWeights(-np.eye(2), (np.eye(1),), np.eye(1))
    with pytest.raises(ValueError):
        CostWeights(np.array([[1.0, 2.0], [0.0, 1.0]]), (np.eye(1),), np.eye(1))
    W = CostWeights.uniform(2, 1, 4, 1e-4, 1e-4, 3e-4)
    np.testing.assert_array_equal(W.Q, 1e-4 * np.eye(6))


def test_published_gain_cost(plant, weights):
    # Gain reported for sigma = 0.1 with its tabulated cost for the reference initial state.
    K = np.array([[-3.7490, -6.1393, -6.7617, -4.5652, -2.9629, -1.8011]])
    J = evaluate_cost(lift_augmented(plant), K, weights, X0_BENCH)
    assert J == pytest.approx(7.847e-3, rel=5e-4)


def test_prior_work_gain_closed_loop_eigenvalues(plant):
    K = np.array([[-6.0270, -9.5519, -10.6518, -7.0103, -4.3536, -2.4217]])
    eig = np.linalg.eigvals(closed_loop(lift_augmented(plant), K))
    ref = np.array([-0.1916, -0.4589 + 0.3387j, -0.4589 - 0.3387j, 0.8277,
                    0.1800 + 0.5877j, 0.1800 - 0.5877j])
    for z in ref:
        # printed gains are rounded to 4 decimals, which moves the real pole by ~1e-3
        assert np.min(np.abs(eig - z)) < 2e-3


def test_cost_matches_riccati_for_lqr_gain(plant, weights):
    M = lift_augmented(plant)
    X = scipy.linalg.solve_discrete_are(M.calA, M.calB, weights.Q, weights.R)
    K = -np.linalg.solve(weights.R + M.calB.T @ X @ M.calB, M.calB.T @ X @ M.calA)
    np.testing.assert_allclose(cost_matrix(M, K, weights), X, rtol=1e-8)


def test_lyapunov_and_truncated_costs_agree():
    rng = np.random.default_rng(7)
    for _ in range(10):
        Acl, K = random_stable(rng, 4, 1, radius=rng.uniform(0.3, 0.97))
        plant = DelayPlant(Acl[:2, :2], Acl[:2, 2:3], 2)
        M = lift_augmented(plant)
        K = rng.standard_normal((1, 4))
        if max(abs(np.linalg.eigvals(closed_loop(M, K)))) >= 0.99:
            continue
        W = CostWeights.uniform(2, 1, 2, 0.3, 0.2, 0.5)
        X0 = rng.standard_normal(4)
        a = evaluate_cost(M, K, W, X0)
        b = evaluate_cost(M, K, W, X0, method="truncated")
        assert a == pytest.approx(b, rel=1e-9)


def test_unstable_cost_raises(plant, weights):
    with pytest.raises(UnstableClosedLoopError):
        evaluate_cost(lift_augmented(plant), np.zeros((1, 6)), weights, X0_BENCH)


def test_zero_initial_state_has_zero_cost(plant, weights):
    K = np.array([[-3.7490, -6.1393, -6.7617, -4.5652, -2.9629, -1.8011]])
    assert evaluate_cost(lift_augmented(plant), K, weights, np.zeros(6)) == 0.0


def test_trajectory_csv_roundtrip(tmp_path, plant):
    rng = np.random.default_rng(3)
    traj = simulate(plant, rng.standard_normal(2), rng.standard_normal((4, 1)),
                    inputs=rng.standard_normal((7, 1)))
    path = tmp_path / "traj.csv"
    write_trajectory_csv(path, traj)
    header = path.read_text().splitlines()[0]
    assert header == "t,x1,x2,u"
    back = read_trajectory_csv(path)
    np.testing.assert_array_equal(back.x, traj.x)
    np.testing.assert_array_equal(back.u, traj.u)
    assert back.d == 4
