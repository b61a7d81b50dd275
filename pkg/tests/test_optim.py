import numpy as np
import pytest

from basis.optim import MomentumState, sgd_momentum_step


def test_plain_sgd():
    p = {"w": np.array([1.0, 2.0])}
    sgd_momentum_step(p, {"w": np.array([0.5, -1.0])}, MomentumState(1.0, 0.0))
    np.testing.assert_array_equal(p["w"], [0.5, 3.0])


def test_two_step_hand_recursion():
    p = {"w": np.array([1.0])}
    state = MomentumState(0.01, 0.9)
    for _ in range(2):
        sgd_momentum_step(p, {"w": np.array([1.0])}, state)
    # v1 = 1, v2 = 0.9 + 1 = 1.9
    assert p["w"][0] == pytest.approx(1 - 0.01 * 1 - 0.01 * 1.9, abs=1e-15)
    assert p["w"][0] == pytest.approx(0.971, abs=1e-12)


def test_velocity_decays_geometrically():
    p = {"w": np.zeros(3)}
    state = MomentumState(0.1, 0.8)
    sgd_momentum_step(p, {"w": np.array([1.0, -2.0, 3.0])}, state)
    v0 = state.velocity["w"].copy()
    for _ in range(5):
        sgd_momentum_step(p, {"w": np.zeros(3)}, state)
    np.testing.assert_allclose(state.velocity["w"], 0.8**5 * v0, rtol=1e-14)


def test_update_is_linear_in_gradient(rng):
    g = rng.normal(size=(3, 2))
    deltas = []
    for scale in (1.0, 2.0):
        p = {"w": np.ones((3, 2))}
        sgd_momentum_step(p, {"w": scale * g}, MomentumState(0.05, 0.9))
        deltas.append(p["w"] - 1.0)
    np.testing.assert_allclose(deltas[1], 2 * deltas[0], rtol=1e-12)


def test_updates_in_place():
    w = np.ones(2)
    params = {"w": w}
    sgd_momentum_step(params, {"w": np.ones(2)}, MomentumState(0.5, 0.0))
    assert params["w"] is w and w[0] == 0.5


def test_shape_mismatch():
    with pytest.raises(ValueError, match="w"):
        sgd_momentum_step({"w": np.ones(2)}, {"w": np.ones(3)}, MomentumState())


def test_non_finite_gradient_names_tensor():
    p = {"a": np.ones(2), "b": np.ones(2)}
    with pytest.raises(FloatingPointError, match="b"):
        sgd_momentum_step(p, {"a": np.ones(2), "b": np.array([1.0, np.nan])}, MomentumState())
    np.testing.assert_array_equal(p["a"], 1.0)  # nothing written


def test_state_validation():
    with pytest.raises(ValueError):
        MomentumState(0.0, 0.9)
    with pytest.raises(ValueError):
        MomentumState(0.1, 1.0)
