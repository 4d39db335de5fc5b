import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedsim import ClientUpdate, FedAvgMState, fedavg_step, fedavgm_step, pseudo_gradient
from fedsim.errors import DimensionError, ProtocolError

from conftest import make_updates


def U(cid, w, n):
    return ClientUpdate(cid, w, n)


def test_pseudo_gradient_forced_arithmetic():
    agg = pseudo_gradient([0, 0], [U(0, [2, 0], 1), U(1, [0, 4], 3)])
    np.testing.assert_allclose(agg.delta, [-0.5, -3.0], atol=1e-15)
    assert agg.total_samples == 4


def test_pseudo_gradient_no_movement():
    agg = pseudo_gradient([1.5, -2.0], [U(3, [1.5, -2.0], 7)])
    np.testing.assert_array_equal(agg.delta, [0.0, 0.0])


def test_pseudo_gradient_single():
    agg = pseudo_gradient([1], [U(0, [0], 5)])
    np.testing.assert_array_equal(agg.delta, [1.0])
    assert agg.total_samples == 5


def test_fedavg_weighted_mean():
    np.testing.assert_allclose(fedavg_step([0, 0], [U(0, [2, 0], 1), U(1, [0, 4], 3)]), [0.5, 3.0])


def test_fedavg_single_client_identity(rng):
    w = rng.normal(size=10)
    np.testing.assert_array_equal(fedavg_step(rng.normal(size=10), [U(4, w, 13)]), w)


def test_fedavg_fixed_point(rng):
    g = rng.normal(size=6)
    out = fedavg_step(g, [U(i, g, n) for i, n in enumerate([3, 5, 11])])
    assert np.max(np.abs(out - g)) <= 1e-12


def test_fedavg_equals_global_minus_delta(rng):
    g = rng.normal(size=20)
    ups = make_updates(rng, 6, 20)
    np.testing.assert_allclose(fedavg_step(g, ups), g - pseudo_gradient(g, ups).delta, atol=1e-12, rtol=0)


@pytest.mark.parametrize("fn", [pseudo_gradient, fedavg_step])
def test_empty_updates(fn):
    with pytest.raises(ProtocolError):
        fn([0.0], [])


@pytest.mark.parametrize("fn", [pseudo_gradient, fedavg_step])
def test_duplicate_client(fn):
    with pytest.raises(ProtocolError):
        fn([0.0], [U(2, [1.0], 1), U(2, [2.0], 1)])


def test_update_length_mismatch():
    with pytest.raises(DimensionError):
        fedavg_step([0.0, 0.0], [U(0, [1.0], 1)])


def test_fedavgm_momentum_disabled_equals_fedavg(rng):
    g = rng.normal(size=9)
    ups = make_updates(rng, 4, 9)
    state = FedAvgMState(rng.normal(size=9), beta=0.0, server_lr=1.0)
    w, new_state = fedavgm_step(g, ups, state)
    np.testing.assert_allclose(w, fedavg_step(g, ups), atol=1e-12, rtol=0)
    np.testing.assert_allclose(new_state.velocity, pseudo_gradient(g, ups).delta, atol=1e-15)


def test_fedavgm_one_step():
    # clients at w - [1, 1] make delta = [1, 1]
    g = np.array([3.0, -2.0])
    w, st1 = fedavgm_step(g, [U(0, g - 1, 4)], FedAvgMState.zeros(2, beta=0.9))
    np.testing.assert_allclose(st1.velocity, [0.1, 0.1], atol=1e-15)
    np.testing.assert_allclose(w, g - 0.1, atol=1e-15)


def test_fedavgm_two_rounds_unrolled():
    g = np.zeros(2)
    state = FedAvgMState.zeros(2, beta=0.9)
    for _ in range(2):
        g, state = fedavgm_step(g, [U(0, g - 1, 1)], state)
    np.testing.assert_allclose(state.velocity, [0.19, 0.19], atol=1e-15)


def test_fedavgm_does_not_mutate_state():
    state = FedAvgMState.zeros(2)
    fedavgm_step([0.0, 0.0], [U(0, [1.0, 1.0], 1)], state)
    np.testing.assert_array_equal(state.velocity, [0.0, 0.0])


def test_fedavgm_velocity_length_checked():
    with pytest.raises(DimensionError):
        fedavgm_step([0.0, 0.0], [U(0, [1.0, 1.0], 1)], FedAvgMState.zeros(3))


@pytest.mark.parametrize("beta", [-0.1, 1.0])
def test_beta_range(beta):
    with pytest.raises(ValueError):
        FedAvgMState.zeros(2, beta=beta)


def test_velocity_geometric_convergence():
    delta = np.array([1.0, -2.0, 0.5])
    beta = 0.8
    g = np.zeros(3)
    state = FedAvgMState.zeros(3, beta=beta)
    for t in range(1, 11):
        g, state = fedavgm_step(g, [U(0, g - delta, 2)], state)
        expected = beta ** t * np.linalg.norm(np.zeros(3) - delta)
        assert abs(np.linalg.norm(state.velocity - delta) - expected) <= 1e-9


def test_idle_clients_decay_velocity(rng):
    g = rng.normal(size=5)
    v = rng.normal(size=5)
    state = FedAvgMState(v, beta=0.7, server_lr=0.5)
    ups = [U(i, g, 3 + i) for i in range(3)]
    w, new_state = fedavgm_step(g, ups, state)
    np.testing.assert_allclose(new_state.velocity, 0.7 * v, atol=1e-12)
    np.testing.assert_allclose(w, g - 0.5 * 0.7 * v, atol=1e-12)
    np.testing.assert_allclose(fedavg_step(g, ups), g, atol=1e-12)


instances = st.tuples(
    st.integers(1, 40),  # length
    st.integers(1, 8),   # clients
    st.integers(0, 2**32 - 1),
)


@settings(max_examples=60, deadline=None)
@given(instances)
def test_fedavg_permutation_invariant(inst):
    length, k, seed = inst
    rng = np.random.default_rng(seed)
    g = rng.normal(size=length)
    ups = make_updates(rng, k, length)
    shuffled = [ups[i] for i in rng.permutation(k)]
    np.testing.assert_array_equal(fedavg_step(g, ups), fedavg_step(g, shuffled))


@settings(max_examples=60, deadline=None)
@given(instances)
def test_fedavg_equal_counts_is_unweighted_mean(inst):
    length, k, seed = inst
    rng = np.random.default_rng(seed)
    ws = rng.normal(size=(k, length))
    ups = [U(i, ws[i], 17) for i in range(k)]
    assert np.max(np.abs(fedavg_step(np.zeros(length), ups) - ws.mean(axis=0))) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(instances, st.integers(2, 50))
def test_fedavg_scale_invariant(inst, factor):
    length, k, seed = inst
    rng = np.random.default_rng(seed)
    g = rng.normal(size=length)
    ups = make_updates(rng, k, length)
    scaled = [U(u.client_id, u.params, u.num_samples * factor) for u in ups]
    assert np.max(np.abs(fedavg_step(g, ups) - fedavg_step(g, scaled))) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(instances)
def test_fedavgm_reduces_to_fedavg(inst):
    length, k, seed = inst
    rng = np.random.default_rng(seed)
    g = rng.normal(size=length)
    ups = make_updates(rng, k, length)
    w, _ = fedavgm_step(g, ups, FedAvgMState(rng.normal(size=length), beta=0.0, server_lr=1.0))
    assert np.max(np.abs(w - fedavg_step(g, ups))) <= 1e-12
