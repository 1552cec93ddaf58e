import json

import numpy as np
import pytest

from conftest import THREE_STATE_T, random_model, three_state_model
from mjsreduce.clustering import average_model
from mjsreduce.errors import (
    DimensionMismatch,
    InputError,
    NotErgodic,
    PartitionMismatch,
)
from mjsreduce.model import (
    MjsModel,
    Partition,
    expand_reduced,
    is_ergodic,
    load_model,
    model_from_dict,
    model_to_dict,
    save_model,
    simulate,
    simulate_batch,
    simulate_coupled,
    simulate_coupled_batch,
    stationary_distribution,
    validate_model,
)
from mjsreduce.synth import SynthConfig, generate


def test_model_shapes():
    m = three_state_model()
    assert (m.s, m.n, m.p) == (3, 2, 0)
    m2 = MjsModel(np.zeros((2, 3, 3)), np.zeros((2, 3, 1)), np.eye(2))
    assert (m2.s, m2.n, m2.p) == (2, 3, 1)


def test_model_arrays_are_read_only():
    m = three_state_model()
    with pytest.raises(ValueError):
        m.T[0, 0] = 0.5


def test_model_rejects_bad_shapes():
    with pytest.raises(DimensionMismatch):
        MjsModel(np.zeros((2, 2, 3)), None, np.eye(2))
    with pytest.raises(DimensionMismatch):
        MjsModel(np.zeros((2, 2, 2)), np.zeros((3, 2, 1)), np.eye(2))
    with pytest.raises(DimensionMismatch):
        MjsModel(np.zeros((2, 2, 2)), None, np.eye(3))


def test_validate_model_reports_value_violations():
    ok = three_state_model()
    assert validate_model(ok) == []
    bad_T = MjsModel(np.zeros((2, 1, 1)), None, [[1.2, -0.2], [0.5, 0.5]])
    msgs = validate_model(bad_T)
    assert any("negative" in m for m in msgs)
    bad_sum = MjsModel(np.zeros((2, 1, 1)), None, [[0.6, 0.6], [0.5, 0.5]])
    assert any("sums to" in m for m in validate_model(bad_sum))
    nan_A = MjsModel(np.full((1, 1, 1), np.nan), None, [[1.0]])
    assert any("A" in m for m in validate_model(nan_A))


def test_is_ergodic_cases():
    assert is_ergodic(THREE_STATE_T)
    assert not is_ergodic(np.eye(2))
    # Periodic two-cycle: no power is entrywise positive.
    assert not is_ergodic(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert is_ergodic(np.array([[0.5, 0.5], [0.5, 0.5]]))


def test_stationary_distribution_matches_power_iteration():
    # Oracle: 10^4 steps of the power recursion from the uniform start.
    pi = np.full(3, 1.0 / 3.0)
    for _ in range(10_000):
        pi = pi @ THREE_STATE_T
        pi /= pi.sum()
    sd = stationary_distribution(THREE_STATE_T)
    assert np.abs(sd.pi - pi).max() <= 1e-10
    assert abs(sd.pi.sum() - 1.0) <= 1e-12
    assert sd.pi_min == sd.pi.min() and sd.pi_max == sd.pi.max()


def test_stationary_distribution_rejects_non_ergodic():
    with pytest.raises(NotErgodic):
        stationary_distribution(np.eye(3))


def test_partition_canonical_order():
    p = Partition([[4, 5], [2, 3], [0, 1]])
    assert p.clusters == ((0, 1), (2, 3), (4, 5))
    assert p == Partition([[0, 1], [2, 3], [4, 5]])
    assert p.cluster_of(3) == 1
    assert p.sizes == (2, 2, 2)


def test_partition_from_labels_and_uniform():
    p = Partition.from_labels([1, 0, 1, 0])
    assert p.clusters == ((0, 2), (1, 3))
    u = Partition.uniform(6, 3)
    assert u.clusters == ((0, 1), (2, 3), (4, 5))
    with pytest.raises(PartitionMismatch):
        Partition.uniform(7, 3)


def test_partition_one_based_round_trip():
    p = Partition([[0, 2], [1]])
    lists = p.to_lists_1based()
    assert lists == [[1, 3], [2]]
    assert Partition.from_lists_1based(lists) == p


def test_partition_rejects_bad_covers():
    with pytest.raises(PartitionMismatch):
        Partition([[0, 1], [1, 2]])  # overlap
    with pytest.raises(PartitionMismatch):
        Partition([[0], [2]])  # gap
    with pytest.raises(PartitionMismatch):
        Partition([[0], []])  # empty cluster


def test_simulate_horizon_zero():
    traj = simulate(three_state_model(), [1.0, 2.0], 0, seed=0)
    assert traj.states.shape == (1, 2)
    assert traj.modes.shape == (0,)
    assert traj.horizon == 0


def test_simulate_rejects_bad_x0():
    with pytest.raises(DimensionMismatch):
        simulate(three_state_model(), [1.0], 3, seed=0)


@pytest.mark.invariant
def test_simulate_determinism_bit_identical(rng):
    m = random_model(rng, s=3, n=2, p=1)
    u = rng.standard_normal((12, 1))
    a = simulate(m, [1.0, -1.0], 12, inputs=u, noise_std=0.3, seed=77)
    b = simulate(m, [1.0, -1.0], 12, inputs=u, noise_std=0.3, seed=77)
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.modes, b.modes)
    assert np.array_equal(a.inputs, b.inputs)
    sa, ma = simulate_batch(m, [1.0, -1.0], 9, 5, noise_std=0.1, seed=5)
    sb, mb = simulate_batch(m, [1.0, -1.0], 9, 5, noise_std=0.1, seed=5)
    assert np.array_equal(sa, sb) and np.array_equal(ma, mb)


def test_simulate_injected_modes_match_matrix_product():
    A = np.stack([np.diag([2.0, 0.5]), np.array([[0.0, 1.0], [1.0, 0.0]])])
    m = MjsModel(A, None, np.full((2, 2), 0.5))
    x0 = np.array([1.0, 3.0])
    traj = simulate(m, x0, 3, modes=[0, 1, 0], seed=0)
    x = x0
    for w in (0, 1, 0):
        x = A[w] @ x
    assert np.allclose(traj.states[-1], x, atol=0.0)
    assert np.array_equal(traj.modes, [0, 1, 0])
    with pytest.raises(DimensionMismatch):
        simulate(m, x0, 3, modes=[0, 1], seed=0)
    with pytest.raises(DimensionMismatch):
        simulate(m, x0, 3, modes=[0, 1, 5], seed=0)


def test_simulate_input_forms_agree(rng):
    m = random_model(rng, s=2, n=2, p=2)
    u = rng.standard_normal((8, 2))
    by_array = simulate(m, [1.0, 0.0], 8, inputs=u, seed=3)
    by_callable = simulate(
        m, [1.0, 0.0], 8, inputs=lambda t, x, w: u[t], seed=3
    )
    assert np.array_equal(by_array.states, by_callable.states)
    assert np.array_equal(by_array.inputs, u)
    with pytest.raises(DimensionMismatch):
        simulate(m, [1.0, 0.0], 2, inputs=np.zeros((2, 3)), seed=0)


def test_simulate_init_dist_forms():
    m = three_state_model()
    traj = simulate(m, [0.0, 0.0], 5, seed=1, init_dist=2)
    assert traj.modes[0] == 2
    traj = simulate(m, [0.0, 0.0], 5, seed=1, init_dist=[0.0, 1.0, 0.0])
    assert traj.modes[0] == 1
    with pytest.raises(DimensionMismatch):
        simulate(m, [0.0, 0.0], 5, seed=1, init_dist=9)
    with pytest.raises(DimensionMismatch):
        simulate(m, [0.0, 0.0], 5, seed=1, init_dist=[0.5, 0.5])


@pytest.mark.invariant
def test_markov_frequencies_match_transition_matrix():
    # Entrywise tolerance 3 / sqrt(N pi_min) over N >= 1e5 steps.
    m = three_state_model()
    N = 100_000
    traj = simulate(m, [0.0, 0.0], N, seed=123)
    counts = np.zeros((3, 3))
    np.add.at(counts, (traj.modes[:-1], traj.modes[1:]), 1.0)
    freq = counts / counts.sum(axis=1, keepdims=True)
    tol = 3.0 / np.sqrt(N * stationary_distribution(m.T).pi_min)
    assert np.abs(freq - m.T).max() <= tol


@pytest.mark.invariant
@pytest.mark.parametrize("branch", ["aggregatable", "lumpable"])
def test_coupled_runs_agree_on_reducible_models(branch):
    # Exactly reducible instances: the reduced system tracks the full
    # one along any shared mode path, input, and noise realization.
    model, part, _ = generate(
        SynthConfig(8, 2, 3, 2, branch=branch, seed=11)
    )
    reduced = average_model(model, part)
    x0 = np.array([1.0, -2.0, 0.5])
    u = np.random.default_rng(4).standard_normal((50, 2))
    full, red = simulate_coupled(
        model, reduced, part, x0, 50, inputs=u, noise_std=0.2, seed=9
    )
    diff = np.linalg.norm(full.states - red.states, axis=1)
    assert diff.max() <= 1e-10 * np.linalg.norm(x0)
    assert np.array_equal(red.modes, part.labels[full.modes])
    states, red_states, _ = simulate_coupled_batch(
        model, reduced, part, x0, 50, 8, noise_std=0.2, seed=9
    )
    assert np.linalg.norm(states - red_states, axis=2).max() <= 1e-10 * np.linalg.norm(x0)


@pytest.mark.invariant
@pytest.mark.parametrize("branch", ["aggregatable", "lumpable"])
def test_expand_of_average_is_idempotent_on_reducible_models(branch):
    model, part, _ = generate(
        SynthConfig(6, 3, 2, 1, branch=branch, seed=21)
    )
    reduced = average_model(model, part)
    expanded = expand_reduced(reduced, part, model.T)
    assert np.abs(expanded.A - model.A).max() <= 1e-12
    assert np.abs(expanded.B - model.B).max() <= 1e-12
    again = average_model(expanded, part)
    assert np.abs(again.A - reduced.A).max() <= 1e-12
    assert np.abs(again.T - reduced.T).max() <= 1e-12


def test_expand_reduced_shapes_and_errors():
    model, part, _ = generate(SynthConfig(4, 2, 2, 1, seed=0))
    reduced = average_model(model, part)
    expanded = expand_reduced(reduced, part, model.T)
    assert expanded.s == 4
    for k, ck in enumerate(part.clusters):
        for i in ck:
            assert np.array_equal(expanded.A[i], reduced.A[k])
    with pytest.raises(PartitionMismatch):
        expand_reduced(model, part, model.T)  # s modes, r clusters
    with pytest.raises(DimensionMismatch):
        expand_reduced(reduced, part, np.eye(3))


def test_model_json_round_trip(tmp_path, rng):
    m = random_model(rng, s=3, n=2, p=2)
    path = tmp_path / "model.json"
    save_model(m, path)
    loaded = load_model(path)
    assert np.array_equal(loaded.A, m.A)
    assert np.array_equal(loaded.B, m.B)
    assert np.array_equal(loaded.T, m.T)
    d = model_to_dict(m)
    assert set(d) == {"n", "p", "s", "A", "B", "T"}


def test_model_from_dict_accepts_null_b():
    d = {"n": 1, "p": 2, "s": 1, "A": [[[0.5]]], "B": None, "T": [[1.0]]}
    m = model_from_dict(d)
    assert m.p == 2
    assert np.array_equal(m.B, np.zeros((1, 1, 2)))


def test_model_from_dict_rejections():
    good = {"n": 1, "p": 0, "s": 1, "A": [[[0.5]]], "B": [[[]]], "T": [[1.0]]}
    model_from_dict(good)
    with pytest.raises(InputError):
        model_from_dict({k: v for k, v in good.items() if k != "T"})
    bad_size = dict(good, A=[[[0.5, 0.0]]])
    with pytest.raises(InputError, match="disagree with declared sizes"):
        model_from_dict(bad_size)
    bad_rows = dict(good, T=[[0.4]])
    with pytest.raises(InputError, match="invalid model"):
        model_from_dict(bad_rows)


def test_load_model_reports_parse_location(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"n": 1, "p": 0,\n  "s": ???}')
    with pytest.raises(InputError, match=r"line \d+ column \d+"):
        load_model(path)
    path.write_text("[1, 2, 3]")
    with pytest.raises(InputError, match="JSON object"):
        load_model(path)
