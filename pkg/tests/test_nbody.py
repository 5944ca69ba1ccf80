import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spacetime_set import nbody
from spacetime_set.geometry import random_orthogonal
from spacetime_set.nbody import (
    DataConfig,
    DatasetFormatError,
    ParticleState,
    add_noise,
    coulomb_forces,
    generate_dataset,
    integrate_step,
    sample_initial_conditions,
    simulate,
    total_energy,
)

SMALL = dict(n_particles=5, seq_len=10, horizon=100, n_train=6, n_val=3, n_test=2, seed=7)


def naive_forces(x, c, soft):
    N = len(c)
    F = np.zeros_like(x)
    for i in range(N):
        for j in range(N):
            if i != j:
                d = x[i] - x[j]
                F[i] += c[i] * c[j] * d / (d @ d + soft) ** 1.5
    return F


def test_initial_conditions_shapes_and_determinism():
    a = sample_initial_conditions(5, 123)
    b = sample_initial_conditions(5, 123)
    assert a.positions.shape == (5, 3) and a.velocities.shape == (5, 3) and a.charges.shape == (5,)
    assert np.array_equal(a.positions, b.positions) and np.array_equal(a.charges, b.charges)
    assert set(np.unique(a.charges)) <= {-1.0, 1.0}


def test_initial_conditions_rejects_single_particle():
    with pytest.raises(ValueError):
        sample_initial_conditions(1, 0)


def test_initial_positions_law_of_large_numbers():
    pos = np.stack([sample_initial_conditions(2, s).positions[0] for s in range(10000)])
    assert np.all(np.abs(pos.mean(axis=0)) < 3 / np.sqrt(10000))
    vel = np.stack([sample_initial_conditions(2, s).velocities[0] for s in range(10000)])
    assert np.all(np.abs(vel.std(axis=0) - 0.5) < 0.02)


def test_like_charges_repel():
    x = np.array([[0.0, 0, 0], [1.0, 0, 0]])
    F = coulomb_forces(x, np.array([1.0, 1.0]), 0.1)
    assert F[0, 0] < 0 < F[1, 0]
    np.testing.assert_allclose(F[0], -F[1])


def test_unlike_charges_attract():
    x = np.array([[0.0, 0, 0], [1.0, 0, 0]])
    F = coulomb_forces(x, np.array([1.0, -1.0]), 0.1)
    assert F[0, 0] > 0 > F[1, 0]


def test_forces_match_naive_and_sum_to_zero():
    s = sample_initial_conditions(5, 3)
    F = coulomb_forces(s.positions, s.charges, 0.1)
    np.testing.assert_allclose(F, naive_forces(s.positions, s.charges, 0.1), atol=1e-13)
    assert np.max(np.abs(F.sum(axis=0))) <= 1e-12


def test_free_particle_drift():
    x = np.array([[1.0, 2.0, 3.0], [1e6, 0, 0]])
    s = ParticleState(x, np.array([[0.5, -1.0, 2.0], [0, 0, 0]]), np.array([0.0, 1.0]))
    out = integrate_step(s, 1e-3, 0.1)
    np.testing.assert_array_equal(out.positions[0], x[0] + 1e-3 * s.velocities[0])


def test_symmetric_pair_moves_apart():
    x = np.array([[-0.5, 0, 0], [0.5, 0, 0]])
    s = ParticleState(x, np.zeros((2, 3)), np.array([1.0, 1.0]))
    for _ in range(10):
        s = integrate_step(s, 1e-3, 0.1)
    assert s.positions[0, 0] < -0.5 and s.positions[1, 0] > 0.5
    assert s.positions[0, 0] == -s.positions[1, 0]


def test_integrate_step_rejects_bad_dt():
    with pytest.raises(ValueError):
        integrate_step(sample_initial_conditions(3, 0), 0.0, 0.1)


def test_momentum_conserved():
    s = sample_initial_conditions(5, 11)
    _, vs = simulate(s, 1000, 1e-3, 0.1)
    p = vs.sum(axis=1)
    assert np.max(np.abs(p - p[0])) <= 1e-8


def test_energy_drift_against_fine_reference():
    s = sample_initial_conditions(5, 4)
    xs, vs = simulate(s, 1000, 1e-3, 0.1)
    xf, vf = simulate(s, 1000, 1e-5, 0.1, stride=100)
    e0 = total_energy(s, 0.1)
    e_end = total_energy(ParticleState(xs[-1], vs[-1], s.charges), 0.1)
    e_ref = total_energy(ParticleState(xf[-1], vf[-1], s.charges), 0.1)
    assert abs(e_end - e0) / abs(e0) < 0.01
    assert abs(e_end - e_ref) / abs(e_ref) < 0.01


def test_dynamics_commute_with_isometries():
    rng = np.random.default_rng(5)
    s = sample_initial_conditions(5, 9)
    for det in (1, -1):
        Q = random_orthogonal(3, rng, det=det)
        b = rng.standard_normal(3)
        xs, vs = simulate(s, 200, 1e-3, 0.1)
        moved = ParticleState(s.positions @ Q.T + b, s.velocities @ Q.T, s.charges)
        xt, vt = simulate(moved, 200, 1e-3, 0.1)
        assert np.max(np.abs(xt - (xs @ Q.T + b))) <= 1e-8
        assert np.max(np.abs(vt - vs @ Q.T)) <= 1e-8


def test_batched_simulation_matches_single():
    a, b = sample_initial_conditions(4, 1), sample_initial_conditions(4, 2)
    batch = ParticleState(np.stack([a.positions, b.positions]), np.stack([a.velocities, b.velocities]),
                          np.stack([a.charges, b.charges]))
    xs, _ = simulate(batch, 20, 1e-3, 0.1)
    xa, _ = simulate(a, 20, 1e-3, 0.1)
    np.testing.assert_allclose(xs[:, 0], xa, atol=1e-14)


def test_config_validation():
    with pytest.raises(ValueError):
        DataConfig(seq_len=10, horizon=5)
    with pytest.raises(ValueError):
        DataConfig(noise_variance=-1)
    with pytest.warns(UserWarning, match="H >> L"):
        DataConfig(seq_len=10, horizon=50)


def test_generate_deterministic_and_sized():
    cfg = DataConfig(**SMALL)
    a, b = generate_dataset(cfg, "train"), generate_dataset(cfg, "train")
    assert len(a) == 6
    assert nbody.dumps_dataset(a) == nbody.dumps_dataset(b)
    w = a.window()
    assert w["x"].shape == (6, 10, 5, 3) and w["x_target"].shape == (6, 5, 3)
    traj = a.trajectories[0]
    np.testing.assert_array_equal(w["x"][0, 0], traj.positions[1])
    np.testing.assert_array_equal(w["x_target"][0], traj.positions[10 + 100])


def test_splits_use_distinct_trajectories():
    cfg = DataConfig(**SMALL)
    train, val = generate_dataset(cfg, "train"), generate_dataset(cfg, "val")
    assert not np.array_equal(train.trajectories[0].positions[0], val.trajectories[0].positions[0])


def test_charges_constant_within_trajectory():
    d = generate_dataset(DataConfig(**SMALL), "test")
    for t in d.trajectories:
        assert set(np.unique(t.charges)) <= {-1.0, 1.0}


def test_noise_zero_is_identity_and_stats():
    clean = generate_dataset(DataConfig(**{**SMALL, "n_train": 40}), "train")
    same = add_noise(clean, 0.0, 1)
    assert nbody.dumps_dataset(same) == nbody.dumps_dataset(clean)
    noisy = add_noise(clean, 0.5, 1)
    diff = np.concatenate([
        np.concatenate([(n.positions - c.positions).ravel(), (n.velocities - c.velocities).ravel()])
        for n, c in zip(noisy.trajectories, clean.trajectories)
    ])
    assert diff.size >= 1e5
    assert abs(diff.var() - 0.5) < 0.025
    for n, c in zip(noisy.trajectories, clean.trajectories):
        np.testing.assert_array_equal(n.charges, c.charges)
    with pytest.raises(ValueError):
        add_noise(clean, -0.1, 0)
    again = add_noise(clean, 0.5, 1)
    assert nbody.dumps_dataset(again) == nbody.dumps_dataset(noisy)


def test_dataset_file_round_trip(tmp_path):
    d = generate_dataset(DataConfig(**SMALL), "val")
    path = tmp_path / "val.setd"
    nbody.write_dataset(d, path)
    back = nbody.read_dataset(path)
    assert nbody.dumps_dataset(back) == path.read_bytes()
    assert back.config == d.config and back.split == "val"


def test_empty_dataset_round_trip():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        d = generate_dataset(DataConfig(**{**SMALL, "n_test": 0}), "test")
    back = nbody.loads_dataset(nbody.dumps_dataset(d))
    assert len(back) == 0 and back.window()["x"].shape == (0, 10, 5, 3)


def test_corrupted_files_raise_format_errors():
    data = nbody.dumps_dataset(generate_dataset(DataConfig(**SMALL), "test"))
    with pytest.raises(DatasetFormatError, match="version mismatch"):
        nbody.loads_dataset(b"XXXX" + data[4:])
    with pytest.raises(DatasetFormatError, match="version"):
        nbody.loads_dataset(data[:4] + b"\x09\x00\x00\x00" + data[8:])
    with pytest.raises(DatasetFormatError, match="truncated"):
        nbody.loads_dataset(data[:-8])


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 6))
def test_forces_newton_third_law_property(seed, n):
    s = sample_initial_conditions(n, seed)
    F = coulomb_forces(s.positions, s.charges, 0.1)
    assert np.max(np.abs(F.sum(axis=0))) <= 1e-12
