"""Acceptance criteria 1-11. Each test prints one ``ACCEPTANCE <n> PASS|FAIL`` line.

Criteria 8 and 9 train real models on 1000-trajectory datasets and take a few
minutes on one core.
"""

import hashlib
import json
import time

import numpy as np
import pytest

from spacetime_set import verify
from spacetime_set.cli import main
from spacetime_set.geometry import random_orthogonal
from spacetime_set.model import Model, count_params, default_config
from spacetime_set.nbody import DataConfig, ParticleState, generate_splits, sample_initial_conditions, simulate, total_energy
from spacetime_set.training import TrainConfig, evaluate, train

# Desk-scale optimizer settings for criteria 8 and 9 (the reported learning rates
# are tuned for 16k trajectories and far more steps than a desk budget allows).
SET_LR = 1e-3
SET_EPOCHS = 30
NOISY_EPOCHS = 30
LINEAR_EPOCHS = 5


@pytest.fixture
def report(capsys):
    def emit(number, passed, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {number} {'PASS' if passed else 'FAIL'}: {detail}")
        assert passed, detail

    return emit


def rng_for(criterion):
    return np.random.default_rng(1000 + criterion)


def test_1_egcl_equivariance(report):
    start = time.perf_counter()
    dev = verify.egcl_equivariance(rng_for(1), trials=100, N=5, d=8, n=3, K=2)
    elapsed = time.perf_counter() - start
    report(1, dev <= 1e-9 and elapsed < 10, f"max deviation {dev:.2e} (<= 1e-9), {elapsed:.2f} s (< 10 s)")


def test_2_etal_equivariance(report):
    rng = rng_for(2)
    pos = verify.position_equivariance(rng, trials=100, N=5, L=10)
    vel = verify.velocity_equivariance(rng, trials=100, N=5, L=10)
    sums = verify.attention_row_sums(rng, trials=100, N=5, L=10)
    ok = pos <= 1e-9 and vel <= 1e-9 and sums <= 1e-12
    report(2, ok, f"position {pos:.2e}, velocity {vel:.2e} (<= 1e-9); row sums {sums:.2e} (<= 1e-12)")


def test_3_tensorized_equivalence(report):
    rng = rng_for(3)
    etal = verify.tensorized_vs_loop(rng, trials=5, N=4, L=5, d=6)
    egcl = verify.egcl_vs_loop(rng, trials=5, N=4, d=6)
    report(3, etal <= 1e-12 and egcl <= 1e-12, f"four attention components {etal:.2e}, EGCL {egcl:.2e} (<= 1e-12)")


def test_4_set_equivariance(report):
    dev = verify.set_equivariance(rng_for(4), trials=25)
    report(4, dev <= 1e-8, f"(x_hat, v_hat, theta) max deviation {dev:.2e} (<= 1e-8), M=2, K=2")


def test_5_permutation_equivariance(report):
    rng = rng_for(5)
    devs = {
        "egcl": verify.egcl_permutation(rng, trials=25),
        "etal": verify.etal_permutation(rng, trials=25),
        "set": verify.set_permutation(rng, trials=25, adjacency=False),
        "set+adj": verify.set_permutation(rng, trials=25, adjacency=True),
    }
    detail = ", ".join(f"{k} {v:.2e}" for k, v in devs.items())
    report(5, max(devs.values()) <= 1e-10, f"{detail} (<= 1e-10)")


def test_6_gradient_integrity(report):
    err = verify.set_gradient(rng_for(6), N=3, L=3, eps=1e-5)
    report(6, err <= 1e-4, f"max relative error {err:.2e} (<= 1e-4) over every parameter")


def test_7_parameter_counts(report):
    table = {
        name: [count_params(default_config(name, n_particles=N)) for N in (5, 20, 30)]
        for name in ("set", "egnn", "mlp", "linear")
    }
    ok = all(len(set(v)) == 1 for v in table.values()) and table["linear"] == [3, 3, 3]
    report(7, ok, "; ".join(f"{k} {v}" for k, v in table.items()))


@pytest.fixture(scope="module")
def clean_splits():
    return generate_splits(DataConfig(n_particles=5, seq_len=10, horizon=500, seed=0))


def test_8_desk_scale_training(report, clean_splits):
    start = time.perf_counter()
    linear = Model(default_config("linear"))
    train(linear, clean_splits, TrainConfig(epochs=LINEAR_EPOCHS, seed=0))
    linear_mse = evaluate(linear, clean_splits["test"])["mse"]

    model = Model(default_config("set"), seed=0)
    history = train(model, clean_splits, TrainConfig(epochs=SET_EPOCHS, lr=SET_LR, seed=0))
    set_mse = evaluate(model, clean_splits["test"])["mse"]
    elapsed = time.perf_counter() - start
    drop = history[0]["train_loss"] / history[-1]["train_loss"]
    ok = drop >= 10 and set_mse < linear_mse and elapsed <= 1800
    report(
        8,
        ok,
        f"train loss {history[0]['train_loss']:.3g} -> {history[-1]['train_loss']:.3g} ({drop:.1f}x, >= 10x); "
        f"test MSE SET {set_mse:.3g} < Linear {linear_mse:.3g}; {elapsed:.0f} s",
    )


def test_9_noise_floor(report):
    splits = generate_splits(DataConfig(n_particles=5, seq_len=10, horizon=500, noise_variance=0.5, seed=0))
    model = Model(default_config("set"), seed=0)
    train(model, splits, TrainConfig(epochs=NOISY_EPOCHS, lr=SET_LR, seed=0))
    m = evaluate(model, splits["test"])
    ok = 0.4 <= m["mse"] <= 0.6
    report(9, ok, f"noisy test MSE {m['mse']:.4f} in [0.4, 0.6] (position {m['pos_mse']:.4f}, velocity {m['vel_mse']:.4f})")


def test_10_simulator_physics(report):
    rng = rng_for(10)
    momentum = drift = iso = 0.0
    for seed in range(5):
        s = sample_initial_conditions(5, seed)
        xs, vs = simulate(s, 1000, 1e-3, 0.1)
        p = vs.sum(axis=1)
        momentum = max(momentum, float(np.max(np.abs(p - p[0]))))
        xf, vf = simulate(s, 1000, 1e-5, 0.1, stride=100)
        e_end = total_energy(ParticleState(xs[-1], vs[-1], s.charges), 0.1)
        e_ref = total_energy(ParticleState(xf[-1], vf[-1], s.charges), 0.1)
        drift = max(drift, abs(e_end - e_ref) / abs(e_ref))
        Q, b = random_orthogonal(3, rng, det=1 if seed % 2 else -1), rng.standard_normal(3)
        moved = ParticleState(s.positions @ Q.T + b, s.velocities @ Q.T, s.charges)
        xt, vt = simulate(moved, 1000, 1e-3, 0.1)
        iso = max(iso, float(np.max(np.abs(xt - (xs @ Q.T + b)))), float(np.max(np.abs(vt - vs @ Q.T))))
    ok = momentum <= 1e-8 and drift < 0.01 and iso <= 1e-8
    report(10, ok, f"momentum {momentum:.2e} (<= 1e-8), energy vs fine run {100 * drift:.4f}% (< 1%), isometry {iso:.2e} (<= 1e-8)")


def _pipeline(root):
    data, ckpt = root / "data", root / "m.sett"
    gen = ["generate", "--n-train", "50", "--n-val", "10", "--n-test", "10", "--seed", "5", "--out", str(data)]
    assert main(gen) == 0
    assert main(["train", "--data", str(data), "--epochs", "2", "--lr", "1e-3", "--seed", "5", "--out", str(ckpt)]) == 0
    assert main(["eval", "--checkpoint", str(ckpt), "--data", str(data)]) == 0
    files = sorted(list(data.iterdir()) + [ckpt])
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in files}


def test_11_determinism(report, tmp_path, capsys):
    a = _pipeline(tmp_path / "a")
    out_a = capsys.readouterr().out.splitlines()
    b = _pipeline(tmp_path / "b")
    out_b = capsys.readouterr().out.splitlines()
    metrics_a, metrics_b = json.loads(out_a[-1]), json.loads(out_b[-1])
    # the train summary embeds the run's paths; compare everything else
    summary_a, summary_b = (json.loads(o[-2]) for o in (out_a, out_b))
    for s in (summary_a, summary_b):
        s.pop("checkpoint"), s.pop("log")
    ok = a == b and metrics_a == metrics_b and summary_a == summary_b
    report(11, ok, f"{len(a)} files bit-identical, test MSE {metrics_a['mse']!r} == {metrics_b['mse']!r}")
