"""Randomized property suite: equivariance, permutation symmetry, loop-oracle
agreement, parameter counts, and gradient integrity.

Every check returns the worst deviation it saw; :func:`run_suite` compares each
against a tolerance and collects a report.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import oracles
from . import tensor as T
from .egcl import EgclLayer, build_edge_attrs, egcl_forward, spatial_stack
from .etal import (
    adjacency_attention,
    feature_attention,
    position_attention,
    position_weights,
    velocity_attention,
    velocity_weights,
)
from .geometry import random_orthogonal, random_permutation, random_translation
from .model import (
    GraphSequenceBatch,
    Model,
    SetConfig,
    charge_adjacency,
    count_params,
    default_config,
    loss,
    permute_batch,
    set_forward_full,
    transform_batch,
)
from .nn import Params


def _maxabs(*pairs) -> float:
    return max(float(np.max(np.abs(np.asarray(a) - np.asarray(b)))) for a, b in pairs)


def _charges(rng, N):
    return rng.choice([-1.0, 1.0], size=N)


def _egcl_setup(rng, N, d, n, K, equivariant=True):
    layers = [EgclLayer(f"l{k}", d, 2 * d, n, equivariant) for k in range(K)]
    params: Params = {}
    for layer in layers:
        layer.init(params, rng)
    # larger phi_x output weights so coordinate messages are not negligible
    for layer in layers:
        key = f"{layer.name}.phi_x.1.W"
        params[key].data = params[key].data * 1e3
    return layers, params


def _orthogonal(rng, n, trial):
    return random_orthogonal(n, rng, det=1 if trial % 2 == 0 else -1)


# ------------------------------------------------------------------ EGCL


def egcl_equivariance(rng, trials=100, N=5, d=8, n=3, K=2) -> float:
    """Stack of K layers: h invariant, x E(n)-equivariant, v O(n)-equivariant (both det signs)."""
    worst = 0.0
    for trial in range(trials):
        layers, params = _egcl_setup(rng, N, d, n, K)
        h, x, v = rng.standard_normal((N, d)), rng.standard_normal((N, n)), rng.standard_normal((N, n))
        A = charge_adjacency(_charges(rng, N))
        Q, b = _orthogonal(rng, n, trial), random_translation(n, rng)
        h1, x1, v1 = spatial_stack(layers, params, h, x, v, A)
        h2, x2, v2 = spatial_stack(layers, params, h, x @ Q.T + b, v @ Q.T, A)
        worst = max(worst, _maxabs((h2.data, h1.data), (x2.data, x1.data @ Q.T + b), (v2.data, v1.data @ Q.T)))
    return worst


def egcl_permutation(rng, trials=25, N=5, d=8, n=3, K=2) -> float:
    worst = 0.0
    for _ in range(trials):
        layers, params = _egcl_setup(rng, N, d, n, K)
        h, x, v = rng.standard_normal((N, d)), rng.standard_normal((N, n)), rng.standard_normal((N, n))
        A = charge_adjacency(_charges(rng, N))
        p = random_permutation(N, rng)
        out = spatial_stack(layers, params, h, x, v, A)
        out_p = spatial_stack(layers, params, h[p], x[p], v[p], A[p][:, p])
        worst = max(worst, _maxabs(*[(b.data, a.data[p]) for a, b in zip(out, out_p)]))
    return worst


# ------------------------------------------------------------------ ETAL


def position_equivariance(rng, trials=100, N=5, L=10, n=3) -> float:
    worst = 0.0
    for trial in range(trials):
        xi = rng.standard_normal((N, L, n))
        Q, b = _orthogonal(rng, n, trial), random_translation(n, rng)
        out = position_attention(xi).data
        worst = max(worst, _maxabs((position_attention(xi @ Q.T + b).data, out @ Q.T + b)))
    return worst


def velocity_equivariance(rng, trials=100, N=5, L=10, n=3) -> float:
    """Output equivariance and invariance of the weight matrix gamma."""
    worst = 0.0
    for trial in range(trials):
        om = rng.standard_normal((N, L, n))
        Q = _orthogonal(rng, n, trial)
        out = velocity_attention(om).data
        worst = max(
            worst,
            _maxabs(
                (velocity_attention(om @ Q.T).data, out @ Q.T),
                (velocity_weights(om @ Q.T).data, velocity_weights(om).data),
            ),
        )
    return worst


def attention_row_sums(rng, trials=100, N=5, L=10, n=3) -> float:
    worst = 0.0
    for _ in range(trials):
        a = rng.standard_normal((N, L, n))
        for w in (position_weights(a).data, velocity_weights(a).data):
            worst = max(worst, float(np.max(np.abs(w.sum(axis=-1) - 1.0))))
    return worst


def etal_permutation(rng, trials=25, N=5, L=10, d=8, n=3) -> float:
    """Node permutation of all four components; adjacency projections are conjugated too."""
    worst = 0.0
    for _ in range(trials):
        theta = rng.standard_normal((N, L, d))
        xi, om = rng.standard_normal((N, L, n)), rng.standard_normal((N, L, n))
        A = rng.standard_normal((L, N, N))
        Q, K, V = (rng.standard_normal((d, d)) for _ in range(3))
        QA, KA, VA = (rng.standard_normal((N, N)) for _ in range(3))
        p = random_permutation(N, rng)
        A_p = A[:, p][:, :, p]
        conj = [M[p][:, p] for M in (QA, KA, VA)]
        worst = max(
            worst,
            _maxabs(
                (feature_attention(theta[p], Q, K, V).data, feature_attention(theta, Q, K, V).data[p]),
                (position_attention(xi[p]).data, position_attention(xi).data[p]),
                (velocity_attention(om[p]).data, velocity_attention(om).data[p]),
                (adjacency_attention(A_p, *conj).data, adjacency_attention(A, QA, KA, VA).data[:, p][:, :, p]),
            ),
        )
    return worst


# ----------------------------------------------------------- loop oracles


def tensorized_vs_loop(rng, trials=3, N=4, L=5, d=6, n=3) -> float:
    worst = 0.0
    for _ in range(trials):
        theta = rng.standard_normal((N, L, d))
        xi, om = rng.standard_normal((N, L, n)), rng.standard_normal((N, L, n))
        A = rng.standard_normal((L, N, N))
        Q, K, V = (rng.standard_normal((d, d)) for _ in range(3))
        QA, KA, VA = (rng.standard_normal((N, N)) for _ in range(3))
        worst = max(
            worst,
            _maxabs(
                (feature_attention(theta, Q, K, V).data, oracles.feature_attention_loop(theta, Q, K, V)),
                (position_attention(xi).data, oracles.position_attention_loop(xi)),
                (velocity_attention(om).data, oracles.velocity_attention_loop(om)),
                (adjacency_attention(A, QA, KA, VA).data, oracles.adjacency_attention_loop(A, QA, KA, VA)),
            ),
        )
    return worst


def egcl_vs_loop(rng, trials=3, N=4, d=6, n=3) -> float:
    worst = 0.0
    for _ in range(trials):
        for equivariant in (True, False):
            layers, params = _egcl_setup(rng, N, d, n, 1, equivariant)
            h, x, v = rng.standard_normal((N, d)), rng.standard_normal((N, n)), rng.standard_normal((N, n))
            A = charge_adjacency(_charges(rng, N))
            fast = egcl_forward(layers[0], params, h, x, v, build_edge_attrs(A, x))
            slow = oracles.egcl_loop(layers[0], params, h, x, v, A)
            worst = max(worst, _maxabs(*[(f.data, s) for f, s in zip(fast, slow)]))
    return worst


# -------------------------------------------------------------- full SET


def random_batch(rng, B, L, N, n=3) -> GraphSequenceBatch:
    x = rng.standard_normal((B, L, N, n))
    v = 0.5 * rng.standard_normal((B, L, N, n))
    charges = rng.choice([-1.0, 1.0], size=(B, N))
    return GraphSequenceBatch(
        h=np.linalg.norm(v, axis=-1, keepdims=True),
        x=x,
        v=v,
        A=charge_adjacency(charges),
        x_target=rng.standard_normal((B, N, n)),
        v_target=rng.standard_normal((B, N, n)),
    )


def _set_config(N, L, **kw) -> SetConfig:
    base = dict(n_particles=N, seq_len=L, horizon=10 * L, d=8, hdim=16, K=2, M=2, dropout=0.0)
    base.update(kw)
    return default_config("set", **base)


def set_equivariance(rng, trials=25, N=5, L=6, n=3) -> float:
    """(x_hat, v_hat) transform with (Q, b); final features invariant."""
    worst = 0.0
    for trial in range(trials):
        cfg = _set_config(N, L)
        model = Model(cfg, seed=int(rng.integers(2**31)))
        batch = random_batch(rng, 2, L, N, n)
        Q, b = _orthogonal(rng, n, trial), random_translation(n, rng)
        x1, v1, h1, _ = set_forward_full(batch, model.params, cfg)
        x2, v2, h2, _ = set_forward_full(transform_batch(batch, Q, b), model.params, cfg)
        worst = max(worst, _maxabs((x2.data, x1.data @ Q.T + b), (v2.data, v1.data @ Q.T), (h2.data, h1.data)))
    return worst


def set_permutation(rng, trials=25, N=5, L=6, adjacency=True) -> float:
    """Full model under node permutation; with adjacency on, its projections are conjugated."""
    worst = 0.0
    for _ in range(trials):
        cfg = _set_config(N, L, adjacency=adjacency)
        model = Model(cfg, seed=int(rng.integers(2**31)))
        batch = random_batch(rng, 2, L, N)
        p = random_permutation(N, rng)
        params_p = dict(model.params)
        for key, t in model.params.items():
            if key.endswith(("etal.QA", "etal.KA", "etal.VA")):
                params_p[key] = T.Tensor(t.data[p][:, p])
            elif ".f_A." in key:
                params_p[key] = T.Tensor(_permute_flat(t.data, key, p, N))
        x1, v1 = model(batch)
        x2, v2 = Model(cfg, params_p)(permute_batch(batch, p))
        worst = max(worst, _maxabs((x2.data, x1.data[:, p]), (v2.data, v1.data[:, p])))
    return worst


def _permute_flat(arr: np.ndarray, key: str, p: np.ndarray, N: int) -> np.ndarray:
    # f_A acts on flattened N*N slices; conjugating A permutes those coordinates
    flat = (p[:, None] * N + p[None, :]).reshape(-1)
    if key.endswith(".0.W"):
        return arr[flat]
    if key.endswith(".1.W"):
        return arr[:, flat]
    if key.endswith(".1.b"):
        return arr[flat]
    return arr


def param_counts_flat(Ns=(5, 20, 30)) -> float:
    """Spread of closed-form counts across N for set/egnn/mlp plus |linear - 3|."""
    worst = 0.0
    for name in ("set", "egnn", "mlp"):
        counts = [count_params(default_config(name, n_particles=N)) for N in Ns]
        worst = max(worst, float(max(counts) - min(counts)))
    for N in Ns:
        worst = max(worst, float(abs(count_params(default_config("linear", n_particles=N)) - 3)))
    return worst


def set_gradient(rng, N=3, L=3, eps=1e-5) -> float:
    """Relative error of the loss gradient over every parameter of a tiny SET."""
    cfg = default_config("set", n_particles=N, seq_len=L, horizon=30, d=4, hdim=8, M=1, K=1, dropout=0.0)
    model = Model(cfg, seed=int(rng.integers(2**31)))
    for key in model.params:
        if ".phi_x.1.W" in key:
            model.params[key].data = model.params[key].data * 1e2
    batch = random_batch(rng, 2, L, N)
    names = sorted(model.params)
    shapes = [model.params[k].shape for k in names]
    sizes = [int(np.prod(s)) for s in shapes]
    flat0 = np.concatenate([model.params[k].data.reshape(-1) for k in names])

    def f(vec):
        params, at = {}, 0
        for key, shape, size in zip(names, shapes, sizes):
            params[key] = vec[at : at + size].reshape(shape)
            at += size
        x_hat, v_hat = Model(cfg, params)(batch)
        return loss(x_hat, v_hat, batch.x_target, batch.v_target, cfg.alpha)

    return float(T.grad_check(f, flat0, eps=eps))


# ----------------------------------------------------------------- suite


@dataclass
class Check:
    name: str
    run: Callable[[np.random.Generator], float]
    tolerance: float


def default_checks(trials: int = 100) -> list[Check]:
    few = max(1, trials // 4)
    return [
        Check("egcl_equivariance", lambda r: egcl_equivariance(r, trials), 1e-9),
        Check("egcl_permutation", lambda r: egcl_permutation(r, few), 1e-10),
        Check("position_equivariance", lambda r: position_equivariance(r, trials), 1e-9),
        Check("velocity_equivariance", lambda r: velocity_equivariance(r, trials), 1e-9),
        Check("attention_row_sums", lambda r: attention_row_sums(r, trials), 1e-12),
        Check("etal_permutation", lambda r: etal_permutation(r, few), 1e-10),
        Check("etal_tensorized_vs_loop", lambda r: tensorized_vs_loop(r), 1e-12),
        Check("egcl_tensorized_vs_loop", lambda r: egcl_vs_loop(r), 1e-12),
        Check("set_equivariance", lambda r: set_equivariance(r, few), 1e-8),
        Check("set_permutation", lambda r: set_permutation(r, few), 1e-10),
        Check("param_counts_flat_in_N", lambda r: param_counts_flat(), 0.0),
        Check("set_gradient", lambda r: set_gradient(r), 1e-4),
    ]


def run_suite(seed: int = 0, trials: int = 100, tolerance: float | None = None, only=None) -> list[dict]:
    """Run every check with its own generator; ``tolerance`` overrides all per-check tolerances."""
    checks = [c for c in default_checks(trials) if not only or c.name in only]
    seeds = np.random.SeedSequence(seed).spawn(len(checks))
    report = []
    for check, ss in zip(checks, seeds):
        tol = check.tolerance if tolerance is None else tolerance
        start = time.perf_counter()
        dev = check.run(np.random.default_rng(ss))
        report.append(
            {
                "property": check.name,
                "max_deviation": dev,
                "tolerance": tol,
                "passed": bool(dev <= tol),
                "seconds": round(time.perf_counter() - start, 3),
            }
        )
    return report
