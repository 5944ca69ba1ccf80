"""Slow per-node, per-timestep reference implementations of the temporal attention
components and the EGCL update. They exist only to cross-check the tensorized code.
"""

from __future__ import annotations

import numpy as np


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def feature_attention_loop(theta: np.ndarray, Q, K, V) -> np.ndarray:
    """theta [N, L, d] -> [N, L, d], one softmax per (node, target time)."""
    N, L, d = theta.shape
    out = np.zeros_like(theta)
    for i in range(N):
        for t in range(L):
            q = theta[i, t] @ Q
            logits = np.array([q @ (theta[i, s] @ K) for s in range(L)]) / np.sqrt(d)
            w = _softmax(logits)
            for s in range(L):
                out[i, t] += w[s] * (theta[i, s] @ V)
    return out


def position_attention_loop(xi: np.ndarray, B: float = 0.5) -> np.ndarray:
    N, L, n = xi.shape
    out = xi.copy()
    for i in range(N):
        for t in range(L):
            logits = np.array([-np.sum((xi[i, t] - xi[i, s]) ** 2) for s in range(L)]) / np.sqrt(n)
            w = _softmax(logits)
            for s in range(L):
                if s != t:
                    out[i, t] += B * w[s] * (xi[i, s] - xi[i, t])
    return out


def velocity_attention_loop(omega: np.ndarray) -> np.ndarray:
    N, L, n = omega.shape
    out = np.zeros_like(omega)
    for i in range(N):
        for t in range(L):
            logits = np.array([omega[i, t] @ omega[i, s] for s in range(L)]) / np.sqrt(n)
            w = _softmax(logits)
            for s in range(L):
                out[i, t] += w[s] * omega[i, s]
    return out


def adjacency_attention_loop(A: np.ndarray, QA, KA, VA) -> np.ndarray:
    """A [L, N, N]; row r of slice t attends over the N rows of k(t)."""
    L, N, _ = A.shape
    out = np.zeros_like(A)
    for t in range(L):
        q, k, v = A[t] @ QA, A[t] @ KA, A[t] @ VA
        for r in range(N):
            logits = np.array([q[r] @ k[c] for c in range(N)]) / np.sqrt(N)
            w = _softmax(logits)
            for c in range(N):
                out[t, r] += w[c] * v[c]
    return out


_ACT = {
    "silu": lambda z: z / (1.0 + np.exp(-z)),
    "relu": lambda z: np.maximum(z, 0.0),
    "tanh": np.tanh,
}


def mlp_numpy(mlp, params, x: np.ndarray) -> np.ndarray:
    """Plain numpy evaluation of an MLP description on one input vector."""
    act = _ACT[mlp.activation]
    for k in range(mlp.n_layers):
        W = params[f"{mlp.name}.{k}.W"].data
        b = params.get(f"{mlp.name}.{k}.b")
        x = sum(x[r] * W[r] for r in range(W.shape[0]))
        if b is not None:
            x = x + b.data
        if k < mlp.n_layers - 1 or mlp.final_activation:
            x = act(x)
    return x


def egcl_loop(layer, params, h: np.ndarray, x: np.ndarray, v: np.ndarray, A: np.ndarray):
    """Single-graph EGCL with explicit neighbor loops; h [N, d], x, v [N, n], A [N, N]."""

    def run(mlp, inp):
        return mlp_numpy(mlp, params, np.asarray(inp, dtype=np.float64))

    N = h.shape[0]
    C = 1.0 / max(N - 1, 1)
    h_new, x_new, v_new = np.zeros_like(h), np.zeros_like(x), np.zeros_like(v)
    for i in range(N):
        m_sum = np.zeros(layer.hdim)
        push = np.zeros(x.shape[1])
        for j in range(N):
            if j == i:
                continue
            a = [A[i, j], np.sum((x[i] - x[j]) ** 2)]
            pieces = [h[i], h[j]] + ([] if layer.equivariant else [x[i], x[j]]) + [a]
            m = run(layer.phi_e, np.concatenate(pieces))
            m_sum += m
            if layer.equivariant:
                push += (x[i] - x[j]) * run(layer.phi_x, m)
            else:
                push += run(layer.phi_x, m)
        v_new[i] = run(layer.phi_v, h[i]) * v[i] + C * push
        x_new[i] = x[i] + v_new[i]
        h_new[i] = h[i] + run(layer.phi_h, np.concatenate([h[i], m_sum]))
    return h_new, x_new, v_new
