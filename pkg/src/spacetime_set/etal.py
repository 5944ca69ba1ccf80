"""Equivariant temporal attention (feature, position, velocity, adjacency),
sinusoidal positional encodings, and the two layer normalizations.

Node-major tensors put time on axis -2: features ``[..., N, L, d]``, positions
and velocities ``[..., N, L, n]``. Adjacency is time-major, ``[..., L, N, N]``.
All softmaxes run over the last axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

LN_EPS = 1e-5


def _causal_mask(L: int, causal: bool) -> np.ndarray | None:
    return np.tril(np.ones((L, L), dtype=bool)) if causal else None


def feature_attention(theta, Q, K, V, causal: bool = False) -> Tensor:
    """Scaled dot-product attention over time with node-shared projections."""
    theta = T.as_tensor(theta)
    d = theta.shape[-1]
    if T.as_tensor(Q).shape != (d, d):
        raise T.ShapeError(f"projection shape {T.as_tensor(Q).shape} does not match feature dim {d}")
    q, k, v = theta @ Q, theta @ K, theta @ V
    alpha = T.softmax_last((q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(d)), _causal_mask(theta.shape[-2], causal))
    return alpha @ v


def position_weights(xi, causal: bool = False) -> Tensor:
    """beta = softmax(-|xi(t) - xi(s)|^2 / sqrt(n)), shape [..., N, L, L]."""
    xi = T.as_tensor(xi)
    n = xi.shape[-1]
    diff = xi.reshape(xi.shape[:-1] + (1, n)) - xi.reshape(xi.shape[:-2] + (1,) + xi.shape[-2:])
    dist2 = T.square(diff).sum(axis=-1)
    return T.softmax_last(dist2 * (-1.0 / np.sqrt(n)), _causal_mask(xi.shape[-2], causal))


def position_attention(xi, B: float = 0.5, causal: bool = False) -> Tensor:
    """xi~(t) = xi(t) + B * sum_{s != t} beta(t, s) (xi(s) - xi(t))."""
    xi = T.as_tensor(xi)
    L = xi.shape[-2]
    off_diag = 1.0 - np.eye(L)
    w = position_weights(xi, causal) * off_diag
    pull = w @ xi - w.sum(axis=-1, keepdims=True) * xi
    return xi + B * pull


def velocity_weights(omega, causal: bool = False) -> Tensor:
    """gamma = softmax(omega omega^T / sqrt(n)), shape [..., N, L, L]."""
    omega = T.as_tensor(omega)
    n = omega.shape[-1]
    return T.softmax_last((omega @ omega.swapaxes(-1, -2)) * (1.0 / np.sqrt(n)), _causal_mask(omega.shape[-2], causal))


def velocity_attention(omega, causal: bool = False) -> Tensor:
    omega = T.as_tensor(omega)
    return velocity_weights(omega, causal) @ omega


def adjacency_attention(A, QA, KA, VA) -> Tensor:
    """pi = softmax(q k^T / sqrt(N)) with q = A Q_A, k = A K_A, v = A V_A; returns pi v."""
    A = T.as_tensor(A)
    N = A.shape[-1]
    if A.shape[-2] != N or T.as_tensor(QA).shape != (N, N):
        raise T.ShapeError(f"adjacency {A.shape} incompatible with projection {T.as_tensor(QA).shape}")
    q, k, v = A @ QA, A @ KA, A @ VA
    pi = T.softmax_last((q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(N)))
    return pi @ v


# ------------------------------------------------------------- encodings


def sinusoid_table(length: int, dim: int, kappa: float = 10000.0) -> np.ndarray:
    """table[i, 2j] = sin(i / kappa^(2j/dim)), table[i, 2j+1] = cos(same angle).

    An odd ``dim`` ends on a sin column.
    """
    pos = np.arange(length, dtype=np.float64)[:, None]
    col = np.arange(dim)
    angle = pos / kappa ** (2 * (col // 2) / dim)
    return np.where(col % 2 == 0, np.sin(angle), np.cos(angle))


@dataclass(frozen=True)
class PositionalEncodings:
    W: np.ndarray  # [L, N, d]
    X: np.ndarray  # [L, N, n]
    Y: np.ndarray  # [L, N, n]
    Z: np.ndarray  # [L, N, N]
    kappa: float


def build_positional_encodings(L: int, N: int, d: int, n: int, kappa: float = 10000.0) -> PositionalEncodings:
    def over_nodes(table):
        return np.repeat(table[:, None, :], N, axis=1)

    xy = over_nodes(sinusoid_table(L, n, kappa))
    return PositionalEncodings(
        W=over_nodes(sinusoid_table(L, d, kappa)),
        X=xy,
        Y=xy.copy(),
        Z=sinusoid_table(L, N * N, kappa).reshape(L, N, N),
        kappa=kappa,
    )


# ---------------------------------------------------------- normalization


def _normalize(a: Tensor, axes: tuple[int, ...], eps: float) -> Tensor:
    centered = a - a.mean(axis=axes, keepdims=True)
    var = T.square(centered).mean(axis=axes, keepdims=True)
    # a variance at or below eps is treated as constant: output is ~0 there
    return centered / T.sqrt(T.maximum(var, eps))


def layer_norm_features(theta, eps: float = LN_EPS) -> Tensor:
    """Normalize each feature vector over its last axis."""
    return _normalize(T.as_tensor(theta), (-1,), eps)


def layer_norm_adjacency(A, eps: float = LN_EPS) -> Tensor:
    """Normalize each [N, N] adjacency slice over all N^2 entries."""
    return _normalize(T.as_tensor(A), (-2, -1), eps)
