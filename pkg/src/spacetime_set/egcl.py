"""E(n)-equivariant graph convolution with velocities, on complete graphs.

Nodes are laid out along axis -2; any leading axes (batch, time) are carried
through unchanged, so one call processes every time slice with shared weights.
Directed edges (i, j), i != j, are enumerated receiver-major with senders in
increasing order, giving the ``[N, N-1]`` neighbor layout of :func:`build_edge_attrs`.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensor as T
from .nn import MLP, Params
from .tensor import Tensor


@lru_cache(maxsize=None)
def neighbor_index(n_nodes: int) -> np.ndarray:
    """[N, N-1] array: row i lists j != i in increasing order."""
    idx = np.arange(n_nodes)
    return np.array([idx[idx != i] for i in range(n_nodes)], dtype=np.int64).reshape(n_nodes, n_nodes - 1)


@lru_cache(maxsize=None)
def _selectors(n_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """One-hot receiver/sender matrices of shape [N(N-1), N]."""
    nbr = neighbor_index(n_nodes)
    rows = n_nodes * (n_nodes - 1)
    recv = np.zeros((rows, n_nodes))
    send = np.zeros((rows, n_nodes))
    recv[np.arange(rows), np.repeat(np.arange(n_nodes), n_nodes - 1)] = 1.0
    send[np.arange(rows), nbr.reshape(-1)] = 1.0
    return recv, send


def build_edge_attrs(adjacency, positions, check: bool = True) -> Tensor:
    """Edge attributes ``(A_ij, |x_i - x_j|^2)`` of shape [..., N, N-1, 2].

    ``check`` rejects adjacency matrices that are not symmetric with zero diagonal.
    """
    A = T.as_tensor(adjacency)
    x = T.as_tensor(positions)
    n_nodes = x.shape[-2]
    if A.shape[-2:] != (n_nodes, n_nodes):
        raise T.ShapeError(f"adjacency {A.shape} does not match positions {x.shape}")
    if check:
        a = A.data
        if not np.array_equal(a, np.swapaxes(a, -1, -2)):
            raise ValueError("asymmetric adjacency")
        if np.any(np.diagonal(a, axis1=-2, axis2=-1) != 0):
            raise ValueError("adjacency must have a zero diagonal")
    recv, send = _selectors(n_nodes)
    diff = T.mix_rows(recv - send, x)
    dist2 = T.square(diff).sum(axis=-1, keepdims=True)
    flat = neighbor_index(n_nodes) + n_nodes * np.arange(n_nodes)[:, None]
    lead = A.shape[:-2]
    charge = A.reshape(lead + (n_nodes * n_nodes,))[..., flat.reshape(-1)]
    charge = charge.reshape(lead + (n_nodes * (n_nodes - 1), 1))
    if charge.shape[:-2] != dist2.shape[:-2]:
        charge = T.broadcast_to(charge, dist2.shape[:-2] + charge.shape[-2:])
    edges = T.concat([charge, dist2], axis=-1)
    return edges.reshape(dist2.shape[:-2] + (n_nodes, n_nodes - 1, 2))


@dataclass(frozen=True)
class EgclLayer:
    """Shapes and MLPs of one layer. ``equivariant=False`` gives the plain
    message-passing variant used for the equivariance ablation."""

    name: str
    d: int
    hdim: int
    n_dim: int = 3
    equivariant: bool = True

    @property
    def phi_e(self) -> MLP:
        extra = 0 if self.equivariant else 2 * self.n_dim
        return MLP(f"{self.name}.phi_e", (2 * self.d + 2 + extra, self.hdim, self.hdim), final_activation=True)

    @property
    def phi_x(self) -> MLP:
        out = 1 if self.equivariant else self.n_dim
        return MLP(f"{self.name}.phi_x", (self.hdim, self.hdim, out), final_bias=False, final_scale=1e-3)

    @property
    def phi_v(self) -> MLP:
        return MLP(f"{self.name}.phi_v", (self.d, self.hdim, 1))

    @property
    def phi_h(self) -> MLP:
        return MLP(f"{self.name}.phi_h", (self.d + self.hdim, self.hdim, self.d))

    def mlps(self) -> tuple[MLP, ...]:
        return (self.phi_e, self.phi_x, self.phi_v, self.phi_h)

    def n_params(self) -> int:
        return sum(m.n_params() for m in self.mlps())

    def init(self, params: Params, rng: np.random.Generator) -> None:
        for m in self.mlps():
            m.init(params, rng)


def egcl_forward(layer: EgclLayer, params: Params, h, x, v, edges) -> tuple[Tensor, Tensor, Tensor]:
    """One EGCL update; returns ``(h', x', v')`` with ``x' = x + v'``."""
    h, x, v, edges = (T.as_tensor(a) for a in (h, x, v, edges))
    n_nodes = h.shape[-2]
    if x.shape[-2] != n_nodes or v.shape != x.shape or edges.shape[-3:] != (n_nodes, n_nodes - 1, 2):
        raise T.ShapeError(
            f"egcl shapes inconsistent: h {h.shape}, x {x.shape}, v {v.shape}, edges {edges.shape}"
        )
    lead = h.shape[:-2]
    n_edges = n_nodes * (n_nodes - 1)
    recv, send = _selectors(n_nodes)
    e_flat = edges.reshape(edges.shape[:-3] + (n_edges, 2))
    pieces = [T.mix_rows(recv, h), T.mix_rows(send, h)]
    if not layer.equivariant:
        pieces += [T.mix_rows(recv, x), T.mix_rows(send, x)]
    pieces.append(e_flat if e_flat.shape[:-2] == lead else T.broadcast_to(e_flat, lead + (n_edges, 2)))
    m_ij = layer.phi_e(params, T.concat(pieces, axis=-1))

    C = 1.0 / max(n_nodes - 1, 1)
    if layer.equivariant:
        push = T.mix_rows(recv - send, x) * layer.phi_x(params, m_ij)
    else:
        push = layer.phi_x(params, m_ij)
    push = push.reshape(lead + (n_nodes, n_nodes - 1, x.shape[-1])).sum(axis=-2)
    v_new = layer.phi_v(params, h) * v + C * push
    x_new = x + v_new

    m_i = m_ij.reshape(lead + (n_nodes, n_nodes - 1, layer.hdim)).sum(axis=-2)
    h_new = h + layer.phi_h(params, T.concat([h, m_i], axis=-1))
    return h_new, x_new, v_new


def spatial_stack(
    layers: list[EgclLayer],
    params: Params,
    h,
    x,
    v,
    adjacency,
    recompute_edges: bool = True,
    check: bool = True,
) -> tuple[Tensor, Tensor, Tensor]:
    """K sequential EGCL layers; returns the spatially-contextual ``(theta, xi, omega)``.

    With ``recompute_edges`` the distance channel is rebuilt from the current
    coordinates before every layer; otherwise the first layer's edges are reused.
    """
    if not layers:
        raise ValueError("spatial stack needs K >= 1 layers")
    edges = build_edge_attrs(adjacency, x, check=check)
    for k, layer in enumerate(layers):
        if k and recompute_edges:
            edges = build_edge_attrs(adjacency, x, check=False)
        h, x, v = egcl_forward(layer, params, h, x, v, edges)
    return h, x, v
