"""The spacetime transformer (SET), its training loss, and the baselines.

Batched shapes: features ``[B, L, N, d]``, coordinates/velocities ``[B, L, N, n]``,
adjacency ``[B, N, N]`` (replicated over time inside the model).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .egcl import EgclLayer, spatial_stack
from .etal import (
    adjacency_attention,
    build_positional_encodings,
    feature_attention,
    layer_norm_adjacency,
    layer_norm_features,
    position_attention,
    velocity_attention,
)
from .nn import MLP, Dropout, Params, init_linear, linear, linear_count, param_count
from .tensor import Tensor

MODELS = ("set", "egnn", "mlp", "linear")

# Adam learning rates and weight decay per model, from the reported hyper-parameter search.
PAPER_LR = {"set": 4.45e-5, "egnn": 3.98e-5, "mlp": 1.75e-5, "linear": 2.73e-5}
PAPER_WEIGHT_DECAY = {"set": 0.0, "egnn": 0.0, "mlp": 0.0, "linear": 1e-6}


@dataclass(frozen=True)
class SetConfig:
    model: str = "set"
    n_particles: int = 5
    seq_len: int = 10
    horizon: int = 500
    n_dim: int = 3
    in_features: int = 1
    d: int = 16
    hdim: int = 32
    K: int = 2
    M: int = 2
    equivariant: bool = True
    adjacency: bool = False
    spatial: bool = True
    temporal: bool = True
    positional: bool = False
    causal: bool = False
    recompute_edges: bool = True
    alpha: float = 1.0
    B: float = 0.5
    dropout: float = 0.1
    kappa: float = 10000.0
    mlp_hidden: int = 128
    mlp_layers: int = 5

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; choose from {MODELS}")
        if self.M < 1 or self.K < 1:
            raise ValueError("M and K must be >= 1")
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if self.positional and self.model == "set":
            import warnings

            warnings.warn(
                "positional encodings break E(n) equivariance; equivariance checks do not apply",
                stacklevel=3,
            )

    def replace(self, **kw) -> "SetConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SetConfig":
        return cls(**d)


def default_config(model: str, n_particles: int = 5, seq_len: int = 10, horizon: int = 500, **kw) -> SetConfig:
    """Per-model desk-scale defaults; the EGNN baseline uses three spatial layers."""
    base = dict(model=model, n_particles=n_particles, seq_len=seq_len, horizon=horizon)
    if model == "egnn":
        base.update(K=3, M=1, temporal=False)
    base.update(kw)
    return SetConfig(**base)


@dataclass
class GraphSequenceBatch:
    h: np.ndarray  # [B, L, N, in_features]
    x: np.ndarray  # [B, L, N, n]
    v: np.ndarray  # [B, L, N, n]
    A: np.ndarray  # [B, N, N]
    x_target: np.ndarray | None = None  # [B, N, n]
    v_target: np.ndarray | None = None

    def __len__(self) -> int:
        return self.x.shape[0]


def charge_adjacency(charges: np.ndarray) -> np.ndarray:
    """A_ij = c_i c_j with a zero diagonal."""
    A = charges[..., :, None] * charges[..., None, :]
    n = charges.shape[-1]
    A[..., np.arange(n), np.arange(n)] = 0.0
    return A


def make_batch(window: dict[str, np.ndarray], index=slice(None)) -> GraphSequenceBatch:
    """Slice a dataset window into a model batch; node features are speeds |v|."""
    v = window["v"][index]
    return GraphSequenceBatch(
        h=np.linalg.norm(v, axis=-1, keepdims=True),
        x=window["x"][index],
        v=v,
        A=charge_adjacency(window["charges"][index]),
        x_target=window["x_target"][index],
        v_target=window["v_target"][index],
    )


def transform_batch(batch: GraphSequenceBatch, Q: np.ndarray, b: np.ndarray) -> GraphSequenceBatch:
    """Apply x -> Qx + b, v -> Qv to inputs and targets; features are untouched."""

    def tx(a):
        return None if a is None else a @ Q.T + b

    def tv(a):
        return None if a is None else a @ Q.T

    return GraphSequenceBatch(batch.h, tx(batch.x), tv(batch.v), batch.A, tx(batch.x_target), tv(batch.v_target))


def permute_batch(batch: GraphSequenceBatch, perm: np.ndarray) -> GraphSequenceBatch:
    def p(a, axis):
        return None if a is None else np.take(a, perm, axis=axis)

    A = batch.A[..., perm, :][..., :, perm]
    return GraphSequenceBatch(p(batch.h, -2), p(batch.x, -2), p(batch.v, -2), A, p(batch.x_target, -2), p(batch.v_target, -2))


# ------------------------------------------------------------------ loss


def loss(x_hat, v_hat, x_target, v_target, alpha: float = 1.0) -> Tensor:
    """Position MSE plus alpha times velocity MSE, each over N*n, averaged over the batch."""
    x_hat, v_hat = T.as_tensor(x_hat), T.as_tensor(v_hat)
    pos = T.square(x_hat - x_target).mean()
    vel = T.square(v_hat - v_target).mean()
    return pos + alpha * vel


# ------------------------------------------------------------------- SET


def egcl_layers(config: SetConfig, prefix: str) -> list[EgclLayer]:
    return [
        EgclLayer(f"{prefix}.egcl{k}", config.d, config.hdim, config.n_dim, config.equivariant)
        for k in range(config.K)
    ]


def f_theta(config: SetConfig, prefix: str) -> MLP:
    return MLP(f"{prefix}.f_theta", (config.d, config.hdim, config.d), activation="relu")


def f_adj(config: SetConfig, prefix: str) -> MLP:
    nn2 = config.n_particles**2
    return MLP(f"{prefix}.f_A", (nn2, config.hdim, nn2), activation="relu")


def init_set_params(config: SetConfig, seed: int = 0) -> Params:
    rng = np.random.default_rng(seed)
    params: Params = {}
    init_linear(params, "embed", config.in_features, config.d, rng)
    for m in range(config.M):
        prefix = f"block{m}"
        if config.spatial:
            for layer in egcl_layers(config, prefix):
                layer.init(params, rng)
        if config.temporal:
            _init_square(params, f"{prefix}.etal", ("Q", "K", "V"), config.d, rng)
            if config.adjacency:
                _init_square(params, f"{prefix}.etal", ("QA", "KA", "VA"), config.n_particles, rng)
        f_theta(config, prefix).init(params, rng)
        if config.adjacency:
            f_adj(config, prefix).init(params, rng)
    return params


def _init_square(params: Params, prefix: str, names, dim: int, rng) -> None:
    bound = 1.0 / np.sqrt(dim)
    for name in names:
        params[f"{prefix}.{name}"] = Tensor(rng.uniform(-bound, bound, (dim, dim)), requires_grad=True)


def count_set_params(config: SetConfig) -> int:
    """Closed-form parameter count, independent of any initialized arrays."""
    d, h, n = config.d, config.hdim, config.n_dim
    nn2 = config.n_particles**2
    xin = 0 if config.equivariant else 2 * n
    xout = 1 if config.equivariant else n
    egcl = (
        linear_count(2 * d + 2 + xin, h) + linear_count(h, h)  # phi_e
        + linear_count(h, h) + linear_count(h, xout, bias=False)  # phi_x
        + linear_count(d, h) + linear_count(h, 1)  # phi_v
        + linear_count(d + h, h) + linear_count(h, d)  # phi_h
    )
    block = linear_count(d, h) + linear_count(h, d)  # f_theta
    if config.spatial:
        block += config.K * egcl
    if config.temporal:
        block += 3 * d * d + (3 * nn2 if config.adjacency else 0)
    if config.adjacency:
        block += linear_count(nn2, h) + linear_count(h, nn2)
    return linear_count(config.in_features, d) + config.M * block


def spatiotemp_attn(h, x, v, A, params: Params, config: SetConfig, block: int, dropout: Dropout | None = None):
    """One SpatiotempAttn block on time-major tensors ``[B, L, N, .]`` and ``A [B, L, N, N]``."""
    prefix = f"block{block}"
    theta, xi, omega = h, x, v
    if config.spatial:
        theta, xi, omega = spatial_stack(
            egcl_layers(config, prefix),
            params,
            h,
            x,
            v,
            A,
            recompute_edges=config.recompute_edges,
            check=False,
        )
    A_hat = A
    if config.temporal:
        theta_in, xi_in, omega_in, A_in = theta, xi, omega, A
        if config.positional:
            L, N = config.seq_len, config.n_particles
            pe = build_positional_encodings(L, N, config.d, config.n_dim, config.kappa)
            theta_in, xi_in, omega_in, A_in = theta + pe.W, xi + pe.X, omega + pe.Y, A + pe.Z
        # node-major for attention over time
        theta_nm = theta_in.swapaxes(-3, -2)
        theta = feature_attention(
            theta_nm, params[f"{prefix}.etal.Q"], params[f"{prefix}.etal.K"], params[f"{prefix}.etal.V"], config.causal
        ).swapaxes(-3, -2)
        xi = position_attention(xi_in.swapaxes(-3, -2), config.B, config.causal).swapaxes(-3, -2)
        omega = velocity_attention(omega_in.swapaxes(-3, -2), config.causal).swapaxes(-3, -2)
        if config.adjacency:
            A_hat = adjacency_attention(
                A_in, params[f"{prefix}.etal.QA"], params[f"{prefix}.etal.KA"], params[f"{prefix}.etal.VA"]
            )
    theta = f_theta(config, prefix)(params, layer_norm_features(theta), dropout) + theta
    if config.adjacency:
        lead = A_hat.shape[:-2]
        nn2 = config.n_particles**2
        flat = f_adj(config, prefix)(params, layer_norm_adjacency(A_hat).reshape(lead + (nn2,)), dropout)
        A_hat = flat.reshape(A_hat.shape) + A_hat
    return theta, xi, omega, A_hat


def _check_batch(batch: GraphSequenceBatch, config: SetConfig) -> None:
    B = len(batch)
    L, N, n = config.seq_len, config.n_particles, config.n_dim
    expect = {"x": (B, L, N, n), "v": (B, L, N, n), "h": (B, L, N, config.in_features), "A": (B, N, N)}
    for key, shape in expect.items():
        got = getattr(batch, key).shape
        if got != shape:
            raise T.ShapeError(f"batch.{key} has shape {got}, expected {shape}")


def set_forward(batch: GraphSequenceBatch, params: Params, config: SetConfig, dropout: Dropout | None = None):
    """M stacked blocks then the temporal mean of positions and velocities."""
    _check_batch(batch, config)
    h = linear(params, "embed", T.Tensor(batch.h))
    x, v = T.Tensor(batch.x), T.Tensor(batch.v)
    A = T.Tensor(np.repeat(batch.A[:, None], config.seq_len, axis=1))
    for m in range(config.M):
        h, x, v, A = spatiotemp_attn(h, x, v, A, params, config, m, dropout)
    return x.mean(axis=1), v.mean(axis=1)


def set_forward_full(batch: GraphSequenceBatch, params: Params, config: SetConfig):
    """Like :func:`set_forward` but also returns the final block's features and adjacency."""
    _check_batch(batch, config)
    h = linear(params, "embed", T.Tensor(batch.h))
    x, v = T.Tensor(batch.x), T.Tensor(batch.v)
    A = T.Tensor(np.repeat(batch.A[:, None], config.seq_len, axis=1))
    for m in range(config.M):
        h, x, v, A = spatiotemp_attn(h, x, v, A, params, config, m)
    return x.mean(axis=1), v.mean(axis=1), h, A


# -------------------------------------------------------------- baselines


def init_egnn_params(config: SetConfig, seed: int = 0) -> Params:
    rng = np.random.default_rng(seed)
    params: Params = {}
    init_linear(params, "embed", config.in_features, config.d, rng)
    for layer in egcl_layers(config, "block0"):
        layer.init(params, rng)
    return params


def count_egnn_params(config: SetConfig) -> int:
    egcl = EgclLayer("x", config.d, config.hdim, config.n_dim, config.equivariant).n_params()
    return linear_count(config.in_features, config.d) + config.K * egcl


def egnn_baseline_forward(batch: GraphSequenceBatch, params: Params, config: SetConfig, dropout=None):
    """Shared EGCL stack on every time slice, then the temporal mean."""
    _check_batch(batch, config)
    h = linear(params, "embed", T.Tensor(batch.h))
    A = np.repeat(batch.A[:, None], config.seq_len, axis=1)
    _, x, v = spatial_stack(
        egcl_layers(config, "block0"), params, h, T.Tensor(batch.x), T.Tensor(batch.v), A,
        recompute_edges=config.recompute_edges,
    )
    return x.mean(axis=1), v.mean(axis=1)


def mlp_net(config: SetConfig) -> MLP:
    width = config.mlp_hidden
    sizes = (2 * config.seq_len * config.n_dim,) + (width,) * config.mlp_layers + (2 * config.n_dim,)
    return MLP("mlp", sizes, activation="relu")


def init_mlp_params(config: SetConfig, seed: int = 0) -> Params:
    params: Params = {}
    mlp_net(config).init(params, np.random.default_rng(seed))
    return params


def count_mlp_params(config: SetConfig) -> int:
    width, layers = config.mlp_hidden, config.mlp_layers
    return (
        linear_count(2 * config.seq_len * config.n_dim, width)
        + (layers - 1) * linear_count(width, width)
        + linear_count(width, 2 * config.n_dim)
    )


def mlp_baseline_forward(batch: GraphSequenceBatch, params: Params, config: SetConfig, dropout=None):
    """Per-particle MLP on the flattened position/velocity history, shared across particles."""
    _check_batch(batch, config)
    B, L, N, n = batch.x.shape
    hist = np.concatenate([batch.x, batch.v], axis=-1)  # [B, L, N, 2n]
    flat = np.transpose(hist, (0, 2, 1, 3)).reshape(B, N, L * 2 * n)
    out = mlp_net(config)(params, T.Tensor(flat))
    return out[..., :n], out[..., n:]


def init_linear_params(config: SetConfig, seed: int = 0) -> Params:
    # persistence dynamics: x(t) = x(t-1), v(t) = v(t-1)
    return {
        "linear.alpha": Tensor(0.0, requires_grad=True),
        "linear.beta": Tensor(1.0, requires_grad=True),
        "linear.gamma": Tensor(0.0, requires_grad=True),
    }


def count_linear_params(config: SetConfig) -> int:
    return 3


def linear_baseline_forward(batch: GraphSequenceBatch, params: Params, config: SetConfig, dropout=None):
    """Roll x(t) = x(t-1) + alpha v(t-1), v(t) = beta v(t-1) + gamma forward H steps from t = L."""
    alpha, beta, gamma = params["linear.alpha"], params["linear.beta"], params["linear.gamma"]
    x = T.Tensor(batch.x[:, -1])
    v = T.Tensor(batch.v[:, -1])
    for _ in range(config.horizon):
        x, v = x + alpha * v, beta * v + gamma
    return x, v


# ------------------------------------------------------------ model API

_INIT = {"set": init_set_params, "egnn": init_egnn_params, "mlp": init_mlp_params, "linear": init_linear_params}
_FORWARD = {
    "set": set_forward,
    "egnn": egnn_baseline_forward,
    "mlp": mlp_baseline_forward,
    "linear": linear_baseline_forward,
}
_COUNT = {"set": count_set_params, "egnn": count_egnn_params, "mlp": count_mlp_params, "linear": count_linear_params}


def count_params(config: SetConfig) -> int:
    return _COUNT[config.model](config)


class Model:
    """A config plus a parameter dict, dispatching to the matching forward function."""

    def __init__(self, config: SetConfig, params: Params | None = None, seed: int = 0):
        self.config = config
        self.params = params if params is not None else _INIT[config.model](config, seed)

    def __call__(self, batch: GraphSequenceBatch, dropout: Dropout | None = None):
        return _FORWARD[self.config.model](batch, self.params, self.config, dropout)

    def loss(self, batch: GraphSequenceBatch, dropout: Dropout | None = None) -> Tensor:
        x_hat, v_hat = self(batch, dropout)
        return loss(x_hat, v_hat, batch.x_target, batch.v_target, self.config.alpha)

    @property
    def n_params(self) -> int:
        return param_count(self.params)
