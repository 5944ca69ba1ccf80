"""Adam, the training loop, evaluation metrics, and model checkpoints."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from . import tensor as T
from .model import PAPER_LR, PAPER_WEIGHT_DECAY, GraphSequenceBatch, Model, SetConfig, make_batch
from .nbody import Dataset
from .nn import Dropout, Params, from_arrays, to_arrays

log = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss or gradient."""


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Params, state: AdamState, grads: dict[str, np.ndarray] | None = None) -> None:
    """One bias-corrected Adam update, in place. Gradients default to ``p.grad``.

    Weight decay is the classic L2 form (added to the gradient). A parameter
    whose gradient is identically zero is skipped, moments included, so zero
    gradients never move a parameter regardless of optimizer history.
    """
    if grads is None:
        grads = {k: p.grad for k, p in params.items() if p.grad is not None}
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise T.ShapeError(f"gradient for {name} has shape {g.shape}, parameter {params[name].shape}")
        if not np.isfinite(g).all():
            raise DivergenceError(f"non-finite gradient for {name} at Adam step {state.t + 1}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, g in grads.items():
        if not g.any():
            continue
        p = params[name]
        if state.weight_decay:
            g = g + state.weight_decay * p.data
        m = state.m.get(name, 0.0)
        v = state.v.get(name, 0.0)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 100
    lr: float | None = None  # None: per-model default
    weight_decay: float | None = None
    seed: int = 0
    eval_every: int = 1
    grad_clip: float | None = None
    checkpoint_path: str | None = None
    log_path: str | None = None


def _window(data) -> dict[str, np.ndarray]:
    return data.window() if isinstance(data, Dataset) else data


def evaluate(model: Model, data, batch_size: int = 500) -> dict[str, float]:
    """Dropout-free metrics over a split.

    ``pos_mse``/``vel_mse`` average squared error over every coordinate;
    ``loss`` is the training objective ``pos + alpha * vel``; ``mse`` pools
    positions and velocities, ``(pos + vel) / 2``.
    """
    window = _window(data)
    count = window["x"].shape[0]
    if count == 0:
        raise ValueError("cannot evaluate on an empty split")
    pos = vel = 0.0
    for start in range(0, count, batch_size):
        batch = make_batch(window, slice(start, start + batch_size))
        x_hat, v_hat = model(batch)
        pos += float(np.sum((x_hat.data - batch.x_target) ** 2))
        vel += float(np.sum((v_hat.data - batch.v_target) ** 2))
    per = window["x_target"][0].size * count
    pos, vel = pos / per, vel / per
    return {"pos_mse": pos, "vel_mse": vel, "loss": pos + model.config.alpha * vel, "mse": 0.5 * (pos + vel)}


def _clip(params: Params, max_norm: float) -> None:
    total = np.sqrt(sum(float(np.sum(p.grad**2)) for p in params.values() if p.grad is not None))
    if total > max_norm:
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * (max_norm / total)


def train(model: Model, splits: dict, config: TrainConfig = TrainConfig()) -> list[dict]:
    """Minibatch Adam on the combined loss; returns one history record per epoch.

    Record 0 holds the metrics of the untrained model. The parameters of the
    best validation epoch are restored at the end and, if configured, saved.
    """
    train_w = _window(splits["train"])
    val_w = _window(splits["val"]) if "val" in splits else None
    n_train = train_w["x"].shape[0]
    if n_train == 0:
        raise ValueError("training split is empty")
    _check_compatible(model.config, train_w)
    batch_size = min(config.batch_size, n_train)
    name = model.config.model
    state = AdamState(
        lr=PAPER_LR[name] if config.lr is None else config.lr,
        weight_decay=PAPER_WEIGHT_DECAY[name] if config.weight_decay is None else config.weight_decay,
    )
    order_rng, drop_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(2))
    dropout = Dropout(model.config.dropout, drop_rng)

    history = []
    start = time.perf_counter()
    try:
        init = evaluate(model, train_w)
    except T.NonFiniteError as exc:
        raise DivergenceError("non-finite forward pass with the initial parameters") from exc
    record = _record(0, init["loss"], model, val_w, start)
    history.append(record)
    best = (record.get("val_loss", init["loss"]), to_arrays(model.params), 0)
    _log(config, record)

    for epoch in range(1, config.epochs + 1):
        perm = order_rng.permutation(n_train)
        losses = []
        for k in range(0, n_train, batch_size):
            batch = make_batch(train_w, perm[k : k + batch_size])
            for p in model.params.values():
                p.zero_grad()
            try:
                loss = model.loss(batch, dropout)
            except T.NonFiniteError as exc:
                raise DivergenceError(f"non-finite forward pass at epoch {epoch}, step {state.t + 1}") from exc
            T.backward(loss, model.params.values())
            if config.grad_clip is not None:
                _clip(model.params, config.grad_clip)
            adam_step(model.params, state)
            losses.append(loss.item())
        if epoch % config.eval_every and epoch != config.epochs:
            continue
        record = _record(epoch, float(np.mean(losses)), model, val_w, start)
        history.append(record)
        _log(config, record)
        score = record.get("val_loss", record["train_loss"])
        if score < best[0]:
            best = (score, to_arrays(model.params), epoch)

    for key, arr in best[1].items():
        model.params[key].data = arr
    if config.checkpoint_path:
        save_model(model, config.checkpoint_path, {"epoch": best[2], "val_loss": best[0]})
    return history


def _check_compatible(cfg: SetConfig, window: dict) -> None:
    _, L, N, n = window["x"].shape
    if (L, N, n) != (cfg.seq_len, cfg.n_particles, cfg.n_dim):
        raise ValueError(
            f"model expects L={cfg.seq_len}, N={cfg.n_particles}, n={cfg.n_dim} "
            f"but dataset has L={L}, N={N}, n={n}"
        )


def _record(epoch: int, train_loss: float, model: Model, val_w, start: float) -> dict:
    record = {"epoch": epoch, "train_loss": train_loss}
    if val_w is not None and val_w["x"].shape[0]:
        m = evaluate(model, val_w)
        record.update(val_pos_mse=m["pos_mse"], val_vel_mse=m["vel_mse"], val_mse=m["mse"], val_loss=m["loss"])
    record["wall_ms"] = round(1000 * (time.perf_counter() - start), 3)
    return record


def _log(config: TrainConfig, record: dict) -> None:
    log.info("epoch %d train_loss %.6g val_mse %s", record["epoch"], record["train_loss"], record.get("val_mse"))
    if config.log_path:
        with open(config.log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record) + "\n")


def save_model(model: Model, path: str | Path, extra: dict | None = None) -> None:
    meta = {"config": model.config.to_dict()}
    meta.update(extra or {})
    checkpoint.save(path, to_arrays(model.params), meta)


def load_model(path: str | Path) -> Model:
    arrays, meta = checkpoint.load(path)
    if not meta or "config" not in meta:
        raise checkpoint.FormatError("checkpoint has no model config")
    return Model(SetConfig.from_dict(meta["config"]), from_arrays(arrays))


def predict(model: Model, batch: GraphSequenceBatch) -> tuple[np.ndarray, np.ndarray]:
    x_hat, v_hat = model(batch)
    return x_hat.data, v_hat.data
