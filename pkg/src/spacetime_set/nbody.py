"""Charged N-body trajectories: simulation, datasets, noise, and the SETD file format.

Particles have unit mass and charges in {-1, +1}; the Coulomb constant is 1 and
the potential is softened, ``U = sum_{i<j} c_i c_j / sqrt(r_ij^2 + softening)``.
Dynamics use kick-drift-kick leapfrog.
"""

from __future__ import annotations

import dataclasses
import io
import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SPLITS = ("train", "val", "test")
DATASET_MAGIC = b"SETD"
DATASET_VERSION = 1


class DatasetFormatError(ValueError):
    """Raised when a dataset file has the wrong magic, version, or is truncated."""


@dataclass(frozen=True)
class ParticleState:
    positions: np.ndarray  # [N, 3]
    velocities: np.ndarray  # [N, 3]
    charges: np.ndarray  # [N], exactly +-1


@dataclass(frozen=True)
class DataConfig:
    n_particles: int = 5
    seq_len: int = 10
    horizon: int = 500
    n_train: int = 1000
    n_val: int = 200
    n_test: int = 200
    noise_variance: float = 0.0
    dt: float = 1e-3
    softening: float = 0.1
    stride: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_particles < 2:
            raise ValueError("n_particles must be >= 2")
        if self.seq_len < 1:
            raise ValueError("seq_len must be >= 1")
        if self.horizon <= self.seq_len:
            raise ValueError(f"horizon H={self.horizon} must exceed seq_len L={self.seq_len}")
        if self.horizon < 10 * self.seq_len:
            warnings.warn(
                f"horizon H={self.horizon} is below 10*L={10 * self.seq_len}; H >> L does not hold",
                stacklevel=3,
            )
        if min(self.n_train, self.n_val, self.n_test) < 0:
            raise ValueError("split counts must be non-negative")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be >= 0")
        if self.dt <= 0 or self.softening <= 0 or self.stride < 1:
            raise ValueError("dt and softening must be positive and stride >= 1")

    def count(self, split: str) -> int:
        return {"train": self.n_train, "val": self.n_val, "test": self.n_test}[split]

    @property
    def n_frames(self) -> int:
        return self.seq_len + self.horizon + 1

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DataConfig":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return cls(**d)


@dataclass
class Trajectory:
    """Frames t = 0..L+H of one rollout."""

    positions: np.ndarray  # [L+H+1, N, 3]
    velocities: np.ndarray  # [L+H+1, N, 3]
    charges: np.ndarray  # [N]
    seq_len: int
    horizon: int
    seed: int

    @property
    def n_particles(self) -> int:
        return self.charges.shape[0]

    def state(self, t: int) -> ParticleState:
        return ParticleState(self.positions[t], self.velocities[t], self.charges)


@dataclass
class Dataset:
    split: str
    config: DataConfig
    trajectories: list[Trajectory] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.trajectories)

    def window(self) -> dict[str, np.ndarray]:
        """Stacked model inputs (frames 1..L) and targets (frame L+H)."""
        L, H = self.config.seq_len, self.config.horizon
        N = self.config.n_particles
        if not self.trajectories:
            empty = np.zeros((0, L, N, 3))
            return {
                "x": empty,
                "v": empty.copy(),
                "charges": np.zeros((0, N)),
                "x_target": np.zeros((0, N, 3)),
                "v_target": np.zeros((0, N, 3)),
            }
        pos = np.stack([t.positions for t in self.trajectories])
        vel = np.stack([t.velocities for t in self.trajectories])
        return {
            "x": pos[:, 1 : L + 1].copy(),
            "v": vel[:, 1 : L + 1].copy(),
            "charges": np.stack([t.charges for t in self.trajectories]),
            "x_target": pos[:, L + H].copy(),
            "v_target": vel[:, L + H].copy(),
        }


# ------------------------------------------------------------------ physics


def sample_initial_conditions(n_particles: int, rng_seed: int) -> ParticleState:
    if n_particles < 2:
        raise ValueError(f"need at least 2 particles, got {n_particles}")
    rng = np.random.default_rng(rng_seed)
    positions = rng.standard_normal((n_particles, 3))
    velocities = 0.5 * rng.standard_normal((n_particles, 3))
    charges = rng.choice(np.array([-1.0, 1.0]), size=n_particles)
    return ParticleState(positions, velocities, charges)


def coulomb_forces(positions: np.ndarray, charges: np.ndarray, softening: float) -> np.ndarray:
    """Softened Coulomb forces; works on [..., N, 3] positions with [..., N] charges."""
    if softening <= 0:
        raise ValueError("softening must be positive")
    diff = positions[..., :, None, :] - positions[..., None, :, :]
    r2 = np.einsum("...k,...k->...", diff, diff)
    weight = (charges[..., :, None] * charges[..., None, :]) * (r2 + softening) ** -1.5
    return np.einsum("...ij,...ijk->...ik", weight, diff)


def potential_energy(positions: np.ndarray, charges: np.ndarray, softening: float) -> np.ndarray:
    diff = positions[..., :, None, :] - positions[..., None, :, :]
    r2 = np.einsum("...k,...k->...", diff, diff)
    pair = (charges[..., :, None] * charges[..., None, :]) / np.sqrt(r2 + softening)
    n = positions.shape[-2]
    iu = np.triu_indices(n, k=1)
    return pair[..., iu[0], iu[1]].sum(axis=-1)


def total_energy(state: ParticleState, softening: float) -> float:
    kinetic = 0.5 * float(np.sum(state.velocities**2))
    return kinetic + float(potential_energy(state.positions, state.charges, softening))


def _leapfrog(x, v, charges, dt, softening, forces=None):
    if forces is None:
        forces = coulomb_forces(x, charges, softening)
    v_half = v + 0.5 * dt * forces
    x_new = x + dt * v_half
    forces_new = coulomb_forces(x_new, charges, softening)
    return x_new, v_half + 0.5 * dt * forces_new, forces_new


def integrate_step(state: ParticleState, dt: float, softening: float) -> ParticleState:
    """One kick-drift-kick leapfrog step."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x, v, _ = _leapfrog(state.positions, state.velocities, state.charges, dt, softening)
    return ParticleState(x, v, state.charges)


def simulate(
    state: ParticleState, n_steps: int, dt: float, softening: float, stride: int = 1
) -> tuple[np.ndarray, np.ndarray]:
    """Positions and velocities at frames 0..n_steps, ``stride`` leapfrog steps apart.

    Batched initial conditions ([..., N, 3]) are integrated in lockstep.
    """
    x, v, c = state.positions, state.velocities, state.charges
    xs = np.empty((n_steps + 1,) + x.shape)
    vs = np.empty_like(xs)
    xs[0], vs[0] = x, v
    forces = coulomb_forces(x, c, softening)
    for t in range(1, n_steps + 1):
        for _ in range(stride):
            x, v, forces = _leapfrog(x, v, c, dt, softening, forces)
        xs[t], vs[t] = x, v
    return xs, vs


# ----------------------------------------------------------------- datasets


def _split_seeds(config: DataConfig, split: str) -> tuple[list[int], int]:
    root = np.random.SeedSequence(config.seed)
    split_seq = root.spawn(len(SPLITS))[SPLITS.index(split)]
    traj_seq, noise_seq = split_seq.spawn(2)
    count = config.count(split)
    seeds = [int(s.generate_state(1, dtype=np.uint64)[0]) for s in traj_seq.spawn(count)]
    return seeds, int(noise_seq.generate_state(1, dtype=np.uint64)[0])


def generate_dataset(config: DataConfig, split: str = "train") -> Dataset:
    """Simulate one split; noise is applied when ``config.noise_variance > 0``."""
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    seeds, noise_seed = _split_seeds(config, split)
    dataset = Dataset(split, config)
    if seeds:
        inits = [sample_initial_conditions(config.n_particles, s) for s in seeds]
        batch = ParticleState(
            np.stack([s.positions for s in inits]),
            np.stack([s.velocities for s in inits]),
            np.stack([s.charges for s in inits]),
        )
        xs, vs = simulate(batch, config.n_frames - 1, config.dt, config.softening, config.stride)
        for k, seed in enumerate(seeds):
            dataset.trajectories.append(
                Trajectory(
                    positions=np.ascontiguousarray(xs[:, k]),
                    velocities=np.ascontiguousarray(vs[:, k]),
                    charges=batch.charges[k].copy(),
                    seq_len=config.seq_len,
                    horizon=config.horizon,
                    seed=seed,
                )
            )
    if config.noise_variance > 0:
        dataset = add_noise(dataset, config.noise_variance, noise_seed)
    return dataset


def generate_splits(config: DataConfig) -> dict[str, Dataset]:
    return {split: generate_dataset(config, split) for split in SPLITS}


def add_noise(dataset: Dataset, variance: float, seed: int) -> Dataset:
    """Add i.i.d. N(0, variance) to every stored position and velocity."""
    if variance < 0:
        raise ValueError(f"noise variance must be >= 0, got {variance}")
    rng = np.random.default_rng(seed)
    std = np.sqrt(variance)
    noisy = []
    for traj in dataset.trajectories:
        dx = std * rng.standard_normal(traj.positions.shape)
        dv = std * rng.standard_normal(traj.velocities.shape)
        noisy.append(
            dataclasses.replace(
                traj,
                positions=traj.positions + dx if variance else traj.positions.copy(),
                velocities=traj.velocities + dv if variance else traj.velocities.copy(),
                charges=traj.charges.copy(),
            )
        )
    return Dataset(dataset.split, dataset.config, noisy)


# ---------------------------------------------------------------- file format


def dumps_dataset(dataset: Dataset) -> bytes:
    header = {
        "split": dataset.split,
        "count": len(dataset),
        "seeds": [t.seed for t in dataset.trajectories],
        "config": dataset.config.to_dict(),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(DATASET_MAGIC)
    buf.write(struct.pack("<I", DATASET_VERSION))
    buf.write(struct.pack("<Q", len(blob)))
    buf.write(blob)
    for traj in dataset.trajectories:
        for arr in (traj.charges, traj.positions, traj.velocities):
            buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def loads_dataset(data: bytes) -> Dataset:
    view = memoryview(data)
    if bytes(view[:4]) != DATASET_MAGIC:
        raise DatasetFormatError("bad magic bytes: not a SETD dataset (version mismatch)")
    if len(data) < 16:
        raise DatasetFormatError("truncated header")
    (version,) = struct.unpack("<I", view[4:8])
    if version != DATASET_VERSION:
        raise DatasetFormatError(f"unsupported dataset version {version}")
    (blob_len,) = struct.unpack("<Q", view[8:16])
    if 16 + blob_len > len(data):
        raise DatasetFormatError("truncated config blob")
    header = json.loads(bytes(view[16 : 16 + blob_len]).decode("utf-8"))
    config = DataConfig.from_dict(header["config"])
    N, T = config.n_particles, config.n_frames
    sizes = (N, T * N * 3, T * N * 3)
    per_traj = 8 * sum(sizes)
    offset = 16 + blob_len
    if len(data) - offset != per_traj * header["count"]:
        raise DatasetFormatError(
            f"truncated payload: expected {per_traj * header['count']} bytes, got {len(data) - offset}"
        )
    dataset = Dataset(header["split"], config)
    for k in range(header["count"]):
        parts = []
        for n in sizes:
            parts.append(np.frombuffer(view[offset : offset + 8 * n], dtype="<f8").astype(np.float64))
            offset += 8 * n
        dataset.trajectories.append(
            Trajectory(
                positions=parts[1].reshape(T, N, 3),
                velocities=parts[2].reshape(T, N, 3),
                charges=parts[0],
                seq_len=config.seq_len,
                horizon=config.horizon,
                seed=int(header["seeds"][k]),
            )
        )
    return dataset


def write_dataset(dataset: Dataset, path: str | Path) -> None:
    Path(path).write_bytes(dumps_dataset(dataset))


def read_dataset(path: str | Path) -> Dataset:
    return loads_dataset(Path(path).read_bytes())
