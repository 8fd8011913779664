"""Exploration regimes, dataset generation and normalization, evaluation
sampling, and the binary dataset file format."""
from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .numcore import RandomStream
from .worlds import World, make_world, world_from_bytes

DATASET_MAGIC = b"SMDS0001"
_HEADER = struct.Struct("<5IQ")


class Regime(enum.IntEnum):
    """When the environment moves relative to each transition."""
    MEM = 0  # between t and t+1
    MM = 1  # never
    MME = 2  # after t+1

    @classmethod
    def parse(cls, value) -> "Regime":
        if isinstance(value, Regime):
            return value
        if isinstance(value, int):
            return cls(value)
        try:
            return cls[str(value).upper()]
        except KeyError:
            raise ValueError(f"unknown regime {value!r}") from None


@dataclass
class Transition:
    m_t: np.ndarray
    s_t: np.ndarray
    m_next: np.ndarray
    s_next: np.ndarray
    env_before: np.ndarray
    env_after: np.ndarray


def _draw(world: World, regime: Regime, env: np.ndarray, stream: RandomStream):
    m_t = world.random_motor(stream)
    m_next = world.random_motor(stream)
    env_before = env
    if regime == Regime.MEM:
        env_after = world.env_move(stream)
        carry = env_after
    elif regime == Regime.MM:
        env_after = env
        carry = env
    else:
        env_after = env
        carry = world.env_move(stream)
    return m_t, m_next, env_before, env_after, carry


def generate_transition(world: World, regime, env, stream: RandomStream):
    """Returns ``(transition, env carried into the next transition)``."""
    regime = Regime.parse(regime)
    m_t, m_next, e0, e1, carry = _draw(world, regime, np.asarray(env, dtype=np.float64), stream)
    s = world.observe_many(np.stack([e0, e1]), np.stack([m_t, m_next]))
    return Transition(m_t, s[0], m_next, s[1], e0.copy(), e1.copy()), carry


@dataclass
class Dataset:
    world: World
    regime: Regime
    seed: int
    m_t: np.ndarray
    s_t: np.ndarray
    m_next: np.ndarray
    s_next: np.ndarray
    env_before: np.ndarray
    env_after: np.ndarray

    def __len__(self) -> int:
        return self.m_t.shape[0]

    @property
    def n_motor(self) -> int:
        return self.m_t.shape[1]

    @property
    def n_sensory(self) -> int:
        return self.s_t.shape[1]

    def transition(self, k: int) -> Transition:
        return Transition(self.m_t[k], self.s_t[k], self.m_next[k], self.s_next[k],
                          self.env_before[k], self.env_after[k])

    def equals(self, other: "Dataset") -> bool:
        return (self.world.world_id == other.world.world_id and self.regime == other.regime
                and self.seed == other.seed
                and self.world.scene_bytes() == other.world.scene_bytes()
                and all(np.array_equal(getattr(self, f), getattr(other, f))
                        for f in ("m_t", "s_t", "m_next", "s_next", "env_before", "env_after")))


def generate_dataset(world_name: str, regime, k: int, seed: int, world: World | None = None) -> Dataset:
    """Chain ``k`` transitions from labelled sub-streams of ``seed``.

    Passing ``world`` reuses an existing scene/agent instead of deriving one.
    """
    if k < 1:
        raise ValueError("dataset needs at least one transition")
    regime = Regime.parse(regime)
    if world is None:
        world = make_world(world_name, seed)
    env = world.env_move(RandomStream.derive(seed, "initial-env"))
    stream = RandomStream.derive(seed, "explore")
    m_t = np.empty((k, world.n_motor))
    m_next = np.empty((k, world.n_motor))
    e0 = np.empty((k, 2))
    e1 = np.empty((k, 2))
    for i in range(k):
        m_t[i], m_next[i], e0[i], e1[i], env = _draw(world, regime, env, stream)
    s = world.observe_many(np.vstack([e0, e1]), np.vstack([m_t, m_next]))
    return Dataset(world, regime, seed, m_t, s[:k].copy(), m_next, s[k:].copy(), e0, e1)


# ---------------------------------------------------------------- normalization

def apply_norm(lo: np.ndarray, hi: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Map ``[lo, hi]`` onto ``[-1, 1]`` per component; constant components map to 0."""
    x = np.asarray(x, dtype=np.float64)
    span = hi - lo
    flat = span == 0
    safe = np.where(flat, 1.0, span)
    return np.where(flat, 0.0, 2.0 * (x - lo) / safe - 1.0)


@dataclass
class NormStats:
    motor_min: np.ndarray
    motor_max: np.ndarray
    sensory_min: np.ndarray
    sensory_max: np.ndarray

    def motor(self, m):
        return apply_norm(self.motor_min, self.motor_max, m)

    def sensory(self, s):
        return apply_norm(self.sensory_min, self.sensory_max, s)


def fit_norm(dataset: Dataset) -> NormStats:
    m = np.vstack([dataset.m_t, dataset.m_next])
    s = np.vstack([dataset.s_t, dataset.s_next])
    return NormStats(m.min(0), m.max(0), s.min(0), s.max(0))


@dataclass
class NormalizedData:
    m_t: np.ndarray
    s_t: np.ndarray
    m_next: np.ndarray
    s_next: np.ndarray

    def __len__(self):
        return self.m_t.shape[0]

    def take(self, idx):
        return self.m_t[idx], self.s_t[idx], self.m_next[idx], self.s_next[idx]


def normalize_dataset(dataset: Dataset, stats: NormStats) -> NormalizedData:
    return NormalizedData(stats.motor(dataset.m_t), stats.sensory(dataset.s_t),
                          stats.motor(dataset.m_next), stats.sensory(dataset.s_next))


def minibatch(data: NormalizedData, batch_size: int, stream: RandomStream, pool: int | None = None):
    """``batch_size`` distinct transitions drawn uniformly from the first ``pool``."""
    pool = len(data) if pool is None else pool
    if batch_size > pool:
        raise ValueError(f"batch size {batch_size} exceeds {pool} available transitions")
    return data.take(stream.sample_without_replacement(pool, batch_size))


# ---------------------------------------------------------------- evaluation set

@dataclass
class EvalSet:
    motors: np.ndarray
    motors_norm: np.ndarray
    positions: np.ndarray

    def __len__(self):
        return self.motors.shape[0]


def eval_set(world: World, stats: NormStats) -> EvalSet:
    motors = world.eval_motors()
    return EvalSet(motors, stats.motor(motors), world.positions(motors))


# ---------------------------------------------------------------- file format

class DatasetFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


def dataset_to_bytes(ds: Dataset) -> bytes:
    k = len(ds)
    header = DATASET_MAGIC + _HEADER.pack(ds.world.world_id, int(ds.regime), ds.n_motor,
                                          ds.n_sensory, k, ds.seed)
    records = np.hstack([ds.m_t, ds.s_t, ds.m_next, ds.s_next, ds.env_before, ds.env_after])
    blob = ds.world.scene_bytes()
    return (header + np.ascontiguousarray(records, dtype="<f8").tobytes()
            + struct.pack("<Q", len(blob)) + blob)


def dataset_from_bytes(data: bytes) -> Dataset:
    if len(data) < 8 or data[:8] != DATASET_MAGIC:
        raise DatasetFormatError("bad magic", 0)
    if len(data) < 8 + _HEADER.size:
        raise DatasetFormatError("truncated header", len(data))
    world_id, regime, n_m, n_s, k, seed = _HEADER.unpack_from(data, 8)
    offset = 8 + _HEADER.size
    if world_id not in (1, 2, 3, 4):
        raise DatasetFormatError(f"unknown world id {world_id}", 8)
    if regime not in (0, 1, 2):
        raise DatasetFormatError(f"unknown regime {regime}", 12)
    width = 2 * n_m + 2 * n_s + 4
    end = offset + 8 * width * k
    if end + 8 > len(data):
        raise DatasetFormatError("truncated records", len(data))
    rec = np.frombuffer(data, dtype="<f8", count=width * k, offset=offset).reshape(k, width).astype(np.float64)
    (blob_len,) = struct.unpack_from("<Q", data, end)
    if end + 8 + blob_len != len(data):
        raise DatasetFormatError(f"scene blob length {blob_len} does not match file size", end)
    world = world_from_bytes(world_id, data[end + 8:])
    if world.n_motor != n_m or world.n_sensory != n_s:
        raise DatasetFormatError("dimensions do not match world", 16)
    cols = np.cumsum([0, n_m, n_s, n_m, n_s, 2, 2])
    parts = [rec[:, a:b].copy() for a, b in zip(cols[:-1], cols[1:])]
    return Dataset(world, Regime(regime), seed, *parts)


def save_dataset(ds: Dataset, path) -> str:
    """Write the dataset; returns the SHA-256 digest of the file."""
    data = dataset_to_bytes(ds)
    with open(path, "wb") as fh:
        fh.write(data)
    return hashlib.sha256(data).hexdigest()


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        return dataset_from_bytes(fh.read())
