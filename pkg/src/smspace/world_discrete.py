"""Toroidal 10x10 grid world with smooth periodic 4-D sensory fields.

The agent's sensor moves in a 5x5 working space centred on its base. The
3-DoF agent maps motors non-linearly and redundantly to positions; the 6-DoF
agent mixes six warped motor components with a random matrix.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numcore import RandomStream

GRID = 10
N_SENSORY = 4
N_TERMS = 3
MIN_INV_AMPLITUDE = 0.1
ENV_RANGE = 10
CUBE_VALUES = tuple((j / 4) ** 3 for j in range(5))  # m1, m2 values landing on cells


def round_half_away(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True)
class DiscreteScene:
    """``lambdas[i, k, j]`` holds lambda_{j+1,k+1}^{i+1}."""
    lambdas: np.ndarray  # (4, 3, 4)

    def to_bytes(self) -> bytes:
        return np.ascontiguousarray(self.lambdas, dtype="<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "DiscreteScene":
        return cls(np.frombuffer(blob, dtype="<f8", count=N_SENSORY * N_TERMS * 4)
                   .reshape(N_SENSORY, N_TERMS, 4).copy())


def sensory_at(scene: DiscreteScene, cells) -> np.ndarray:
    """Sensory state(s) of grid cell(s) ``(r, c)``; cells wrap modulo 10."""
    cells = np.asarray(cells)
    single = cells.ndim == 1
    cells = np.atleast_2d(cells) % GRID
    r = cells[:, 0:1, None].astype(np.float64)  # (n, 1, 1) broadcasts over (i, k)
    c = cells[:, 1:2, None].astype(np.float64)
    lam = scene.lambdas
    freq = round_half_away(lam[..., 0])
    rows = np.cos(2 * np.pi * (freq * r / GRID + lam[..., 1])) / lam[..., 0]
    cols = np.cos(2 * np.pi * (freq * c / GRID + lam[..., 3])) / lam[..., 2]
    s = (rows + cols).sum(axis=-1)
    return s[0] if single else s


def all_cells() -> np.ndarray:
    return np.array([(r, c) for r in range(GRID) for c in range(GRID)])


def min_cell_separation(scene: DiscreteScene) -> float:
    s = sensory_at(scene, all_cells())
    diff = s[:, None, :] - s[None, :, :]
    d = np.sqrt((diff * diff).sum(-1))
    d[np.diag_indices_from(d)] = np.inf
    return float(d.min())


def _draw_lambda(stream: RandomStream, bounded: bool) -> float:
    while True:
        v = stream.uniform(-2.0, 2.0)
        if not bounded or abs(v) >= MIN_INV_AMPLITUDE:
            return v


def scene_init(stream: RandomStream, min_separation: float = 1e-6) -> DiscreteScene:
    """Random scene; redrawn while two cells share a sensory state."""
    while True:
        lam = np.empty((N_SENSORY, N_TERMS, 4))
        for i in range(N_SENSORY):
            for k in range(N_TERMS):
                for j in range(4):
                    lam[i, k, j] = _draw_lambda(stream, bounded=j in (0, 2))
        scene = DiscreteScene(lam)
        if min_cell_separation(scene) > min_separation:
            return scene


# ---------------------------------------------------------------- 3-DoF agent

def forward_map3(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if np.any(m < 0) or np.any(m > 1):
        raise ValueError("discrete-world motors must lie in [0, 1]")
    return 4.0 * np.cbrt(m[..., :2]) - 2.0


def motor_grid3(n: int) -> np.ndarray:
    """n^3 motors: cube-spaced m1, m2 (regular positions) and regular m3."""
    if n < 2:
        raise ValueError("values_per_axis must be >= 2")
    lin = np.array([j / (n - 1) for j in range(n)])
    cubes = lin ** 3
    return np.array([(a, b, c) for a in cubes for b in cubes for c in lin])


def random_motor3(stream: RandomStream) -> np.ndarray:
    m1 = CUBE_VALUES[stream.randbelow(5)]
    m2 = CUBE_VALUES[stream.randbelow(5)]
    return np.array([m1, m2, stream.random()])


def env_move(stream: RandomStream) -> np.ndarray:
    return np.array([stream.integers(-ENV_RANGE, ENV_RANGE),
                     stream.integers(-ENV_RANGE, ENV_RANGE)], dtype=np.float64)


def observe_positions(scene: DiscreteScene, offsets, positions) -> np.ndarray:
    """Sensory state for egocentric positions under environment offsets."""
    cells = np.rint(np.asarray(positions)).astype(np.int64) - np.asarray(offsets).astype(np.int64)
    return sensory_at(scene, cells)


def observe(scene: DiscreteScene, offset, m) -> np.ndarray:
    return observe_positions(scene, offset, forward_map3(m))


# ---------------------------------------------------------------- 6-DoF agent

def warp6(m) -> np.ndarray:
    """Componentwise warp of [0,1]^6 onto [0,1]^6."""
    m = np.asarray(m, dtype=np.float64)
    return np.stack([
        m[..., 0] ** 2,
        np.sqrt(m[..., 1]),
        np.cbrt(m[..., 2]),
        0.1 * (1.1 / 0.1) ** m[..., 3] - 0.1,
        np.log(m[..., 4] * (math.e - 1.0) + 1.0),
        m[..., 5],
    ], axis=-1)


@dataclass(frozen=True)
class MixingAgent6:
    """Random mixing ``A`` followed by a per-row rescale onto [0, 1].

    Row bounds come from interval arithmetic over the unit hypercube, so the
    rescaled mixture stays in [0, 1] for every admissible motor.
    """
    A: np.ndarray  # (6, 6)

    @property
    def row_lo(self) -> np.ndarray:
        return np.minimum(self.A, 0.0).sum(axis=1)

    @property
    def row_hi(self) -> np.ndarray:
        return np.maximum(self.A, 0.0).sum(axis=1)

    def mixed(self, m) -> np.ndarray:
        f = warp6(m)
        raw = f @ self.A.T
        lo, hi = self.row_lo, self.row_hi
        return np.clip((raw - lo) / (hi - lo), 0.0, 1.0)

    def to_bytes(self) -> bytes:
        return np.ascontiguousarray(self.A, dtype="<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "MixingAgent6":
        return cls(np.frombuffer(blob, dtype="<f8", count=36).reshape(6, 6).copy())


def mixing_agent_init(stream: RandomStream) -> MixingAgent6:
    while True:
        A = stream.uniform_array(-2.0, 2.0, (6, 6))
        # a row with one sign everywhere still has a non-empty interval;
        # only an all-zero row would be degenerate
        if np.all(np.maximum(A, 0).sum(1) - np.minimum(A, 0).sum(1) > 1e-9):
            return MixingAgent6(A)


def forward_map6(agent: MixingAgent6, m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if np.any(m < 0) or np.any(m > 1):
        raise ValueError("6-DoF motors must lie in [0, 1]")
    return 4.0 * agent.mixed(m)[..., :2] - 2.0


def random_motor6(stream: RandomStream) -> np.ndarray:
    return np.array([stream.random() for _ in range(6)])


def motor_grid6(n: int) -> np.ndarray:
    if n < 2:
        raise ValueError("values_per_axis must be >= 2")
    lin = np.array([j / (n - 1) for j in range(n)])
    mesh = np.meshgrid(*([lin] * 6), indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)
