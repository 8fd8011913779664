"""Uniform interface over the four agent/environment setups."""
from __future__ import annotations

import numpy as np

from . import world_arm as arm
from . import world_discrete as disc
from .numcore import RandomStream

WORLD_IDS = {"discrete": 1, "arm": 2, "discrete6": 3, "arm4": 4}
WORLD_NAMES = {v: k for k, v in WORLD_IDS.items()}


class World:
    """A scene plus an agent body.

    ``observe_many`` takes per-sample environment offsets and motors and
    returns raw sensory states; ``positions`` gives ground-truth egocentric
    sensor positions (never shown to the network).
    """
    name: str
    n_motor: int
    n_sensory: int
    n_position = 2
    eval_values_per_axis: int

    @property
    def world_id(self) -> int:
        return WORLD_IDS[self.name]

    def eval_motors(self) -> np.ndarray:
        return self.motor_grid(self.eval_values_per_axis)

    def scene_bytes(self) -> bytes:
        raise NotImplementedError


class DiscreteWorld(World):
    name = "discrete"
    n_motor = 3
    n_sensory = disc.N_SENSORY
    eval_values_per_axis = 5

    def __init__(self, scene: disc.DiscreteScene):
        self.scene = scene

    @classmethod
    def create(cls, seed: int) -> "DiscreteWorld":
        return cls(disc.scene_init(RandomStream.derive(seed, "scene")))

    def random_motor(self, stream):
        return disc.random_motor3(stream)

    def env_move(self, stream):
        return disc.env_move(stream)

    def positions(self, motors):
        return disc.forward_map3(motors)

    def motor_grid(self, n):
        return disc.motor_grid3(n)

    def observe_many(self, offsets, motors):
        return disc.observe_positions(self.scene, offsets, self.positions(motors))

    def scene_bytes(self):
        return self.scene.to_bytes()

    @classmethod
    def from_scene_bytes(cls, blob):
        return cls(disc.DiscreteScene.from_bytes(blob))


class Discrete6World(DiscreteWorld):
    name = "discrete6"
    n_motor = 6

    def __init__(self, scene: disc.DiscreteScene, agent: disc.MixingAgent6):
        self.scene = scene
        self.agent = agent

    @classmethod
    def create(cls, seed: int) -> "Discrete6World":
        return cls(disc.scene_init(RandomStream.derive(seed, "scene")),
                   disc.mixing_agent_init(RandomStream.derive(seed, "agent")))

    def random_motor(self, stream):
        return disc.random_motor6(stream)

    def positions(self, motors):
        return disc.forward_map6(self.agent, motors)

    def motor_grid(self, n):
        return disc.motor_grid6(n)

    def scene_bytes(self):
        return self.scene.to_bytes() + self.agent.to_bytes()

    @classmethod
    def from_scene_bytes(cls, blob):
        n = disc.N_SENSORY * disc.N_TERMS * 4 * 8
        return cls(disc.DiscreteScene.from_bytes(blob[:n]), disc.MixingAgent6.from_bytes(blob[n:]))


class ArmWorld(World):
    name = "arm"
    n_motor = 3
    n_sensory = arm.N_SENSORY
    eval_values_per_axis = 6
    chunk = 512

    def __init__(self, scene: arm.RoomScene):
        self.scene = scene

    @classmethod
    def create(cls, seed: int):
        return cls(arm.scene_init(RandomStream.derive(seed, "scene")))

    def random_motor(self, stream):
        return arm.random_motor3(stream)

    def env_move(self, stream):
        return arm.env_move(stream)

    def positions(self, motors):
        return arm.fk3(motors)

    def motor_grid(self, n):
        return arm.motor_grid3(n)

    def observe_many(self, offsets, motors):
        cams = self.positions(motors) - np.asarray(offsets, dtype=np.float64)
        cams = np.atleast_2d(cams)
        out = np.empty((cams.shape[0], self.n_sensory))
        for start in range(0, cams.shape[0], self.chunk):
            out[start:start + self.chunk] = arm.render_many(self.scene, cams[start:start + self.chunk])
        return out

    def scene_bytes(self):
        return self.scene.to_bytes()

    @classmethod
    def from_scene_bytes(cls, blob):
        return cls(arm.RoomScene.from_bytes(blob))


class Arm4World(ArmWorld):
    name = "arm4"
    n_motor = 6
    eval_values_per_axis = 5

    def random_motor(self, stream):
        return arm.random_motor4(stream)

    def positions(self, motors):
        return arm.fk4(motors)

    def motor_grid(self, n):
        return arm.motor_grid4(n)


WORLD_CLASSES = {"discrete": DiscreteWorld, "arm": ArmWorld,
                 "discrete6": Discrete6World, "arm4": Arm4World}


def make_world(name: str, seed: int) -> World:
    try:
        cls = WORLD_CLASSES[name]
    except KeyError:
        raise ValueError(f"unknown world {name!r}") from None
    return cls.create(seed)


def world_from_bytes(world_id: int, blob: bytes) -> World:
    return WORLD_CLASSES[WORLD_NAMES[world_id]].from_scene_bytes(blob)
