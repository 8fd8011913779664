"""Planar arm carrying a 16x16 RGB camera over a procedural 7x7 room.

Room frame: the room spans [-3.5, 3.5]^2 on the floor plane z = 0, walls rise
to ``WALL_HEIGHT``. An environment offset ``delta`` translates the whole room
relative to the arm base, so a camera at egocentric position ``p`` sits at
``p - delta`` in room coordinates.

The raycaster only uses elementwise IEEE operations (no transcendental
functions, no reductions), which makes every pixel independent of how many
cameras are rendered together.
"""
from __future__ import annotations

import colorsys
import math
from dataclasses import dataclass, field

import numpy as np

from .numcore import RandomStream

ROOM_HALF = 3.5
WALL_HEIGHT = 2.5
CAMERA_HEIGHT = 1.6
CAMERA_PITCH = -0.62
FOV_Y = math.pi / 2
RES = 16
N_SENSORY = RES * RES * 3
ENV_RANGE = 1.75
ANCHORS = (-2.625, -0.875, 0.875, 2.625)
JITTER = 0.3
CHECKER = 0.5
AMBIENT = 0.3
TOWARD_LIGHT = np.array([1.0, 1.0, 2.0]) / math.sqrt(6.0)  # light travels along (-1,-1,-2)
SKY = (0.62, 0.74, 0.88)

SPHERE, BOX, CYLINDER, CONE = range(4)
KIND_NAMES = ("sphere", "box", "cylinder", "cone")

SEGMENT3 = 0.5
SEGMENT4 = 0.375
SLIDER_RANGE = 0.375


class SimulationError(RuntimeError):
    pass


# ---------------------------------------------------------------- kinematics

def _check_range(m, bound, what):
    if np.any(np.abs(m) > bound):
        raise ValueError(f"{what} outside [-{bound}, {bound}]")


def fk3(m) -> np.ndarray:
    """Three hinges of length 0.5; zero angles extend the arm along +x."""
    m = np.asarray(m, dtype=np.float64)
    _check_range(m, math.pi, "hinge angle")
    flat = m.reshape(-1, 3)
    out = np.empty((flat.shape[0], 2))
    for i, (a, b, c) in enumerate(flat.tolist()):
        t1 = a
        t2 = t1 + b
        t3 = t2 + c
        out[i, 0] = SEGMENT3 * (math.cos(t1) + math.cos(t2) + math.cos(t3))
        out[i, 1] = SEGMENT3 * (math.sin(t1) + math.sin(t2) + math.sin(t3))
    return out.reshape(m.shape[:-1] + (2,))


def fk4(m) -> np.ndarray:
    """Four hinges with sliders on the two central segments.

    Motor order: hinge1, hinge2, slider2, hinge3, slider3, hinge4. A slider
    value t gives a segment of length (t + 0.375) / 2, so the reach stays 1.5.
    """
    m = np.asarray(m, dtype=np.float64)
    flat = m.reshape(-1, 6)
    _check_range(flat[:, [0, 1, 3, 5]], math.pi, "hinge angle")
    _check_range(flat[:, [2, 4]], SLIDER_RANGE, "slider")
    out = np.empty((flat.shape[0], 2))
    for i, (h1, h2, t2, h3, t3, h4) in enumerate(flat.tolist()):
        lengths = (SEGMENT4, (t2 + SLIDER_RANGE) / 2, (t3 + SLIDER_RANGE) / 2, SEGMENT4)
        theta = 0.0
        x = y = 0.0
        for ln, h in zip(lengths, (h1, h2, h3, h4)):
            theta += h
            x += ln * math.cos(theta)
            y += ln * math.sin(theta)
        out[i] = (x, y)
    return out.reshape(m.shape[:-1] + (2,))


def random_motor3(stream: RandomStream) -> np.ndarray:
    return np.array([stream.uniform(-math.pi, math.pi) for _ in range(3)])


def random_motor4(stream: RandomStream) -> np.ndarray:
    h1 = stream.uniform(-math.pi, math.pi)
    h2 = stream.uniform(-math.pi, math.pi)
    t2 = stream.uniform(-SLIDER_RANGE, SLIDER_RANGE)
    h3 = stream.uniform(-math.pi, math.pi)
    t3 = stream.uniform(-SLIDER_RANGE, SLIDER_RANGE)
    h4 = stream.uniform(-math.pi, math.pi)
    return np.array([h1, h2, t2, h3, t3, h4])


def motor_grid3(n: int) -> np.ndarray:
    if n < 2:
        raise ValueError("values_per_axis must be >= 2")
    v = np.linspace(-math.pi, math.pi, n)
    return np.array([(a, b, c) for a in v for b in v for c in v])


def motor_grid4(n: int) -> np.ndarray:
    if n < 2:
        raise ValueError("values_per_axis must be >= 2")
    h = np.linspace(-math.pi, math.pi, n)
    t = np.linspace(-SLIDER_RANGE, SLIDER_RANGE, n)
    mesh = np.meshgrid(h, h, t, h, t, h, indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


def env_move(stream: RandomStream) -> np.ndarray:
    return np.array([stream.uniform(-ENV_RANGE, ENV_RANGE),
                     stream.uniform(-ENV_RANGE, ENV_RANGE)])


# ---------------------------------------------------------------- scene

@dataclass(frozen=True)
class RoomObject:
    kind: int
    x: float
    y: float
    size: float
    color: tuple[float, float, float]


@dataclass(frozen=True)
class RoomScene:
    objects: tuple[RoomObject, ...]
    floor: tuple[tuple[float, float, float], tuple[float, float, float]]
    # walls in order +x, -x, +y, -y
    walls: tuple[tuple[tuple[float, float, float], tuple[float, float, float]], ...]

    def to_array(self) -> np.ndarray:
        rows = [[o.kind, o.x, o.y, o.size, *o.color] for o in self.objects]
        flat = [v for row in rows for v in row]
        flat += [c for col in self.floor for c in col]
        flat += [c for wall in self.walls for col in wall for c in col]
        return np.array([float(len(self.objects))] + flat)

    def to_bytes(self) -> bytes:
        return self.to_array().astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "RoomScene":
        a = np.frombuffer(blob, dtype="<f8").tolist()
        n = int(a[0])
        objs = []
        pos = 1
        for _ in range(n):
            k, x, y, s, r, g, b = a[pos:pos + 7]
            objs.append(RoomObject(int(k), x, y, s, (r, g, b)))
            pos += 7
        cols = [tuple(a[pos + 3 * i: pos + 3 * i + 3]) for i in range(10)]
        return cls(tuple(objs), (cols[0], cols[1]),
                   tuple((cols[2 + 2 * w], cols[3 + 2 * w]) for w in range(4)))


def _random_color(stream: RandomStream) -> tuple[float, float, float]:
    h = stream.random()
    s = stream.uniform(0.5, 1.0)
    v = stream.uniform(0.5, 1.0)
    return colorsys.hsv_to_rgb(h, s, v)


def scene_init(stream: RandomStream) -> RoomScene:
    objects = []
    for ax in ANCHORS:
        for ay in ANCHORS:
            kind = stream.randbelow(4)
            x = ax + stream.uniform(-JITTER, JITTER)
            y = ay + stream.uniform(-JITTER, JITTER)
            size = stream.uniform(0.15, 0.45)
            objects.append(RoomObject(kind, x, y, size, _random_color(stream)))
    floor = (_random_color(stream), _random_color(stream))
    walls = tuple((_random_color(stream), _random_color(stream)) for _ in range(4))
    return RoomScene(tuple(objects), floor, walls)


@dataclass(frozen=True)
class CameraPose:
    x: float
    y: float
    height: float = CAMERA_HEIGHT
    pitch: float = CAMERA_PITCH

    def translated(self, dx: float, dy: float) -> "CameraPose":
        return CameraPose(self.x + dx, self.y + dy, self.height, self.pitch)


# ---------------------------------------------------------------- raycaster

def ray_directions(pitch: float = CAMERA_PITCH, fov_y: float = FOV_Y, res: int = RES) -> np.ndarray:
    """Unit directions through pixel centres, row-major from the top-left."""
    fwd = np.array([math.cos(pitch), 0.0, math.sin(pitch)])
    right = np.array([0.0, -1.0, 0.0])
    up = np.cross(right, fwd)
    half = math.tan(fov_y / 2)
    dirs = np.empty((res * res, 3))
    for i in range(res):
        v = (1.0 - (i + 0.5) * 2.0 / res) * half
        for j in range(res):
            u = ((j + 0.5) * 2.0 / res - 1.0) * half
            d = fwd + u * right + v * up
            dirs[i * res + j] = d / math.sqrt(float(d @ d))
    return dirs


_DIRS = {}


def _dirs_for(pitch: float) -> np.ndarray:
    if pitch not in _DIRS:
        _DIRS[pitch] = ray_directions(pitch)
    return _DIRS[pitch]


def _roots(a, b, c):
    """Both roots of a t^2 + 2 b t + c = 0 (NaN where no real root).

    Uses the cancellation-free form so that ``a == 0`` still yields the
    linear root in the second slot.
    """
    disc = b * b - a * c
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    q = -(b + np.where(b >= 0, sq, -sq))
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = q / a
        t2 = c / q
    t1 = np.where(ok, t1, np.nan)
    t2 = np.where(ok, t2, np.nan)
    return np.minimum(t1, t2), np.maximum(t1, t2)  # NaN propagates as no-hit below


class _Hits:
    """Nearest-hit accumulator over (cameras, rays)."""

    def __init__(self, shape):
        self.t = np.full(shape, np.inf)
        self.nx = np.zeros(shape)
        self.ny = np.zeros(shape)
        self.nz = np.zeros(shape)
        self.r = np.full(shape, SKY[0])
        self.g = np.full(shape, SKY[1])
        self.b = np.full(shape, SKY[2])
        self.lit = np.zeros(shape, dtype=bool)

    def offer(self, t, valid, nx, ny, nz, r, g, b):
        take = valid & (t > 1e-9) & (t < self.t)
        self.t = np.where(take, t, self.t)
        self.nx = np.where(take, nx, self.nx)
        self.ny = np.where(take, ny, self.ny)
        self.nz = np.where(take, nz, self.nz)
        self.r = np.where(take, r, self.r)
        self.g = np.where(take, g, self.g)
        self.b = np.where(take, b, self.b)
        self.lit = self.lit | take


def _checker(u, v, colors):
    idx = (np.floor(u / CHECKER) + np.floor(v / CHECKER)) % 2 == 0
    (r0, g0, b0), (r1, g1, b1) = colors
    return np.where(idx, r0, r1), np.where(idx, g0, g1), np.where(idx, b0, b1)


def render_many(scene: RoomScene, cam_xy_room: np.ndarray, pitch: float = CAMERA_PITCH,
                height: float = CAMERA_HEIGHT) -> np.ndarray:
    """Render cameras at room-frame positions ``cam_xy_room`` (B, 2).

    Returns (B, 768) values in [0, 1]: pixels row-major from the top-left,
    channels interleaved R, G, B.
    """
    cam = np.atleast_2d(np.asarray(cam_xy_room, dtype=np.float64))
    if np.any(np.abs(cam) >= ROOM_HALF) or not (0.0 < height < WALL_HEIGHT):
        raise SimulationError("camera outside the room")
    dirs = _dirs_for(pitch)
    ox = cam[:, 0:1]
    oy = cam[:, 1:2]
    oz = height
    dx = dirs[None, :, 0]
    dy = dirs[None, :, 1]
    dz = dirs[None, :, 2]
    shape = (cam.shape[0], dirs.shape[0])
    hits = _Hits(shape)
    zero = np.zeros(shape)
    one = np.ones(shape)

    with np.errstate(divide="ignore", invalid="ignore"):
        # floor
        t = np.broadcast_to(-oz / dz, shape)
        px = ox + t * dx
        py = oy + t * dy
        valid = (dz < 0) & (np.abs(px) <= ROOM_HALF) & (np.abs(py) <= ROOM_HALF)
        hits.offer(t, valid, zero, zero, one, *_checker(px, py, scene.floor))

        # walls: +x, -x, +y, -y
        for w, (axis, sign) in enumerate(((0, 1.0), (0, -1.0), (1, 1.0), (1, -1.0))):
            o_a, d_a = (ox, dx) if axis == 0 else (oy, dy)
            o_b, d_b = (oy, dy) if axis == 0 else (ox, dx)
            t = (sign * ROOM_HALF - o_a) / d_a
            pb = o_b + t * d_b
            pz = oz + t * dz
            valid = (sign * d_a > 0) & (np.abs(pb) <= ROOM_HALF) & (pz >= 0) & (pz <= WALL_HEIGHT)
            n = -sign * one
            nx, ny = (n, zero) if axis == 0 else (zero, n)
            hits.offer(t, valid, nx, ny, zero, *_checker(pb, pz, scene.walls[w]))

        for obj in scene.objects:
            _intersect_object(hits, obj, ox, oy, oz, dx, dy, dz, shape)

    shade = AMBIENT + (1.0 - AMBIENT) * np.maximum(
        0.0, hits.nx * TOWARD_LIGHT[0] + hits.ny * TOWARD_LIGHT[1] + hits.nz * TOWARD_LIGHT[2])
    shade = np.where(hits.lit, shade, 1.0)
    img = np.empty(shape + (3,))
    img[..., 0] = hits.r * shade
    img[..., 1] = hits.g * shade
    img[..., 2] = hits.b * shade
    return img.reshape(cam.shape[0], -1)


def _intersect_object(hits, obj, ox, oy, oz, dx, dy, dz, shape):
    s = obj.size
    r, g, b = obj.color
    qx = ox - obj.x
    qy = oy - obj.y
    if obj.kind == SPHERE:
        qz = oz - s
        bq = qx * dx + qy * dy + qz * dz
        c = qx * qx + qy * qy + qz * qz - s * s
        t0, _ = _roots(np.ones(shape), bq, c)
        hx, hy, hz = qx + t0 * dx, qy + t0 * dy, qz + t0 * dz
        hits.offer(t0, np.isfinite(t0), hx / s, hy / s, hz / s, r, g, b)
    elif obj.kind == BOX:
        lo = (-s, -s, -oz)
        hi = (s, s, 2 * s - oz)
        tmin = np.full(shape, -np.inf)
        tmax = np.full(shape, np.inf)
        axis_hit = np.zeros(shape, dtype=np.int64)
        sign_hit = np.zeros(shape)
        for ax, (q, d) in enumerate(((qx, dx), (qy, dy), (0.0, dz))):
            d = np.broadcast_to(d, shape)
            q = np.broadcast_to(q, shape)
            t1 = (lo[ax] - q) / d
            t2 = (hi[ax] - q) / d
            near = np.minimum(t1, t2)
            far = np.maximum(t1, t2)
            # a ray parallel to the slab: inside iff q within the bounds
            inside = (q >= lo[ax]) & (q <= hi[ax])
            near = np.where(d == 0, np.where(inside, -np.inf, np.inf), near)
            far = np.where(d == 0, np.where(inside, np.inf, -np.inf), far)
            upd = near > tmin
            tmin = np.where(upd, near, tmin)
            axis_hit = np.where(upd, ax, axis_hit)
            sign_hit = np.where(upd, np.where(d > 0, -1.0, 1.0), sign_hit)
            tmax = np.minimum(tmax, far)
        valid = (tmin <= tmax) & (tmin > 0)
        nx = np.where(axis_hit == 0, sign_hit, 0.0)
        ny = np.where(axis_hit == 1, sign_hit, 0.0)
        nz = np.where(axis_hit == 2, sign_hit, 0.0)
        hits.offer(tmin, valid, nx, ny, nz, r, g, b)
    elif obj.kind == CYLINDER:
        top = 2 * s
        a = dx * dx + dy * dy
        bq = qx * dx + qy * dy
        c = qx * qx + qy * qy - s * s
        t0, _ = _roots(np.broadcast_to(a, shape), bq, np.broadcast_to(c, shape))
        hz = oz + t0 * dz
        valid = np.isfinite(t0) & (hz >= 0) & (hz <= top)
        hits.offer(t0, valid, (qx + t0 * dx) / s, (qy + t0 * dy) / s, 0.0, r, g, b)
        tc = np.broadcast_to((top - oz) / dz, shape)
        cx = qx + tc * dx
        cy = qy + tc * dy
        valid = (dz < 0) & (cx * cx + cy * cy <= s * s)
        hits.offer(tc, valid, 0.0, 0.0, 1.0, r, g, b)
    else:  # cone, apex up, base radius s, height 2s
        h = 2 * s
        k2 = 0.25  # (radius / height)^2
        qz = oz - h
        a = dx * dx + dy * dy - k2 * dz * dz
        bq = qx * dx + qy * dy - k2 * qz * dz
        c = qx * qx + qy * qy - k2 * qz * qz
        a = np.broadcast_to(a, shape)
        c = np.broadcast_to(c, shape)
        t_lo, t_hi = _roots(a, bq, c)
        best = np.full(shape, np.inf)
        for t in (t_hi, t_lo):  # t_lo offered last so it wins when both valid
            z = qz + t * dz
            ok = np.isfinite(t) & (t > 1e-9) & (z <= 0) & (z >= -h)
            best = np.where(ok, t, best)
        hx = qx + best * dx
        hy = qy + best * dy
        hz = qz + best * dz
        gx, gy, gz = hx, hy, -k2 * hz
        norm = np.sqrt(gx * gx + gy * gy + gz * gz)
        with np.errstate(divide="ignore", invalid="ignore"):
            hits.offer(best, np.isfinite(best) & (norm > 0), gx / norm, gy / norm, gz / norm, r, g, b)


def render(scene: RoomScene, offset, pose: CameraPose) -> np.ndarray:
    """One 768-value observation with the room translated by ``offset``."""
    cam = np.array([[pose.x - offset[0], pose.y - offset[1]]])
    return render_many(scene, cam, pose.pitch, pose.height)[0]


def observe(scene: RoomScene, offset, m, fk=fk3) -> np.ndarray:
    p = fk(m)
    return render(scene, offset, CameraPose(float(p[0]), float(p[1])))


def write_ppm(path, observation: np.ndarray, scale: int = 16) -> None:
    """Dump one observation as a binary PPM, nearest-neighbour upscaled."""
    img = np.clip(np.asarray(observation).reshape(RES, RES, 3), 0.0, 1.0)
    img = np.repeat(np.repeat(img, scale, axis=0), scale, axis=1)
    data = np.rint(img * 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6 {data.shape[1]} {data.shape[0]} 255\n".encode("ascii"))
        fh.write(data.tobytes())
