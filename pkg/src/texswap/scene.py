"""Scene sampling: primitives in a walled box, camera, lights, materials.

A scene is a floor slab, four perimeter walls of varying heights, and 1-8
floating/resting primitives, all inside a square footprint of side
``box_side`` with the floor top at y=0. Walls and floor are box primitives
with reserved object ids so one intersection path covers everything.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import envmap, materials
from .geometry import PRIMITIVE_KINDS, bounding_radius, normalize, random_quat, identity_quat

MISS_ID = 0
FLOOR_ID = 100
WALL_IDS = (101, 102, 103, 104)


@dataclass
class PrimitiveSpec:
    kind: str
    center: np.ndarray
    orientation: np.ndarray  # unit quaternion (w, x, y, z)
    size: np.ndarray  # per-kind dims: sphere (r,); box (hx,hy,hz); cylinder (r,hh); torus (R,r)
    material_id: int
    object_id: int


@dataclass
class Camera:
    position: np.ndarray
    look_at: np.ndarray
    vfov_deg: float


@dataclass
class SceneSpec:
    primitives: list
    wall_heights: np.ndarray  # 4 reals >= 0, order +x, -x, +z, -z
    floor_material: int
    wall_materials: tuple
    camera: Camera
    env: envmap.EnvLight
    seed: int
    materials: list = field(default_factory=list)
    box_side: float = 4.0
    wall_thickness: float = 0.1
    floor_thickness: float = 0.3

    def all_surfaces(self):
        """Primitives plus structural floor/wall boxes, in a fixed order."""
        s = self.box_side / 2.0
        wt = self.wall_thickness
        ft = self.floor_thickness
        out = list(self.primitives)
        out.append(PrimitiveSpec(
            kind="box", center=np.array([0.0, -ft / 2.0, 0.0]),
            orientation=identity_quat(),
            size=np.array([s + wt, ft / 2.0, s + wt]),
            material_id=self.floor_material, object_id=FLOOR_ID))
        # wall k spans the full footprint edge; zero-height walls are omitted
        axes = ((1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0))
        for k, (ax, az) in enumerate(axes):
            h = float(self.wall_heights[k])
            if h <= 0.0:
                continue
            center = np.array([ax * (s + wt / 2.0), h / 2.0, az * (s + wt / 2.0)])
            if ax != 0.0:
                half = np.array([wt / 2.0, h / 2.0, s + wt])
            else:
                half = np.array([s + wt, h / 2.0, wt / 2.0])
            out.append(PrimitiveSpec(
                kind="box", center=center, orientation=identity_quat(),
                size=half, material_id=self.wall_materials[k], object_id=WALL_IDS[k]))
        return out

    def material_of(self, material_id):
        return self.materials[material_id]


@dataclass
class GenConfig:
    box_side: float = 4.0
    wall_thickness: float = 0.1
    floor_thickness: float = 0.3
    min_primitives: int = 1
    max_primitives: int = 4
    kinds: tuple = PRIMITIVE_KINDS
    sphere_radius: tuple = (0.3, 0.7)
    box_half: tuple = (0.25, 0.6)
    cyl_radius: tuple = (0.25, 0.5)
    cyl_half_height: tuple = (0.3, 0.7)
    torus_major: tuple = (0.35, 0.55)
    torus_minor: tuple = (0.12, 0.2)
    float_height: tuple = (1.0, 1.4)  # center height in bounding radii
    wall_height: tuple = (0.5, 2.2)
    cam_elev_deg: tuple = (35.0, 65.0)
    cam_dist: tuple = (0.9, 1.3)  # in box sides
    cam_fov_deg: tuple = (40.0, 55.0)
    lookat_jitter: float = 0.15  # in box sides
    env_bank: int = 16
    env_shape: tuple = (32, 64)
    env_seed: int = 0
    mat_tile_max: int = 6
    mat_amp_prob: float = 0.5
    mat_amp_range: tuple = (0.05, 0.3)
    mat_patterns: tuple = materials.PATTERNS
    overlap_tol: float = 0.01  # in box sides
    max_retries: int = 100


def _scene_rng(seed, tag):
    return np.random.Generator(np.random.Philox(key=np.array([seed, tag], dtype=np.uint64)))


def _sample_size(rng, kind, cfg):
    if kind == "sphere":
        return np.array([rng.uniform(*cfg.sphere_radius)])
    if kind == "box":
        return rng.uniform(cfg.box_half[0], cfg.box_half[1], 3)
    if kind == "cylinder":
        return np.array([rng.uniform(*cfg.cyl_radius), rng.uniform(*cfg.cyl_half_height)])
    if kind == "torus":
        return np.array([rng.uniform(*cfg.torus_major), rng.uniform(*cfg.torus_minor)])
    raise ValueError(f"unknown kind {kind!r}")


def sample_scene(seed, cfg=None, light_seed=None):
    """Deterministic scene draw; raises RuntimeError when placement cannot
    satisfy the overlap constraint within cfg.max_retries attempts."""
    if cfg is None:
        cfg = GenConfig()
    if light_seed is None:
        light_seed = seed
    rng = _scene_rng(seed, 0x5CE)

    n = int(rng.integers(cfg.min_primitives, cfg.max_primitives + 1))
    s_half = cfg.box_side / 2.0
    tol = cfg.overlap_tol * cfg.box_side

    prims = []
    retries = 0
    while len(prims) < n:
        kind = cfg.kinds[int(rng.integers(len(cfg.kinds)))]
        size = _sample_size(rng, kind, cfg)
        quat = random_quat(rng)
        rb = bounding_radius(kind, size)
        margin = s_half - rb - 0.05
        cx, cz = rng.uniform(-margin, margin, 2)
        cy = rb * rng.uniform(*cfg.float_height)
        center = np.array([cx, cy, cz])
        clear = all(np.linalg.norm(center - p.center) >= rb + bounding_radius(p.kind, p.size) - tol
                    for p in prims)
        if clear:
            prims.append(PrimitiveSpec(kind=kind, center=center, orientation=quat,
                                       size=size, material_id=len(prims),
                                       object_id=len(prims) + 1))
        else:
            retries += 1
            if retries > cfg.max_retries:
                raise RuntimeError(
                    f"primitive placement failed after {cfg.max_retries} retries (seed={seed})")

    mats = [materials.sample_material(rng, cfg.mat_tile_max, cfg.mat_amp_prob,
                                      cfg.mat_amp_range, cfg.mat_patterns)
            for _ in range(n + 5)]
    floor_material = n
    wall_materials = (n + 1, n + 2, n + 3, n + 4)
    wall_heights = rng.uniform(cfg.wall_height[0], cfg.wall_height[1], 4)

    erng = _scene_rng(light_seed, 0xE0F)
    env = envmap.generate_env(cfg.env_seed * 1000 + int(erng.integers(cfg.env_bank)),
                              cfg.env_shape)
    env = envmap.EnvLight(equirect=env.equirect, rotation=float(erng.uniform(0, 2 * math.pi)))

    jit = cfg.lookat_jitter * cfg.box_side
    look = np.array([rng.uniform(-jit, jit), 0.1 * cfg.box_side, rng.uniform(-jit, jit)])
    elev = math.radians(rng.uniform(*cfg.cam_elev_deg))
    azim = rng.uniform(0, 2 * math.pi)
    dist = rng.uniform(*cfg.cam_dist) * cfg.box_side
    pos = look + dist * np.array([math.cos(elev) * math.cos(azim),
                                  math.sin(elev),
                                  math.cos(elev) * math.sin(azim)])
    cam = Camera(position=pos, look_at=look, vfov_deg=rng.uniform(*cfg.cam_fov_deg))

    spec = SceneSpec(primitives=prims, wall_heights=wall_heights,
                     floor_material=floor_material, wall_materials=wall_materials,
                     camera=cam, env=env, seed=seed, materials=mats,
                     box_side=cfg.box_side, wall_thickness=cfg.wall_thickness,
                     floor_thickness=cfg.floor_thickness)
    validate_scene(spec)
    return spec


def validate_scene(scene):
    ids = [p.object_id for p in scene.primitives]
    if len(set(ids)) != len(ids):
        raise ValueError("object ids not unique")
    if not (1 <= len(scene.primitives) <= 8):
        raise ValueError(f"{len(scene.primitives)} primitives outside [1, 8]")
    s_half = scene.box_side / 2.0
    for p in scene.primitives:
        if np.any(np.asarray(p.size) <= 0):
            raise ValueError(f"object {p.object_id}: non-positive size")
        if abs(np.linalg.norm(p.orientation) - 1.0) > 1e-6:
            raise ValueError(f"object {p.object_id}: orientation not unit")
        rb = bounding_radius(p.kind, p.size)
        if max(abs(p.center[0]), abs(p.center[2])) + rb > s_half + 1e-9:
            raise ValueError(f"object {p.object_id}: outside box footprint")
    if np.any(np.asarray(scene.wall_heights) < 0):
        raise ValueError("negative wall height")
    for m in scene.materials:
        m.validate()
    scene.env.validate()


def with_swapped_material(scene, object_id, mat):
    """Copy of the scene whose ``object_id`` primitive uses ``mat`` (appended
    to the bank). Everything else, including the bank prefix, is shared."""
    new_mats = list(scene.materials) + [mat]
    new_prims = []
    found = False
    for p in scene.primitives:
        if p.object_id == object_id:
            new_prims.append(replace(p, material_id=len(new_mats) - 1))
            found = True
        else:
            new_prims.append(p)
    if not found:
        raise ValueError(f"no primitive with object_id {object_id}")
    return replace(scene, primitives=new_prims, materials=new_mats)


def camera_rays(cam, res):
    """Row-major pixel-centre rays: returns (origins, directions) of shape
    (H*W, 3) with unit directions."""
    h, w = res
    fwd = normalize(np.asarray(cam.look_at, dtype=np.float64) - cam.position)
    up_world = np.array([0.0, 1.0, 0.0])
    if abs(fwd @ up_world) > 0.999:
        up_world = np.array([0.0, 0.0, 1.0])
    right = normalize(np.cross(fwd, up_world))
    up = np.cross(right, fwd)
    tan_half = math.tan(math.radians(cam.vfov_deg) / 2.0)
    ys = (0.5 - (np.arange(h) + 0.5) / h) * 2.0 * tan_half
    xs = ((np.arange(w) + 0.5) / w - 0.5) * 2.0 * tan_half * (w / h)
    d = (fwd[None, None, :]
         + xs[None, :, None] * right[None, None, :]
         + ys[:, None, None] * up[None, None, :])
    d = normalize(d.reshape(-1, 3))
    o = np.broadcast_to(np.asarray(cam.position, dtype=np.float64), d.shape).copy()
    return o, d
