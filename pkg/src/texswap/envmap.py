"""Procedural equirectangular environment lights.

Radiance lives on a small latitude/longitude grid (nearest-texel lookup, no
filtering) so that single-texel light sources stay exactly representable.
World frame is y-up; a texel row spans a constant polar band measured from
+y. Values are clipped to [0, 1] so diffuse renders stay inside [0, 1].
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class EnvLight:
    equirect: np.ndarray  # (H, W, 3) linear radiance
    rotation: float = 0.0  # azimuth offset, radians

    def validate(self):
        e = self.equirect
        if e.ndim != 3 or e.shape[2] != 3:
            raise ValueError(f"equirect shape {e.shape} is not (H, W, 3)")
        if not np.all(np.isfinite(e)) or np.any(e < 0):
            raise ValueError("radiance must be finite and >= 0")


def radiance(env, dirs):
    """Nearest-texel radiance along unit directions ``dirs`` of shape (n, 3)."""
    h, w, _ = env.equirect.shape
    dy = np.clip(dirs[:, 1], -1.0, 1.0)
    theta = np.arccos(dy)
    phi = np.arctan2(dirs[:, 2], dirs[:, 0])
    u = np.mod(phi / (2 * np.pi) + 0.5 + env.rotation / (2 * np.pi), 1.0)
    v = theta / np.pi
    iu = np.minimum((u * w).astype(np.int64), w - 1)
    iv = np.minimum((v * h).astype(np.int64), h - 1)
    return env.equirect[iv, iu]


def texel_directions(env):
    """World-frame unit direction of each texel centre, shape (H, W, 3).

    Inverse of the ``radiance`` mapping: looking up these directions lands in
    the corresponding texel.
    """
    h, w, _ = env.equirect.shape
    theta = (np.arange(h) + 0.5) / h * np.pi
    phi = ((np.arange(w) + 0.5) / w - 0.5) * 2 * np.pi - env.rotation
    st = np.sin(theta)[:, None]
    d = np.empty((h, w, 3))
    d[:, :, 0] = st * np.cos(phi)[None, :]
    d[:, :, 1] = np.cos(theta)[:, None]
    d[:, :, 2] = st * np.sin(phi)[None, :]
    return d


def up_irradiance(env):
    """Exact cosine-weighted irradiance (already divided by pi) of an
    unoccluded up-facing point: per-row closed form of the texel integral."""
    h, w, _ = env.equirect.shape
    edges = np.arange(h + 1) / h * np.pi
    lo = np.clip(edges[:-1], 0.0, np.pi / 2)
    hi = np.clip(edges[1:], 0.0, np.pi / 2)
    row_w = (np.sin(hi) ** 2 - np.sin(lo) ** 2) / w  # includes the 1/pi
    return np.einsum("h,hwc->c", row_w, env.equirect)


def directional_irradiance(env, normal):
    """Quadrature irradiance for an arbitrary unit normal (no occlusion).

    Centroid rule per texel: sum L * max(0, n.omega_c) * solid_angle / pi.
    Exact only in the texel-size limit; used as an oracle reference.
    """
    h, w, _ = env.equirect.shape
    dirs = texel_directions(env)
    edges = np.arange(h + 1) / h * np.pi
    domega = (np.cos(edges[:-1]) - np.cos(edges[1:])) * (2 * np.pi / w)
    cosine = np.maximum(0.0, np.einsum("hwk,k->hw", dirs, np.asarray(normal, dtype=np.float64)))
    weight = cosine * domega[:, None] / np.pi
    return np.einsum("hw,hwc->c", weight, env.equirect)


def generate_env(seed, shape=(32, 64)):
    """Sky-gradient plus 1-3 bright blobs; deterministic in ``seed``."""
    h, w = shape
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 0xE54], dtype=np.uint64)))
    theta = (np.arange(h) + 0.5) / h * np.pi
    up = np.cos(theta)  # 1 at zenith, -1 at nadir

    zenith = rng.uniform(0.4, 0.9, 3)
    horizon = rng.uniform(0.15, 0.5, 3)
    ground = rng.uniform(0.02, 0.12, 3)
    sky_t = np.clip(up, 0.0, 1.0)[:, None]
    gnd_t = np.clip(-up, 0.0, 1.0)[:, None]
    base = (horizon[None, :] * (1 - sky_t - gnd_t)
            + zenith[None, :] * sky_t
            + ground[None, :] * gnd_t)
    img = np.repeat(base[:, None, :], w, axis=1)

    for _ in range(rng.integers(1, 4)):
        cu = rng.uniform(0, w)
        cv = rng.uniform(0.05, 0.45) * h  # keep lights in the upper hemisphere
        sigma = rng.uniform(0.8, 2.5)
        amp = rng.uniform(0.5, 1.0)
        color = rng.uniform(0.6, 1.0, 3)
        uu = np.arange(w)[None, :]
        vv = np.arange(h)[:, None]
        du = np.abs(uu + 0.5 - cu)
        du = np.minimum(du, w - du)  # wrap in azimuth
        dv = vv + 0.5 - cv
        g = np.exp(-(du * du + dv * dv) / (2 * sigma * sigma))
        img += amp * g[:, :, None] * color[None, None, :]

    env = EnvLight(equirect=np.clip(img, 0.0, 1.0), rotation=0.0)
    env.validate()
    return env


def env_bank(n=16, shape=(32, 64), base_seed=0):
    return [generate_env(base_seed * 1000 + i, shape) for i in range(n)]
