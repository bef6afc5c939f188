"""Ray-traced AOV renderer: direct environment lighting only.

Irradiance is a cosine-weighted hemisphere Monte Carlo estimate with shadow
rays, one independent counter-based RNG stream per (scene seed, pixel,
purpose). Per-pixel streams make every buffer byte a pure function of
(scene, resolution, spp) and keep material swaps from perturbing pixels
outside the swapped object: the irradiance pass over geometric normals never
sees materials at all.
"""

from dataclasses import dataclass

import numpy as np

from . import materials as mat_mod
from .envmap import radiance, up_irradiance
from .geometry import RAY_EPS, intersect_kind, orthonormal_basis, quat_to_matrix
from .scene import MISS_ID, camera_rays

SHADOW_OFFSET = 1e-3  # scene units along the geometric normal

# purpose tags for the per-pixel RNG streams
STREAM_E = 0  # irradiance buffer (geometric normals)
STREAM_SHADE = 1  # beauty-pass irradiance (shading normals)
STREAM_FREE = 3  # default for standalone irradiance_at calls


@dataclass
class BufferSet:
    I: np.ndarray  # (H, W, 3) linear RGB
    N: np.ndarray  # (H, W, 3) unit shading normals, world frame; 0 on miss
    E: np.ndarray  # (H, W, 1) diffuse irradiance (1/pi folded in), channel mean
    M: np.ndarray  # (H, W, 1) binary mask of the selected object
    UV: np.ndarray  # (H, W, 2) texture coords inside M, 0 elsewhere
    object_ids: np.ndarray  # (H, W, 1) primary-hit labels, 0 on miss

    def to_dict(self):
        return {"I": self.I, "N": self.N, "E": self.E, "M": self.M,
                "UV": self.UV, "object_ids": self.object_ids}

    @classmethod
    def from_dict(cls, d):
        return cls(I=d["I"], N=d["N"], E=d["E"], M=d["M"],
                   UV=d["UV"], object_ids=d["object_ids"])


def scene_intersect(scene, o, d, eps=RAY_EPS):
    """Nearest hit over all scene surfaces.

    Returns (t, point, geometric normal, uv, object_id); t=inf, id=0 on miss.
    """
    n = len(o)
    best_t = np.full(n, np.inf)
    best_n = np.zeros((n, 3))
    best_uv = np.zeros((n, 2))
    best_id = np.full(n, MISS_ID, dtype=np.int64)
    for prim in scene.all_surfaces():
        rot = quat_to_matrix(prim.orientation)
        ol = (o - prim.center) @ rot  # rot.T applied row-wise
        dl = d @ rot
        t, nl, uv = intersect_kind(prim.kind, ol, dl, np.asarray(prim.size, dtype=np.float64), eps)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_n[closer] = nl[closer] @ rot.T
        best_uv[closer] = uv[closer]
        best_id[closer] = prim.object_id
    point = o + best_t[:, None] * d
    point[~np.isfinite(best_t)] = 0.0
    return best_t, point, best_n, best_uv, best_id


def occluded(scene, o, d, eps=RAY_EPS):
    """True where any surface blocks the ray (environment is at infinity)."""
    n = len(o)
    hit = np.zeros(n, dtype=bool)
    for prim in scene.all_surfaces():
        todo = ~hit
        if not todo.any():
            break
        rot = quat_to_matrix(prim.orientation)
        ol = (o[todo] - prim.center) @ rot
        dl = d[todo] @ rot
        t, _, _ = intersect_kind(prim.kind, ol, dl, np.asarray(prim.size, dtype=np.float64), eps)
        sub = np.isfinite(t)
        idx = np.nonzero(todo)[0]
        hit[idx[sub]] = True
    return hit


def _strata_shape(spp):
    a = int(np.sqrt(spp))
    while spp % a:
        a -= 1
    return a, spp // a


def pixel_uniforms(scene_seed, purpose, pixel_index, spp, stratified):
    """(len(pixel_index), spp, 2) uniforms, one Philox stream per pixel."""
    out = np.empty((len(pixel_index), spp, 2))
    tag = np.uint64((int(purpose) << 48) | 0x1A7)
    for row, pix in enumerate(pixel_index):
        key = np.array([np.uint64(scene_seed), tag + (np.uint64(int(pix)) << np.uint64(8))],
                       dtype=np.uint64)
        g = np.random.Generator(np.random.Philox(key=key))
        out[row] = g.random((spp, 2))
    if stratified:
        a, b = _strata_shape(spp)
        si = np.arange(spp) // b
        ti = np.arange(spp) % b
        out[:, :, 0] = (si[None, :] + out[:, :, 0]) / a
        out[:, :, 1] = (ti[None, :] + out[:, :, 1]) / b
    return out


def _cosine_dirs(normals, u):
    """Cosine-weighted hemisphere directions around unit ``normals`` (n,3)
    from uniforms ``u`` (n, spp, 2)."""
    r = np.sqrt(u[:, :, 0])
    phi = 2.0 * np.pi * u[:, :, 1]
    x = r * np.cos(phi)
    y = r * np.sin(phi)
    z = np.sqrt(np.maximum(0.0, 1.0 - u[:, :, 0]))
    t, b = orthonormal_basis(normals)
    return (x[:, :, None] * t[:, None, :]
            + y[:, :, None] * b[:, None, :]
            + z[:, :, None] * normals[:, None, :])


def irradiance_batch(points, normals, geo_normals, scene, env, spp,
                     purpose, pixel_index, stratified=True):
    """Monte Carlo irradiance at ``points`` (n,3): mean over samples of
    radiance * visibility. The cosine term and 1/pi cancel against the
    cosine-weighted pdf. Shadow origins offset along the geometric normal."""
    n = len(points)
    if n == 0:
        return np.zeros((0, 3))
    u = pixel_uniforms(scene.seed, purpose, pixel_index, spp, stratified)
    dirs = _cosine_dirs(normals, u)  # (n, spp, 3)
    flat_d = dirs.reshape(-1, 3)
    origins = (points + SHADOW_OFFSET * geo_normals)[:, None, :]
    flat_o = np.broadcast_to(origins, dirs.shape).reshape(-1, 3)
    vis = ~occluded(scene, flat_o, flat_d)
    light = radiance(env, flat_d)
    light = np.where(vis[:, None], light, 0.0)
    return light.reshape(n, spp, 3).mean(axis=1)


def irradiance_at(point, normal, scene, env, n_samples, pixel_index=0, stratified=False):
    """Spec'd single-point entry; one pixel stream, unstratified by default
    so repeated calls with growing n_samples have iid 1/n variance."""
    p = np.asarray(point, dtype=np.float64)[None, :]
    nrm = np.asarray(normal, dtype=np.float64)[None, :]
    out = irradiance_batch(p, nrm, nrm, scene, env, n_samples,
                           STREAM_FREE, np.array([pixel_index]), stratified)
    return out[0]


def _check_finite(name, arr):
    bad = ~np.isfinite(arr)
    if bad.any():
        idx = np.argwhere(bad)[0]
        raise RuntimeError(f"non-finite {name} at pixel (row={idx[0]}, col={idx[1]})")


def render_buffers(scene, selected_object, res=(64, 64), spp=128, stratified=True):
    h, w = res
    o, d = camera_rays(scene.camera, res)
    t, point, n_geo, uv, oid = scene_intersect(scene, o, d)
    hit = np.isfinite(t)

    # face the camera; purely geometric, so identical across a material swap
    flip = np.einsum("ij,ij->i", n_geo, d) > 0.0
    n_geo = np.where(flip[:, None], -n_geo, n_geo)

    pix = np.arange(h * w)
    E_geo = np.zeros((h * w, 3))
    E_geo[hit] = irradiance_batch(point[hit], n_geo[hit], n_geo[hit], scene,
                                  scene.env, spp, STREAM_E, pix[hit], stratified)

    n_shade = n_geo.copy()
    alb = np.zeros((h * w, 3))
    for prim in scene.all_surfaces():
        sel = hit & (oid == prim.object_id)
        if not sel.any():
            continue
        mat = scene.material_of(prim.material_id)
        n_shade[sel] = mat_mod.shading_normal(mat, n_geo[sel], uv[sel, 0], uv[sel, 1])
        alb[sel] = mat_mod.albedo(mat, uv[sel, 0], uv[sel, 1])

    E_shade = np.zeros((h * w, 3))
    E_shade[hit] = irradiance_batch(point[hit], n_shade[hit], n_geo[hit], scene,
                                    scene.env, spp, STREAM_SHADE, pix[hit], stratified)

    img = alb * E_shade
    img[~hit] = radiance(scene.env, d[~hit])  # sky backdrop

    mask = hit & (oid == selected_object)
    uv_out = np.where(mask[:, None], uv, 0.0)
    n_out = np.where(hit[:, None], n_shade, 0.0)

    buf = BufferSet(
        I=img.reshape(h, w, 3).astype(np.float32),
        N=n_out.reshape(h, w, 3).astype(np.float32),
        E=E_geo.mean(axis=1).reshape(h, w, 1).astype(np.float32),
        M=mask.astype(np.float32).reshape(h, w, 1),
        UV=uv_out.reshape(h, w, 2).astype(np.float32),
        object_ids=oid.astype(np.float32).reshape(h, w, 1),
    )
    for name in ("I", "N", "E"):
        _check_finite(name, getattr(buf, name))
    return buf


def render_exemplar(mat, env, res=(256, 256)):
    """Material tile on an up-facing plane, orthographic, diffuse only.

    Lighting is the flat-plane irradiance (exact texel quadrature), constant
    across pixels, so two renders of one material under different envs differ
    by a single per-channel factor.
    """
    h, w = res
    e = up_irradiance(env)
    u = (np.arange(w) + 0.5) / w
    v = (np.arange(h) + 0.5) / h
    uu, vv = np.meshgrid(u, v)
    alb = mat_mod.albedo(mat, uu, vv)
    return (alb * e[None, None, :]).astype(np.float32)
