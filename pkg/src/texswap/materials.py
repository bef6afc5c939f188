"""Procedural tileable materials.

A material is a two-tone albedo pattern over UV plus a smooth periodic
height field whose gradient perturbs the shading normal. Every pattern is
exactly periodic under integer UV offsets; to keep that exact, the stored
``tile_count`` is rounded to an integer frequency at evaluation time.
"""

from dataclasses import dataclass

import numpy as np

from .geometry import orthonormal_basis, normalize

PATTERNS = ("checker", "stripes", "bricks", "noise", "dots")

_MORTAR = 0.08  # brick gap width, fraction of a brick cell
_DOT_RADIUS = 0.35  # dot radius, fraction of a half-cell


@dataclass
class MaterialSpec:
    pattern: str
    albedo_a: np.ndarray  # linear RGB in [0,1]
    albedo_b: np.ndarray
    tile_count: float  # periods per UV unit, effective value rounds to int
    normal_amplitude: float
    seed: int

    def validate(self):
        if self.pattern not in PATTERNS:
            raise ValueError(f"unknown pattern {self.pattern!r}")
        for name, alb in (("albedo_a", self.albedo_a), ("albedo_b", self.albedo_b)):
            a = np.asarray(alb)
            if a.shape != (3,) or np.any(a < 0) or np.any(a > 1):
                raise ValueError(f"{name} must be RGB in [0,1]")
        if not (1.0 <= self.tile_count <= 16.0):
            raise ValueError(f"tile_count {self.tile_count} outside [1, 16]")
        if self.normal_amplitude < 0:
            raise ValueError("normal_amplitude must be >= 0")


def _freq(mat):
    return max(1, int(round(mat.tile_count)))


def _fade(t):
    return t * t * t * (t * (6.0 * t - 15.0) + 10.0)


def _fade_d(t):
    return 30.0 * t * t * (t - 1.0) * (t - 1.0)


def _noise_lattice(mat):
    f = _freq(mat)
    rng = np.random.Generator(np.random.Philox(key=np.array([mat.seed, 0x6C61], dtype=np.uint64)))
    return rng.random((f, f))


def _value_noise(mat, u, v, want_grad=False):
    """Smoothstep-interpolated lattice noise, periodic with period 1/f."""
    f = _freq(mat)
    lat = _noise_lattice(mat)
    x = u * f
    y = v * f
    xi = np.floor(x).astype(np.int64)
    yi = np.floor(y).astype(np.int64)
    tx = x - xi
    ty = y - yi
    x0 = np.mod(xi, f)
    x1 = np.mod(xi + 1, f)
    y0 = np.mod(yi, f)
    y1 = np.mod(yi + 1, f)
    v00 = lat[x0, y0]
    v10 = lat[x1, y0]
    v01 = lat[x0, y1]
    v11 = lat[x1, y1]
    sx = _fade(tx)
    sy = _fade(ty)
    a = v00 + sx * (v10 - v00)
    b = v01 + sx * (v11 - v01)
    val = a + sy * (b - a)
    if not want_grad:
        return val, None, None
    dsx = _fade_d(tx) * f
    dsy = _fade_d(ty) * f
    da_du = dsx * (v10 - v00)
    db_du = dsx * (v11 - v01)
    d_du = da_du + sy * (db_du - da_du)
    d_dv = dsy * (b - a)
    return val, d_du, d_dv


def _pattern_weight(mat, u, v):
    """Blend weight in [0,1]: 0 selects albedo_a, 1 selects albedo_b."""
    f = _freq(mat)
    u = np.mod(u, 1.0)
    v = np.mod(v, 1.0)
    if mat.pattern == "checker":
        return ((np.floor(u * 2 * f) + np.floor(v * 2 * f)) % 2).astype(np.float64)
    if mat.pattern == "stripes":
        return (np.floor(u * 2 * f) % 2).astype(np.float64)
    if mat.pattern == "bricks":
        row = np.floor(v * f)
        uu = np.mod(u * f + 0.5 * (row % 2), 1.0)
        vv = np.mod(v * f, 1.0)
        gap = (uu < _MORTAR) | (vv < _MORTAR)
        return gap.astype(np.float64)
    if mat.pattern == "noise":
        val, _, _ = _value_noise(mat, u, v)
        return val
    if mat.pattern == "dots":
        du = np.mod(u * f, 1.0) - 0.5
        dv = np.mod(v * f, 1.0) - 0.5
        inside = du * du + dv * dv < (0.5 * _DOT_RADIUS * 2) ** 2
        return inside.astype(np.float64)
    raise ValueError(f"unknown pattern {mat.pattern!r}")


def albedo(mat, u, v):
    """Per-point linear RGB albedo, shape (..., 3)."""
    w = _pattern_weight(mat, np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64))
    a = np.asarray(mat.albedo_a, dtype=np.float64)
    b = np.asarray(mat.albedo_b, dtype=np.float64)
    return a + w[..., None] * (b - a)


def height_gradient(mat, u, v):
    """(dh/du, dh/dv) of the smooth periodic height proxy for the pattern."""
    f = _freq(mat)
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    w = 2.0 * np.pi * f
    if mat.pattern == "checker":
        hu = w * np.cos(w * u) * np.sin(w * v)
        hv = w * np.sin(w * u) * np.cos(w * v)
        return hu, hv
    if mat.pattern == "stripes":
        return w * np.cos(w * u), np.zeros_like(v)
    if mat.pattern == "bricks":
        # rounded row profile; discontinuity in du at row jumps has measure zero
        row = np.floor(v * f)
        uu = u + 0.5 * (row % 2) / f
        s2 = np.sin(np.pi * f * v) ** 2
        hu = w * np.cos(w * uu) * s2
        hv = np.sin(w * uu) * np.pi * f * np.sin(2.0 * np.pi * f * v)
        return hu, hv
    if mat.pattern == "noise":
        _, hu, hv = _value_noise(mat, u, v, want_grad=True)
        return 4.0 * hu / f, 4.0 * hv / f  # rescale so slopes are O(1)
    if mat.pattern == "dots":
        du = np.mod(u * f, 1.0) - 0.5
        dv = np.mod(v * f, 1.0) - 0.5
        r2 = (du * du + dv * dv) / (0.5 * _DOT_RADIUS * 2) ** 2
        bump = np.maximum(0.0, 1.0 - r2)
        scale = -4.0 * bump * f / (0.5 * _DOT_RADIUS * 2) ** 2
        return scale * du, scale * dv
    raise ValueError(f"unknown pattern {mat.pattern!r}")


def shading_normal(mat, n_geo, u, v):
    """Perturb unit geometric normals with the material height field.

    Zero amplitude returns ``n_geo`` unchanged (bit-exact), which the
    renderer relies on.
    """
    if mat.normal_amplitude == 0.0:
        return n_geo
    hu, hv = height_gradient(mat, u, v)
    t, b = orthonormal_basis(n_geo)
    bent = n_geo - mat.normal_amplitude * (hu[..., None] * t + hv[..., None] * b)
    return normalize(bent)


def sample_material(rng, tile_max=6, amp_prob=0.5, amp_range=(0.05, 0.3), patterns=PATTERNS):
    """Random MaterialSpec with guaranteed two-tone contrast."""
    pattern = patterns[rng.integers(len(patterns))]
    for _ in range(64):
        a = rng.uniform(0.05, 0.95, 3)
        b = rng.uniform(0.05, 0.95, 3)
        if np.abs(a - b).sum() >= 0.6:
            break
    tile = float(rng.integers(1, tile_max + 1))
    amp = 0.0
    if rng.random() < amp_prob:
        amp = float(rng.uniform(*amp_range))
    seed = int(rng.integers(0, 2**31 - 1))
    mat = MaterialSpec(pattern=pattern, albedo_a=a, albedo_b=b,
                       tile_count=tile, normal_amplitude=amp, seed=seed)
    mat.validate()
    return mat
