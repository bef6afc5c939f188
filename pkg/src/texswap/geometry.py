"""Vectorized ray-primitive intersection kernels.

All intersectors work in the primitive's local frame on batches of rays:
origins ``o`` and unit directions ``d`` are ``(n, 3)`` float64 arrays, and
each kernel returns ``(t, normal, uv)`` where ``t`` is ``inf`` on miss.
Rotations preserve length, so ``t`` is valid in both frames.
"""

import math

import numpy as np

RAY_EPS = 1e-4  # smallest accepted hit distance, scene units

KIND_SPHERE = "sphere"
KIND_BOX = "box"
KIND_CYLINDER = "cylinder"
KIND_TORUS = "torus"

PRIMITIVE_KINDS = (KIND_SPHERE, KIND_BOX, KIND_CYLINDER, KIND_TORUS)


# ---------------------------------------------------------------------------
# quaternions (w, x, y, z)

def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q)


def quat_to_matrix(q):
    """Rotation matrix of a unit quaternion (columns = rotated basis)."""
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ], dtype=np.float64)


def random_quat(rng):
    """Uniform random rotation (Shoemake's subgroup algorithm)."""
    u1, u2, u3 = rng.random(3)
    a, b = math.sqrt(1.0 - u1), math.sqrt(u1)
    return np.array([
        a * math.sin(2 * math.pi * u2),
        a * math.cos(2 * math.pi * u2),
        b * math.sin(2 * math.pi * u3),
        b * math.cos(2 * math.pi * u3),
    ], dtype=np.float64)


def identity_quat():
    return np.array([1.0, 0.0, 0.0, 0.0])


# ---------------------------------------------------------------------------
# frame helpers

def normalize(v, axis=-1):
    n = np.linalg.norm(v, axis=axis, keepdims=True)
    return v / np.maximum(n, 1e-30)


def orthonormal_basis(n):
    """Tangent/bitangent for unit normals ``n`` of shape (..., 3).

    Branchless construction (Duff et al. style); any valid frame works for
    hemisphere sampling as long as it is a pure function of the normal.
    """
    n = np.asarray(n, dtype=np.float64)
    s = np.where(n[..., 2] >= 0.0, 1.0, -1.0)
    a = -1.0 / (s + n[..., 2])
    b = n[..., 0] * n[..., 1] * a
    t = np.stack([1.0 + s * n[..., 0] ** 2 * a, s * b, -s * n[..., 0]], axis=-1)
    bt = np.stack([b, s + n[..., 1] ** 2 * a, -n[..., 1]], axis=-1)
    return t, bt


# ---------------------------------------------------------------------------
# per-kind local-frame intersectors

def _pick_root(t0, t1, eps):
    """Smallest root above eps; inf when both below."""
    t0 = np.where(t0 > eps, t0, np.inf)
    t1 = np.where(t1 > eps, t1, np.inf)
    return np.minimum(t0, t1)


def _finite(t):
    # placeholder distance for misses so inf * 0 never surfaces while
    # computing shading attributes nobody will read
    return np.where(np.isfinite(t), t, 0.0)


def intersect_sphere(o, d, radius, eps=RAY_EPS):
    b = np.einsum("ij,ij->i", o, d)
    c = np.einsum("ij,ij->i", o, o) - radius * radius
    disc = b * b - c
    ok = disc >= 0.0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t = _pick_root(-b - sq, -b + sq, eps)
    t = np.where(ok, t, np.inf)
    p = o + _finite(t)[:, None] * d
    n = p / radius
    u = np.arctan2(p[:, 2], p[:, 0]) / (2 * np.pi) + 0.5
    v = np.arccos(np.clip(p[:, 1] / radius, -1.0, 1.0)) / np.pi
    return t, n, np.stack([u, v], axis=1)


def intersect_box(o, d, half, eps=RAY_EPS):
    """Axis-aligned box with half-extents ``half`` (3,). Entry or exit face."""
    half = np.asarray(half, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        ta = (-half - o) * inv
        tb = (half - o) * inv
    tlo = np.fmin(ta, tb)
    thi = np.fmax(ta, tb)
    t_enter = np.nanmax(tlo, axis=1)
    t_exit = np.nanmin(thi, axis=1)
    hit = (t_enter <= t_exit) & (t_exit > eps)
    t = np.where(t_enter > eps, t_enter, t_exit)
    t = np.where(hit, t, np.inf)
    p = o + _finite(t)[:, None] * d
    # face = axis of largest relative coordinate; robust to slab roundoff
    rel = np.abs(p) / half
    axis = np.argmax(rel, axis=1)
    sign = np.sign(np.take_along_axis(p, axis[:, None], axis=1)[:, 0])
    n = np.zeros_like(p)
    np.put_along_axis(n, axis[:, None], sign[:, None], axis=1)
    ju = (axis + 1) % 3
    jv = (axis + 2) % 3
    pu = np.take_along_axis(p, ju[:, None], axis=1)[:, 0]
    pv = np.take_along_axis(p, jv[:, None], axis=1)[:, 0]
    u = (pu / half[ju] + 1.0) * 0.5
    v = (pv / half[jv] + 1.0) * 0.5
    return t, n, np.stack([u, v], axis=1)


def intersect_cylinder(o, d, radius, half_height, eps=RAY_EPS):
    """Capped cylinder around the local y axis."""
    a = d[:, 0] ** 2 + d[:, 2] ** 2
    b = o[:, 0] * d[:, 0] + o[:, 2] * d[:, 2]
    c = o[:, 0] ** 2 + o[:, 2] ** 2 - radius * radius
    disc = b * b - a * c
    ok = (disc >= 0.0) & (a > 1e-16)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        r0 = (-b - sq) / a
        r1 = (-b + sq) / a
    y0 = o[:, 1] + r0 * d[:, 1]
    y1 = o[:, 1] + r1 * d[:, 1]
    r0 = np.where(ok & (np.abs(y0) <= half_height), r0, np.inf)
    r1 = np.where(ok & (np.abs(y1) <= half_height), r1, np.inf)
    t_side = _pick_root(r0, r1, eps)

    with np.errstate(divide="ignore", invalid="ignore"):
        tc0 = (half_height - o[:, 1]) / d[:, 1]
        tc1 = (-half_height - o[:, 1]) / d[:, 1]
    t_cap = np.full(len(o), np.inf)
    cap_sign = np.zeros(len(o))
    for tc, sgn in ((tc0, 1.0), (tc1, -1.0)):
        px = o[:, 0] + tc * d[:, 0]
        pz = o[:, 2] + tc * d[:, 2]
        good = np.isfinite(tc) & (tc > eps) & (px * px + pz * pz <= radius * radius)
        better = good & (tc < t_cap)
        t_cap = np.where(better, tc, t_cap)
        cap_sign = np.where(better, sgn, cap_sign)

    t = np.minimum(t_side, t_cap)
    use_cap = t_cap < t_side
    p = o + _finite(t)[:, None] * d
    n_side = np.stack([p[:, 0] / radius, np.zeros(len(o)), p[:, 2] / radius], axis=1)
    n_cap = np.stack([np.zeros(len(o)), cap_sign, np.zeros(len(o))], axis=1)
    n = np.where(use_cap[:, None], n_cap, n_side)
    u_side = np.arctan2(p[:, 2], p[:, 0]) / (2 * np.pi) + 0.5
    v_side = (p[:, 1] / half_height + 1.0) * 0.5
    u_cap = (p[:, 0] / radius + 1.0) * 0.5
    v_cap = (p[:, 2] / radius + 1.0) * 0.5
    u = np.where(use_cap, u_cap, u_side)
    v = np.where(use_cap, v_cap, v_side)
    return t, n, np.stack([u, v], axis=1)


def _torus_poly(o, d, major, minor):
    """Quartic coefficients of the torus implicit along the ray (monic)."""
    m = np.einsum("ij,ij->i", o, o)
    b = np.einsum("ij,ij->i", o, d)
    k = m + major * major - minor * minor
    dxz = d[:, 0] ** 2 + d[:, 2] ** 2
    oxz = o[:, 0] ** 2 + o[:, 2] ** 2
    bxz = o[:, 0] * d[:, 0] + o[:, 2] * d[:, 2]
    r2 = 4.0 * major * major
    c3 = 4.0 * b
    c2 = 4.0 * b * b + 2.0 * k - r2 * dxz
    c1 = 4.0 * b * k - 2.0 * r2 * bxz
    c0 = k * k - r2 * oxz
    return c3, c2, c1, c0


def _torus_eval(t, c3, c2, c1, c0):
    g = (((t + c3) * t + c2) * t + c1) * t + c0
    dg = ((4.0 * t + 3.0 * c3) * t + 2.0 * c2) * t + c1
    return g, dg


def intersect_torus(o, d, major, minor, eps=RAY_EPS):
    """Torus around the local y axis, tube radius ``minor`` at ring ``major``.

    Quartic roots come from batched companion-matrix eigenvalues; roots with
    |Im| < 1e-7 are accepted and refined by one Newton step.
    """
    n = len(o)
    t = np.full(n, np.inf)
    nrm = np.zeros((n, 3))
    uv = np.zeros((n, 2))
    if n == 0:
        return t, nrm, uv

    # cull rays that miss the bounding sphere; eigvals is the expensive part
    bound = major + minor
    b = np.einsum("ij,ij->i", o, d)
    c = np.einsum("ij,ij->i", o, o) - bound * bound
    near = b * b - c >= 0.0
    idx = np.nonzero(near)[0]
    if idx.size == 0:
        return t, nrm, uv
    oc, dc = o[idx], d[idx]

    c3, c2, c1, c0 = _torus_poly(oc, dc, major, minor)
    comp = np.zeros((idx.size, 4, 4))
    comp[:, 1, 0] = 1.0
    comp[:, 2, 1] = 1.0
    comp[:, 3, 2] = 1.0
    comp[:, 0, 3] = -c0
    comp[:, 1, 3] = -c1
    comp[:, 2, 3] = -c2
    comp[:, 3, 3] = -c3
    roots = np.linalg.eigvals(comp)

    real = np.abs(roots.imag) < 1e-7
    cand = np.where(real, roots.real, np.inf)
    # one Newton polish step on the monic quartic
    g, dg = _torus_eval(cand, c3[:, None], c2[:, None], c1[:, None], c0[:, None])
    with np.errstate(divide="ignore", invalid="ignore"):
        polished = cand - g / dg
    cand = np.where(np.isfinite(polished), polished, cand)
    cand = np.where(real & (cand > eps), cand, np.inf)
    tc = cand.min(axis=1)

    hit = np.isfinite(tc)
    t[idx] = tc
    p = oc + np.where(hit, tc, 0.0)[:, None] * dc
    # gradient of ((|p|^2 + R^2 - r^2)^2 - 4R^2(x^2+z^2))
    k = np.einsum("ij,ij->i", p, p) + major * major - minor * minor
    grad = 4.0 * k[:, None] * p
    grad[:, 0] -= 8.0 * major * major * p[:, 0]
    grad[:, 2] -= 8.0 * major * major * p[:, 2]
    gn = np.linalg.norm(grad, axis=1, keepdims=True)
    grad = np.where(hit[:, None] & (gn > 1e-30), grad / np.maximum(gn, 1e-30), 0.0)
    nrm[idx] = grad

    u = np.arctan2(p[:, 2], p[:, 0]) / (2 * np.pi) + 0.5
    ring = np.sqrt(p[:, 0] ** 2 + p[:, 2] ** 2)
    v = np.arctan2(p[:, 1], ring - major) / (2 * np.pi) + 0.5
    uv[idx, 0] = np.where(hit, u, 0.0)
    uv[idx, 1] = np.where(hit, v, 0.0)
    return t, nrm, uv


def bounding_radius(kind, size):
    """Radius of the local-frame bounding sphere for a primitive kind."""
    size = np.asarray(size, dtype=np.float64)
    if kind == KIND_SPHERE:
        return float(size[0])
    if kind == KIND_BOX:
        return float(np.linalg.norm(size))
    if kind == KIND_CYLINDER:
        return float(math.hypot(size[0], size[1]))
    if kind == KIND_TORUS:
        return float(size[0] + size[1])
    raise ValueError(f"unknown primitive kind: {kind!r}")


def intersect_kind(kind, o, d, size, eps=RAY_EPS):
    if kind == KIND_SPHERE:
        return intersect_sphere(o, d, size[0], eps)
    if kind == KIND_BOX:
        return intersect_box(o, d, size, eps)
    if kind == KIND_CYLINDER:
        return intersect_cylinder(o, d, size[0], size[1], eps)
    if kind == KIND_TORUS:
        return intersect_torus(o, d, size[0], size[1], eps)
    raise ValueError(f"unknown primitive kind: {kind!r}")
