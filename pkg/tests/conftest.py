"""Shared fixtures: datasets, trained checkpoints, small models.

Heavy session fixtures (dataset renders, smoke training) honor the
TEXSWAP_TEST_CACHE environment variable: when set, artifacts are built once
under that directory and reused across pytest invocations. Unset (the
default), everything builds from scratch in the session tmp dir.
"""

import json
import os

import numpy as np
import pytest
import torch

from texswap import container, intrinsics, models, render, training
from texswap import dataset as ds
from texswap.envmap import EnvLight
from texswap.geometry import identity_quat
from texswap.imaging import write_png
from texswap.materials import MaterialSpec
from texswap.scene import Camera, PrimitiveSpec, SceneSpec

torch.set_num_threads(1)


def _workdir(tmp_path_factory, name):
    root = os.environ.get("TEXSWAP_TEST_CACHE")
    if root:
        p = os.path.join(root, name)
        os.makedirs(p, exist_ok=True)
        return p
    return str(tmp_path_factory.mktemp(name))


@pytest.fixture(scope="session")
def smoke_manifest(tmp_path_factory):
    """8 training pairs: 4 scenes x 2 light variations at 64^2."""
    out = _workdir(tmp_path_factory, "smoke_data")
    cfg = ds.DataConfig(scenes=4, variations=2, res=64, spp=128,
                        exemplar_res=256, seed0=0)
    return ds.build_dataset(cfg, out)


@pytest.fixture(scope="session")
def heldout_manifest(tmp_path_factory):
    """Held-out pairs from a disjoint seed range (evaluation only)."""
    out = _workdir(tmp_path_factory, "heldout_data")
    cfg = ds.DataConfig(scenes=4, variations=1, res=64, spp=128,
                        exemplar_res=256, seed0=500)
    return ds.build_dataset(cfg, out)


@pytest.fixture(scope="session")
def tiny_manifest(tmp_path_factory):
    """2 small fast pairs for plumbing tests."""
    out = _workdir(tmp_path_factory, "tiny_data")
    cfg = ds.DataConfig(scenes=2, variations=1, res=32, spp=16,
                        exemplar_res=64, seed0=50)
    return ds.build_dataset(cfg, out)


SMOKE_STEPS = 2000


@pytest.fixture(scope="session")
def smoke_ckpt(tmp_path_factory, smoke_manifest):
    """2000-step single-stage run at 32^2 on the 8-pair set."""
    out = _workdir(tmp_path_factory, "smoke_train")
    final = os.path.join(out, "ckpt_final.mswp")
    if not os.path.exists(final):
        cfg = training.TrainConfig(stage_res=(32,), stage_steps=(SMOKE_STEPS,),
                                   batch=16, flip_prob=0.0, seed=0,
                                   ckpt_every=1000)
        training.train(smoke_manifest, cfg, out)
    return final


def _gradient_env(top=0.9, bottom=0.25, shape=(16, 32)):
    rows = np.linspace(top, bottom, shape[0])
    grid = np.repeat(np.repeat(rows[:, None], shape[1], 1)[..., None], 3, 2)
    return EnvLight(grid, 0.0)


TILT_MC_SAMPLES = 131072


@pytest.fixture(scope="session")
def tilt_design():
    """A compact sky blob and two normals 60 degrees apart.

    Every lit texel stays strictly inside both hemispheres and above the
    horizon, so the irradiance integral collapses to a dot product with one
    fixed vector V (the cosine factor is linear once max(0,.) never clips).
    n0 aims along V, hence the true ratio E(n60)/E(n0) is exactly cos(60).
    V is computed from closed-form texel integrals, not from the quadrature
    under test.
    """
    h, w = 64, 128
    cr, cc, sig, trunc = 19, 32, 2.5, 7.5
    grid = np.zeros((h, w, 3))
    for r in range(h):
        for c in range(w):
            dc = min(abs(c - cc), w - abs(c - cc))
            d2 = (r - cr) ** 2 + dc ** 2
            if d2 <= trunc ** 2:
                grid[r, c] = np.exp(-d2 / (2 * sig ** 2))
    env = EnvLight(grid, 0.0)

    th = np.arange(h + 1) / h * np.pi
    ph = (np.arange(w + 1) / w - 0.5) * 2 * np.pi
    iy = (np.sin(th[1:]) ** 2 - np.sin(th[:-1]) ** 2) / 2
    ixz = ((th[1:] - np.sin(th[1:]) * np.cos(th[1:]))
           - (th[:-1] - np.sin(th[:-1]) * np.cos(th[:-1]))) / 2
    lum = grid[..., 0]
    v = np.array([
        (lum * (ixz[:, None] * (np.sin(ph[1:]) - np.sin(ph[:-1]))[None, :])).sum(),
        (lum * (iy[:, None] * (ph[1:] - ph[:-1])[None, :])).sum(),
        (lum * (ixz[:, None] * (np.cos(ph[:-1]) - np.cos(ph[1:]))[None, :])).sum(),
    ])
    n0 = v / np.linalg.norm(v)
    axis = np.cross(n0, [0.0, 1.0, 0.0])
    axis /= np.linalg.norm(axis)
    ca, sa = 0.5, np.sqrt(3.0) / 2.0  # cos/sin of 60 degrees
    n60 = n0 * ca + np.cross(axis, n0) * sa + axis * (axis @ n0) * (1 - ca)
    n60 /= np.linalg.norm(n60)

    gray = np.full(3, 0.5)
    flat = MaterialSpec("checker", gray, gray, 2, 0.0, 0)
    scene = SceneSpec(primitives=[], wall_heights=np.zeros(4), floor_material=0,
                      wall_materials=(0, 0, 0, 0),
                      camera=Camera(np.array([0.0, 1.0, 3.0]), np.zeros(3), 45.0),
                      env=env, seed=0, materials=[flat] * 5)
    return {"env": env, "scene": scene, "point": np.array([0.0, 1.0, 0.0]),
            "n0": n0, "n60": n60}


def _overfit_scene():
    """One fronto-parallel box filling most of the frame, smooth sky."""
    two_tone = (np.array([0.15, 0.2, 0.55]), np.array([0.9, 0.85, 0.3]))
    mats = [
        MaterialSpec("noise", np.full(3, 0.35), np.full(3, 0.55), 3, 0.0, 11),  # floor
        MaterialSpec("stripes", np.array([0.7, 0.3, 0.2]), np.array([0.85, 0.8, 0.75]), 3, 0.0, 12),
    ]
    box = PrimitiveSpec(kind="box", center=np.array([0.0, 0.8, 0.0]),
                        orientation=identity_quat(),
                        size=np.array([0.7, 0.7, 0.12]),
                        material_id=1, object_id=1)
    cam = Camera(position=np.array([0.0, 0.95, 1.9]),
                 look_at=np.array([0.0, 0.8, 0.0]), vfov_deg=50.0)
    scene = SceneSpec(primitives=[box], wall_heights=np.zeros(4),
                      floor_material=0, wall_materials=(0, 0, 0, 0),
                      camera=cam, env=_gradient_env(), seed=777,
                      materials=mats)
    checkers = [MaterialSpec("checker", two_tone[0], two_tone[1], c, 0.0, 13)
                for c in (2, 4)]
    return scene, checkers


@pytest.fixture(scope="session")
def overfit_manifest(tmp_path_factory):
    """Two pairs on one scene whose swap materials are checkers at tile 2
    and tile 4; the scale-control and ablation probes overfit this set."""
    out = _workdir(tmp_path_factory, "overfit_data")
    man_path = os.path.join(out, "manifest.json")
    if os.path.exists(man_path):
        return man_path
    scene, checkers = _overfit_scene()
    res, spp, ex_res = (64, 64), 128, (256, 256)
    buf_a = render.render_buffers(scene, 1, res, spp)
    p_a = render.render_exemplar(scene.materials[1], scene.env, ex_res)
    scale = ds.uv_scale_factor(buf_a.UV, buf_a.M)
    entries = []
    for k, mat in enumerate(checkers):
        from texswap.scene import with_swapped_material
        pair_id = f"checker_{k}"
        paths = ds._entry_paths(pair_id)
        sb = with_swapped_material(scene, 1, mat)
        bb = render.render_buffers(sb, 1, res, spp)
        p_b = render.render_exemplar(mat, scene.env, ex_res)
        for sub in ("a", "b"):
            os.makedirs(os.path.join(out, f"pair_{pair_id}", sub), exist_ok=True)
        container.write_tensors(os.path.join(out, paths["a_buffers"]), buf_a.to_dict())
        container.write_tensors(os.path.join(out, paths["b_buffers"]), bb.to_dict())
        container.write_tensors(os.path.join(out, paths["a_exemplar"]), {"p_full": p_a})
        container.write_tensors(os.path.join(out, paths["b_exemplar"]), {"p_full": p_b})
        write_png(os.path.join(out, paths["a_preview"]), buf_a.I)
        write_png(os.path.join(out, paths["b_preview"]), bb.I)
        entries.append({"pair_id": pair_id, "scene_seed": scene.seed,
                        "light_variation": 0, "selected_object": 1,
                        "scale": [float(scale[0]), float(scale[1])],
                        "paths": paths})
    manifest = {"version": ds.MANIFEST_VERSION, "config_hash": "overfit-fixture",
                "entries": entries, "skipped_seeds": []}
    ds._write_manifest(man_path, manifest)
    return man_path


OVERFIT_STEPS = 1500


@pytest.fixture(scope="session")
def overfit_ckpt(tmp_path_factory, overfit_manifest):
    out = _workdir(tmp_path_factory, "overfit_train")
    final = os.path.join(out, "ckpt_final.mswp")
    if not os.path.exists(final):
        cfg = training.TrainConfig(stage_res=(32,), stage_steps=(OVERFIT_STEPS,),
                                   batch=8, flip_prob=0.0, seed=3,
                                   ckpt_every=1000)
        training.train(overfit_manifest, cfg, out)
    return final


@pytest.fixture(scope="session")
def intrinsics_ckpt(tmp_path_factory, smoke_manifest):
    """Estimators trained with the documented default budget."""
    out = _workdir(tmp_path_factory, "intr_train")
    final = os.path.join(out, "intr_final.mswp")
    if not os.path.exists(final):
        intrinsics.train_estimators(smoke_manifest, intrinsics.IntrinsicsConfig(),
                                    out)
    return final


# small-model helpers

TINY = models.ModelConfig(base=8, mults=(1, 2), attn_levels=(1,), tok_dim=16,
                          n_tokens=4, enc_res=16, tex_base=8)


@pytest.fixture
def tiny_params():
    return models.build_denoiser(TINY, seed=0)


def randomize(params, scale=0.05, seed=1):
    """Overwrite every parameter with Gaussian noise; breaks all the zero-init
    shortcuts so conditioning and attention paths actually fire."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for mod in params.modules().values():
            for t in mod.parameters():
                t.copy_(torch.randn(t.shape, generator=g) * scale)
    return params


@pytest.fixture
def rand_params():
    return randomize(models.build_denoiser(TINY, seed=0))


def rand_cond(b=1, res=16, seed=0, device=None):
    """A valid random ConditioningStack plus matching z_t and tokens inputs."""
    from texswap.conditioning import encode_conditions
    g = torch.Generator().manual_seed(seed)
    x = torch.rand(b, 3, res, res, generator=g)
    n = torch.randn(b, 3, res, res, generator=g)
    n = n / n.norm(dim=1, keepdim=True).clamp_min(1e-8)
    e = torch.rand(b, 1, res, res, generator=g) * 2.0
    m = torch.zeros(b, 1, res, res)
    m[:, :, res // 4: 3 * res // 4, res // 4: 3 * res // 4] = 1.0
    return encode_conditions(x, n, e, m)


def load_first_pair(man_path):
    return ds.load_pairs(man_path)[0]
