"""Paired-scene dataset: build, persist, and load material-swap supervision.

Each pair is one sampled scene rendered twice, identical except for the
selected object's material, under one of several light variations. Scenes
whose selected object is barely visible (or has a degenerate UV span) are
rejected deterministically, so rebuilding with the same config reproduces
every byte.
"""

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import container, imaging, materials, render
from .scene import GenConfig, sample_scene, with_swapped_material, camera_rays
from .render import BufferSet, scene_intersect

MANIFEST_VERSION = 1
MIN_MASK_PIXELS = 16
MIN_MASK_BBOX = 8  # the exemplar-similarity metric crops at least this square


@dataclass
class DataConfig:
    scenes: int = 4
    variations: int = 2
    res: int = 64
    spp: int = 128
    exemplar_res: int = 256
    seed0: int = 0
    stratified: bool = True
    gen: GenConfig = field(default_factory=GenConfig)


@dataclass
class TrainSample:
    x: np.ndarray  # (H, W, 3) conditioning image
    N: np.ndarray  # (H, W, 3) raw unit normals (encoding happens later)
    E: np.ndarray  # (H, W, 1) raw irradiance
    M: np.ndarray  # (H, W, 1)
    p: np.ndarray  # (r, r, 3) exemplar at encoder resolution
    I_target: np.ndarray  # (H, W, 3)
    direction: str  # "ab" or "ba"
    uid: int  # stable sample identity for RNG keying


def config_hash(cfg):
    return hashlib.sha256(json.dumps(asdict(cfg), sort_keys=True).encode()).hexdigest()[:16]


def uv_scale_factor(UV, M):
    """Per-axis reciprocal of the UV span inside the mask."""
    m = np.asarray(M)[..., 0] > 0.5
    if not m.any():
        raise ValueError("mask is empty")
    out = []
    for k, name in ((0, "u"), (1, "v")):
        vals = np.asarray(UV)[..., k][m]
        span = float(vals.max() - vals.min())
        if span < 1e-6:
            raise ValueError(f"degenerate UV span on axis {name} ({span:.3g})")
        out.append(1.0 / span)
    return tuple(out)


def crop_exemplar(p_full, s, offset, enc_res=64):
    """Window of fractional side (1/s_u, 1/s_v) at ``offset`` (u, v), wrapped
    over the tileable exemplar, area-averaged to enc_res x enc_res."""
    su, sv = s
    if su <= 0 or sv <= 0:
        raise ValueError("scale factors must be positive")
    return imaging.periodic_window(np.asarray(p_full, dtype=np.float64),
                                   (1.0 / su, 1.0 / sv), offset, enc_res)


def augment_flip(sample, apply):
    """Horizontal mirror of everything spatial; the horizontal normal
    component flips sign, the exemplar is untouched."""
    if not apply:
        return sample
    n = sample.N[:, ::-1].copy()
    n[..., 0] = -n[..., 0]
    return TrainSample(
        x=sample.x[:, ::-1].copy(), N=n, E=sample.E[:, ::-1].copy(),
        M=sample.M[:, ::-1].copy(), p=sample.p, I_target=sample.I_target[:, ::-1].copy(),
        direction=sample.direction, uid=sample.uid)


def _pair_rng(seed):
    return np.random.Generator(np.random.Philox(key=np.array([seed, 0xA12], dtype=np.uint64)))


def _light_seed(scene_seed, variation):
    return scene_seed * 1009 + variation


def _usable(scene, selected, res):
    """Cheap primary-visibility check before committing to the MC renders."""
    o, d = camera_rays(scene.camera, (res, res))
    t, _, _, uv, oid = scene_intersect(scene, o, d)
    m = oid == selected
    if m.sum() < MIN_MASK_PIXELS:
        return False
    # evaluation crops the tight mask box, which must reach MIN_MASK_BBOX
    mm = m.reshape(res, res)
    rows = np.nonzero(mm.any(axis=1))[0]
    cols = np.nonzero(mm.any(axis=0))[0]
    if rows[-1] - rows[0] + 1 < MIN_MASK_BBOX or cols[-1] - cols[0] + 1 < MIN_MASK_BBOX:
        return False
    for k in range(2):
        if float(uv[m, k].max() - uv[m, k].min()) < 1e-3:
            return False
    return True


def _entry_paths(pair_id):
    base = f"pair_{pair_id}"
    return {
        "a_buffers": f"{base}/a/buffers.mswp",
        "b_buffers": f"{base}/b/buffers.mswp",
        "a_exemplar": f"{base}/a/exemplar.mswp",
        "b_exemplar": f"{base}/b/exemplar.mswp",
        "a_preview": f"{base}/a/preview.png",
        "b_preview": f"{base}/b/preview.png",
    }


def build_dataset(cfg, out_dir):
    """Render cfg.scenes usable scenes x cfg.variations light variations into
    ``out_dir`` and return the manifest path. Resumable: pairs already listed
    in the manifest with files on disk are skipped."""
    os.makedirs(out_dir, exist_ok=True)
    man_path = os.path.join(out_dir, "manifest.json")
    chash = config_hash(cfg)
    manifest = {"version": MANIFEST_VERSION, "config_hash": chash,
                "entries": [], "skipped_seeds": []}
    if os.path.exists(man_path):
        with open(man_path) as f:
            manifest = json.load(f)
        if manifest["config_hash"] != chash:
            raise ValueError(f"out_dir built with config {manifest['config_hash']}, "
                             f"current is {chash}")
    done = {e["pair_id"]: e for e in manifest["entries"]}
    skipped = set(manifest["skipped_seeds"])

    accepted = 0
    candidate = 0
    while accepted < cfg.scenes:
        seed = cfg.seed0 + candidate
        candidate += 1
        if seed in skipped:
            continue
        scene_a = sample_scene(seed, cfg.gen, light_seed=_light_seed(seed, 0))
        rng = _pair_rng(seed)
        sel_prim = scene_a.primitives[int(rng.integers(len(scene_a.primitives)))]
        selected = sel_prim.object_id
        swap_mat = materials.sample_material(rng, cfg.gen.mat_tile_max, cfg.gen.mat_amp_prob,
                                             cfg.gen.mat_amp_range, cfg.gen.mat_patterns)
        if not _usable(scene_a, selected, cfg.res):
            manifest["skipped_seeds"].append(seed)
            skipped.add(seed)
            _write_manifest(man_path, manifest)
            continue

        for v in range(cfg.variations):
            pair_id = f"{seed:05d}_{v}"
            paths = _entry_paths(pair_id)
            if pair_id in done and all(os.path.exists(os.path.join(out_dir, p))
                                       for p in paths.values()):
                continue
            sa = sample_scene(seed, cfg.gen, light_seed=_light_seed(seed, v))
            sb = with_swapped_material(sa, selected, swap_mat)
            try:
                entry = _render_pair(cfg, out_dir, pair_id, paths, sa, sb, selected,
                                     swap_mat, seed, v)
            except Exception as exc:
                raise RuntimeError(f"pair {pair_id} failed: {exc}") from exc
            done[pair_id] = entry
            manifest["entries"] = [done[k] for k in sorted(done)]
            _write_manifest(man_path, manifest)
            print(f"wrote pair {pair_id}")
        accepted += 1
    return man_path


def _render_pair(cfg, out_dir, pair_id, paths, sa, sb, selected, swap_mat, seed, v):
    res = (cfg.res, cfg.res)
    ba = render.render_buffers(sa, selected, res, cfg.spp, cfg.stratified)
    bb = render.render_buffers(sb, selected, res, cfg.spp, cfg.stratified)
    scale = uv_scale_factor(ba.UV, ba.M)

    mat_a = sa.material_of(next(p.material_id for p in sa.primitives
                                if p.object_id == selected))
    ex_res = (cfg.exemplar_res, cfg.exemplar_res)
    pa = render.render_exemplar(mat_a, sa.env, ex_res)
    pb = render.render_exemplar(swap_mat, sb.env, ex_res)

    for sub in ("a", "b"):
        os.makedirs(os.path.join(out_dir, f"pair_{pair_id}", sub), exist_ok=True)
    container.write_tensors(os.path.join(out_dir, paths["a_buffers"]), ba.to_dict())
    container.write_tensors(os.path.join(out_dir, paths["b_buffers"]), bb.to_dict())
    container.write_tensors(os.path.join(out_dir, paths["a_exemplar"]), {"p_full": pa})
    container.write_tensors(os.path.join(out_dir, paths["b_exemplar"]), {"p_full": pb})
    imaging.write_png(os.path.join(out_dir, paths["a_preview"]), ba.I)
    imaging.write_png(os.path.join(out_dir, paths["b_preview"]), bb.I)
    return {"pair_id": pair_id, "scene_seed": seed, "light_variation": v,
            "selected_object": int(selected), "scale": [float(scale[0]), float(scale[1])],
            "paths": paths}


def _write_manifest(path, manifest):
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    os.replace(tmp, path)


@dataclass
class PairRecord:
    pair_id: str
    buffers_a: BufferSet
    buffers_b: BufferSet
    exemplar_a: np.ndarray
    exemplar_b: np.ndarray
    scale: tuple
    selected_object: int


def load_manifest(man_path):
    with open(man_path) as f:
        manifest = json.load(f)
    if manifest["version"] != MANIFEST_VERSION:
        raise ValueError(f"manifest version {manifest['version']} unsupported")
    return manifest


def load_pairs(man_path):
    manifest = load_manifest(man_path)
    base = os.path.dirname(os.path.abspath(man_path))
    out = []
    for e in manifest["entries"]:
        p = e["paths"]
        ba = BufferSet.from_dict(container.read_tensors(os.path.join(base, p["a_buffers"])))
        bb = BufferSet.from_dict(container.read_tensors(os.path.join(base, p["b_buffers"])))
        pa = container.read_tensors(os.path.join(base, p["a_exemplar"]))["p_full"]
        pb = container.read_tensors(os.path.join(base, p["b_exemplar"]))["p_full"]
        out.append(PairRecord(pair_id=e["pair_id"], buffers_a=ba, buffers_b=bb,
                              exemplar_a=pa, exemplar_b=pb,
                              scale=tuple(e["scale"]),
                              selected_object=e["selected_object"]))
    return out


def pair_samples(rec, enc_res, offsets=((0.0, 0.0), (0.0, 0.0)), uid_base=0):
    """Two directed TrainSamples from one pair; conditioning buffers come from
    the input member, the target image from the other."""
    pa = crop_exemplar(rec.exemplar_a, rec.scale, offsets[0], enc_res)
    pb = crop_exemplar(rec.exemplar_b, rec.scale, offsets[1], enc_res)
    a, b = rec.buffers_a, rec.buffers_b
    ab = TrainSample(x=a.I, N=a.N, E=a.E, M=a.M, p=pb.astype(np.float32),
                     I_target=b.I, direction="ab", uid=uid_base)
    ba = TrainSample(x=b.I, N=b.N, E=b.E, M=b.M, p=pa.astype(np.float32),
                     I_target=a.I, direction="ba", uid=uid_base + 1)
    return ab, ba
