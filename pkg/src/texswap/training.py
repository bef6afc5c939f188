"""Denoiser training: two resolution stages, stateless per-step RNG.

Every random draw in a step comes from a Philox stream keyed by
(run seed, step, sample uid), consumed in the fixed order defined by
``item_draws``: timestep, dropout gates, flip, exemplar offset, noise image.
Nothing carries over between steps, so resuming from a checkpoint replays
the exact run and the loss cannot depend on batch order.
"""

import os
from dataclasses import dataclass, field

import numpy as np
import torch

from . import dataset as ds
from . import models
from .conditioning import DROPOUT_DRAWS, apply_dropout, encode_conditions
from .imaging import area_resize
from .models import ModelConfig, predict_noise
from .schedule import forward_diffuse, make_schedule


@dataclass
class TrainConfig:
    stage_res: tuple = (32, 64)
    stage_steps: tuple = (20000, 10000)
    batch: int = 16
    lr: float = 1e-4
    betas: tuple = (0.9, 0.999)
    weight_decay: float = 0.01
    p_drop_all: float = 0.10
    p_drop_each: float = 0.10
    flip_prob: float = 0.5
    seed: int = 0
    ckpt_every: int = 500
    sched_T: int = 1000
    sched_beta: tuple = (1e-4, 0.02)
    model: ModelConfig = field(default_factory=ModelConfig)

    def schedule(self):
        return make_schedule(self.sched_T, *self.sched_beta)


def _item_stream(seed, step, uid):
    key = np.array([np.uint64(seed),
                    (np.uint64(step) << np.uint64(24)) + np.uint64(uid)],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _batch_stream(seed, step):
    key = np.array([np.uint64(seed) ^ np.uint64(0xBA7C << 32), np.uint64(step)],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def item_draws(seed, step, uid, T, img_shape=None):
    """All stochastic choices for one sample in one step, in stream order.

    Returns (t, dropout_uniforms, flip_uniform, crop_offset, eps); ``eps`` is
    None when img_shape is omitted (callers that only need the early draws).
    """
    g = _item_stream(seed, step, uid)
    t = 1 + int(g.random() * T)
    drop_u = g.random(DROPOUT_DRAWS)
    flip_u = float(g.random())
    offset = tuple(g.random(2))
    eps = g.standard_normal(img_shape) if img_shape is not None else None
    return t, drop_u, flip_u, offset, eps


def _resize_record(rec, res):
    """Stage view of a PairRecord's buffers: area-averaged, normals re-unit,
    mask re-binarized."""
    def shrink(img):
        if img.shape[0] == res:
            return np.asarray(img, dtype=np.float32)
        return area_resize(img, (res, res)).astype(np.float32)

    out = {}
    for tag, buf in (("a", rec.buffers_a), ("b", rec.buffers_b)):
        n = shrink(buf.N)
        norm = np.linalg.norm(n, axis=-1, keepdims=True)
        n = np.where(norm > 1e-6, n / np.maximum(norm, 1e-6), 0.0).astype(np.float32)
        out[tag] = {
            "I": shrink(buf.I),
            "N": n,
            "E": shrink(buf.E),
            "M": (shrink(buf.M) > 0.5).astype(np.float32),
        }
    return out


class StageData:
    """All directed samples of a dataset at one stage resolution."""

    def __init__(self, records, res, enc_res):
        self.enc_res = enc_res
        self.items = []
        for i, rec in enumerate(sorted(records, key=lambda r: r.pair_id)):
            v = _resize_record(rec, res)
            for uid_off, (src, dst, p_full) in enumerate(
                    (("a", "b", rec.exemplar_b), ("b", "a", rec.exemplar_a))):
                self.items.append({
                    "uid": 2 * i + uid_off,
                    "x": v[src]["I"], "N": v[src]["N"], "E": v[src]["E"], "M": v[src]["M"],
                    "I_target": v[dst]["I"],
                    "p_full": p_full, "scale": rec.scale,
                    "direction": src + dst,
                })

    def sample(self, item, offset):
        return ds.TrainSample(
            x=item["x"], N=item["N"], E=item["E"], M=item["M"],
            p=ds.crop_exemplar(item["p_full"], item["scale"], offset,
                               self.enc_res).astype(np.float32),
            I_target=item["I_target"], direction=item["direction"], uid=item["uid"])


def _to_bchw(arrs):
    return torch.from_numpy(np.stack(arrs).transpose(0, 3, 1, 2).copy()).float()


def loss(samples, params, sched, base_key, flip_prob=0.0, p_drop_all=0.10,
         p_drop_each=0.10, predict_fn=predict_noise, train_mode=False):
    """Mean squared error between the drawn noise and the denoiser output.

    ``base_key`` = (seed, step). Per-item randomness is keyed by the sample's
    uid, not its batch position, so permuting ``samples`` changes nothing but
    summation order.
    """
    if not samples:
        raise ValueError("empty batch")
    seed, step = base_key
    prepared = []
    for s in samples:
        t, drop_u, flip_u, _, eps = item_draws(seed, step, s.uid, sched.T,
                                               s.I_target.shape)
        s2 = ds.augment_flip(s, flip_prob > 0 and flip_u < flip_prob)
        prepared.append((s2, t, drop_u, eps))

    x = _to_bchw([p[0].x for p in prepared])
    n = _to_bchw([p[0].N for p in prepared])
    e = _to_bchw([p[0].E for p in prepared])
    m = _to_bchw([p[0].M for p in prepared])
    pex = _to_bchw([p[0].p for p in prepared])
    target = _to_bchw([p[0].I_target for p in prepared])
    eps = _to_bchw([p[3].astype(np.float32) for p in prepared])
    t = torch.tensor([p[1] for p in prepared], dtype=torch.long)

    cond = encode_conditions(x, n, e, m)
    tokens = models.texture_embed(pex, params)
    if train_mode:
        cond, tokens = apply_dropout(cond, tokens,
                                     np.stack([p[2] for p in prepared]),
                                     p_drop_all, p_drop_each)
    z_t = forward_diffuse(target, t, eps, sched)
    eps_hat = predict_fn(z_t, cond, t, tokens, params)
    out = ((eps_hat - eps) ** 2).mean()
    if not torch.isfinite(out):
        raise RuntimeError("non-finite loss")
    return out


def _all_parameters(params):
    return list(params.unet.parameters()) + list(params.tex.parameters())


def _save_optimizer(opt, params):
    out = {}
    for i, p in enumerate(_all_parameters(params)):
        st = opt.state.get(p)
        if not st:
            continue
        out[f"opt.{i}.step"] = np.array(float(st["step"]), dtype=np.float32)
        out[f"opt.{i}.exp_avg"] = st["exp_avg"].numpy().astype(np.float32)
        out[f"opt.{i}.exp_avg_sq"] = st["exp_avg_sq"].numpy().astype(np.float32)
    return out


def _load_optimizer(opt, params, extra):
    for i, p in enumerate(_all_parameters(params)):
        key = f"opt.{i}.step"
        if key not in extra:
            continue
        opt.state[p] = {
            "step": torch.tensor(float(np.asarray(extra[key]).item())),
            "exp_avg": torch.from_numpy(extra[f"opt.{i}.exp_avg"]).reshape(p.shape),
            "exp_avg_sq": torch.from_numpy(extra[f"opt.{i}.exp_avg_sq"]).reshape(p.shape),
        }


def _stage_of(step, stage_steps):
    bound = 0
    for i, n in enumerate(stage_steps):
        bound += n
        if step < bound:
            return i
    return len(stage_steps) - 1


def train(manifest_path, cfg, out_dir, resume=None):
    """Run (or continue) the staged schedule; returns the final checkpoint
    path. Loss log at out_dir/loss.csv, one `step,stage,loss` row per step."""
    torch.set_num_threads(1)
    if len(cfg.stage_res) != len(cfg.stage_steps):
        raise ValueError("stage_res and stage_steps lengths differ")
    for r in cfg.stage_res:
        if r < 1 or r & (r - 1):
            raise ValueError(f"stage resolution {r} is not a power of two")
    for n in cfg.stage_steps:
        if n <= 0:
            raise ValueError("stage steps must be positive")
    os.makedirs(out_dir, exist_ok=True)
    sched = cfg.schedule()
    records = ds.load_pairs(manifest_path)
    if not records:
        raise ValueError("dataset is empty")
    native = records[0].buffers_a.I.shape[0]
    for r in cfg.stage_res:
        if r > native:
            raise ValueError(f"stage resolution {r} exceeds dataset resolution {native}")

    if resume is not None:
        params, extra, _ = models.load_checkpoint(resume)
        start = params.step
    else:
        params = models.build_denoiser(cfg.model, seed=cfg.seed)
        extra = {}
        start = 0
    opt = torch.optim.AdamW(_all_parameters(params), lr=cfg.lr, betas=cfg.betas,
                            weight_decay=cfg.weight_decay)
    if extra:
        _load_optimizer(opt, params, extra)

    total = sum(cfg.stage_steps)
    log_path = os.path.join(out_dir, "loss.csv")
    log_mode = "a" if (resume is not None and os.path.exists(log_path)) else "w"
    stage_cache = {}

    def stage_data(res):
        if res not in stage_cache:
            stage_cache[res] = StageData(records, res, cfg.model.enc_res)
        return stage_cache[res]

    with open(log_path, log_mode) as log:
        if log_mode == "w":
            log.write("step,stage,loss\n")
        for step in range(start, total):
            stage = _stage_of(step, cfg.stage_steps)
            data = stage_data(cfg.stage_res[stage])
            idx = _batch_stream(cfg.seed, step).integers(0, len(data.items), cfg.batch)
            batch = []
            for j in idx:
                item = data.items[int(j)]
                _, _, _, offset, _ = item_draws(cfg.seed, step, item["uid"], sched.T)
                batch.append(data.sample(item, offset))
            val = loss(batch, params, sched, (cfg.seed, step),
                       flip_prob=cfg.flip_prob, p_drop_all=cfg.p_drop_all,
                       p_drop_each=cfg.p_drop_each, train_mode=True)
            opt.zero_grad()
            val.backward()
            opt.step()
            fval = float(val.detach())
            if not np.isfinite(fval):
                raise RuntimeError(f"non-finite loss at step {step}")
            log.write(f"{step + 1},{stage},{fval:.8e}\n")
            params.step = step + 1
            params.stage = stage
            if (step + 1) % cfg.ckpt_every == 0 and step + 1 < total:
                _checkpoint(os.path.join(out_dir, f"ckpt_{step + 1:06d}.mswp"),
                            params, opt, cfg)
    final = os.path.join(out_dir, "ckpt_final.mswp")
    _checkpoint(final, params, opt, cfg)
    return final


def _checkpoint(path, params, opt, cfg):
    models.save_checkpoint(path, params, extra_tensors=_save_optimizer(opt, params),
                           meta={"sched_T": cfg.sched_T, "sched_beta": list(cfg.sched_beta)})
