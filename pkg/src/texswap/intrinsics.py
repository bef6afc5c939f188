"""Single-image normal and irradiance estimators.

Two independent encoder-decoder networks (no diffusion, no conditioning):
one maps RGB to normals, one to scalar irradiance. Both train on rendered
buffers with mean-absolute-error; the normal loss runs on the (n+1)/2
encoding so its range matches the irradiance head. Inference renormalizes
normals to unit length and clamps irradiance to be non-negative.
"""

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from . import container
from . import dataset as ds
from .conditioning import encode_normals
from .imaging import area_resize
from .models import UNet


@dataclass
class IntrinsicsConfig:
    base: int = 32
    mults: tuple = (1, 2, 3)
    steps: int = 3000
    batch: int = 8
    lr: float = 2e-4
    res: int = 64
    seed: int = 0
    ckpt_every: int = 1000


@dataclass
class EstimatorParams:
    phi_n: UNet  # 3 -> 3
    phi_e: UNet  # 3 -> 1
    cfg: IntrinsicsConfig = field(default_factory=IntrinsicsConfig)
    step: int = 0


def build_estimators(cfg=None, seed=0):
    if cfg is None:
        cfg = IntrinsicsConfig()
    torch.manual_seed(seed)
    phi_n = UNet(3, 3, cfg.base, cfg.mults, attn_levels=(), tok_dim=0, with_time=False)
    phi_e = UNet(3, 1, cfg.base, cfg.mults, attn_levels=(), tok_dim=0, with_time=False)
    return EstimatorParams(phi_n=phi_n, phi_e=phi_e, cfg=cfg)


def _stream(seed, step):
    key = np.array([np.uint64(seed) ^ np.uint64(0x1477 << 32), np.uint64(step)],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _training_images(records, res):
    """Every pair member is a supervision image: (x, N, E) stacks."""
    xs, ns, es = [], [], []
    for rec in sorted(records, key=lambda r: r.pair_id):
        for buf in (rec.buffers_a, rec.buffers_b):
            def shrink(img):
                if img.shape[0] == res:
                    return np.asarray(img, dtype=np.float32)
                return area_resize(img, (res, res)).astype(np.float32)
            n = shrink(buf.N)
            norm = np.linalg.norm(n, axis=-1, keepdims=True)
            n = np.where(norm > 1e-6, n / np.maximum(norm, 1e-6), 0.0)
            xs.append(shrink(buf.I))
            ns.append(n.astype(np.float32))
            es.append(shrink(buf.E))
    to = lambda a: torch.from_numpy(np.stack(a).transpose(0, 3, 1, 2).copy()).float()
    return to(xs), to(ns), to(es)


def train_estimators(manifest_path, cfg, out_dir, resume=None):
    """MAE regression on rendered buffers; same stateless-RNG resume contract
    as the denoiser trainer. Returns the final checkpoint path."""
    torch.set_num_threads(1)
    os.makedirs(out_dir, exist_ok=True)
    records = ds.load_pairs(manifest_path)
    if not records:
        raise ValueError("dataset is empty")
    x_all, n_all, e_all = _training_images(records, cfg.res)

    if resume is not None:
        params, extra, _ = load_estimators(resume)
        start = params.step
    else:
        params = build_estimators(cfg, seed=cfg.seed)
        extra = {}
        start = 0
    pars = list(params.phi_n.parameters()) + list(params.phi_e.parameters())
    opt = torch.optim.AdamW(pars, lr=cfg.lr)
    if extra:
        _load_opt(opt, pars, extra)

    log_path = os.path.join(out_dir, "loss.csv")
    mode = "a" if (resume is not None and os.path.exists(log_path)) else "w"
    with open(log_path, mode) as log:
        if mode == "w":
            log.write("step,loss_n,loss_e\n")
        for step in range(start, cfg.steps):
            idx = _stream(cfg.seed, step).integers(0, x_all.shape[0], cfg.batch)
            x = x_all[idx]
            loss_n = (params.phi_n(x) - encode_normals(n_all[idx])).abs().mean()
            loss_e = (params.phi_e(x) - e_all[idx]).abs().mean()
            total = loss_n + loss_e
            if not torch.isfinite(total):
                raise RuntimeError(f"non-finite estimator loss at step {step}")
            opt.zero_grad()
            total.backward()
            opt.step()
            log.write(f"{step + 1},{float(loss_n.detach()):.8e},{float(loss_e.detach()):.8e}\n")
            params.step = step + 1
            if (step + 1) % cfg.ckpt_every == 0 and step + 1 < cfg.steps:
                _save(os.path.join(out_dir, f"intr_{step + 1:06d}.mswp"), params, opt, pars)
    final = os.path.join(out_dir, "intr_final.mswp")
    _save(final, params, opt, pars)
    return final


def estimate(x, params):
    """(N_hat, E_hat) for one (H, W, 3) image in [0,1]: unit normals and
    clamped irradiance, both numpy HWC float32."""
    h, w = np.asarray(x).shape[:2]
    factor = 2 ** (len(params.cfg.mults) - 1)
    if h % factor or w % factor:
        raise ValueError(f"resolution {h}x{w} not a multiple of {factor}")
    t = torch.from_numpy(np.asarray(x, dtype=np.float32).transpose(2, 0, 1)).unsqueeze(0)
    with torch.no_grad():
        n_enc = params.phi_n(t)[0].numpy().transpose(1, 2, 0)
        e = params.phi_e(t)[0].numpy().transpose(1, 2, 0)
    n = n_enc * 2.0 - 1.0
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    n = n / np.maximum(norm, 1e-6)
    return n.astype(np.float32), np.maximum(e, 0.0).astype(np.float32)


# --- persistence -----------------------------------------------------------

def _save(path, params, opt, pars):
    tensors = {}
    for prefix, mod in (("phin", params.phi_n), ("phie", params.phi_e)):
        for name, t in mod.state_dict().items():
            tensors[f"{prefix}.{name}"] = t.detach().numpy().astype(np.float32)
    for i, p in enumerate(pars):
        st = opt.state.get(p)
        if not st:
            continue
        tensors[f"opt.{i}.step"] = np.array(float(st["step"]), dtype=np.float32)
        tensors[f"opt.{i}.exp_avg"] = st["exp_avg"].numpy().astype(np.float32)
        tensors[f"opt.{i}.exp_avg_sq"] = st["exp_avg_sq"].numpy().astype(np.float32)
    container.write_tensors(path, tensors)
    side = {"step": params.step, "cfg": asdict(params.cfg)}
    tmp = path + ".json.tmp"
    with open(tmp, "w") as f:
        json.dump(side, f, indent=1, sort_keys=True)
    os.replace(tmp, path + ".json")


def _load_opt(opt, pars, extra):
    for i, p in enumerate(pars):
        key = f"opt.{i}.step"
        if key not in extra:
            continue
        opt.state[p] = {
            "step": torch.tensor(float(np.asarray(extra[key]).item())),
            "exp_avg": torch.from_numpy(extra[f"opt.{i}.exp_avg"]).reshape(p.shape),
            "exp_avg_sq": torch.from_numpy(extra[f"opt.{i}.exp_avg_sq"]).reshape(p.shape),
        }


def load_estimators(path):
    tensors = container.read_tensors(path)
    with open(path + ".json") as f:
        meta = json.load(f)
    cfg_d = dict(meta["cfg"])
    cfg_d["mults"] = tuple(cfg_d["mults"])
    cfg = IntrinsicsConfig(**cfg_d)
    params = build_estimators(cfg, seed=0)
    states = {"phin": {}, "phie": {}}
    extra = {}
    for name, arr in tensors.items():
        prefix, _, rest = name.partition(".")
        if prefix in states:
            states[prefix][rest] = torch.from_numpy(arr)
        else:
            extra[name] = arr
    params.phi_n.load_state_dict(states["phin"])
    params.phi_e.load_state_dict(states["phie"])
    params.step = int(meta["step"])
    return params, extra, meta
