"""Denoiser UNet, texture-token encoder, and checkpoint IO.

Normalization everywhere is per-pixel channel RMS (no spatial mixing), so a
feature at (i,j) depends only on input pixels inside the conv receptive
field; ``receptive_radius`` returns that bound and a probe test relies on it.

Conditioning maps enter through stem input channels whose weights start at
zero, and exemplar tokens enter through cross-attention whose output
projections start at zero, so a freshly built denoiser is exactly
conditioning-invariant. Token key/value projections carry no bias, so
all-zero (null) tokens yield an exactly zero attention value at any parameter
value; only the token-independent output projection bias remains.
"""

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import container
from .conditioning import UNET_IN_CHANNELS


@dataclass
class ModelConfig:
    base: int = 32
    mults: tuple = (1, 2, 3)
    attn_levels: tuple = (1, 2)  # indices into mults, both paths
    tok_dim: int = 128
    n_tokens: int = 4  # texture encoder emits a 2x2 grid
    enc_res: int = 64
    tex_base: int = 32
    in_channels: int = UNET_IN_CHANNELS
    out_channels: int = 3

    def hash(self):
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


class RMSNorm2d(nn.Module):
    """Per-pixel channel RMS normalization with a learned gain."""

    def __init__(self, ch, eps=1e-6):
        super().__init__()
        self.gain = nn.Parameter(torch.ones(ch))
        self.eps = eps

    def forward(self, x):
        ms = x.pow(2).mean(dim=1, keepdim=True)
        return x * torch.rsqrt(ms + self.eps) * self.gain.view(1, -1, 1, 1)


def time_embedding(t, dim, dtype):
    """Sinusoidal embedding of integer timesteps, shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=dtype) / (half - 1))
    ang = t.to(dtype)[:, None] * freqs[None, :]
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=1)


class ResBlock(nn.Module):
    def __init__(self, ch_in, ch_out, time_dim=None):
        super().__init__()
        self.norm1 = RMSNorm2d(ch_in)
        self.conv1 = nn.Conv2d(ch_in, ch_out, 3, padding=1)
        self.norm2 = RMSNorm2d(ch_out)
        self.conv2 = nn.Conv2d(ch_out, ch_out, 3, padding=1)
        self.skip = nn.Conv2d(ch_in, ch_out, 1) if ch_in != ch_out else nn.Identity()
        self.time = nn.Linear(time_dim, ch_out) if time_dim else None

    def forward(self, x, temb=None):
        h = self.conv1(F.silu(self.norm1(x)))
        if self.time is not None:
            h = h + self.time(F.silu(temb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class TokenAttention(nn.Module):
    """Cross-attention from spatial features to a small token set.

    No spatial mixing: each pixel attends to the tokens independently.
    """

    def __init__(self, ch, tok_dim):
        super().__init__()
        self.norm = RMSNorm2d(ch)
        self.q = nn.Conv2d(ch, ch, 1)
        self.k = nn.Linear(tok_dim, ch, bias=False)
        self.v = nn.Linear(tok_dim, ch, bias=False)
        self.out = nn.Conv2d(ch, ch, 1)
        self.scale = ch ** -0.5

    def forward(self, x, tokens):
        b, c, h, w = x.shape
        q = self.q(self.norm(x)).reshape(b, c, h * w).transpose(1, 2)  # (B, HW, C)
        k = self.k(tokens)  # (B, K, C)
        v = self.v(tokens)
        attn = torch.softmax(q @ k.transpose(1, 2) * self.scale, dim=-1)
        o = (attn @ v).transpose(1, 2).reshape(b, c, h, w)
        return x + self.out(o)


class Upsample(nn.Module):
    def __init__(self, ch_in, ch_out):
        super().__init__()
        self.conv = nn.Conv2d(ch_in, ch_out, 3, padding=1)

    def forward(self, x):
        return self.conv(F.interpolate(x, scale_factor=2, mode="nearest"))


class UNet(nn.Module):
    """Small encoder-decoder with optional time embedding and token attention."""

    def __init__(self, in_ch, out_ch, base=32, mults=(1, 2, 3), attn_levels=(),
                 tok_dim=0, with_time=True):
        super().__init__()
        chs = [base * m for m in mults]
        self.attn_levels = tuple(attn_levels)
        self.time_dim = base * 4 if with_time else None
        if with_time:
            self.time_mlp = nn.Sequential(nn.Linear(self.time_dim, self.time_dim),
                                          nn.SiLU(),
                                          nn.Linear(self.time_dim, self.time_dim))
        self.stem = nn.Conv2d(in_ch, chs[0], 3, padding=1)

        self.down_blocks = nn.ModuleList()
        self.down_attn = nn.ModuleList()
        self.downs = nn.ModuleList()
        for i, ch in enumerate(chs):
            self.down_blocks.append(ResBlock(ch, ch, self.time_dim))
            self.down_attn.append(TokenAttention(ch, tok_dim) if i in self.attn_levels else None)
            if i + 1 < len(chs):
                self.downs.append(nn.Conv2d(ch, chs[i + 1], 3, stride=2, padding=1))

        self.mid = ResBlock(chs[-1], chs[-1], self.time_dim)

        self.up_blocks = nn.ModuleList()
        self.up_attn = nn.ModuleList()
        self.ups = nn.ModuleList()
        for i in reversed(range(len(chs))):
            self.up_blocks.append(ResBlock(chs[i] * 2, chs[i], self.time_dim))
            self.up_attn.append(TokenAttention(chs[i], tok_dim) if i in self.attn_levels else None)
            if i > 0:
                self.ups.append(Upsample(chs[i], chs[i - 1]))

        self.head_norm = RMSNorm2d(chs[0])
        self.head = nn.Conv2d(chs[0], out_ch, 3, padding=1)
        self.n_levels = len(chs)

    def forward(self, x, t=None, tokens=None):
        temb = None
        if self.time_dim is not None:
            temb = self.time_mlp(time_embedding(t, self.time_dim, x.dtype))
        h = self.stem(x)
        skips = []
        for i in range(self.n_levels):
            h = self.down_blocks[i](h, temb)
            if self.down_attn[i] is not None:
                h = self.down_attn[i](h, tokens)
            skips.append(h)
            if i + 1 < self.n_levels:
                h = self.downs[i](h)
        h = self.mid(h, temb)
        for j, i in enumerate(reversed(range(self.n_levels))):
            h = self.up_blocks[j](torch.cat([h, skips[i]], dim=1), temb)
            if self.up_attn[j] is not None:
                h = self.up_attn[j](h, tokens)
            if i > 0:
                h = self.ups[j](h)
        return self.head(F.silu(self.head_norm(h)))


class TextureEncoder(nn.Module):
    """Conv stack from an enc_res exemplar to a 2x2 grid of tokens."""

    def __init__(self, enc_res=64, tok_dim=128, base=32):
        super().__init__()
        n_down = int(math.log2(enc_res)) - 1
        if 2 ** (n_down + 1) != enc_res:
            raise ValueError(f"enc_res {enc_res} is not a power of two")
        layers = []
        ch = 3
        for i in range(n_down):
            nxt = min(tok_dim, base * 2 ** i)
            layers += [nn.Conv2d(ch, nxt, 3, stride=2, padding=1), nn.SiLU()]
            ch = nxt
        layers.append(nn.Conv2d(ch, tok_dim, 1))
        self.net = nn.Sequential(*layers)
        self.enc_res = enc_res
        self.tok_dim = tok_dim

    def forward(self, p):
        if p.shape[-2:] != (self.enc_res, self.enc_res):
            raise ValueError(f"exemplar is {tuple(p.shape[-2:])}, expected "
                             f"({self.enc_res}, {self.enc_res})")
        g = self.net(p)  # (B, d, 2, 2)
        return g.reshape(g.shape[0], self.tok_dim, 4).transpose(1, 2)


@dataclass
class DenoiserParams:
    unet: UNet
    tex: TextureEncoder
    cfg: ModelConfig
    step: int = 0
    stage: int = 0

    def modules(self):
        return {"unet": self.unet, "tex": self.tex}


def build_denoiser(cfg=None, seed=0):
    """Construct and zero-init a denoiser; deterministic in (cfg, seed)."""
    if cfg is None:
        cfg = ModelConfig()
    if cfg.n_tokens != 4:
        raise ValueError("texture encoder emits exactly 4 tokens")
    torch.manual_seed(seed)
    unet = UNet(cfg.in_channels, cfg.out_channels, cfg.base, cfg.mults,
                cfg.attn_levels, cfg.tok_dim, with_time=True)
    tex = TextureEncoder(cfg.enc_res, cfg.tok_dim, cfg.tex_base)
    with torch.no_grad():
        unet.stem.weight[:, 3:].zero_()  # conditioning channels
        for mod in unet.modules():
            if isinstance(mod, TokenAttention):
                mod.out.weight.zero_()
                mod.out.bias.zero_()
        # zero head: the net starts as the identity map of the objective
        # (predicts 0 for any input), a clean baseline for the loss at init
        unet.head.weight.zero_()
        unet.head.bias.zero_()
        # bias-free start for the texture encoder: with default uniform
        # biases the shared offset dominates the SiLU chain and every
        # exemplar embeds nearly parallel (rot90 cosine > 0.999)
        for mod in tex.net:
            if isinstance(mod, nn.Conv2d):
                mod.bias.zero_()
    return DenoiserParams(unet=unet, tex=tex, cfg=cfg)


def receptive_radius(cfg):
    """Input-pixel radius that can influence one output pixel (conservative
    exact bound: norms and attention mix no spatial positions)."""
    r = 0
    scale = 1
    r += scale  # stem
    for i in range(len(cfg.mults)):
        r += 2 * scale  # down resblock
        if i + 1 < len(cfg.mults):
            r += scale  # strided conv
            scale *= 2
    r += 2 * scale  # mid
    for i in reversed(range(len(cfg.mults))):
        r += 2 * scale  # up resblock
        if i > 0:
            scale //= 2
            r += scale  # upsample conv
    r += 1  # head
    return r


def texture_embed(p, params):
    """Exemplar (B, 3, r, r) to TextureTokens; a null input is represented by
    the caller via conditioning.null_tokens instead."""
    from .conditioning import TextureTokens
    tokens = params.tex(p)
    return TextureTokens(tokens=tokens,
                         null=torch.zeros(p.shape[0], dtype=torch.bool))


def _find_nonfinite_layer(module, run):
    bad = []

    def hook(mod, args, out):
        if bad:
            return
        t = out[0] if isinstance(out, tuple) else out
        if torch.is_tensor(t) and not torch.isfinite(t).all():
            bad.append(type(mod).__name__)

    handles = [m.register_forward_hook(hook) for m in module.modules()]
    try:
        run()
    finally:
        for h in handles:
            h.remove()
    return bad[0] if bad else "unknown"


def predict_noise(z_t, cond, t, tokens, params):
    """One denoiser forward pass; raises on non-finite output, naming the
    first offending layer."""
    if z_t.shape[-2:] != cond.x.shape[-2:]:
        raise ValueError("z_t and conditioning disagree on resolution")
    if z_t.shape[-1] % 2 ** (len(params.cfg.mults) - 1):
        raise ValueError(f"resolution {z_t.shape[-1]} not divisible by the "
                         f"UNet downsampling factor")
    x = torch.cat([z_t, cond.as_tensor()], dim=1)
    if not torch.is_tensor(t):
        t = torch.full((z_t.shape[0],), int(t), dtype=torch.long)
    out = params.unet(x, t, tokens.tokens)
    if not torch.isfinite(out).all():
        layer = _find_nonfinite_layer(params.unet, lambda: params.unet(x, t, tokens.tokens))
        raise RuntimeError(f"non-finite denoiser output (first bad layer: {layer})")
    return out


# --- checkpoint IO ---------------------------------------------------------

def save_checkpoint(path, params, extra_tensors=None, meta=None):
    tensors = {}
    for prefix, mod in params.modules().items():
        for name, t in mod.state_dict().items():
            tensors[f"{prefix}.{name}"] = t.detach().cpu().numpy().astype(np.float32)
    for name, arr in (extra_tensors or {}).items():
        tensors[name] = np.asarray(arr, dtype=np.float32)
    container.write_tensors(path, tensors)
    side = {"step": params.step, "stage": params.stage,
            "model_cfg": asdict(params.cfg), "model_hash": params.cfg.hash()}
    side.update(meta or {})
    tmp = path + ".json.tmp"
    with open(tmp, "w") as f:
        json.dump(side, f, indent=1, sort_keys=True)
    os.replace(tmp, path + ".json")


def load_checkpoint(path):
    """Returns (DenoiserParams, extra_tensors, sidecar_meta)."""
    tensors = container.read_tensors(path)
    with open(path + ".json") as f:
        meta = json.load(f)
    cfg_d = dict(meta["model_cfg"])
    for key in ("mults", "attn_levels"):
        cfg_d[key] = tuple(cfg_d[key])
    cfg = ModelConfig(**cfg_d)
    params = build_denoiser(cfg, seed=0)
    extra = {}
    states = {"unet": {}, "tex": {}}
    for name, arr in tensors.items():
        prefix, _, rest = name.partition(".")
        if prefix in states:
            states[prefix][rest] = torch.from_numpy(arr)
        else:
            extra[name] = arr
    params.unet.load_state_dict(states["unet"])
    params.tex.load_state_dict(states["tex"])
    params.step = int(meta["step"])
    params.stage = int(meta["stage"])
    return params, extra, meta
