"""Conditioning assembly and modality dropout.

The spatial stack is always [x(3), N(3), E(1), M(1)] in that order, encoded
into [0,1]: normals as (n+1)/2, irradiance through e/(1+e), mask raw. The
UNet consumes it concatenated after the 3 noisy image channels, 11 input
channels total. Dropout zeroes whole maps (and the exemplar tokens) but
never the mask.
"""

from dataclasses import dataclass

import numpy as np
import torch

COND_CHANNELS = 8
UNET_IN_CHANNELS = 11

P_DROP_ALL = 0.10
P_DROP_EACH = 0.10
# draw budget per sample: 1 gate + 4 per-input uniforms, always consumed so
# the stream position does not depend on outcomes
DROPOUT_DRAWS = 5


@dataclass
class ConditioningStack:
    x: torch.Tensor  # (B, 3, H, W)
    N: torch.Tensor  # (B, 3, H, W), already (n+1)/2 encoded
    E: torch.Tensor  # (B, 1, H, W), already tonemapped
    M: torch.Tensor  # (B, 1, H, W)
    present: torch.Tensor  # (B, 4) bool, order (x, N, E, M)

    def as_tensor(self):
        return torch.cat([self.x, self.N, self.E, self.M], dim=1)

    def clone(self):
        return ConditioningStack(self.x.clone(), self.N.clone(), self.E.clone(),
                                 self.M.clone(), self.present.clone())


@dataclass
class TextureTokens:
    tokens: torch.Tensor  # (B, K, d)
    null: torch.Tensor  # (B,) bool; null rows are all-zero

    def clone(self):
        return TextureTokens(self.tokens.clone(), self.null.clone())


def encode_normals(n):
    return (n + 1.0) * 0.5


def tonemap_irradiance(e):
    return e / (1.0 + e)


def encode_conditions(x, N, E, M, present=None):
    """Build a ConditioningStack from raw buffers (torch, BCHW).

    ``N`` is raw unit normals in [-1,1]; ``E`` raw irradiance >= 0. Maps whose
    present flag is false are zeroed. The mask must be present and nonempty
    for every batch item.
    """
    shapes = {tuple(v.shape[-2:]) for v in (x, N, E, M)}
    if len(shapes) != 1:
        raise ValueError(f"conditioning maps disagree on resolution: {sorted(shapes)}")
    b = x.shape[0]
    if present is None:
        present = torch.ones(b, 4, dtype=torch.bool)
    if not bool(present[:, 3].all()):
        raise ValueError("mask may not be dropped")
    empty = M.reshape(b, -1).sum(dim=1) == 0
    if bool(empty.any()):
        raise ValueError(f"empty mask in batch item {int(empty.nonzero()[0])}")

    enc_n = encode_normals(N)
    enc_e = tonemap_irradiance(E)
    keep = present.to(x.dtype)
    return ConditioningStack(
        x=x * keep[:, 0].view(b, 1, 1, 1),
        N=enc_n * keep[:, 1].view(b, 1, 1, 1),
        E=enc_e * keep[:, 2].view(b, 1, 1, 1),
        M=M,
        present=present.clone(),
    )


def null_tokens(batch, k, d, dtype=torch.float32):
    return TextureTokens(tokens=torch.zeros(batch, k, d, dtype=dtype),
                         null=torch.ones(batch, dtype=torch.bool))


def apply_dropout(cond, tokens, uniforms, p_all=P_DROP_ALL, p_each=P_DROP_EACH):
    """Modality dropout from pre-drawn uniforms of shape (B, 5).

    Column 0 gates dropping {x, N, E, p} together; columns 1-4 drop x, N, E, p
    independently otherwise. The mask always survives.
    """
    u = np.asarray(uniforms, dtype=np.float64)
    b = cond.x.shape[0]
    if u.shape != (b, DROPOUT_DRAWS):
        raise ValueError(f"uniforms shape {u.shape}, expected ({b}, {DROPOUT_DRAWS})")
    all_drop = u[:, 0] < p_all
    each = u[:, 1:5] < p_each
    drop = np.where(all_drop[:, None], True, each)  # columns: x, N, E, p

    out = cond.clone()
    keep_map = torch.from_numpy(~drop[:, :3]).to(cond.x.dtype)
    out.x = out.x * keep_map[:, 0].view(b, 1, 1, 1)
    out.N = out.N * keep_map[:, 1].view(b, 1, 1, 1)
    out.E = out.E * keep_map[:, 2].view(b, 1, 1, 1)
    out.present = out.present & torch.from_numpy(
        np.concatenate([~drop[:, :3], np.ones((b, 1), dtype=bool)], axis=1))

    tok = tokens.clone()
    drop_p = torch.from_numpy(drop[:, 3])
    tok.tokens = tok.tokens * (~drop_p).to(tok.tokens.dtype).view(b, 1, 1)
    tok.null = tok.null | drop_p
    return out, tok
