"""Quantitative metrics: PSNR, exemplar-embedding cosine, irradiance
adherence, and the autocorrelation period probe used by scale checks."""

import numpy as np
import torch

from . import models
from .imaging import area_resize

PSNR_CAP = 99.0


def _as_mask(mask, shape_hw):
    m = np.asarray(mask)
    if m.ndim == 3:
        m = m[..., 0]
    if m.shape != shape_hw:
        raise ValueError(f"mask shape {m.shape} != image {shape_hw}")
    return m > 0.5


def psnr(a, b, mask=None):
    """10 log10(1/MSE) for images in [0,1]; identical inputs cap at 99 dB."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if mask is not None:
        m = _as_mask(mask, a.shape[:2])
        if not m.any():
            raise ValueError("empty mask")
        a = a[m]
        b = b[m]
    mse = float(np.mean((a - b) ** 2))
    if mse <= 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def mask_bbox(M):
    m = _as_mask(M, np.asarray(M).shape[:2])
    if not m.any():
        raise ValueError("empty mask")
    rows = np.nonzero(m.any(axis=1))[0]
    cols = np.nonzero(m.any(axis=0))[0]
    return int(rows[0]), int(rows[-1] + 1), int(cols[0]), int(cols[-1] + 1)


def _pool_tokens(img_hwc, tex_params):
    t = torch.from_numpy(np.asarray(img_hwc, dtype=np.float32).transpose(2, 0, 1)).unsqueeze(0)
    with torch.no_grad():
        tok = tex_params.tex(t)[0]  # (K, d)
    return tok.mean(dim=0).numpy()


def exemplar_cosine(p, I_hat, M, tex_params):
    """Cosine between mean-pooled texture tokens of the exemplar and of the
    tight mask-bbox crop of the output."""
    r0, r1, c0, c1 = mask_bbox(M)
    if r1 - r0 < 8 or c1 - c0 < 8:
        raise ValueError(f"mask bbox {r1 - r0}x{c1 - c0} below 8x8")
    enc = tex_params.cfg.enc_res
    crop = area_resize(np.asarray(I_hat, dtype=np.float64)[r0:r1, c0:c1], (enc, enc))
    if np.asarray(p).shape[:2] != (enc, enc):
        p = area_resize(np.asarray(p, dtype=np.float64), (enc, enc))
    va = _pool_tokens(p, tex_params)
    vb = _pool_tokens(crop, tex_params)
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na < 1e-12 or nb < 1e-12:
        raise ValueError("zero embedding vector, cosine undefined")
    return float(va @ vb / (na * nb))


def irradiance_adherence(x, I_hat, M, est_params):
    """Masked PSNR between estimated irradiance of the output and of the
    input; measures how well generated shading tracks the scene lighting."""
    from .intrinsics import estimate
    _, e_in = estimate(x, est_params)
    _, e_out = estimate(I_hat, est_params)
    return psnr(e_out, e_in, mask=M)


def dominant_period(img, axis=1):
    """Lag (pixels) of the strongest circular-autocorrelation peak along an
    axis, averaged over the other; lag 1 boundaries excluded. Works for
    signals with at least two full periods along that axis."""
    g = np.asarray(img, dtype=np.float64)
    if g.ndim == 3:
        g = g.mean(axis=2)
    if axis == 0:
        g = g.T
    g = g - g.mean(axis=1, keepdims=True)
    spec = np.fft.rfft(g, axis=1)
    ac = np.fft.irfft(np.abs(spec) ** 2, n=g.shape[1], axis=1).mean(axis=0)
    n = len(ac)
    lo, hi = 2, n // 2 + 1
    if hi <= lo:
        raise ValueError("image too small for a period estimate")
    return float(lo + int(np.argmax(ac[lo:hi])))
