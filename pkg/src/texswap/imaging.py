"""Exact area resampling and 8-bit preview encoding.

Resampling integrates the piecewise-constant source signal over each output
bin (prefix sums, piecewise-linear in the fractional coordinate), so results
are exact box averages rather than sampled approximations. That exactness is
what makes the periodic-crop symmetry tests bitwise-stable.
"""

import numpy as np


def _axis_prefix(arr):
    """Prefix integral along axis 0, shape (S+1, ...), P[0] = 0."""
    p = np.cumsum(arr, axis=0, dtype=np.float64)
    zero = np.zeros((1,) + arr.shape[1:], dtype=np.float64)
    return np.concatenate([zero, p], axis=0)


def _integrate_axis(arr, edges):
    """Integral of arr (axis 0, unit-width pixels) over [edges[j], edges[j+1])
    with periodic extension; edges may lie anywhere on the real line."""
    s = arr.shape[0]
    p = _axis_prefix(arr)
    total = p[-1]

    def f(x):
        wraps = np.floor(x / s)
        xm = x - wraps * s
        k = np.minimum(xm.astype(np.int64), s - 1)
        frac = xm - k
        return (wraps[:, None] * total.reshape(1, -1)
                + p[k].reshape(len(x), -1)
                + frac[:, None] * arr[k].reshape(len(x), -1))

    vals = f(np.asarray(edges, dtype=np.float64))
    out = np.diff(vals, axis=0)
    return out.reshape((len(edges) - 1,) + arr.shape[1:])


def resample_axis(arr, out_size, lo, hi, axis=0):
    """Area-average arr over [lo, hi) (pixel units, periodic) into out_size
    bins along ``axis``."""
    arr = np.moveaxis(np.asarray(arr, dtype=np.float64), axis, 0)
    edges = lo + (hi - lo) * np.arange(out_size + 1) / out_size
    out = _integrate_axis(arr, edges) / ((hi - lo) / out_size)
    return np.moveaxis(out, 0, axis)


def area_resize(img, out_hw):
    """Exact box-filter resize of an (H, W, C) or (H, W) image."""
    h, w = img.shape[:2]
    oh, ow = out_hw
    out = resample_axis(img, oh, 0.0, float(h), axis=0)
    return resample_axis(out, ow, 0.0, float(w), axis=1)


def periodic_window(img, span_uv, offset_uv, out_res):
    """Area-averaged crop of a tileable image.

    The window covers ``span_uv`` = (span_u, span_v) UV units starting at
    ``offset_uv`` (u is the horizontal axis), wrapping as needed, and is
    rendered to out_res x out_res.
    """
    h, w = img.shape[:2]
    su, sv = span_uv
    ou, ov = offset_uv
    out = resample_axis(img, out_res, ov * h, (ov + sv) * h, axis=0)
    out = resample_axis(out, out_res, ou * w, (ou + su) * w, axis=1)
    return out


def srgb_encode(linear):
    x = np.clip(linear, 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1 / 2.4) - 0.055)


def to_uint8(linear):
    return (srgb_encode(linear) * 255.0 + 0.5).astype(np.uint8)


def write_png(path, linear_rgb):
    from PIL import Image
    Image.fromarray(to_uint8(linear_rgb)).save(path)
