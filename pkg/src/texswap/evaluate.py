"""Held-out evaluation: run the swap on every test pair through both input
paths (ground-truth buffers and estimated buffers), score it, and emit a
JSON report plus a contact-sheet image."""

import json
import os
from dataclasses import dataclass

import numpy as np

from . import dataset as ds
from . import intrinsics as intr
from . import metrics, models
from .conditioning import encode_normals, tonemap_irradiance
from .imaging import to_uint8
from .sampling import SamplerConfig, swap
from .schedule import make_schedule

SHEET_COLUMNS = ("x", "N", "E", "M", "p", "out", "target")
MAX_SHEET_ROWS = 8


@dataclass
class EvalConfig:
    steps: int = 50
    gamma: float = 3.0
    seed: int = 0
    offset: tuple = (0.0, 0.0)  # exemplar crop offset is fixed at evaluation
    max_pairs: int = 0  # 0 = all


def _one_swap(rec, params, est_params, cfg, sched, use_estimators):
    a, b = rec.buffers_a, rec.buffers_b
    sampler = SamplerConfig(steps=cfg.steps, gamma=cfg.gamma, seed=cfg.seed)
    kwargs = {}
    if use_estimators:
        if est_params is None:
            raise ValueError("estimator path requested without an intrinsics checkpoint")
        kwargs = {"intrinsic_params": est_params}
    else:
        kwargs = {"N": a.N, "E": a.E}
    out = swap(a.I, a.M, rec.exemplar_b, rec.scale, cfg.offset, cfg.gamma,
               params, sampler=sampler, sched=sched, **kwargs)
    return out


def eval_run(test_manifest, denoiser_ckpt, intrinsics_ckpt, cfg, out_dir):
    """Returns the report dict; writes report.json and contact_sheet.png."""
    os.makedirs(out_dir, exist_ok=True)
    records = ds.load_pairs(test_manifest)
    if cfg.max_pairs:
        records = records[:cfg.max_pairs]
    if not records:
        raise ValueError("empty test set")
    params, _, meta = models.load_checkpoint(denoiser_ckpt)
    sched = make_schedule(meta.get("sched_T", 1000),
                          *meta.get("sched_beta", (1e-4, 0.02)))
    est_params = None
    if intrinsics_ckpt:
        est_params, _, _ = intr.load_estimators(intrinsics_ckpt)

    rows = []
    sheet_rows = []
    paths = ["gt"] + (["est"] if est_params is not None else [])
    for rec in records:
        a, b = rec.buffers_a, rec.buffers_b
        p_enc = ds.crop_exemplar(rec.exemplar_b, rec.scale, cfg.offset,
                                 params.cfg.enc_res)
        for path in paths:
            out = _one_swap(rec, params, est_params, cfg, sched, path == "est")
            row = {
                "pair_id": rec.pair_id,
                "path": path,
                "psnr_full": metrics.psnr(out, b.I),
                "psnr_masked": metrics.psnr(out, b.I, mask=a.M),
                "exemplar_cosine": metrics.exemplar_cosine(p_enc, out, a.M, params),
            }
            if est_params is not None:
                row["irradiance_psnr_masked"] = metrics.irradiance_adherence(
                    a.I, out, a.M, est_params)
            rows.append(row)
            if path == "gt" and len(sheet_rows) < MAX_SHEET_ROWS:
                sheet_rows.append((a, b, p_enc, out))

    agg = {}
    for path in paths:
        sub = [r for r in rows if r["path"] == path]
        agg[path] = {k: float(np.mean([r[k] for r in sub]))
                     for k in sub[0] if k not in ("pair_id", "path")}
    report = {
        "n_pairs": len(records),
        "records": rows,
        "aggregates": agg,
        "checkpoints": {"denoiser": os.path.basename(denoiser_ckpt),
                        "denoiser_step": params.step,
                        "intrinsics": os.path.basename(intrinsics_ckpt) if intrinsics_ckpt else None},
        "eval": {"steps": cfg.steps, "gamma": cfg.gamma, "seed": cfg.seed},
    }
    rpath = os.path.join(out_dir, "report.json")
    tmp = rpath + ".tmp"
    with open(tmp, "w") as f:
        json.dump(report, f, indent=1, sort_keys=True)
    os.replace(tmp, rpath)
    contact_sheet(sheet_rows, os.path.join(out_dir, "contact_sheet.png"))
    return report


def _cell(img):
    """Any buffer to a uint8 RGB tile."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        a = a[..., None]
    if a.shape[2] == 1:
        a = np.repeat(a, 3, axis=2)
    return to_uint8(np.clip(a, 0.0, 1.0))


def contact_sheet(rows, path):
    """Grid PNG: one row per pair, columns x, N, E, M, p, output, target."""
    from PIL import Image
    if not rows:
        return
    tiles = []
    for a, b, p_enc, out in rows:
        h = a.I.shape[0]
        mask_overlay = a.I * 0.4
        m = a.M[..., 0] > 0.5
        mask_overlay[m] = np.array([1.0, 0.3, 0.1]) * 0.7 + a.I[m] * 0.3
        cells = [
            _cell(a.I),
            _cell(encode_normals(a.N)),
            _cell(tonemap_irradiance(a.E) * 2.0),
            _cell(mask_overlay),
            _cell(_fit(p_enc, h)),
            _cell(out),
            _cell(b.I),
        ]
        tiles.append(np.concatenate(cells, axis=1))
    sheet = np.concatenate(tiles, axis=0)
    Image.fromarray(sheet).save(path)


def _fit(img, side):
    from .imaging import area_resize
    if img.shape[0] == side:
        return img
    return area_resize(img, (side, side))
