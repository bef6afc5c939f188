"""Command-line front end.

Subcommands cover the full workflow: gen (paired dataset), train-intrinsics,
train, estimate, swap, eval, plot, selftest. Every run dumps its effective
configuration next to its outputs as run_config.txt; feeding that file back
via --config reproduces the run.
"""

import argparse
import os
import sys

import numpy as np

from . import config as cfgmod
from . import container, dataset, evaluate, intrinsics, models, sampling, training
from .conditioning import encode_normals, tonemap_irradiance
from .imaging import to_uint8, write_png


def _common(p):
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--seed", type=int, default=None)


def build_parser():
    ap = argparse.ArgumentParser(prog="texswap",
                                 description="exemplar-driven material replacement toolkit")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen", help="render a paired synthetic dataset")
    _common(p)
    p.add_argument("--scenes", type=int, default=None)
    p.add_argument("--variations", type=int, default=None)

    p = sub.add_parser("train", help="train the conditional denoiser")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")

    p = sub.add_parser("train-intrinsics", help="train the normal/irradiance estimators")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--resume", default=None)

    p = sub.add_parser("estimate", help="run the intrinsic estimators on one image")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--pair", required=True, help="pair id from the manifest")
    p.add_argument("--member", choices=("a", "b"), default="a")
    p.add_argument("--intrinsics", required=True, help="estimator checkpoint")

    p = sub.add_parser("swap", help="replace the masked object's material")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--pair", required=True)
    p.add_argument("--direction", choices=("ab", "ba"), default="ab")
    p.add_argument("--ckpt", required=True, help="denoiser checkpoint")
    p.add_argument("--intrinsics", default=None,
                   help="estimator checkpoint; omitted = use rendered buffers")
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--steps", type=int, default=None)

    p = sub.add_parser("eval", help="score a checkpoint on a held-out manifest")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--intrinsics", default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--steps", type=int, default=None)

    p = sub.add_parser("plot", help="guidance-strength sweep grid for one pair")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--pair", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--gammas", default="0,1,3,5", help="comma-separated sweep values")
    p.add_argument("--steps", type=int, default=None)

    p = sub.add_parser("selftest", help="run the bundled renderer oracles")
    p.add_argument("--out", default=None)
    return ap


def _load_rc(args):
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise cfgmod.ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v
    for key in ("seed", "scenes", "variations", "gamma", "steps"):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = str(val)
    rc = cfgmod.load_config(args.config, overrides)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        rc.dump(os.path.join(args.out, "run_config.txt"))
    return rc


def _find_pair(man_path, pair_id):
    for rec in dataset.load_pairs(man_path):
        if rec.pair_id == pair_id:
            return rec
    raise ValueError(f"pair {pair_id!r} not in manifest")


def _pick(rec, direction):
    """(input buffers, target buffers, exemplar of the target material)."""
    if direction == "ab":
        return rec.buffers_a, rec.buffers_b, rec.exemplar_b
    return rec.buffers_b, rec.buffers_a, rec.exemplar_a


def _swap_scale(rc, rec):
    """Manifest uv scale unless the user set scale_u/scale_v explicitly."""
    if (rc.provenance("scale_u") != "default"
            or rc.provenance("scale_v") != "default"):
        return (rc.scale_u, rc.scale_v)
    return rec.scale


def cmd_gen(args):
    rc = _load_rc(args)
    man = dataset.build_dataset(cfgmod.data_config(rc), args.out)
    print(f"manifest: {man}")
    return 0


def cmd_train(args):
    rc = _load_rc(args)
    ckpt = training.train(args.manifest, cfgmod.train_config(rc), args.out,
                          resume=args.resume)
    print(f"checkpoint: {ckpt}")
    return 0


def cmd_train_intrinsics(args):
    rc = _load_rc(args)
    ckpt = intrinsics.train_estimators(args.manifest, cfgmod.intrinsics_config(rc),
                                       args.out, resume=args.resume)
    print(f"checkpoint: {ckpt}")
    return 0


def cmd_estimate(args):
    _load_rc(args)
    rec = _find_pair(args.manifest, args.pair)
    buf = rec.buffers_a if args.member == "a" else rec.buffers_b
    est, _, _ = intrinsics.load_estimators(args.intrinsics)
    n_hat, e_hat = intrinsics.estimate(buf.I, est)
    write_png(os.path.join(args.out, "normals.png"), encode_normals(n_hat))
    write_png(os.path.join(args.out, "irradiance.png"),
              np.repeat(tonemap_irradiance(e_hat), 3, axis=2))
    container.write_tensors(os.path.join(args.out, "estimates.mswp"),
                            {"N_hat": n_hat.astype(np.float32),
                             "E_hat": e_hat.astype(np.float32)})
    print(f"estimates written to {args.out}")
    return 0


def cmd_swap(args):
    rc = _load_rc(args)
    rec = _find_pair(args.manifest, args.pair)
    params, _, meta = models.load_checkpoint(args.ckpt)
    from .schedule import make_schedule
    sched = make_schedule(meta.get("sched_T", 1000), *meta.get("sched_beta", (1e-4, 0.02)))
    est = None
    if args.intrinsics:
        est, _, _ = intrinsics.load_estimators(args.intrinsics)
    src, dst, p_full = _pick(rec, args.direction)
    sampler = sampling.SamplerConfig(steps=rc.steps, gamma=rc.gamma, seed=rc.seed)
    kwargs = ({"intrinsic_params": est} if est is not None
              else {"N": src.N, "E": src.E})
    out = sampling.swap(src.I, src.M, p_full, _swap_scale(rc, rec),
                        (rc.offset_u, rc.offset_v), rc.gamma, params,
                        sampler=sampler, sched=sched, **kwargs)
    write_png(os.path.join(args.out, "swap.png"), out)
    write_png(os.path.join(args.out, "input.png"), src.I)
    write_png(os.path.join(args.out, "target.png"), dst.I)
    container.write_tensors(os.path.join(args.out, "swap.mswp"), {"I_hat": out})
    print(f"swap written to {args.out}")
    return 0


def cmd_eval(args):
    rc = _load_rc(args)
    ec = evaluate.EvalConfig(steps=rc.steps, gamma=rc.gamma, seed=rc.seed,
                             offset=(rc.offset_u, rc.offset_v),
                             max_pairs=rc.eval_max_pairs)
    report = evaluate.eval_run(args.manifest, args.ckpt, args.intrinsics, ec, args.out)
    for path, agg in sorted(report["aggregates"].items()):
        parts = ", ".join(f"{k}={v:.4f}" for k, v in sorted(agg.items()))
        print(f"[{path}] {parts}")
    return 0


def cmd_plot(args):
    rc = _load_rc(args)
    gammas = [float(g) for g in args.gammas.split(",") if g.strip()]
    if not gammas:
        raise ValueError("--gammas is empty")
    rec = _find_pair(args.manifest, args.pair)
    params, _, meta = models.load_checkpoint(args.ckpt)
    from .schedule import make_schedule
    sched = make_schedule(meta.get("sched_T", 1000), *meta.get("sched_beta", (1e-4, 0.02)))
    src, dst, p_full = _pick(rec, "ab")
    cells = [to_uint8(src.I)]
    for g in gammas:
        sampler = sampling.SamplerConfig(steps=rc.steps, gamma=g, seed=rc.seed)
        out = sampling.swap(src.I, src.M, p_full, _swap_scale(rc, rec),
                            (rc.offset_u, rc.offset_v), g, params,
                            sampler=sampler, sched=sched, N=src.N, E=src.E)
        cells.append(to_uint8(out))
    cells.append(to_uint8(dst.I))
    grid = np.concatenate(cells, axis=1)
    from PIL import Image
    path = os.path.join(args.out, "gamma_sweep.png")
    Image.fromarray(grid).save(path)
    print(f"sweep (input, gamma={args.gammas}, target): {path}")
    return 0


# selftest: quick independently coded oracles for the renderer core.

def _march_sdf(sdf, o, d, t_max=60.0):
    """Sphere-trace a signed distance field; oracle for the analytic hits."""
    t = 0.0
    for _ in range(4000):
        p = o + t * d
        dist = sdf(p)
        if dist < 1e-9:
            return t
        t += dist
        if t > t_max:
            return np.inf
    return t


def _sdf_for(kind, size):
    r = size
    if kind == "sphere":
        return lambda p: np.linalg.norm(p) - r[0]
    if kind == "box":
        def f(p):
            q = np.abs(p) - np.asarray(r[:3])
            return np.linalg.norm(np.maximum(q, 0.0)) + min(q.max(), 0.0)
        return f
    if kind == "cylinder":
        def f(p):
            dx = np.hypot(p[0], p[2]) - r[0]
            dy = abs(p[1]) - r[1]
            q = np.array([dx, dy])
            return np.linalg.norm(np.maximum(q, 0.0)) + min(q.max(), 0.0)
        return f
    if kind == "torus":
        return lambda p: np.hypot(np.hypot(p[0], p[2]) - r[0], p[1]) - r[1]
    raise ValueError(kind)


def _selftest_intersections():
    from . import geometry as g
    rng = np.random.Generator(np.random.Philox(7))
    sizes = {"sphere": (0.8, 0, 0), "box": (0.6, 0.4, 0.5),
             "cylinder": (0.5, 0.6, 0), "torus": (0.7, 0.25, 0)}
    worst = 0.0
    for kind, size in sizes.items():
        o = rng.normal(size=(160, 3)) * 0.5
        o = o / np.linalg.norm(o, axis=1, keepdims=True) * 3.0
        aim = rng.normal(size=(160, 3)) * 0.3  # jittered look-at keeps most rays on target
        d = aim - o
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        t = g.intersect_kind(kind, o, d, size)[0]
        sdf = _sdf_for(kind, size)
        hits = np.isfinite(t)
        if hits.sum() < 40:
            return f"{kind}: only {hits.sum()} hits, oracle starved"
        for i in np.nonzero(hits)[0]:
            t_ref = _march_sdf(sdf, o[i], d[i])
            if not np.isfinite(t_ref) or abs(t_ref - t[i]) > 1e-4:
                return f"{kind}: ray {i} analytic t={t[i]:.6f} vs marched {t_ref:.6f}"
            worst = max(worst, abs(t_ref - t[i]))
    return None


def _selftest_irradiance():
    from .envmap import EnvLight
    from .render import irradiance_at
    from .scene import SceneSpec, Camera
    from .materials import MaterialSpec
    gray = np.full(3, 0.5)
    flat = MaterialSpec("checker", gray, gray, 2, 0.0, 0)
    # every cosine-weighted sample of a uniform 0.5 sky is exactly 0.5
    env = EnvLight(np.full((8, 16, 3), 0.5), 0.0)
    scene = SceneSpec(primitives=(), wall_heights=(0.0, 0.0, 0.0, 0.0),
                      floor_material=0, wall_materials=(0, 0, 0, 0),
                      camera=Camera((0, 1, 3), (0, 0, 0), 45.0), env=env,
                      seed=0, materials=(flat,) * 5)
    e = irradiance_at(np.array([0.0, 1.0, 0.0]), np.array([0.0, 1.0, 0.0]),
                      scene, env, 256)
    if abs(float(np.mean(e)) - 0.5) > 1e-12:
        return f"uniform-sky irradiance {float(np.mean(e)):.8f}, want 0.5 exactly"
    below = irradiance_at(np.array([0.0, -0.2, 0.0]), np.array([0.0, 1.0, 0.0]),
                          scene, env, 64)
    if float(np.max(below)) != 0.0:
        return f"point under the floor sees light: {float(np.max(below)):.3e}"
    return None


def _selftest_pair():
    from .scene import sample_scene, with_swapped_material, GenConfig
    from .render import render_buffers
    from .materials import sample_material
    cfg = GenConfig()
    scene = sample_scene(3, cfg)
    sel = scene.primitives[0].object_id
    rng = np.random.Generator(np.random.Philox(99))
    scene_b = with_swapped_material(scene, sel, sample_material(rng))
    ba = render_buffers(scene, sel, res=(24, 24), spp=8)
    bb = render_buffers(scene_b, sel, res=(24, 24), spp=8)
    if not np.array_equal(ba.M, bb.M):
        return "masks differ across the material swap"
    if not np.array_equal(ba.E, bb.E):
        return "irradiance differs across the material swap"
    out = ba.M[..., 0] < 0.5
    if not np.array_equal(ba.I[out], bb.I[out]):
        return "pixels outside the mask differ across the material swap"
    return None


def _selftest_container(out_dir):
    import tempfile
    with tempfile.TemporaryDirectory(dir=out_dir) as td:
        path = os.path.join(td, "t.mswp")
        arrs = {"a": np.arange(12, dtype=np.float32).reshape(3, 4),
                "b": np.ones((2, 2, 2), dtype=np.float32)}
        container.write_tensors(path, arrs)
        back = container.read_tensors(path)
        for k in arrs:
            if not np.array_equal(arrs[k], back[k]):
                return f"tensor {k} did not round-trip"
    return None


def cmd_selftest(args):
    out_dir = args.out or "."
    if args.out:
        os.makedirs(args.out, exist_ok=True)
    checks = [
        ("ray-primitive intersections", _selftest_intersections),
        ("hemisphere irradiance", _selftest_irradiance),
        ("paired-render invariants", _selftest_pair),
        ("tensor container", lambda: _selftest_container(out_dir)),
    ]
    failed = 0
    for name, fn in checks:
        msg = fn()
        if msg is None:
            print(f"selftest {name}: PASS")
        else:
            print(f"selftest {name}: FAIL ({msg})")
            failed += 1
    return 1 if failed else 0


_DISPATCH = {
    "gen": cmd_gen,
    "train": cmd_train,
    "train-intrinsics": cmd_train_intrinsics,
    "estimate": cmd_estimate,
    "swap": cmd_swap,
    "eval": cmd_eval,
    "plot": cmd_plot,
    "selftest": cmd_selftest,
}


def cli_main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    try:
        return _DISPATCH[args.cmd](args)
    except (ValueError, RuntimeError, OSError, cfgmod.ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main():
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
