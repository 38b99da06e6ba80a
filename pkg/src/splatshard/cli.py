"""Command-line interface: ``splatshard <subcommand> ...``.

Exit status is 0 on success, 1 when a check fails or an input is invalid,
2 for usage errors.  ``SPLATSHARD_WORKERS`` sets the default worker count.
"""
import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__

log = logging.getLogger("splatshard")

METRICS_NOTE = "Image metrics are PSNR and SSIM; LPIPS is not provided (it needs a pretrained network)."


class CheckFailed(Exception):
    pass


def _workers_default():
    return int(os.environ.get("SPLATSHARD_WORKERS", "4"))


def _depth(workers):
    L = int(round(np.log2(workers))) if workers > 0 else -1
    if workers < 1 or 2 ** L != workers:
        raise ValueError(f"--workers must be a power of two, got {workers}")
    return L


def _common(p):
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--oracle", action="store_true",
                   help="double precision and no early ray termination")
    p.add_argument("-v", "--verbose", action="store_true")


def _scene_args(p):
    p.add_argument("--splats", help="splat checkpoint PLY (default: synthetic scene)")
    p.add_argument("--count", type=int, default=5000, help="synthetic splat count")
    p.add_argument("--distribution", choices=["uniform", "clustered"], default="uniform")


def _precision(args):
    return (np.float64, 0.0) if args.oracle else (np.float32, 1e-4)


def _load_scene(args):
    from .io import load_ply
    from .io.synth import random_splats

    if getattr(args, "splats", None):
        if not os.path.exists(args.splats):
            raise FileNotFoundError(f"splat file not found: {args.splats}")
        return load_ply(args.splats, mode="splats")
    return random_splats(args.count, args.seed, args.distribution)


def _load_cameras(path):
    from .io import load_cameras

    if not os.path.exists(path):
        raise FileNotFoundError(f"camera file not found: {path}")
    return load_cameras(path)


def _out_path(out, cam, i, n):
    if n == 1 and os.path.splitext(out)[1]:
        return out
    os.makedirs(out, exist_ok=True)
    return os.path.join(out, f"{cam.name or f'view_{i:03d}'}.png")


# --- subcommands -------------------------------------------------------------

def cmd_synth(args):
    from .io.synth import SceneSpec, synth_scene, write_bundle

    spec = SceneSpec(count=args.count, distribution=args.distribution, n_views=args.views,
                     width=args.size, height=args.size, n_points=args.points,
                     sh_degree=args.sh_degree)
    bundle = synth_scene(spec, args.seed)
    write_bundle(bundle, args.out, args.image_ext)
    print(f"wrote {len(bundle.cameras)} views, {len(bundle.points)} points, {len(bundle.splats)} "
          f"ground-truth splats to {args.out}")


def cmd_partition(args):
    from .bench import balance_stats, make_table
    from .io import load_ply

    if args.points:
        if not os.path.exists(args.points):
            raise FileNotFoundError(f"point file not found: {args.points}")
        obj = load_ply(args.points)
        splats = obj if hasattr(obj, "mu") else None
        if splats is None:
            from .trainer import init_from_pointcloud

            splats = init_from_pointcloud(obj, len(obj), args.seed, sh_degree=0)
    else:
        splats = _load_scene(args)
    K = 2 ** args.depth
    table = make_table(splats, K, args.kind)
    text = table.dump()
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text if args.members else "\n".join(
            l for l in text.splitlines() if not l.startswith("  members")) + "\n")
    rep = balance_stats(table, splats)
    print(f"leaves: {table.K}")
    print(rep.text())


def cmd_render(args):
    from . import raster
    from .io import write_image

    splats = _load_scene(args)
    cams = _load_cameras(args.cameras)
    sel = range(len(cams)) if args.index is None else [args.index]
    dtype, stop_T = _precision(args)
    for i in sel:
        img = raster.render_view(splats, cams[i], args.background, stop_T, dtype,
                                 sh_degree=args.sh_degree)
        path = _out_path(args.out, cams[i], i, len(sel))
        write_image(path, np.clip(img.color, 0, 1))
        print(f"{cams[i].name or i}: {path}")


def cmd_render_dist(args):
    from . import raster
    from .engine.manager import Manager
    from .io import write_image

    splats = _load_scene(args)
    cams = _load_cameras(args.cameras)
    sel = range(len(cams)) if args.index is None else [args.index]
    dtype, stop_T = _precision(args)
    with Manager.launch(splats, depth=_depth(args.workers), processes=args.processes,
                        dtype=dtype, stop_T=stop_T, background=args.background) as mgr:
        for i in sel:
            mgr.reset_counters()
            res = mgr.render(cams[i])
            path = _out_path(args.out, cams[i], i, len(sel))
            write_image(path, np.clip(res.image.color, 0, 1))
            msg = f"{cams[i].name or i}: {path} partial-map bytes {mgr.bytes()['map_forward']}"
            if args.check:
                mono = raster.render_view(splats, cams[i], args.background, stop_T, dtype)
                err = float(np.abs(mono.color - res.image.color).max())
                msg += f" max |dist - mono| {err:.3e}"
                tol = 1e-9 if args.oracle else 1e-4
                if stop_T == 0.0 and err > tol:
                    raise CheckFailed(f"view {i}: distributed render differs from monolithic by {err}")
            print(msg)


def cmd_train(args):
    from .io import load_bundle, save_splats_ply
    from .io.synth import SceneSpec, synth_scene
    from .trainer import TrainConfig, evaluate, init_from_pointcloud, train

    if args.bundle:
        if not os.path.isdir(args.bundle):
            raise FileNotFoundError(f"bundle directory not found: {args.bundle}")
        bundle = load_bundle(args.bundle)
    else:
        bundle = synth_scene(SceneSpec(count=args.count, n_views=args.views, width=args.size,
                                       height=args.size), args.seed)
    init = init_from_pointcloud(bundle.points, args.init_count, args.seed, args.sh_degree)
    dtype, stop_T = _precision(args)
    cfg = TrainConfig(iterations=args.iterations, epochs=args.epochs, batch_size=args.batch_size,
                      lambda_ssim=args.lambda_ssim, lr_position_start=args.lr_position_start,
                      lr_position_end=args.lr_position_end, position_lr_scale=args.position_lr_scale,
                      repartition_interval=args.repartition_interval, grad_sync=args.grad_sync,
                      depth=_depth(args.workers), processes=args.processes,
                      dtype=np.dtype(dtype).name, stop_T=stop_T, background=bundle.background,
                      log_every=args.log_every, seed=args.seed)
    for name in ("sh_dc", "sh_rest", "opacity_logit", "log_scale", "rotation"):
        v = getattr(args, "lr_" + name)
        if v is not None:
            cfg.lrs[name] = v
    result = train(init, bundle.views(bundle.train_idx), cfg, metric_log=args.log)
    if args.out:
        save_splats_ply(args.out, result.splats)
    held = evaluate(result.splats, bundle.views(bundle.test_idx), bundle.background)
    summary = {"splats": len(result.splats), "final_loss": result.losses[-1],
               "heldout_psnr": held["psnr"], "heldout_ssim": held["ssim"],
               "replica_divergence": result.replica_divergence}
    print(json.dumps(summary))


def cmd_validate_boundary(args):
    from .engine.validate import boundary_validity_test
    from .io import write_image

    splats = _load_scene(args)
    dtype, _ = _precision(args)
    rep = boundary_validity_test(splats, axis=args.axis, gate=not args.no_gate, dtype=dtype)
    print(rep.summary())
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        for p in rep.partials:
            write_image(os.path.join(args.out, f"partial_{p.k}.png"), np.clip(p.C, 0, 1))
        write_image(os.path.join(args.out, "merged.png"), np.clip(rep.merged.color, 0, 1))
    if not rep.passed:
        raise CheckFailed("boundary validity check failed")


def cmd_validate_equivalence(args):
    from .engine.manager import Manager
    from .engine.validate import ring_cameras
    from . import raster
    from .io.synth import random_splats

    dtype, _ = _precision(args)
    tol = 1e-9 if args.oracle else 1e-4
    L = _depth(args.workers)
    worst = 0.0
    for s in range(args.scenes):
        seed = args.seed + s
        splats = random_splats(args.count, seed, args.distribution)
        cams = ring_cameras(args.cameras, 3.0, args.size, args.size, 0.9 * args.size, seed=seed)
        with Manager.launch(splats, depth=L, processes=args.processes, dtype=dtype,
                            stop_T=0.0) as mgr:
            for ci, cam in enumerate(cams):
                dist = mgr.render(cam).image.color
                mono = raster.render_view(splats, cam, stop_T=0.0, dtype=dtype).color
                err = float(np.abs(dist.astype(np.float64) - mono.astype(np.float64)).max())
                worst = max(worst, err)
                print(f"scene {s} (seed {seed}) camera {ci}: max error {err:.3e}")
    ok = worst <= tol
    print(f"workers={args.workers} worst={worst:.3e} tolerance={tol:g} {'PASS' if ok else 'FAIL'}")
    if not ok:
        raise CheckFailed("distributed render does not match the monolithic render")


def cmd_bench(args):
    from .bench import balance_stats, comm_model, data_parallel_bytes, format_rows, make_table, timing_harness
    from .io.synth import camera_ring, random_splats

    splats = random_splats(args.count, args.seed, args.distribution, sh_degree=args.sh_degree)
    cams = camera_ring(args.views, 3.5, args.size, args.size)
    records = []
    for kind in ("kdtree", "grid"):
        rep = balance_stats(make_table(splats, args.workers, kind), splats, cams[0])
        print(rep.text())
        records.append({"type": "balance", **rep.as_record()})
    print(f"partial-map bytes per view (K={args.workers}, f32): {comm_model(cams[0], args.workers)}")
    print(f"data-parallel gradient bytes per step (formula): "
          f"{data_parallel_bytes(len(splats), splats.sh_degree, args.workers)}")
    rows = []
    for kind in ("kdtree", "grid"):
        rows += timing_harness(splats, cams, args.workers, args.batches, kind=kind,
                               processes=args.processes)
    rows += timing_harness(splats, cams, 1, args.batches[:1], mode="mono")
    print(format_rows(rows))
    records += [{"type": "timing", **r.__dict__} for r in rows]
    if args.json:
        with open(args.json, "w") as f:
            for r in records:
                f.write(json.dumps(r) + "\n")


# --- parser ------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="splatshard", description=__doc__.splitlines()[0],
                                epilog=METRICS_NOTE)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic scene bundle")
    _common(s)
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=5000)
    s.add_argument("--distribution", choices=["uniform", "clustered"], default="uniform")
    s.add_argument("--views", type=int, default=64)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--points", type=int, default=20000)
    s.add_argument("--sh-degree", type=int, default=1)
    s.add_argument("--image-ext", default=".png", choices=[".png", ".ppm"])
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("partition", help="build a partition and dump it")
    _common(s)
    _scene_args(s)
    s.add_argument("--points", help="point cloud or splat PLY to partition")
    s.add_argument("--depth", type=int, default=2)
    s.add_argument("--kind", choices=["kdtree", "grid"], default="kdtree")
    s.add_argument("--members", action="store_true", help="list member ids on stdout")
    s.add_argument("--out", help="write the full dump (with members) here")
    s.set_defaults(func=cmd_partition)

    for name, func, help_ in (("render", cmd_render, "single-worker render"),
                              ("render-dist", cmd_render_dist, "distributed render")):
        s = sub.add_parser(name, help=help_)
        _common(s)
        _scene_args(s)
        s.add_argument("--cameras", required=True, help="camera JSON file")
        s.add_argument("--index", type=int, help="render only this camera")
        s.add_argument("--out", required=True, help="output image or directory")
        s.add_argument("--background", type=float, nargs=3, default=(0.0, 0.0, 0.0))
        if name == "render":
            s.add_argument("--sh-degree", type=int)
        else:
            s.add_argument("--workers", type=int, default=_workers_default())
            s.add_argument("--processes", action="store_true", help="one OS process per worker")
            s.add_argument("--check", action="store_true", help="compare against the monolithic render")
        s.set_defaults(func=func)

    s = sub.add_parser("train", help="train from a scene bundle", epilog=METRICS_NOTE)
    _common(s)
    s.add_argument("--bundle", help="bundle directory (default: synthetic scene)")
    s.add_argument("--count", type=int, default=5000, help="synthetic ground-truth splats")
    s.add_argument("--views", type=int, default=64)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--init-count", type=int, default=5000)
    s.add_argument("--sh-degree", type=int, default=3)
    s.add_argument("--iterations", type=int, default=2000)
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int, default=1)
    s.add_argument("--lambda-ssim", type=float, default=0.2)
    s.add_argument("--lr-position-start", type=float, default=1.6e-4)
    s.add_argument("--lr-position-end", type=float, default=1.6e-6)
    s.add_argument("--position-lr-scale", type=float, help="default: camera-rig extent")
    for name in ("sh-dc", "sh-rest", "opacity-logit", "log-scale", "rotation"):
        s.add_argument(f"--lr-{name}", type=float)
    s.add_argument("--repartition-interval", type=int, default=0, help="epochs between rebuilds")
    s.add_argument("--grad-sync", action="store_true", help="sum gradients of shared splats")
    s.add_argument("--workers", type=int, default=_workers_default())
    s.add_argument("--processes", action="store_true")
    s.add_argument("--log", help="metric log (newline-delimited JSON)")
    s.add_argument("--log-every", type=int, default=10)
    s.add_argument("--out", help="checkpoint PLY")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("validate-boundary", help="partial images are exactly empty off their side")
    _common(s)
    _scene_args(s)
    s.add_argument("--axis", type=int, default=0, choices=[0, 1, 2])
    s.add_argument("--no-gate", action="store_true", help="disable the indicator (negative control)")
    s.add_argument("--out", help="directory for partial and merged images")
    s.set_defaults(func=cmd_validate_boundary)

    s = sub.add_parser("validate-equivalence", help="distributed vs monolithic renders")
    _common(s)
    s.add_argument("--workers", type=int, default=_workers_default())
    s.add_argument("--processes", action="store_true")
    s.add_argument("--scenes", type=int, default=3)
    s.add_argument("--cameras", type=int, default=4)
    s.add_argument("--count", type=int, default=2000)
    s.add_argument("--size", type=int, default=48)
    s.add_argument("--distribution", choices=["uniform", "clustered"], default="uniform")
    s.set_defaults(func=cmd_validate_equivalence)

    s = sub.add_parser("bench", help="balance, communication and barrier-wait tables")
    _common(s)
    s.add_argument("--count", type=int, default=20000)
    s.add_argument("--distribution", choices=["uniform", "clustered"], default="clustered")
    s.add_argument("--sh-degree", type=int, default=0)
    s.add_argument("--workers", type=int, default=_workers_default())
    s.add_argument("--views", type=int, default=16)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--batches", type=lambda v: [int(x) for x in v.split(",")], default=[1, 2, 4])
    s.add_argument("--processes", action="store_true")
    s.add_argument("--json", help="write records as newline-delimited JSON")
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except CheckFailed as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
