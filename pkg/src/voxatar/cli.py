"""Command-line entry point.

Commands: generate, turntable, export-mesh, render-condition, gradcheck,
serve-selftest. Exit codes: 0 ok, 1 usage/config error, 2 degraded run
(too many skipped guidance steps), 3 internal error or failed check.

``generate`` takes a config file plus dotted-key overrides, e.g.::

    voxatar generate --config configs/default.cfg --plan.coarse_iters 200 \
        --render.background 1,1,1 --plan.none
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, InvalidInputError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DEGRADED = 2
EXIT_INTERNAL = 3


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="voxatar", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="run the coarse optimization")
    p.add_argument("--config", required=True, help="run config file")

    p = sub.add_parser("turntable", help="render evenly spaced views of a field")
    p.add_argument("--field", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n-views", type=int, default=8)
    p.add_argument("--resolution", type=int, default=256)
    p.add_argument("--radius", type=float, default=2.0)
    p.add_argument("--elevation", type=float, default=15.0)

    p = sub.add_parser("export-mesh", help="marching-cubes surface with baked colors")
    p.add_argument("--field", required=True)
    p.add_argument("--out", required=True, help="output .obj or .ply path")
    p.add_argument("--iso", type=float, default=0.1)

    p = sub.add_parser("render-condition", help="part-label condition render")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--pose", help="pose JSON ({'beta': [...], 'xi': [...]})")
    p.add_argument("--template", help="template .json/.npz (default: desk body)")
    p.add_argument("--radius", type=float, default=2.0)
    p.add_argument("--azimuth", type=float, default=90.0)
    p.add_argument("--elevation", type=float, default=10.0)
    p.add_argument("--target", default=None, help="x,y,z look-at point")
    p.add_argument("--resolution", type=int, default=256)

    p = sub.add_parser("gradcheck", help="renderer/rasterizer numeric audits")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=5)

    p = sub.add_parser("serve-selftest",
                       help="round-trip the wire protocol against a loopback server")
    p.add_argument("--requests", type=int, default=20)
    p.add_argument("--resolution", type=int, default=16)

    args, extra = parser.parse_known_args(argv)
    overrides = []
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            parser.error(f"unrecognized argument {tok!r}")
        body = tok[2:]
        if "=" not in body and i + 1 < len(extra) and not extra[i + 1].startswith("--"):
            body = f"{body}={extra[i + 1]}"
            i += 1
        overrides.append(body)
        i += 1
    if overrides and args.command != "generate":
        parser.error("dotted-key overrides only apply to 'generate'")

    try:
        return _dispatch(args, overrides)
    except (ConfigError, InvalidInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - map anything else to exit 3
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def _dispatch(args, overrides) -> int:
    if args.command == "generate":
        return _cmd_generate(args, overrides)
    if args.command == "turntable":
        return _cmd_turntable(args)
    if args.command == "export-mesh":
        return _cmd_export_mesh(args)
    if args.command == "render-condition":
        return _cmd_render_condition(args)
    if args.command == "gradcheck":
        return _cmd_gradcheck(args)
    if args.command == "serve-selftest":
        return _cmd_serve_selftest(args)
    raise InvalidInputError(f"unknown command {args.command!r}")


def _cmd_generate(args, overrides) -> int:
    from .config import load_config
    from .optimize import train_coarse

    config = load_config(args.config, overrides)
    field, report = train_coarse(config)
    print(f"run complete: {report.total_steps} steps, "
          f"{report.skipped_steps} skipped, backend={report.backend}, "
          f"output={config.output_dir}")
    return EXIT_DEGRADED if report.degraded else EXIT_OK


def _cmd_turntable(args) -> int:
    from .pngio import save_png_rgb01
    from .raster import Camera
    from .renderer import RenderSettings, render
    from .voxel_field import load_field

    field = load_field(args.field)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    settings = RenderSettings(background=(1.0, 1.0, 1.0), compute_normals=True)
    for i in range(args.n_views):
        az = 360.0 * i / args.n_views
        cam = Camera(radius=args.radius, azimuth=az, elevation=args.elevation,
                     width=args.resolution, height=args.resolution)
        out = render(field, cam, settings)
        save_png_rgb01(out.rgb, outdir / f"frame_{i:03d}.png")
    print(f"{args.n_views} frames at {args.resolution}px -> {outdir}")
    return EXIT_OK


def _cmd_export_mesh(args) -> int:
    from .mesh_export import bake_colors, export, marching_cubes
    from .voxel_field import load_field

    field = load_field(args.field)
    mesh = bake_colors(marching_cubes(field, iso=args.iso), field)
    export(mesh, args.out)
    print(f"{mesh.vertices.shape[0]} vertices, {mesh.faces.shape[0]} faces -> {args.out}")
    return EXIT_OK


def _cmd_render_condition(args) -> int:
    from .body_model import (PoseParams, ShapeParams, desk_template,
                             load_template_json, load_template_npz, pose_body)
    from .pngio import save_png, save_png_depth16
    from .raster import Camera, rasterize_condition

    if args.template:
        loader = load_template_npz if args.template.endswith(".npz") else load_template_json
        template = loader(args.template)
    else:
        template = desk_template()
    beta = xi = None
    if args.pose:
        doc = json.loads(Path(args.pose).read_text())
        if "beta" in doc and doc["beta"] is not None:
            beta = ShapeParams(np.asarray(doc["beta"], dtype=np.float64))
        if "xi" in doc and doc["xi"] is not None:
            xi = PoseParams(np.asarray(doc["xi"], dtype=np.float64).reshape(-1, 3))
    body = pose_body(template, beta, xi)
    target = (tuple(float(v) for v in args.target.split(","))
              if args.target else tuple(body.vertices.mean(axis=0)))
    cam = Camera(radius=args.radius, azimuth=args.azimuth, elevation=args.elevation,
                 target=target, width=args.resolution, height=args.resolution)
    image = rasterize_condition(body, template.face_part_labels, cam)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    save_png(image.labels, outdir / "labels.png")
    save_png(image.rgb, outdir / "palette.png")
    save_png_depth16(image.depth, outdir / "depth.png")
    covered = int((image.labels > 0).sum())
    print(f"condition render: {covered} body pixels -> {outdir}")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    from .selfcheck import run_gradcheck

    result = run_gradcheck(seed=args.seed, seeds=args.seeds)
    print(json.dumps(result, indent=1))
    return EXIT_OK if result["passed"] else EXIT_INTERNAL


def _cmd_serve_selftest(args) -> int:
    from .guidance import NoiseSchedule, builtin_target_oracle, external_oracle
    from .wire import InProcessEchoServer

    rng = np.random.default_rng(0)
    res = args.resolution
    x_star = rng.uniform(0, 1, (res, res, 3))
    schedule = NoiseSchedule.cosine()
    server = InProcessEchoServer(x_star)
    builtin = builtin_target_oracle(x_star, schedule)
    client = external_oracle(server.endpoint, schedule=schedule, timeout=10.0)
    try:
        worst = 0.0
        for i in range(args.requests):
            z = rng.normal(0, 1, (res, res, 3))
            t = int(rng.integers(50, 950))
            remote = client.predict_noise(z, t, None, "selftest")
            local = builtin.predict_noise(z, t, None, "selftest")
            worst = max(worst, float(np.max(np.abs(remote - local))))
        ok = worst <= 1e-5
        print(json.dumps({"passed": ok, "requests": args.requests,
                          "max_abs_diff": worst, "endpoint": server.endpoint}))
        return EXIT_OK if ok else EXIT_INTERNAL
    finally:
        client.close()
        server.close()


if __name__ == "__main__":
    sys.exit(main())
