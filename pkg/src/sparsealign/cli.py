"""Command line interface.

Subcommands:
  gen-scene    -- write a seeded procedural heightmap scene
  gen-dataset  -- render a ground-truth dataset from a scene
  align        -- align one dataset pair and print result JSON
  benchmark    -- run the stage-wise evaluation harness
  plot         -- render plots from a benchmark report

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io
from .benchmark import BenchmarkConfig, run_benchmark, perturb_pose
from .errors import SparseAlignError
from .estimator import SparsePoseAligner
from .geometry import PinholeCamera, Se3Pose
from .metrics import epe_3d, pixel_error, pose_error
from .synth import (
    HeightmapScene,
    PoseSamplingConstraints,
    generate_scene,
    make_dataset,
)

DEFAULT_CAMERA = {
    "fx": 700.0,
    "fy": 700.0,
    "cx": 376.0,
    "cy": 240.0,
    "width": 752,
    "height": 480,
}


class _Parser(argparse.ArgumentParser):
    """argparse maps usage errors to exit code 1 (2 is reserved for data errors)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _load_config(path) -> dict:
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


def _cmd_gen_scene(args) -> int:
    cfg = _load_config(args.config).get("scene", {})
    scene = generate_scene(
        seed=args.seed,
        grid_size=int(cfg.get("grid_size", 385)),
        spacing=float(cfg.get("spacing", 1.0)),
        height_scale=float(cfg.get("height_scale", 15.0)),
        texture_size=int(cfg.get("texture_size", 2049)),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    hmap = out / "scene.hmap"
    tex = out / "scene_texture.png"
    scene.save(hmap, tex)
    print(
        json.dumps(
            {
                "heightmap": str(hmap),
                "texture": str(tex),
                "extent": list(scene.extent),
                "surface_tolerance": scene.surface_tolerance(),
            },
            indent=1,
        )
    )
    return 0


def _cmd_gen_dataset(args) -> int:
    cfg = _load_config(args.config)
    dcfg = cfg.get("dataset", {})
    camera = PinholeCamera.from_dict(cfg.get("camera", DEFAULT_CAMERA))
    scene_dir = Path(args.scene)
    hmap = scene_dir / "scene.hmap" if scene_dir.is_dir() else scene_dir
    tex = hmap.with_name("scene_texture.png")
    scene = HeightmapScene.load(hmap, tex)
    constraints = PoseSamplingConstraints.from_dict(dcfg.get("constraints", {}))
    manifest = make_dataset(
        scene,
        camera,
        n_pairs=int(dcfg.get("n_pairs", 200)),
        out_dir=args.out,
        seed=args.seed,
        jitter_count=int(dcfg.get("jitter_count", 10)),
        feature_count=int(dcfg.get("feature_count", 50)),
        constraints=constraints,
        scene_paths=(str(hmap), str(tex)),
    )
    print(json.dumps({"manifest": str(manifest)}, indent=1))
    return 0


def _cmd_align(args) -> int:
    cfg = _load_config(args.config)
    pair_dir = Path(args.pair)
    pair = json.loads((pair_dir / "pair.json").read_text())
    camera = PinholeCamera.from_dict(pair["camera"])
    gray0 = io.read_image(pair_dir / pair["rgb0"])
    gray1 = io.read_image(pair_dir / pair["rgb1"])
    features = io.read_features_csv(pair_dir / pair["features"])
    depth0 = io.read_depth(pair_dir / pair["depth0"])
    gt = Se3Pose.from_list(pair["relative_pose"])

    align_cfg = cfg.get("align", {})
    bench_cfg = cfg.get("benchmark", {})
    init_mode = bench_cfg.get("init", "perturb")
    if init_mode == "identity":
        init = Se3Pose.identity()
    elif init_mode == "ground_truth":
        init = gt
    else:
        rng = np.random.default_rng(args.seed)
        mean_depth = float(depth0[depth0 > 0].mean())
        init = perturb_pose(
            gt,
            rng,
            float(bench_cfg.get("perturb_rotation_deg", 2.5)),
            float(bench_cfg.get("perturb_translation_frac", 0.04)) * mean_depth,
        )

    aligner = SparsePoseAligner(
        max_iterations=int(align_cfg.get("max_iterations", 10)),
        damping=float(align_cfg.get("lambda", 1e-6)),
        weight_kind=align_cfg.get("weight_kind", "huber"),
        weight_threshold=float(align_cfg.get("weight_threshold", 0.1)),
        convergence_tol=float(align_cfg.get("convergence_tol", 1e-8)),
    )
    aligner.fit(gray0, gray1, features, camera, initial_pose=init)

    stages = {}
    for stage, pose in (
        ("initial", init),
        ("iclk", aligner.alignment_.pose),
        ("pose_opt", aligner.pose_),
    ):
        e_t, e_r = pose_error(gt, pose)
        stages[stage] = {
            "e_pixel": pixel_error(features, gt, pose, camera),
            "e_transl": e_t,
            "e_rot": e_r,
            "epe_3d": epe_3d(depth0, gt, pose, camera),
        }
    out = {
        "pose": aligner.pose_.to_list(),
        "converged": bool(aligner.alignment_.converged),
        "iterations_per_level": list(aligner.alignment_.iterations_per_level),
        "final_cost": aligner.alignment_.final_cost,
        "residual_history": aligner.alignment_.residual_history,
        "error_reports": stages,
    }
    text = json.dumps(out, indent=1)
    print(text)
    if args.out:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "align_result.json").write_text(text)
        io.write_correspondences_csv(
            outdir / "correspondences.csv", aligner.correspondences_
        )
    return 0


def _cmd_benchmark(args) -> int:
    cfg = _load_config(args.config)
    bench = BenchmarkConfig.from_json_dict(
        {**cfg.get("benchmark", {}), "align": cfg.get("align", {}),
         "feature_align": cfg.get("feature_align", {}),
         "pose_opt": cfg.get("pose_opt", {}),
         **({"seed": args.seed} if args.seed is not None else {})}
    )
    report = run_benchmark(args.manifest, bench, args.out)
    agg = report["aggregates"].get("converged", {})
    print(
        json.dumps(
            {
                "out": str(args.out),
                "n_pairs": report["n_pairs"],
                "convergence_rate": report["convergence_rate"],
                "stage_mean_e_pixel": {
                    s: v["e_pixel"]["mean"] for s, v in agg.items()
                },
            },
            indent=1,
        )
    )
    return 0


def _cmd_plot(args) -> int:
    from .plots import plot_report_file

    paths = plot_report_file(args.report, args.out)
    print(json.dumps({"plots": [str(p) for p in paths]}, indent=1))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sparsealign", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scene", help="generate a procedural scene")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=_cmd_gen_scene)

    p = sub.add_parser("gen-dataset", help="render a ground-truth dataset")
    p.add_argument("--scene", required=True, help="scene directory or .hmap path")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")
    p.set_defaults(func=_cmd_gen_dataset)

    p = sub.add_parser("align", help="align a single dataset pair")
    p.add_argument("pair", help="pair directory containing pair.json")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_align)

    p = sub.add_parser("benchmark", help="run the evaluation harness")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_benchmark)

    p = sub.add_parser("plot", help="plot a benchmark report")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SparseAlignError, OSError, ValueError, KeyError, json.JSONDecodeError) as err:
        print(f"sparsealign: data error: {type(err).__name__}: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
