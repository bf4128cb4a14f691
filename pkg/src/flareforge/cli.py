"""Command-line interface.

Subcommands:
    generate   build one dataset variant into an output directory
    validate   re-check invariants of a generated dataset
    eval       score restored images against a dataset's ground truth
    nerf-demo  run the multi-view ghost-rejection experiment
    templates  write the built-in ghost template file for editing
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np
from PIL import Image

from . import pipeline, report
from .radiance import rejection_experiment, save_viewset
from .reflective import builtin_templates, load_templates, save_templates


def _cmd_generate(args) -> int:
    variant = pipeline.VariantSpec.from_name(args.variant, count=args.count,
                                             seed=args.seed)
    config = pipeline.PipelineConfig(image_size=args.size)
    templates = load_templates(args.templates) if args.templates else None
    start = time.perf_counter()
    manifest = pipeline.generate(variant, args.clean, args.out, config=config,
                                 templates=templates)
    elapsed = time.perf_counter() - start
    print(f"generated {variant.count} pairs for {variant.name} "
          f"in {elapsed:.1f}s -> {Path(args.out) / pipeline.MANIFEST_NAME}")
    if args.preview:
        fig = report.dataset_preview(manifest, Path(args.out) / "preview.png")
        print(f"preview figure -> {fig}")
    return 0


def _cmd_validate(args) -> int:
    templates = load_templates(args.templates) if args.templates else None
    rep = pipeline.validate(args.manifest, templates=templates)
    for line in rep.summary_lines():
        print(line)
    report_path = Path(args.report) if args.report else (
        Path(args.manifest).parent / "validation_report.json")
    with open(report_path, "w") as fh:
        json.dump(rep.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    fig = report.validation_figure(rep, report_path.with_suffix(".png"))
    print(f"report -> {report_path}")
    print(f"figure -> {fig}")
    return 0 if rep.ok else 1


def _cmd_eval(args) -> int:
    rep = pipeline.evaluate_manifest(args.pairs, args.restored)
    payload = rep.to_dict()
    report_path = Path(args.report)
    with open(report_path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    fig = report.eval_figure(rep, report_path.with_suffix(".png"))
    agg = payload["aggregate"]
    print(f"psnr: {agg['psnr']['mean']:.2f} dB  ssim: {agg['ssim']['mean']:.4f} "
          f"({agg['psnr']['count']} pairs)")
    if agg["reflective_psnr"]["count"]:
        print(f"ghost-region psnr: {agg['reflective_psnr']['mean']:.2f} dB "
              f"({agg['reflective_psnr']['count']} pairs)")
    print(f"report -> {report_path}")
    print(f"figure -> {fig}")
    return 0


def _save_view(img, path) -> None:
    Image.fromarray(np.rint(np.clip(img, 0, 1) * 255).astype(np.uint8)).save(path)


def _cmd_nerf_demo(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def progress(it, loss):
        if it % 50 == 0 or it == args.iterations - 1:
            print(f"  iter {it:4d}  loss {loss:.6f}")

    result = rejection_experiment(
        n_views=args.views, resolution=args.resolution, image_size=args.image_size,
        n_samples=args.samples, iterations=args.iterations, lr=args.lr,
        seed=args.seed, progress=progress)

    for k in range(min(args.views, 4)):
        _save_view(result.injected_views[k], out / f"view{k:02d}_before.png")
        _save_view(result.refit_views[k], out / f"view{k:02d}_after.png")
    save_viewset(result.views, out / "views")
    report_path = out / "rejection_report.json"
    with open(report_path, "w") as fh:
        json.dump(result.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    report.rejection_figure(result, out / "rejection_report.png")
    report.view_montage(result, out / "views.png")

    print(f"ghost MSE ratio after fitting: {result.mse_ratio:.3f} "
          f"(injected {np.mean(result.injected_mse):.5f} -> "
          f"refit {np.mean(result.refit_mse):.5f})")
    print(f"background PSNR: {result.background_psnr:.2f} dB")
    print(f"report -> {report_path}")
    return 0


def _cmd_templates(args) -> int:
    save_templates(builtin_templates(), args.out)
    print(f"wrote {len(builtin_templates())} templates -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flareforge",
                                     description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate one dataset variant")
    gen.add_argument("--variant", required=True,
                     help=f"one of {', '.join(pipeline.variant_names())}")
    gen.add_argument("--count", type=int, default=100)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--clean", required=True, help="directory of clean plates")
    gen.add_argument("--out", required=True, help="output dataset directory")
    gen.add_argument("--size", type=int, default=256, help="square image size")
    gen.add_argument("--templates", help="ghost template file (JSON)")
    gen.add_argument("--preview", action="store_true",
                     help="also render a preview figure")
    gen.set_defaults(func=_cmd_generate)

    val = sub.add_parser("validate", help="re-check a generated dataset")
    val.add_argument("manifest", help="path to manifest.json")
    val.add_argument("--report", help="where to write the JSON report")
    val.add_argument("--templates",
                     help="ghost template file the dataset was generated with")
    val.set_defaults(func=_cmd_validate)

    ev = sub.add_parser("eval", help="score restored images against GT")
    ev.add_argument("--pairs", required=True, help="dataset manifest.json")
    ev.add_argument("--restored", required=True,
                    help="directory of restored images (input filenames)")
    ev.add_argument("--report", required=True, help="output JSON path")
    ev.set_defaults(func=_cmd_eval)

    demo = sub.add_parser("nerf-demo",
                          help="multi-view reflective-flare rejection demo")
    demo.add_argument("--out", required=True)
    demo.add_argument("--views", type=int, default=16)
    demo.add_argument("--resolution", type=int, default=32)
    demo.add_argument("--image-size", type=int, default=64)
    demo.add_argument("--samples", type=int, default=48)
    demo.add_argument("--iterations", type=int, default=150)
    demo.add_argument("--lr", type=float, default=3e6)
    demo.add_argument("--seed", type=int, default=0)
    demo.set_defaults(func=_cmd_nerf_demo)

    tpl = sub.add_parser("templates", help="dump built-in ghost templates")
    tpl.add_argument("--out", required=True)
    tpl.set_defaults(func=_cmd_templates)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
