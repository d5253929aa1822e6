"""Command-line entry point: ``lodsplat {gen,build-tree,calibrate,render,bench,compare}``.

Exit codes: 0 success, 2 usage or validation error, 3 I/O or runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

from .bench import SHRINK_MODES, BenchReport, frame_row, make_shrink, parse_matrix, run_bench
from .builder import SyntheticSceneSpec, TreeBuildConfig, build_tree, generate_synthetic_scene, roots_only_tree
from .io import SceneFormatError, load_scene, read_ppm, save_scene, write_ppm
from .lod_filter import DEFAULT_TAU_R, FilterConfig
from .metrics import DEFAULT_LAMBDA_G, CalibrationError, CalibrationReport, calibrate, psnr, ssim
from .paths import load_path, load_views
from .raster import render

log = logging.getLogger("lodsplat")

EXIT_OK, EXIT_USAGE, EXIT_IO = 0, 2, 3


class UsageError(Exception):
    """Bad flags or invalid input content; reported with exit code 2."""


# -- config parsing ------------------------------------------------------------------


def _build(cls, doc, section: str):
    if not isinstance(doc, dict):
        raise UsageError(f"{section}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise UsageError(f"{section}.{unknown[0]}: unknown field")
    kwargs = {}
    for k, v in doc.items():
        kwargs[k] = tuple(tuple(c) if isinstance(c, list) else c for c in v) if isinstance(v, list) else v
    try:
        obj = cls(**kwargs)
        problems = obj.problems()
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{section}: {exc}") from None
    if problems:
        raise UsageError("; ".join(f"{section}.{p}" for p in problems))
    return obj


def parse_gen_spec(doc) -> tuple[SyntheticSceneSpec, TreeBuildConfig | None]:
    """``{"scene": {...}, "tree": {...}}``; without ``tree`` the roots are written as-is."""
    if not isinstance(doc, dict):
        raise UsageError("spec: expected a JSON object")
    unknown = sorted(set(doc) - {"scene", "tree"})
    if unknown:
        raise UsageError(f"{unknown[0]}: unknown section (expected 'scene' and optional 'tree')")
    scene = _build(SyntheticSceneSpec, doc.get("scene", {}), "scene")
    tree = _build(TreeBuildConfig, doc["tree"], "tree") if "tree" in doc else None
    return scene, tree


def _read_json(path) -> object:
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: not valid JSON ({exc})") from None


def _tau(args) -> float | None:
    if getattr(args, "tau", None) is not None:
        return args.tau
    if getattr(args, "calibration", None):
        return CalibrationReport.from_json(_read_json(args.calibration)).tau
    return None


def _config(args) -> FilterConfig:
    return FilterConfig(tau_r=args.tau_r, workers=args.threads)


# -- commands ----------------------------------------------------------------------


def cmd_gen(args) -> int:
    scene_spec, tree_cfg = parse_gen_spec(_read_json(args.spec))
    roots = generate_synthetic_scene(scene_spec)
    tree = build_tree(roots, tree_cfg) if tree_cfg else roots_only_tree(roots)
    save_scene(tree, args.out)
    log.info("wrote %d nodes (%d levels) to %s", len(tree), tree.n_levels, args.out)
    return EXIT_OK


def cmd_build_tree(args) -> int:
    cfg = TreeBuildConfig(depth=args.depth, shrink_factor=args.gamma, children_per_node=args.children, seed=args.seed)
    problems = cfg.problems()
    if problems:
        raise UsageError("; ".join(problems))
    source = load_scene(args.scene)
    roots = [source.node(i) for i in source.level_range(0)]
    tree = build_tree(roots, cfg)
    save_scene(tree, args.out)
    log.info("built %d nodes from %d roots", len(tree), len(roots))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    if not args.lambda_g > 0:
        raise UsageError("--lambda-g must be > 0")
    tree = load_scene(args.scene)
    views = load_views(_read_json(args.views))
    if not views:
        raise UsageError("views: need at least one camera")
    report = calibrate(tree, views, args.lambda_g, _config(args))
    _write_text(args.out, report.dumps())
    print(f"scene_gtc={report.scene_mean:.6g} tau={report.tau:.6g}")
    return EXIT_OK


def cmd_render(args) -> int:
    tau = _tau(args)
    if args.shrink == "adaptive" and tau is None:
        raise UsageError("--shrink adaptive needs --tau or --calibration")
    mode = make_shrink(args.shrink, tau)
    tree = load_scene(args.scene)
    frames = load_path(_read_json(args.path)).frames()
    config = _config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = BenchReport(tau=tau)
    for i, cam in enumerate(frames):
        out = render(tree, cam, config, mode, filter_kind=args.filter, collect_kpc=True)
        write_ppm(out_dir / f"frame_{i:05d}.ppm", out.image)
        report.rows.append(frame_row(i, args.filter, args.shrink, out))
    (out_dir / "report.csv").write_text(report.dumps_csv())
    (out_dir / "report.json").write_text(report.dumps_json())
    log.info("rendered %d frames to %s", len(frames), out_dir)
    return EXIT_OK


def cmd_bench(args) -> int:
    try:
        combos = parse_matrix(args.matrix)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    tree = load_scene(args.scene)
    frames = load_path(_read_json(args.path)).frames()
    tau = _tau(args)
    if tau is None and any(s == "adaptive" for _, s in combos):
        if not args.lambda_g > 0:
            raise UsageError("--lambda-g must be > 0")
        tau = calibrate(tree, frames, args.lambda_g, _config(args)).tau
        log.info("calibrated on the bench path: tau=%.6g", tau)
    report = run_bench(tree, frames, combos, tau=tau, tau_r=args.tau_r, workers=args.threads)
    out = Path(args.out)
    base = out.with_suffix("") if out.suffix in (".csv", ".json") else out
    _write_text(base.with_suffix(".csv"), report.dumps_csv())
    _write_text(base.with_suffix(".json"), report.dumps_json())
    for row in report.aggregates:
        print(f"{row['filter_mode']:>8} {row['shrink_mode']:>8}  fps={row['fps']:.2f}  N_P={row['N_P']:.1f}  "
              f"barriers={row['barriers']}  psnr={_fmt(row['psnr'])}")
    return EXIT_OK


def cmd_compare(args) -> int:
    a, b = read_ppm(args.a), read_ppm(args.b)
    if a.shape != b.shape:
        raise UsageError(f"image sizes differ: {a.shape[1]}x{a.shape[0]} vs {b.shape[1]}x{b.shape[0]}")
    s = ssim(a, b) if min(a.shape[:2]) >= 11 else float("nan")
    print(f"psnr={_fmt(psnr(a, b))} ssim={s:.6f}")
    return EXIT_OK


def _fmt(x: float) -> str:
    return "inf" if math.isinf(x) else f"{x:.4f}"


def _write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


# -- argument parsing ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lodsplat", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def pipeline_flags(sp):
        sp.add_argument("--tau-r", type=float, default=DEFAULT_TAU_R, help="LoD pixel-radius threshold")
        sp.add_argument("--threads", type=int, default=1, help="worker pool size for every stage")

    g = sub.add_parser("gen", help="generate a synthetic scene (and optional LoD tree) from a JSON spec")
    g.add_argument("--spec", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen)

    b = sub.add_parser("build-tree", help="grow an LoD tree below the roots of a scene")
    b.add_argument("--scene", required=True)
    b.add_argument("--depth", type=int, default=3)
    b.add_argument("--gamma", type=float, default=0.5)
    b.add_argument("--children", type=int, default=8)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True)
    b.set_defaults(fn=cmd_build_tree)

    c = sub.add_parser("calibrate", help="derive the adaptive shrink threshold from training views")
    c.add_argument("--scene", required=True)
    c.add_argument("--views", required=True)
    c.add_argument("--lambda-g", type=float, default=DEFAULT_LAMBDA_G)
    c.add_argument("--out", required=True)
    pipeline_flags(c)
    c.set_defaults(fn=cmd_calibrate)

    r = sub.add_parser("render", help="render every frame of a camera path to PPM")
    r.add_argument("--scene", required=True)
    r.add_argument("--path", required=True)
    r.add_argument("--filter", choices=("serial", "parallel"), default="parallel")
    r.add_argument("--shrink", choices=SHRINK_MODES, default="3sigma")
    t = r.add_mutually_exclusive_group()
    t.add_argument("--tau", type=float)
    t.add_argument("--calibration")
    r.add_argument("--out", required=True)
    pipeline_flags(r)
    r.set_defaults(fn=cmd_render)

    k = sub.add_parser("bench", help="run a filter x shrink matrix over a camera path")
    k.add_argument("--scene", required=True)
    k.add_argument("--path", required=True)
    k.add_argument("--matrix", default="filter=serial,parallel;shrink=3sigma,adaptive")
    t = k.add_mutually_exclusive_group()
    t.add_argument("--tau", type=float)
    t.add_argument("--calibration")
    k.add_argument("--lambda-g", type=float, default=DEFAULT_LAMBDA_G,
                   help="used to calibrate on the path itself when adaptive runs lack --tau/--calibration")
    k.add_argument("--out", required=True)
    pipeline_flags(k)
    k.set_defaults(fn=cmd_bench)

    m = sub.add_parser("compare", help="print PSNR and SSIM between two PPM images")
    m.add_argument("--a", required=True)
    m.add_argument("--b", required=True)
    m.set_defaults(fn=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (UsageError, SceneFormatError, CalibrationError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
