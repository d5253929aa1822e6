"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line."""

from __future__ import annotations

import csv
import io
import json
import math
import time

import numpy as np
import pytest

from conftest import grid_tree, orbit_camera, ragged_tree
from lodsplat.builder import (SyntheticSceneSpec, TreeBuildConfig, build_tree, generate_synthetic_scene,
                              roots_only_tree)
from lodsplat.cli import EXIT_OK, main
from lodsplat.io import load_scene, save_scene
from lodsplat.lod_filter import FilterConfig, filter_oracle, filter_parallel, filter_serial
from lodsplat.metrics import calibrate, count_below, instrumented_render, psnr, shrink_threshold, tile_stats, view_gtc
from lodsplat.paths import CameraPath, orbit_path
from lodsplat.projection import ProjectedBatch
from lodsplat.raster import THREE_SIGMA, ShrinkMode, TileGrid, rasterize, render, shrink_radius
from lodsplat.scene import ROOT, Camera, GaussianNode, validate_tree
from reference import blend_pixelwise


@pytest.fixture
def verdict(capsys):
    def emit(n: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n[criterion {n:2d}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return emit


def test_01_filter_equivalence(verdict):
    rng = np.random.default_rng(2024)
    t_start = time.perf_counter()
    configs, mismatches, nonempty, biggest, depths = 0, 0, 0, 0, set()

    def check(tree, cam, tau):
        nonlocal configs, mismatches, nonempty, biggest
        cfg = FilterConfig(tau_r=tau, workers=int(rng.integers(1, 9)))
        o = filter_oracle(tree, cam, cfg).selected
        s = filter_serial(tree, cam, cfg).selected
        p = filter_parallel(tree, cam, cfg).selected
        configs += 1
        mismatches += not (np.array_equal(o, s) and np.array_equal(o, p))
        nonempty += len(o) > 0
        biggest = max(biggest, len(tree))
        depths.add(tree.n_levels - 1)

    for _ in range(190):
        depth = int(rng.integers(2, 7))
        tree = ragged_tree(rng, int(rng.integers(3, 40)), depth, p_split=rng.uniform(0.3, 0.9))
        while len(tree) > 100_000:
            tree = ragged_tree(rng, int(rng.integers(3, 10)), depth, p_split=rng.uniform(0.3, 0.6))
        check(tree, orbit_camera(rng, radius=(3.0, 30.0)), float(rng.uniform(0.5, 20.0)))
    # large regular trees, up to 1e5 nodes
    for nx, depth, children in ((21, 4, 8), (2, 5, 8), (60, 3, 8), (400, 2, 8), (12, 6, 4)):
        tree = grid_tree(nx=nx, ny=1, depth=depth, seed=int(rng.integers(1000)), spacing=1.5, children=children)
        for _ in range(2):
            cam = Camera.look_at((nx * 0.75 + rng.uniform(-3, 3), -rng.uniform(4, 30), rng.uniform(4, 30)),
                                 (nx * 0.75, 0, 0), width=256, height=256, fx=256)
            check(tree, cam, float(rng.uniform(0.5, 20.0)))
    elapsed = time.perf_counter() - t_start
    ok = (configs >= 200 and mismatches == 0 and depths == {2, 3, 4, 5, 6} and 50_000 <= biggest <= 100_000
          and elapsed < 120 and nonempty > configs // 2)
    verdict(1, ok, f"{configs} configs, {mismatches} mismatches, depths {sorted(depths)}, largest {biggest} nodes, "
                   f"{nonempty} non-empty, {elapsed:.1f} s")


def test_02_depth_decoupling(verdict):
    lines, ok = [], True
    for depth in range(2, 9):
        root = GaussianNode((0.0, 0.0, 0.0), (0.5, 0.5, 0.5), (1.0, 0.0, 0.0, 0.0), 0.9, (0.5, 0.5, 0.5))
        tree = build_tree([root], TreeBuildConfig(depth=depth, children_per_node=8 if depth <= 5 else 2))
        cam = Camera.look_at((0, -3, 0), (0, 0, 0), width=1024, height=1024, fx=1024)
        cfg = FilterConfig(tau_r=0.5)
        s, p = filter_serial(tree, cam, cfg), filter_parallel(tree, cam, cfg)
        reached = bool(np.any(tree.levels[s.selected] == depth))
        ok &= p.barriers == 2 and reached and s.barriers >= depth + 1
        lines.append(f"L={depth}: parallel {p.barriers}, serial {s.barriers}")
    verdict(2, ok, "; ".join(lines))


def test_03_filter_speedup(verdict):
    tree = grid_tree(nx=4, ny=4, depth=5, spacing=4.0, scale=(0.5, 1.0), seed=1)
    # every leaf is reached from this view, which is the serial filter's worst case
    cam = Camera.look_at((0, -20, 24), (0, 0, 0), width=1024, height=1024, fx=1024)
    cfg = FilterConfig(tau_r=3.0, workers=8)
    t_start = time.perf_counter()
    filter_serial(tree, cam, cfg), filter_parallel(tree, cam, cfg)  # warm-up

    def median_time(fn):
        times = []
        for _ in range(9):
            t0 = time.perf_counter()
            fn(tree, cam, cfg)
            times.append(time.perf_counter() - t0)
        return float(np.median(times))

    t_serial, t_parallel = median_time(filter_serial), median_time(filter_parallel)
    elapsed = time.perf_counter() - t_start
    ratio = t_parallel / t_serial
    ok = len(tree) >= 500_000 and tree.n_levels - 1 == 5 and ratio <= 0.5 and elapsed < 60
    verdict(3, ok, f"{len(tree)} nodes, L=5, 8 workers: parallel {t_parallel * 1e3:.1f} ms, "
                   f"serial {t_serial * 1e3:.1f} ms, ratio {ratio:.2f} (need <= 0.50), {elapsed:.1f} s")


def test_04_shrink_radius(verdict):
    rng = np.random.default_rng(4)
    n = 1000
    alpha0 = rng.uniform(0.01, 1.0, n)
    sigma = rng.uniform(0.1, 100.0, n)
    # tau between alpha0 * exp(-4.5) and alpha0, where the 3 sigma cap does not bind
    tau = alpha0 * np.exp(-rng.uniform(1e-6, 4.5, n))
    r = shrink_radius(alpha0, sigma, tau)
    err = np.abs(alpha0 * np.exp(-0.5 * (r / sigma) ** 2) - tau)
    # below the cap the radius is 3 sigma; at or above alpha0 the Gaussian is culled
    low = alpha0 * np.exp(-rng.uniform(4.5 + 1e-6, 20.0, n))
    capped = shrink_radius(alpha0, sigma, low)
    culled = shrink_radius(alpha0, sigma, alpha0 * rng.uniform(1.0, 3.0, n))
    ok = err.max() <= 1e-6 and np.allclose(capped, 3 * sigma, rtol=0, atol=0) and np.all(culled == 0)
    verdict(4, ok, f"max |alpha(r) - tau| = {err.max():.2e} over {n} cases; cap and cull checked on {n} each")


def _flat(opacity, color):
    m = len(opacity)
    return ProjectedBatch.from_arrays(np.tile((8.0, 8.0), (m, 1)), np.tile((1e30, 0.0, 1e30), (m, 1)),
                                      np.arange(1.0, m + 1), opacity, color)


def test_05_blending(verdict):
    hand = rasterize(_flat([0.5, 0.5], [[1, 0, 0], [0, 1, 0]]), TileGrid(16, 16))
    hand_ok = bool(np.all(hand.image == np.float32([0.5, 0.25, 0.0])))
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(50):
        w, h, m = int(rng.integers(4, 40)), int(rng.integers(4, 40)), int(rng.integers(1, 25))
        a, c = rng.uniform(0.5, 40.0, m), rng.uniform(0.5, 40.0, m)
        proj = ProjectedBatch.from_arrays(
            np.stack([rng.uniform(-5, w + 5, m), rng.uniform(-5, h + 5, m)], axis=1),
            np.stack([a, rng.uniform(-0.9, 0.9, m) * np.sqrt(a * c), c], axis=1),
            rng.uniform(1, 20, m), rng.uniform(0.05, 1.0, m), rng.uniform(0, 1, (m, 3)))
        out = rasterize(proj, TileGrid(w, h))
        img, T, _ = blend_pixelwise(out.pairs, proj, w, h)
        worst = max(worst, float(np.abs(out.image - img).max()), float(np.abs(out.transmittance - T).max()))
    verdict(5, hand_ok and worst <= 1e-6,
            f"hand case {hand.image[0, 0].tolist()}, max |C|,|T| error on 50 micro-scenes {worst:.2e}")


def test_06_kpc_oracle(verdict):
    rng = np.random.default_rng(6)
    cam = Camera.look_at((0, -6, 6), (0, 0, 0), width=64, height=64, fx=64)
    worst, max_tile_sum, pairs = 0.0, 0.0, 0
    for _ in range(5):
        nodes = []
        for _ in range(200):
            q = rng.standard_normal(4)
            nodes.append(GaussianNode(tuple(rng.uniform(-2.5, 2.5, 3) * (1, 1, 0.3)), tuple(rng.uniform(0.05, 0.6, 3)),
                                      tuple(q / np.linalg.norm(q)), float(rng.uniform(0.05, 1.0)),
                                      tuple(rng.uniform(0, 1, 3))))
        iv = instrumented_render(roots_only_tree(nodes), cam)
        _, _, kpc = blend_pixelwise(iv.output.pairs, iv.output.proj, 64, 64)
        worst = max(worst, float(np.abs(iv.contributions.kpc - kpc).max()))
        max_tile_sum = max(max_tile_sum, float(np.bincount(iv.contributions.tile, weights=iv.contributions.kpc).max()))
        pairs += len(kpc)
    verdict(6, worst <= 1e-5 and max_tile_sum <= 256,
            f"{pairs} pairs over 5 scenes of 200 Gaussians: max kpc error {worst:.2e}, max tile sum {max_tile_sum:.3f}")


def test_07_calibration_arithmetic(verdict):
    stats = tile_stats(np.repeat(np.arange(16), 2), np.tile([10.0, 2.0], 16))
    g = view_gtc(stats)
    taus = {lam: shrink_threshold([g], lam)[1] for lam in (0.1, 0.2, 0.5)}
    ok = g == 6.0 and all(t == lam / 6.0 for lam, t in taus.items())
    verdict(7, ok, f"G_v = {g!r}, tau = {', '.join(f'{t!r}' for t in taus.values())}")


@pytest.fixture(scope="module")
def congested():
    roots = generate_synthetic_scene(SyntheticSceneSpec(nx=8, ny=8, spacing=1.0, seed=3, congestion=4))
    tree = build_tree(roots, TreeBuildConfig(depth=1, shrink_factor=0.5))
    views = [Camera.look_at((6 * math.cos(a), 6 * math.sin(a), 6.0), (0, 0, 0), width=128, height=128, fx=128)
             for a in (0.3, 1.9, 3.5)]
    t0 = time.perf_counter()
    tau = calibrate(tree, views, 0.2).tau
    runs = {kind: [render(tree, v, mode=mode, collect_kpc=True) for v in views]
            for kind, mode in (("3sigma", THREE_SIGMA), ("fixed", ShrinkMode.fixed()),
                               ("adaptive", ShrinkMode.adaptive(tau)))}
    return tau, runs, time.perf_counter() - t0


def test_08_adaptive_vs_fixed(verdict, congested):
    tau, runs, elapsed = congested
    n_p = {k: sum(o.stats.n_pairs for o in outs) for k, outs in runs.items()}
    quality = min(psnr(a.image, b.image) for a, b in zip(runs["adaptive"], runs["3sigma"]))
    ok = (n_p["adaptive"] <= 0.8 * n_p["3sigma"] and n_p["fixed"] >= n_p["adaptive"] and quality >= 30.0
          and elapsed < 120)
    verdict(8, ok, f"tau={tau:.4f}; N_P 3sigma {n_p['3sigma']}, fixed {n_p['fixed']}, adaptive {n_p['adaptive']} "
                   f"(ratio {n_p['adaptive'] / n_p['3sigma']:.3f}); worst PSNR {quality:.2f} dB; {elapsed:.1f} s")


def test_09_redundancy_reduction(verdict, congested):
    _, runs, _ = congested
    before = sum(count_below(o.kpc, 0.05) for o in runs["3sigma"])
    after = sum(count_below(o.kpc, 0.05) for o in runs["adaptive"])
    verdict(9, after <= 0.7 * before, f"KPC<0.05 pairs {before} -> {after} (ratio {after / before:.3f})")


def test_10_thread_determinism(verdict, tmp_path):
    spec = {"scene": {"nx": 6, "ny": 6, "spacing": 1.0, "seed": 10, "congestion": 3},
            "tree": {"depth": 2, "shrink_factor": 0.5}}
    (tmp_path / "spec.json").write_text(json.dumps(spec))
    keys = orbit_path((0, 0, 0), 6.0, 5.0, 4, width=96, height_px=72, fx=90)
    (tmp_path / "path.json").write_text(json.dumps(CameraPath(keys.keyframes, (3, 3, 3)).to_json()))
    scene = str(tmp_path / "scene.bin")
    assert main(["gen", "--spec", str(tmp_path / "spec.json"), "--out", scene]) == EXIT_OK
    frames, same_bytes, same_np = 0, True, True
    for shrink in (["--shrink", "3sigma"], ["--shrink", "adaptive", "--tau", "0.1"]):
        outs = {}
        for threads in ("1", "8"):
            out = tmp_path / f"{shrink[1]}_{threads}"
            assert main(["render", "--scene", scene, "--path", str(tmp_path / "path.json"), *shrink,
                         "--threads", threads, "--out", str(out)]) == EXIT_OK
            outs[threads] = out
        ppms = sorted(p.name for p in outs["1"].glob("*.ppm"))
        frames = len(ppms)
        same_bytes &= frames == 10 and all((outs["1"] / f).read_bytes() == (outs["8"] / f).read_bytes() for f in ppms)
        rows = [list(csv.DictReader(io.StringIO((outs[t] / "report.csv").read_text()))) for t in ("1", "8")]
        same_np &= [r["N_P"] for r in rows[0]] == [r["N_P"] for r in rows[1]] and len(rows[0]) == 10
    verdict(10, same_bytes and same_np,
            f"{frames} frames per run, 3sigma and adaptive: PPM bytes identical {same_bytes}, N_P identical {same_np}")


CORRUPTIONS = ("scale", "quat", "opacity", "color", "mean", "parent")


def _corrupt(tree, kind, i, rng):
    if kind == "scale":
        a = tree.scales.copy()
        a[i, int(rng.integers(3))] = -rng.uniform(0, 1)
        return tree.replace(scales=a), "scale > 0"
    if kind == "quat":
        a = tree.quats.copy()
        a[i] *= rng.choice([0.5, 1.5])
        return tree.replace(quats=a), "quaternion norm == 1"
    if kind == "opacity":
        a = tree.opacity.copy()
        a[i] = rng.choice([0.0, -0.2, 1.5])
        return tree.replace(opacity=a), "0 < opacity <= 1"
    if kind == "color":
        a = tree.colors.copy()
        a[i, int(rng.integers(3))] = rng.choice([-0.1, 1.1])
        return tree.replace(colors=a), "color in [0,1]"
    if kind == "mean":
        a = tree.means.copy()
        a[i, int(rng.integers(3))] = rng.choice([np.nan, np.inf])
        return tree.replace(means=a), "mean finite"
    a = tree.parents.copy()
    if tree.levels[i] == 0:
        a[i] = len(tree) - 1
        return tree.replace(parents=a), "level-0 node must have ROOT parent"
    a[i] = ROOT
    return tree.replace(parents=a), "non-root node must have a parent"


def test_11_round_trip_and_validation(verdict, tmp_path):
    round_trips, caught, total = 0, 0, 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        tree = ragged_tree(rng, int(rng.integers(1, 8)), int(rng.integers(1, 5)))
        path = tmp_path / f"s{seed}.bin"
        save_scene(tree, path)
        back = load_scene(path)
        round_trips += all(getattr(back, f).tobytes() == getattr(tree, f).tobytes()
                           for f in ("means", "scales", "quats", "opacity", "colors", "parents", "leaf",
                                     "level_offsets"))
        for kind in CORRUPTIONS:
            i = int(rng.integers(len(tree)))
            bad, rule = _corrupt(tree, kind, i, rng)
            total += 1
            caught += f"node {i}: {rule}" in validate_tree(bad)
    ok = round_trips == 100 and caught == total
    verdict(11, ok, f"{round_trips}/100 bit-exact round trips; {caught}/{total} seeded corruptions caught")
