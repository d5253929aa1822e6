from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from lodsplat.builder import CORNER_SIGNS, SyntheticSceneSpec, TreeBuildConfig, build_tree, generate_synthetic_scene
from lodsplat.scene import ROOT, Camera, LoDTree, quat_to_rotmat

FIXTURES = Path(__file__).parent / "fixtures"


def grid_tree(nx=3, ny=3, depth=3, gamma=0.5, seed=0, spacing=2.0, scale=(0.4, 0.9), children=8,
              congestion=1) -> LoDTree:
    roots = generate_synthetic_scene(
        SyntheticSceneSpec(nx=nx, ny=ny, spacing=spacing, base_scale=scale, seed=seed, congestion=congestion)
    )
    return build_tree(roots, TreeBuildConfig(depth=depth, shrink_factor=gamma, children_per_node=children,
                                             seed=seed))


def ragged_tree(rng: np.random.Generator, n_roots: int, depth: int, gamma: float = 0.5,
                p_split: float = 0.6, extent: float = 6.0) -> LoDTree:
    """Tree whose branches stop at different depths, with children at parent corners."""
    n = n_roots
    means = [rng.uniform(-extent, extent, (n, 3)) * (1.0, 1.0, 0.2)]
    scales = [rng.uniform(0.3, 1.2, (n, 3))]
    q = rng.standard_normal((n, 4))
    quats = [q / np.linalg.norm(q, axis=1, keepdims=True)]
    opac = [rng.uniform(0.2, 1.0, n)]
    cols = [rng.uniform(0, 1, (n, 3))]
    parents = [np.full(n, ROOT, dtype=np.uint32)]
    offsets = [0, n]
    for lvl in range(depth):
        pm, ps, pq = means[-1], scales[-1], quats[-1]
        split = rng.random(len(pm)) < p_split
        split[0] = True  # keep at least one branch going so every level exists
        kids_m, kids_s, kids_q, kids_o, kids_c, kids_p = [], [], [], [], [], []
        for i in np.flatnonzero(split):
            k = int(rng.integers(1, 9))
            corners = np.sort(rng.choice(8, size=k, replace=False))
            R = quat_to_rotmat(pq[i])
            off = CORNER_SIGNS[corners] * (ps[i].astype(np.float64) * 0.5)
            kids_m.append(pm[i] + off @ R.T)
            kids_s.append(np.repeat(np.float32(gamma) * ps[i][None].astype(np.float32), k, axis=0))
            kids_q.append(np.repeat(pq[i][None], k, axis=0))
            kids_o.append(np.repeat(opac[-1][i], k))
            kids_c.append(np.repeat(cols[-1][i][None], k, axis=0))
            kids_p.append(np.full(k, offsets[-2] + i, dtype=np.uint32))
        if not kids_m:
            break
        means.append(np.concatenate(kids_m))
        scales.append(np.concatenate(kids_s))
        quats.append(np.concatenate(kids_q))
        opac.append(np.concatenate(kids_o))
        cols.append(np.concatenate(kids_c))
        parents.append(np.concatenate(kids_p))
        offsets.append(offsets[-1] + len(means[-1]))
    parents_all = np.concatenate(parents)
    total = offsets[-1]
    leaf = np.ones(total, dtype=bool)
    leaf[parents_all[parents_all != ROOT].astype(np.int64)] = False
    return LoDTree(
        np.concatenate(means), np.concatenate(scales), np.concatenate(quats), np.concatenate(opac),
        np.concatenate(cols), parents_all, leaf, np.array(offsets), gamma,
    )


def orbit_camera(rng: np.random.Generator, *, radius=(6.0, 30.0), size=(32, 160), target_jitter=3.0) -> Camera:
    """A camera somewhere above the ground plane looking roughly at the origin."""
    r = rng.uniform(*radius)
    az = rng.uniform(0, 2 * np.pi)
    el = rng.uniform(0.2, 1.3)
    eye = r * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
    target = np.append(rng.uniform(-target_jitter, target_jitter, 2), 0.0)
    w = int(rng.integers(*size))
    h = int(rng.integers(*size))
    return Camera.look_at(eye, target, width=w, height=h, fx=rng.uniform(0.6, 1.5) * w)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tree585() -> LoDTree:
    roots = generate_synthetic_scene(SyntheticSceneSpec(nx=1, ny=1, base_scale=(1.0, 2.0), seed=4))
    return build_tree(roots, TreeBuildConfig(depth=3, shrink_factor=0.5))
