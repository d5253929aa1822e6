"""LoD tree construction by recursive child placement, plus seeded synthetic scenes."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .scene import ROOT, GaussianNode, LoDTree, quat_to_rotmat, validate_node

# Child offsets are the 8 box corners (+-sx/2, +-sy/2, +-sz/2). A corner child sits
# sqrt(3)/2 * max(s) away, so its 3-sigma sphere stays inside the parent's only
# while sqrt(3)/2 + 3*gamma <= 3, i.e. gamma <= 1 - sqrt(3)/6 ~= 0.711.
MAX_SHRINK_FACTOR = 0.7
CORNER_SIGNS = np.array(list(itertools.product((-1.0, 1.0), repeat=3)))  # (8, 3), k = bit pattern
_INDEX_LIMIT = int(ROOT)


@dataclass(frozen=True)
class TreeBuildConfig:
    depth: int = 3
    shrink_factor: float = 0.5
    children_per_node: int = 8
    seed: int = 0

    def problems(self) -> list[str]:
        out = []
        if not isinstance(self.depth, (int, np.integer)) or self.depth < 1:
            out.append("depth: must be an integer >= 1")
        if not (0.0 < self.shrink_factor <= MAX_SHRINK_FACTOR):
            out.append(f"shrink_factor: must lie in (0, {MAX_SHRINK_FACTOR}]")
        if not isinstance(self.children_per_node, (int, np.integer)) or not 1 <= self.children_per_node <= 8:
            out.append("children_per_node: must be an integer in 1..8")
        return out


def _roots_to_arrays(roots: Sequence[GaussianNode]):
    n = len(roots)
    return (
        np.array([r.mean for r in roots], dtype=np.float32).reshape(n, 3),
        np.array([r.scale for r in roots], dtype=np.float32).reshape(n, 3),
        np.array([r.rotation for r in roots], dtype=np.float32).reshape(n, 4),
        np.array([r.opacity for r in roots], dtype=np.float32),
        np.array([r.color for r in roots], dtype=np.float32).reshape(n, 3),
    )


def roots_only_tree(roots: Sequence[GaussianNode], shrink_factor: float = 0.5) -> LoDTree:
    """Single-level tree in which every root is a leaf."""
    means, scales, quats, opacity, colors = _roots_to_arrays(roots)
    n = len(roots)
    return LoDTree(means, scales, quats, opacity, colors,
                   parents=np.full(n, ROOT, dtype=np.uint32), leaf=np.ones(n, dtype=bool),
                   level_offsets=np.array([0, n]), shrink_factor=shrink_factor)


def child_corners(n_parents: int, config: TreeBuildConfig) -> np.ndarray:
    """Corner index (0..7) of every child, shape (n_parents, K), ascending per parent."""
    k = config.children_per_node
    if k == 8:
        return np.broadcast_to(np.arange(8), (n_parents, 8))
    rng = np.random.default_rng(config.seed)
    return np.sort(np.argsort(rng.random((n_parents, 8)), axis=1)[:, :k], axis=1)


def build_tree(roots: Sequence[GaussianNode], config: TreeBuildConfig) -> LoDTree:
    """Grow ``config.depth`` levels below ``roots``.

    Each child of ``v`` sits at ``mean_v + R(q_v) @ o_k`` for a corner offset
    ``o_k = (+-sx/2, +-sy/2, +-sz/2)``, takes ``gamma * scale_v`` and copies the
    parent's rotation, color and opacity. Children are stored level-major and,
    within a level, grouped by parent in ascending corner order.
    """
    problems = config.problems()
    if problems:
        raise ValueError("invalid TreeBuildConfig: " + "; ".join(problems))
    for i, r in enumerate(roots):
        bad = validate_node(r)
        if bad:
            raise ValueError(f"root {i} invalid: {', '.join(bad)}")
        if r.level != 0 or r.parent != int(ROOT):
            raise ValueError(f"root {i} must have level 0 and ROOT parent")

    k = config.children_per_node
    total = len(roots) * sum(k**lvl for lvl in range(config.depth + 1))
    if total >= _INDEX_LIMIT:
        raise OverflowError(f"{total} nodes overflow the u32 index type")

    gamma = np.float32(config.shrink_factor)
    means, scales, quats, opacity, colors = _roots_to_arrays(roots)
    levels = [(means, scales, quats, opacity, colors, np.full(len(roots), ROOT, dtype=np.uint32))]
    offsets = [0, len(roots)]
    for _ in range(config.depth):
        pm, ps, pq, po, pc, _ = levels[-1]
        n_par = len(po)
        corners = child_corners(n_par, config)
        parent_local = np.repeat(np.arange(n_par), k)
        o = CORNER_SIGNS[corners.reshape(-1)] * (ps[parent_local].astype(np.float64) * 0.5)
        R = quat_to_rotmat(pq[parent_local])
        cm = (pm[parent_local].astype(np.float64) + np.einsum("nij,nj->ni", R, o)).astype(np.float32)
        cs = gamma * ps[parent_local]
        par = (offsets[-2] + parent_local).astype(np.uint32)
        levels.append((cm, cs, pq[parent_local], po[parent_local], pc[parent_local], par))
        offsets.append(offsets[-1] + len(cm))

    cat = [np.concatenate([lv[f] for lv in levels]) for f in range(6)]
    n = offsets[-1]
    leaf = np.zeros(n, dtype=bool)
    leaf[offsets[-2]:] = True
    return LoDTree(*cat[:5], parents=cat[5], leaf=leaf, level_offsets=np.array(offsets),
                   shrink_factor=gamma)


def ancestor_chain(tree: LoDTree, index: int) -> list[int]:
    """Ancestors of ``index`` from the direct parent up to its level-0 root."""
    if not 0 <= index < len(tree):
        raise IndexError(f"node index {index} out of range for {len(tree)} nodes")
    chain = []
    p = tree.parents[index]
    while p != ROOT:
        chain.append(int(p))
        p = tree.parents[p]
    return chain


# -- synthetic scenes ----------------------------------------------------------

DEFAULT_PALETTE = (
    (0.85, 0.30, 0.25),
    (0.25, 0.65, 0.35),
    (0.20, 0.40, 0.85),
    (0.90, 0.80, 0.30),
    (0.60, 0.60, 0.60),
)


@dataclass(frozen=True)
class SyntheticSceneSpec:
    """Jittered ground-plane grid of roots.

    Each grid cell holds one base root plus ``congestion - 1`` co-located
    low-opacity overlays, which is what makes tiles congested.
    """

    nx: int = 8
    ny: int = 8
    spacing: float = 1.0
    base_scale: tuple[float, float] = (0.2, 0.5)
    opacity: tuple[float, float] = (0.3, 1.0)
    palette: tuple = DEFAULT_PALETTE
    seed: int = 0
    congestion: int = 1

    def problems(self) -> list[str]:
        out = []
        for name in ("nx", "ny", "congestion"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                out.append(f"{name}: must be an integer >= 1")
        if not (self.spacing > 0):
            out.append("spacing: must be > 0")
        lo, hi = self.base_scale
        if not (0 < lo <= hi):
            out.append("base_scale: need 0 < min <= max")
        lo, hi = self.opacity
        if not (0 < lo <= hi <= 1):
            out.append("opacity: need 0 < min <= max <= 1")
        if len(self.palette) == 0:
            out.append("palette: must be non-empty")
        elif any(len(c) != 3 or not all(0 <= x <= 1 for x in c) for c in self.palette):
            out.append("palette: entries must be RGB triples in [0,1]")
        return out


def _random_quats(rng: np.random.Generator, n: int) -> np.ndarray:
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    q[q[:, 0] < 0] *= -1
    return q


def generate_synthetic_scene(spec: SyntheticSceneSpec) -> list[GaussianNode]:
    """``nx * ny * congestion`` roots, a pure function of ``spec``."""
    problems = spec.problems()
    if problems:
        raise ValueError("invalid SyntheticSceneSpec: " + "; ".join(problems))
    rng = np.random.default_rng(spec.seed)
    nx, ny, m = spec.nx, spec.ny, spec.congestion
    n_cells = nx * ny
    gx, gy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    base = np.stack(
        [(gx.ravel() - (nx - 1) / 2) * spec.spacing, (gy.ravel() - (ny - 1) / 2) * spec.spacing, np.zeros(n_cells)],
        axis=1,
    )
    base[:, :2] += rng.uniform(-0.25, 0.25, (n_cells, 2)) * spec.spacing
    base[:, 2] += rng.uniform(-0.1, 0.1, n_cells) * spec.spacing

    n = n_cells * m
    cell = np.repeat(np.arange(n_cells), m)
    layer = np.tile(np.arange(m), n_cells)
    means = base[cell] + rng.uniform(-0.05, 0.05, (n, 3)) * spec.spacing * (layer > 0)[:, None]
    smin, smax = spec.base_scale
    scales = rng.uniform(smin, smax, (n, 3))
    omin, omax = spec.opacity
    low_hi = omin + 0.25 * (omax - omin)
    opac = np.where(layer == 0, rng.uniform(omin, omax, n), rng.uniform(omin, low_hi, n))
    palette = np.asarray(spec.palette, dtype=np.float64)
    colors = palette[rng.integers(0, len(palette), n)]
    quats = _random_quats(rng, n)

    # round-trip through float32 so nodes equal what a scene file will hold
    means, scales, quats, opac, colors = (a.astype(np.float32) for a in (means, scales, quats, opac, colors))
    scales = np.clip(scales, np.float32(smin), np.float32(smax))
    opac = np.clip(opac, np.float32(omin), np.float32(omax))
    return [
        GaussianNode(
            mean=tuple(map(float, means[i])),
            scale=tuple(map(float, scales[i])),
            rotation=tuple(map(float, quats[i])),
            opacity=float(opac[i]),
            color=tuple(map(float, colors[i])),
        )
        for i in range(n)
    ]
