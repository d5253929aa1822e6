"""Tile rasterizer: footprint extents (optionally shrunk), tile binning, key sort and front-to-back blending."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np

from .lod_filter import FilterConfig, FilterResult, run_filter
from .projection import Projected2D, ProjectedBatch, project_batch
from .scene import Camera, LoDTree
from .workers import executor, split_ranges

TILE = 16
ALPHA_CAP = 0.99
ALPHA_SKIP = 1.0 / 255.0
T_STOP = 1e-4
FLASHGS_TAU = 1.0 / 255.0
_BLOCK = 1024  # pairs per blending block; bounds per-tile temporaries


@dataclass(frozen=True)
class TileGrid:
    width: int
    height: int
    tile_w: int = TILE
    tile_h: int = TILE

    @property
    def tiles_x(self) -> int:
        return -(-self.width // self.tile_w)

    @property
    def tiles_y(self) -> int:
        return -(-self.height // self.tile_h)

    @property
    def n_tile(self) -> int:
        return self.tiles_x * self.tiles_y

    def tile_id(self, tx: int, ty: int) -> int:
        return ty * self.tiles_x + tx

    def tile_pixels(self, tile: int) -> tuple[int, int, int, int]:
        """Pixel box ``(x0, y0, x1, y1)`` of ``tile``, clipped to the image, end-exclusive."""
        ty, tx = divmod(int(tile), self.tiles_x)
        x0, y0 = tx * self.tile_w, ty * self.tile_h
        return x0, y0, min(x0 + self.tile_w, self.width), min(y0 + self.tile_h, self.height)

    @classmethod
    def for_camera(cls, cam: Camera) -> TileGrid:
        return cls(cam.width, cam.height)


@dataclass(frozen=True)
class ShrinkMode:
    """How far a footprint extends for binning.

    ``3sigma`` uses the full ``3 * sigma_max``; ``fixed`` and ``adaptive`` cut the
    footprint where the splat's opacity falls to ``tau``.
    """

    kind: str = "3sigma"
    tau: float | None = None

    def __post_init__(self):
        if self.kind not in ("3sigma", "fixed", "adaptive"):
            raise ValueError(f"unknown shrink mode {self.kind!r}")
        if self.kind != "3sigma" and not (self.tau is not None and 0.0 < self.tau < 1.0):
            raise ValueError(f"shrink mode {self.kind!r} needs tau in (0, 1)")

    @classmethod
    def three_sigma(cls) -> ShrinkMode:
        return cls("3sigma")

    @classmethod
    def fixed(cls, tau: float = FLASHGS_TAU) -> ShrinkMode:
        return cls("fixed", tau)

    @classmethod
    def adaptive(cls, tau: float) -> ShrinkMode:
        return cls("adaptive", tau)

    def __str__(self) -> str:
        return self.kind if self.tau is None else f"{self.kind}({self.tau:.6g})"


THREE_SIGMA = ShrinkMode.three_sigma()


def shrink_radius(opacity, sigma_max, tau):
    """Distance at which ``opacity * exp(-r^2 / (2 sigma^2))`` falls to ``tau``, capped at 3 sigma.

    Zero where ``opacity <= tau``.
    """
    opacity = np.asarray(opacity, dtype=np.float64)
    sigma_max = np.asarray(sigma_max, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = sigma_max * np.sqrt(2.0 * np.log(opacity / tau))
    return np.where(opacity > tau, np.minimum(r, 3.0 * sigma_max), 0.0)


def effective_radius(proj: Projected2D | ProjectedBatch, mode: ShrinkMode, opacity=None):
    """Binning radius in pixels for one footprint or a whole batch.

    ``opacity`` is required for a single :class:`Projected2D` under fixed or
    adaptive shrinking (the footprint itself does not carry it).
    """
    if isinstance(proj, ProjectedBatch):
        if mode.kind == "3sigma":
            return 3.0 * proj.sigma_max
        return shrink_radius(proj.opacity, proj.sigma_max, mode.tau)
    if mode.kind == "3sigma":
        return 3.0 * proj.sigma_max
    if opacity is None:
        raise ValueError("opacity is required to shrink a single footprint")
    return float(shrink_radius(opacity, proj.sigma_max, mode.tau))


class TilePair(NamedTuple):
    tile: int
    depth: float
    gaussian: int


@dataclass(frozen=True)
class TilePairs:
    """Gaussian-tile key/value pairs as parallel arrays."""

    tile: np.ndarray  # int64
    depth: np.ndarray  # float64
    gaussian: np.ndarray  # int64, index into the ProjectedBatch

    def __len__(self) -> int:
        return len(self.tile)

    def __iter__(self) -> Iterator[TilePair]:
        for t, d, g in zip(self.tile.tolist(), self.depth.tolist(), self.gaussian.tolist()):
            yield TilePair(t, d, g)

    def take(self, order) -> TilePairs:
        return TilePairs(self.tile[order], self.depth[order], self.gaussian[order])

    @classmethod
    def from_pairs(cls, pairs) -> TilePairs:
        pairs = list(pairs)
        return cls(
            np.array([p[0] for p in pairs], dtype=np.int64),
            np.array([p[1] for p in pairs], dtype=np.float64),
            np.array([p[2] for p in pairs], dtype=np.int64),
        )

    @classmethod
    def empty(cls) -> TilePairs:
        return cls(np.zeros(0, np.int64), np.zeros(0), np.zeros(0, np.int64))


def tile_ranges(mean2d, radii, grid: TileGrid):
    """Inclusive tile rectangles ``(tx0, tx1, ty0, ty1)`` hit by each box ``mean2d +- r``.

    The box is clipped to the image; a tile counts only if it overlaps the box
    with positive area. Empty rectangles have ``tx1 < tx0`` or ``ty1 < ty0``.
    """
    mean2d = np.asarray(mean2d, dtype=np.float64).reshape(-1, 2)
    r = np.asarray(radii, dtype=np.float64)
    lo_x = np.maximum(mean2d[:, 0] - r, 0.0)
    hi_x = np.minimum(mean2d[:, 0] + r, float(grid.width))
    lo_y = np.maximum(mean2d[:, 1] - r, 0.0)
    hi_y = np.minimum(mean2d[:, 1] + r, float(grid.height))
    empty = (r <= 0) | (hi_x <= lo_x) | (hi_y <= lo_y) | ~np.isfinite(r)
    with np.errstate(invalid="ignore"):
        tx0 = np.floor(lo_x / grid.tile_w)
        tx1 = np.ceil(hi_x / grid.tile_w) - 1
        ty0 = np.floor(lo_y / grid.tile_h)
        ty1 = np.ceil(hi_y / grid.tile_h) - 1
    rect = np.stack([tx0, tx1, ty0, ty1], axis=1)
    rect[empty] = (0, -1, 0, -1)
    return rect.astype(np.int64)


def bin_to_tiles(proj: ProjectedBatch, radii, grid: TileGrid) -> TilePairs:
    """One pair per (Gaussian, overlapped tile); pairs come out grouped by Gaussian."""
    rect = tile_ranges(proj.mean2d, radii, grid)
    w = np.maximum(rect[:, 1] - rect[:, 0] + 1, 0)
    h = np.maximum(rect[:, 3] - rect[:, 2] + 1, 0)
    counts = w * h
    total = int(counts.sum())
    if total == 0:
        return TilePairs.empty()
    g = np.repeat(np.arange(len(counts)), counts)
    starts = np.cumsum(counts) - counts
    local = np.arange(total) - starts[g]
    tx = rect[g, 0] + local % w[g]
    ty = rect[g, 2] + local // w[g]
    return TilePairs(ty * grid.tiles_x + tx, np.asarray(proj.depth, dtype=np.float64)[g], g)


def sort_pairs(pairs: TilePairs) -> TilePairs:
    """Order by tile, then depth (front to back), then Gaussian index."""
    order = np.lexsort((pairs.gaussian, pairs.depth, pairs.tile))
    return pairs.take(order)


@dataclass
class BlendResult:
    image: np.ndarray  # (H, W, 3) float32
    transmittance: np.ndarray  # (H, W) float64, final T per pixel
    kpc: np.ndarray | None  # per sorted pair, composited weight summed over the tile's pixels


def _blend_tile(tile, lo, hi, pairs, proj, grid, image, trans, kpc):
    x0, y0, x1, y1 = grid.tile_pixels(tile)
    px, py = np.meshgrid(np.arange(x0, x1) + 0.5, np.arange(y0, y1) + 0.5)
    px, py = px.ravel(), py.ravel()
    acc = np.zeros((len(px), 3))
    T = np.ones(len(px))
    for b0 in range(lo, hi, _BLOCK):
        if not (T >= T_STOP).any():
            break
        b1 = min(b0 + _BLOCK, hi)
        g = pairs.gaussian[b0:b1]
        dx = px[None, :] - proj.mean2d[g, 0][:, None]
        dy = py[None, :] - proj.mean2d[g, 1][:, None]
        ca, cb, cc = proj.conic[g, 0][:, None], proj.conic[g, 1][:, None], proj.conic[g, 2][:, None]
        power = -0.5 * (ca * dx * dx + cc * dy * dy) - cb * dx * dy
        alpha = np.minimum(ALPHA_CAP, proj.opacity[g][:, None] * np.exp(power))
        alpha[alpha < ALPHA_SKIP] = 0.0
        # sequential running product with the carried-in transmittance as the first factor
        chain = np.cumprod(np.vstack([T[None, :], 1.0 - alpha]), axis=0)
        T_before = chain[:-1]
        live = T_before >= T_STOP
        weight = np.where(live, alpha * T_before, 0.0)
        acc += weight.T @ proj.color[g]
        n_live = live.sum(axis=0)
        T = np.where(n_live > 0, chain[n_live, np.arange(len(px))], T)
        if kpc is not None:
            kpc[b0:b1] = weight.sum(axis=1)
    image[y0:y1, x0:x1] = acc.reshape(y1 - y0, x1 - x0, 3)
    trans[y0:y1, x0:x1] = T.reshape(y1 - y0, x1 - x0)


def alpha_blend(pairs: TilePairs, proj: ProjectedBatch, grid: TileGrid, *, workers: int = 1,
                collect_kpc: bool = False) -> BlendResult:
    """Composite sorted pairs front to back, tile by tile, onto a black background.

    Per pixel and pair: ``alpha = min(0.99, opacity * exp(-d^T conic d / 2))`` with
    ``d`` measured from the pixel center; samples under 1/255 are skipped and a
    pixel stops once its transmittance drops below 1e-4. Each tile is owned by
    one worker, so the image does not depend on ``workers``.
    """
    image = np.zeros((grid.height, grid.width, 3))
    trans = np.ones((grid.height, grid.width))
    kpc = np.zeros(len(pairs)) if collect_kpc else None
    if len(pairs):
        tiles = pairs.tile
        present = np.flatnonzero(np.r_[True, tiles[1:] != tiles[:-1]])
        bounds = np.r_[present, len(tiles)]
        jobs = [(int(tiles[present[i]]), int(bounds[i]), int(bounds[i + 1])) for i in range(len(present))]

        def run(a, b):
            for tile, lo, hi in jobs[a:b]:
                _blend_tile(tile, lo, hi, pairs, proj, grid, image, trans, kpc)

        chunks = split_ranges(len(jobs), workers)
        if workers <= 1 or len(chunks) <= 1:
            for a, b in chunks:
                run(a, b)
        else:
            for f in [executor(workers).submit(run, a, b) for a, b in chunks]:
                f.result()
    return BlendResult(image.astype(np.float32), trans, kpc)


# -- full pipeline ---------------------------------------------------------------


@dataclass
class RenderStats:
    n_pairs: int = 0
    n_selected: int = 0
    n_drawn: int = 0
    t_calcu: float = 0.0  # seconds
    t_synch: float = 0.0
    t_prepr: float = 0.0
    t_sort: float = 0.0
    t_alpha: float = 0.0
    barriers: int = 0
    passes: int = 0

    @property
    def t_total(self) -> float:
        return self.t_calcu + self.t_synch + self.t_prepr + self.t_sort + self.t_alpha


@dataclass
class RenderOutput:
    image: np.ndarray  # (H, W, 3) float32
    stats: RenderStats
    pairs: TilePairs = field(repr=False)
    proj: ProjectedBatch = field(repr=False)
    filter_result: FilterResult | None = field(default=None, repr=False)
    kpc: np.ndarray | None = field(default=None, repr=False)
    transmittance: np.ndarray | None = field(default=None, repr=False)


def rasterize(proj: ProjectedBatch, grid: TileGrid, mode: ShrinkMode = THREE_SIGMA, *, workers: int = 1,
              collect_kpc: bool = False, stats: RenderStats | None = None) -> RenderOutput:
    """Everything after projection: extents, binning, sorting and blending."""
    stats = stats or RenderStats()
    t0 = time.perf_counter_ns()
    radii = effective_radius(proj, mode)
    pairs = bin_to_tiles(proj, radii, grid)
    t1 = time.perf_counter_ns()
    pairs = sort_pairs(pairs)
    t2 = time.perf_counter_ns()
    blend = alpha_blend(pairs, proj, grid, workers=workers, collect_kpc=collect_kpc)
    t3 = time.perf_counter_ns()
    stats.t_prepr += (t1 - t0) * 1e-9
    stats.t_sort = (t2 - t1) * 1e-9
    stats.t_alpha = (t3 - t2) * 1e-9
    stats.n_pairs = len(pairs)
    stats.n_drawn = len(proj)
    return RenderOutput(blend.image, stats, pairs, proj, kpc=blend.kpc, transmittance=blend.transmittance)


def render(tree: LoDTree, cam: Camera, config: FilterConfig = FilterConfig(), mode: ShrinkMode = THREE_SIGMA,
           *, filter_kind: str = "parallel", collect_kpc: bool = False) -> RenderOutput:
    """Filter the LoD tree, project the selection and rasterize it."""
    fres = run_filter(filter_kind, tree, cam, config)
    stats = RenderStats(
        n_selected=len(fres.selected),
        t_calcu=fres.calc_time,
        t_synch=fres.sync_time,
        barriers=fres.barriers,
        passes=fres.passes,
    )
    t0 = time.perf_counter_ns()
    proj = project_batch(tree, cam, fres.selected)
    stats.t_prepr = (time.perf_counter_ns() - t0) * 1e-9
    out = rasterize(proj, TileGrid.for_camera(cam), mode, workers=config.workers, collect_kpc=collect_kpc,
                    stats=stats)
    out.filter_result = fres
    return out

