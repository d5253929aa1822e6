"""Redundancy metrics (KPC, GTC, adaptive shrink threshold) and image quality metrics."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.ndimage import correlate1d

from .lod_filter import FilterConfig
from .raster import THREE_SIGMA, RenderOutput, ShrinkMode, render
from .scene import Camera, LoDTree

DEFAULT_LAMBDA_G = 0.2
REDUNDANT_KPC = 0.01
KPC_BIN_EDGES = (0.0, 0.01, 0.05, 0.2, 1.0, math.inf)


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class PairContributions:
    """KPC of every Gaussian-tile pair of one view, in sorted pair order."""

    tile: np.ndarray
    gaussian: np.ndarray
    depth: np.ndarray
    kpc: np.ndarray

    def __len__(self) -> int:
        return len(self.kpc)


@dataclass(frozen=True)
class TileStats:
    """Per-tile GTC for every tile with at least one pair."""

    tile: np.ndarray
    n_gs: np.ndarray
    gtc: np.ndarray

    def __len__(self) -> int:
        return len(self.tile)


def tile_stats(tiles, kpc) -> TileStats:
    """Mean KPC over each tile's pairs."""
    tiles = np.asarray(tiles, dtype=np.int64)
    kpc = np.asarray(kpc, dtype=np.float64)
    ids, inverse, counts = np.unique(tiles, return_inverse=True, return_counts=True)
    sums = np.zeros(len(ids))
    np.add.at(sums, inverse, kpc)
    return TileStats(ids, counts, sums / np.maximum(counts, 1))


def view_gtc(stats: TileStats) -> float:
    """Average tile GTC over the tiles that have pairs; NaN for an empty view."""
    return float(np.mean(stats.gtc)) if len(stats) else math.nan


def shrink_threshold(per_view: Sequence[float], lambda_g: float = DEFAULT_LAMBDA_G) -> tuple[float, float]:
    """``(scene_gtc, tau)`` with ``scene_gtc`` the mean of the per-view values and ``tau = lambda_g / scene_gtc``."""
    if not lambda_g > 0:
        raise ValueError("lambda_g must be > 0")
    if len(per_view) == 0:
        raise CalibrationError("no view produced any Gaussian-tile pairs")
    scene = float(np.mean(np.asarray(per_view, dtype=np.float64)))
    if not scene > 0:
        raise CalibrationError(f"scene GTC is {scene}; cannot derive a threshold")
    return scene, lambda_g / scene


@dataclass(frozen=True)
class RedundancyHistogram:
    edges: tuple = KPC_BIN_EDGES
    counts: tuple = (0, 0, 0, 0, 0)

    @property
    def n_low(self) -> int:
        return self.counts[0]

    def __add__(self, other: RedundancyHistogram) -> RedundancyHistogram:
        return RedundancyHistogram(self.edges, tuple(a + b for a, b in zip(self.counts, other.counts)))

    def to_json(self) -> dict:
        return {
            "edges": [e if math.isfinite(e) else "inf" for e in self.edges],
            "counts": list(self.counts),
            "n_low": self.n_low,
        }


def redundancy_histogram(kpc) -> RedundancyHistogram:
    """Pair counts in KPC bins [0,.01) [.01,.05) [.05,.2) [.2,1) [1,inf)."""
    kpc = np.asarray(kpc, dtype=np.float64).ravel()
    idx = np.searchsorted(np.asarray(KPC_BIN_EDGES[1:-1]), kpc, side="right")
    return RedundancyHistogram(KPC_BIN_EDGES, tuple(int(c) for c in np.bincount(idx, minlength=5)))


def count_below(kpc, threshold: float) -> int:
    return int(np.count_nonzero(np.asarray(kpc) < threshold))


@dataclass
class InstrumentedView:
    output: RenderOutput
    contributions: PairContributions
    tiles: TileStats
    gtc: float  # view-level GTC, NaN if the view has no pairs


def instrumented_render(tree: LoDTree, cam: Camera, config: FilterConfig = FilterConfig(),
                        mode: ShrinkMode = THREE_SIGMA, *, filter_kind: str = "parallel") -> InstrumentedView:
    """Render while recording each pair's KPC: the sum over the tile's pixels of alpha * T.

    Calibration uses the default unshrunk ``3sigma`` extents; other modes are
    accepted so the KPC distribution after shrinking can be measured the same way.
    """
    out = render(tree, cam, config, mode, filter_kind=filter_kind, collect_kpc=True)
    contrib = PairContributions(out.pairs.tile, out.proj.node[out.pairs.gaussian], out.pairs.depth, out.kpc)
    stats = tile_stats(contrib.tile, contrib.kpc)
    return InstrumentedView(out, contrib, stats, view_gtc(stats))


@dataclass
class CalibrationReport:
    per_view: list[float]
    scene_mean: float
    lambda_g: float
    tau: float
    n_views: int
    histogram: RedundancyHistogram = field(default_factory=RedundancyHistogram)
    skipped_views: list[int] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "views": self.n_views,
            "per_view_gtc": self.per_view,
            "scene_gtc": self.scene_mean,
            "lambda_g": self.lambda_g,
            "tau": self.tau,
            "histogram": self.histogram.to_json(),
            "skipped_views": self.skipped_views,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, doc: dict) -> CalibrationReport:
        hist = doc.get("histogram") or {}
        edges = tuple(math.inf if e == "inf" else float(e) for e in hist.get("edges", KPC_BIN_EDGES))
        return cls(
            per_view=[float(v) for v in doc["per_view_gtc"]],
            scene_mean=float(doc["scene_gtc"]),
            lambda_g=float(doc["lambda_g"]),
            tau=float(doc["tau"]),
            n_views=int(doc["views"]),
            histogram=RedundancyHistogram(edges, tuple(hist.get("counts", (0,) * 5))),
            skipped_views=list(doc.get("skipped_views", [])),
        )


def calibrate(tree: LoDTree, views: Sequence[Camera], lambda_g: float = DEFAULT_LAMBDA_G,
              config: FilterConfig = FilterConfig()) -> CalibrationReport:
    """Pre-render every view unshrunk and turn the mean view GTC into a shrink threshold.

    Views without any pairs have no GTC; they are skipped and listed in the report.
    """
    if not lambda_g > 0:
        raise ValueError("lambda_g must be > 0")
    if len(views) == 0:
        raise ValueError("calibration needs at least one view")
    per_view, skipped = [], []
    hist = RedundancyHistogram()
    for i, cam in enumerate(views):
        view = instrumented_render(tree, cam, config, THREE_SIGMA)
        hist = hist + redundancy_histogram(view.contributions.kpc)
        if math.isnan(view.gtc):
            skipped.append(i)
        else:
            per_view.append(view.gtc)
    scene, tau = shrink_threshold(per_view, lambda_g)
    return CalibrationReport(per_view, scene, float(lambda_g), tau, len(per_view), hist, skipped)


# -- image quality -----------------------------------------------------------------


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """PSNR in dB for images in [0, 1]; ``inf`` for identical images."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-(x * x) / (2 * sigma * sigma))
    return w / w.sum()


def ssim(a, b, *, data_range: float = 1.0, k1: float = 0.01, k2: float = 0.03) -> float:
    """Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), averaged over channels.

    Only window positions fully inside the image are scored.
    """
    a, b = _check_pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    h, w = a.shape[:2]
    if h < 11 or w < 11:
        raise ValueError("SSIM needs images of at least 11x11 pixels")
    win = _gaussian_window()
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2

    def blur(x):
        return correlate1d(correlate1d(x, win, axis=0, mode="reflect"), win, axis=1, mode="reflect")[5:-5, 5:-5]

    scores = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mx, my = blur(x), blur(y)
        vx = blur(x * x) - mx * mx
        vy = blur(y * y) - my * my
        cxy = blur(x * y) - mx * my
        s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        scores.append(s.mean())
    return float(np.mean(scores))
