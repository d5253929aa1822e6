"""Benchmark runs over camera paths: per-frame stage timings, pair counts and quality vs a reference."""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .lod_filter import FilterConfig
from .metrics import REDUNDANT_KPC, RedundancyHistogram, count_below, psnr, redundancy_histogram, ssim
from .raster import THREE_SIGMA, RenderOutput, ShrinkMode, render
from .scene import Camera, LoDTree

log = logging.getLogger(__name__)

FILTER_MODES = ("serial", "parallel")
SHRINK_MODES = ("3sigma", "fixed", "adaptive")
REFERENCE = ("parallel", "3sigma")

COLUMNS = (
    "kind", "frame", "filter_mode", "shrink_mode",
    "T_calcu", "T_synch", "T_prepr", "T_sort", "T_alpha", "T_total",
    "N_P", "N_low", "barriers", "frames", "fps", "psnr", "ssim",
)


def ms(seconds: float) -> float:
    return round(seconds * 1e3, 3)


def parse_matrix(spec: str) -> list[tuple[str, str]]:
    """``"filter=serial,parallel;shrink=3sigma,adaptive"`` to (filter, shrink) combinations.

    A missing axis defaults to ``parallel`` / ``3sigma``.
    """
    axes = {"filter": ["parallel"], "shrink": ["3sigma"]}
    for part in filter(None, (p.strip() for p in spec.split(";"))):
        key, sep, values = part.partition("=")
        key = key.strip()
        if not sep or key not in axes:
            raise ValueError(f"matrix: expected 'filter=...' or 'shrink=...', got {part!r}")
        vals = [v.strip() for v in values.split(",") if v.strip()]
        allowed = FILTER_MODES if key == "filter" else SHRINK_MODES
        bad = [v for v in vals if v not in allowed]
        if bad or not vals:
            raise ValueError(f"matrix: {key} values must be among {allowed}, got {vals}")
        axes[key] = list(dict.fromkeys(vals))
    return list(itertools.product(axes["filter"], axes["shrink"]))


def make_shrink(kind: str, tau: float | None) -> ShrinkMode:
    if kind == "3sigma":
        return THREE_SIGMA
    if kind == "fixed":
        return ShrinkMode.fixed()
    if tau is None:
        raise ValueError("adaptive shrinking needs a calibrated tau")
    return ShrinkMode.adaptive(tau)


def frame_row(frame: int, filter_mode: str, shrink_mode: str, out: RenderOutput) -> dict:
    s = out.stats
    return {
        "kind": "frame",
        "frame": frame,
        "filter_mode": filter_mode,
        "shrink_mode": shrink_mode,
        "T_calcu": ms(s.t_calcu),
        "T_synch": ms(s.t_synch),
        "T_prepr": ms(s.t_prepr),
        "T_sort": ms(s.t_sort),
        "T_alpha": ms(s.t_alpha),
        "T_total": ms(s.t_total),
        "N_P": s.n_pairs,
        "N_low": count_below(out.kpc, REDUNDANT_KPC) if out.kpc is not None else None,
        "barriers": s.barriers,
    }


@dataclass
class BenchReport:
    rows: list[dict] = field(default_factory=list)
    histograms: dict[str, RedundancyHistogram] = field(default_factory=dict)
    tau: float | None = None

    @property
    def frame_rows(self) -> list[dict]:
        return [r for r in self.rows if r["kind"] == "frame"]

    @property
    def aggregates(self) -> list[dict]:
        return [r for r in self.rows if r["kind"] == "aggregate"]

    def to_json(self) -> dict:
        return {
            "columns": list(COLUMNS),
            "rows": [{c: _json_value(r.get(c)) for c in COLUMNS} for r in self.rows],
            "histograms": {k: h.to_json() for k, h in self.histograms.items()},
            "tau": self.tau,
        }

    def dumps_json(self) -> str:
        return json.dumps(self.to_json(), indent=2) + "\n"

    def dumps_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({c: _csv_value(r.get(c)) for c in COLUMNS})
        return buf.getvalue()


def _json_value(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return v


def _csv_value(v):
    if v is None:
        return ""
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return v


def aggregate_row(filter_mode: str, shrink_mode: str, rows: Sequence[dict], seconds: float,
                  quality: Sequence[tuple[float, float]]) -> dict:
    """FPS is frames over cumulative render time; PSNR is the mean over frames (inf only if all are)."""
    n = len(rows)
    p = [q[0] for q in quality]
    s = [q[1] for q in quality if q[1] is not None]
    return {
        "kind": "aggregate",
        "frame": "all",
        "filter_mode": filter_mode,
        "shrink_mode": shrink_mode,
        "T_calcu": round(sum(r["T_calcu"] for r in rows), 3),
        "T_synch": round(sum(r["T_synch"] for r in rows), 3),
        "T_prepr": round(sum(r["T_prepr"] for r in rows), 3),
        "T_sort": round(sum(r["T_sort"] for r in rows), 3),
        "T_alpha": round(sum(r["T_alpha"] for r in rows), 3),
        "T_total": ms(seconds),
        "N_P": float(np.mean([r["N_P"] for r in rows])) if rows else 0.0,
        "N_low": float(np.mean([r["N_low"] for r in rows])) if rows else 0.0,
        "barriers": max((r["barriers"] for r in rows), default=0),
        "frames": n,
        "fps": n / seconds if seconds > 0 else math.inf,
        "psnr": float(np.mean(p)) if p and not all(map(math.isinf, p)) else math.inf,
        "ssim": float(np.mean(s)) if s else None,
    }


def run_bench(tree: LoDTree, frames: Sequence[Camera], combos: Sequence[tuple[str, str]], *,
              tau: float | None = None, tau_r: float = 3.0, workers: int = 1) -> BenchReport:
    """Render every frame under every (filter, shrink) combination.

    Quality is measured against the parallel-filter, unshrunk render of the
    same frame, which is rendered separately if it is not part of the matrix.
    """
    config = FilterConfig(tau_r=tau_r, workers=workers)
    modes = {kind: make_shrink(kind, tau) for kind in {s for _, s in combos}}
    reference = [None] * len(frames)
    report = BenchReport(tau=tau)
    combos = list(combos)
    if REFERENCE in combos:  # render the reference first so quality can be scored on the fly
        combos.remove(REFERENCE)
        combos.insert(0, REFERENCE)
    results = {}
    for filter_mode, shrink_kind in combos:
        rows, quality, total = [], [], 0.0
        hist = RedundancyHistogram()
        for i, cam in enumerate(frames):
            out = render(tree, cam, config, modes[shrink_kind], filter_kind=filter_mode, collect_kpc=True)
            if (filter_mode, shrink_kind) == REFERENCE:
                reference[i] = out.image
            elif reference[i] is None:
                reference[i] = render(tree, cam, config, THREE_SIGMA).image
            rows.append(frame_row(i, filter_mode, shrink_kind, out))
            quality.append((psnr(out.image, reference[i]), _ssim_or_none(out.image, reference[i])))
            total += out.stats.t_total
            hist = hist + redundancy_histogram(out.kpc)
        log.info("%s/%s: %d frames, %.3f ms", filter_mode, shrink_kind, len(frames), total * 1e3)
        agg = aggregate_row(filter_mode, shrink_kind, rows, total, quality)
        results[(filter_mode, shrink_kind)] = (rows, agg, hist)
    ordered = _matrix_order(combos)
    for key in ordered:
        report.rows.extend(results[key][0])
    for key in ordered:
        report.rows.append(results[key][1])
        report.histograms[f"{key[0]}/{key[1]}"] = results[key][2]
    return report


def _matrix_order(combos):
    return sorted(combos, key=lambda c: (FILTER_MODES.index(c[0]), SHRINK_MODES.index(c[1])))


def _ssim_or_none(a, b):
    h, w = a.shape[:2]
    return ssim(a, b) if h >= 11 and w >= 11 else None
