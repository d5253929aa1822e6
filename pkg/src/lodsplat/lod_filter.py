"""Per-frame LoD selection.

A node ``n`` is selected iff it is in the frustum, it either qualifies
(``radius <= tau_r``) or is a leaf, and no ancestor is an internal node that
qualifies. ``Q(n)`` below always includes the frustum test.

Three implementations produce the same set:

* :func:`filter_oracle` evaluates that predicate literally over full ancestor chains.
* :func:`filter_serial` descends level by level with one barrier per level.
* :func:`filter_parallel` runs two flat passes over every node, independent of depth.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .projection import footprint_marks
from .scene import Camera, LoDTree
from .workers import PassRunner

DEFAULT_TAU_R = 3.0


@dataclass(frozen=True)
class FilterConfig:
    tau_r: float = DEFAULT_TAU_R
    workers: int = 1

    def __post_init__(self):
        if not self.tau_r > 0:
            raise ValueError("tau_r must be > 0")
        if int(self.workers) < 1:
            raise ValueError("workers must be >= 1")


@dataclass(frozen=True)
class FilterResult:
    selected: np.ndarray  # strictly increasing node indices
    passes: int
    barriers: int
    calc_time: float  # seconds
    sync_time: float

    @classmethod
    def _from(cls, selected, runner: PassRunner) -> FilterResult:
        return cls(
            selected=np.asarray(selected, dtype=np.int64),
            passes=runner.passes,
            barriers=runner.barriers,
            calc_time=runner.calc_ns * 1e-9,
            sync_time=runner.sync_ns * 1e-9,
        )


def filter_oracle(tree: LoDTree, cam: Camera, config: FilterConfig = FilterConfig()) -> FilterResult:
    """Brute-force reference: every node walks its whole ancestor chain (O(N * L))."""
    runner = PassRunner(1)
    t0 = time.perf_counter_ns()
    inside, radius = footprint_marks(tree, cam, slice(0, len(tree)))
    qualified = inside & (radius <= config.tau_r)
    qualified_internal = qualified & ~tree.leaf
    parent = tree.parent_index
    blocked = np.zeros(len(tree), dtype=bool)
    anc = parent.copy()
    walking = anc >= 0
    while walking.any():
        blocked[walking] |= qualified_internal[anc[walking]]
        anc[walking] = parent[anc[walking]]
        walking = anc >= 0
    selected = np.flatnonzero(inside & (qualified | tree.leaf) & ~blocked)
    runner.add_calc(time.perf_counter_ns() - t0)
    runner.passes = runner.barriers = 1
    return FilterResult._from(selected, runner)


def _expand_children(tree: LoDTree, parents: np.ndarray) -> np.ndarray:
    offsets, kids = tree.children_csr
    starts, ends = offsets[parents], offsets[parents + 1]
    counts = ends - starts
    total = int(counts.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    shift = np.repeat(starts - np.cumsum(counts) + counts, counts)
    return kids[shift + np.arange(total)]


def filter_serial(tree: LoDTree, cam: Camera, config: FilterConfig = FilterConfig()) -> FilterResult:
    """Level-wise descent from the roots, with a barrier after every level.

    For each active node: outside the frustum drops the subtree, qualifying or
    leaf nodes are emitted, everything else activates its children.
    """
    runner = PassRunner(int(config.workers))
    tau = config.tau_r
    leaf = tree.leaf
    active = np.arange(tree.level_offsets[0], tree.level_offsets[1] if tree.n_levels else 0, dtype=np.int64)
    emitted = []
    while len(active):
        level_nodes = active

        def level_pass(lo, hi, nodes=level_nodes):
            sub = nodes[lo:hi]
            inside, radius = footprint_marks(tree, cam, sub)
            q = inside & (radius <= tau)
            is_leaf = leaf[sub]
            return sub[inside & (q | is_leaf)], sub[inside & ~q & ~is_leaf]

        parts = runner.run(level_pass, len(level_nodes))
        t0 = time.perf_counter_ns()
        emitted.extend(e for e, _ in parts)
        expand = np.concatenate([x for _, x in parts])
        active = _expand_children(tree, expand)
        runner.add_calc(time.perf_counter_ns() - t0)
    selected = np.sort(np.concatenate(emitted)) if emitted else np.zeros(0, dtype=np.int64)
    return FilterResult._from(selected, runner)


def filter_parallel(tree: LoDTree, cam: Camera, config: FilterConfig = FilterConfig()) -> FilterResult:
    """Traversal-free selection in exactly two passes over all nodes.

    Pass 1 marks every node (frustum, radius test, candidacy). Pass 2 lets each
    candidate walk its parent chain and drops it if any ancestor is a
    qualifying internal node. Marks are written once per node, and chunks are
    compacted in index order, so the output does not depend on worker count.
    """
    runner = PassRunner(int(config.workers))
    n = len(tree)
    tau = config.tau_r
    leaf = tree.leaf
    parent = tree.parent_index
    candidate = np.zeros(n, dtype=bool)
    qualified_internal = np.zeros(n, dtype=bool)

    def mark(lo, hi):
        inside, radius = footprint_marks(tree, cam, slice(lo, hi))
        q = inside & (radius <= tau)
        candidate[lo:hi] = inside & (q | leaf[lo:hi])
        qualified_internal[lo:hi] = q & ~leaf[lo:hi]

    def ancestor(lo, hi):
        cand = lo + np.flatnonzero(candidate[lo:hi])
        keep = np.ones(len(cand), dtype=bool)
        anc = parent[cand]
        live = np.flatnonzero(anc >= 0)
        while len(live):
            hit = qualified_internal[anc[live]]
            keep[live[hit]] = False
            live = live[~hit]
            anc[live] = parent[anc[live]]
            live = live[anc[live] >= 0]
        return cand[keep]

    runner.run(mark, n)
    parts = runner.run(ancestor, n)
    selected = np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
    return FilterResult._from(selected, runner)


FILTERS = {"oracle": filter_oracle, "serial": filter_serial, "parallel": filter_parallel}


def run_filter(kind: str, tree: LoDTree, cam: Camera, config: FilterConfig) -> FilterResult:
    try:
        fn = FILTERS[kind]
    except KeyError:
        raise ValueError(f"unknown filter {kind!r}; expected one of {sorted(FILTERS)}") from None
    return fn(tree, cam, config)
