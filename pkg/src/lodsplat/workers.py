"""Thread worker pool with barrier accounting.

Every call to :meth:`PassRunner.run` is one data-parallel pass followed by a
full barrier. The runner records how much of each pass was spent computing
(the slowest worker) versus launching and waiting.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence


@lru_cache(maxsize=None)
def executor(workers: int) -> ThreadPoolExecutor:
    return ThreadPoolExecutor(max_workers=workers, thread_name_prefix=f"lodsplat-w{workers}")


def split_ranges(n: int, parts: int) -> list[tuple[int, int]]:
    """Split ``range(n)`` into at most ``parts`` contiguous, non-empty, ordered chunks."""
    parts = max(1, min(parts, n))
    bounds = [n * i // parts for i in range(parts + 1)]
    return [(bounds[i], bounds[i + 1]) for i in range(parts) if bounds[i + 1] > bounds[i]]


@dataclass
class PassRunner:
    workers: int = 1
    passes: int = 0
    barriers: int = 0
    calc_ns: int = 0
    sync_ns: int = 0

    def run(self, fn: Callable[[int, int], object], n: int) -> list:
        """Apply ``fn(lo, hi)`` to contiguous chunks of ``range(n)``; results come back in chunk order."""
        ranges = split_ranges(n, self.workers)
        t0 = time.perf_counter_ns()
        if self.workers == 1 or len(ranges) <= 1:
            timed = [_timed(fn, r) for r in ranges]
        else:
            futures = [executor(self.workers).submit(_timed, fn, r) for r in ranges]
            timed = [f.result() for f in futures]
        wall = time.perf_counter_ns() - t0
        busy = max((t for _, t in timed), default=0)
        self.calc_ns += busy
        self.sync_ns += max(wall - busy, 0)
        self.passes += 1
        self.barriers += 1
        return [res for res, _ in timed]

    def add_calc(self, ns: int) -> None:
        self.calc_ns += ns


def _timed(fn, r: Sequence[int]):
    t0 = time.perf_counter_ns()
    out = fn(r[0], r[1])
    return out, time.perf_counter_ns() - t0
