"""Slow scalar re-implementations used as test oracles."""

from __future__ import annotations

import math

import numpy as np


def blend_pixelwise(pairs, proj, width, height, tile=16):
    """Walk every pixel's tile list front to back in plain Python.

    Returns ``(image, transmittance, kpc)`` with ``kpc`` aligned to ``pairs``.
    """
    image = np.zeros((height, width, 3))
    trans = np.ones((height, width))
    kpc = np.zeros(len(pairs))
    tiles_x = -(-width // tile)
    by_tile: dict[int, list[int]] = {}
    for k, t in enumerate(pairs.tile.tolist()):
        by_tile.setdefault(t, []).append(k)
    for t, ks in by_tile.items():
        ty, tx = divmod(t, tiles_x)
        for y in range(ty * tile, min((ty + 1) * tile, height)):
            for x in range(tx * tile, min((tx + 1) * tile, width)):
                T = 1.0
                c = [0.0, 0.0, 0.0]
                for k in ks:
                    g = int(pairs.gaussian[k])
                    dx = x + 0.5 - proj.mean2d[g, 0]
                    dy = y + 0.5 - proj.mean2d[g, 1]
                    a, b, cc = proj.conic[g]
                    power = -0.5 * (a * dx * dx + cc * dy * dy) - b * dx * dy
                    alpha = min(0.99, proj.opacity[g] * math.exp(power))
                    if alpha < 1.0 / 255.0:
                        continue
                    w = alpha * T
                    for ch in range(3):
                        c[ch] += proj.color[g, ch] * w
                    kpc[k] += w
                    T *= 1.0 - alpha
                    if T < 1e-4:
                        break
                image[y, x] = c
                trans[y, x] = T
    return image, trans, kpc


def pair_count(mean2d, radii, width, height, tile=16):
    """Number of (Gaussian, tile) pairs, one Gaussian at a time with integer tile intervals."""
    total = 0
    for (mx, my), r in zip(np.asarray(mean2d).tolist(), np.asarray(radii).tolist()):
        if not r > 0:
            continue
        x0, x1 = max(mx - r, 0.0), min(mx + r, float(width))
        y0, y1 = max(my - r, 0.0), min(my + r, float(height))
        if x1 <= x0 or y1 <= y0:
            continue
        nx = math.ceil(x1 / tile) - math.floor(x0 / tile)
        ny = math.ceil(y1 / tile) - math.floor(y0 / tile)
        total += nx * ny
    return total
