"""Camera paths (keyframes with per-segment sample counts) and view lists, read from JSON."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from .io import camera_from_dict, camera_to_dict
from .scene import Camera


@dataclass(frozen=True)
class CameraPath:
    """Keyframes plus how many frames to sample on each segment.

    Segment ``i`` contributes ``samples[i]`` frames starting at keyframe ``i``
    (``t = k / samples[i]``); the last keyframe closes the path, so a path has
    ``sum(samples) + 1`` frames. Translation is interpolated linearly, rotation
    by slerp. Without ``samples`` every keyframe is exactly one frame.
    """

    keyframes: tuple[Camera, ...]
    samples: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "keyframes", tuple(self.keyframes))
        if not self.keyframes:
            raise ValueError("a camera path needs at least one keyframe")
        sizes = {(k.width, k.height) for k in self.keyframes}
        if len(sizes) != 1:
            raise ValueError(f"keyframes disagree on image size: {sorted(sizes)}")
        if self.samples is not None:
            samples = tuple(int(s) for s in self.samples)
            if len(samples) != len(self.keyframes) - 1:
                raise ValueError(f"samples needs {len(self.keyframes) - 1} entries, got {len(samples)}")
            if any(s < 1 for s in samples):
                raise ValueError("every segment needs at least one sample")
            object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        if self.samples is None:
            return len(self.keyframes)
        return sum(self.samples) + 1

    def frames(self) -> list[Camera]:
        if self.samples is None:
            return list(self.keyframes)
        out = []
        for a, b, n in zip(self.keyframes, self.keyframes[1:], self.samples):
            out.extend(interpolate(a, b, np.arange(n) / n))
        out.append(self.keyframes[-1])
        return out

    def to_json(self) -> dict:
        doc = {"keyframes": [camera_to_dict(k) for k in self.keyframes]}
        if self.samples is not None:
            doc["samples"] = list(self.samples)
        return doc

    @classmethod
    def from_json(cls, doc) -> CameraPath:
        if isinstance(doc, list):
            return cls(tuple(camera_from_dict(d) for d in doc))
        keys = doc.get("keyframes", doc.get("views"))
        if keys is None:
            raise ValueError("camera path needs a 'keyframes' list")
        samples = doc.get("samples")
        if isinstance(samples, int):
            samples = [samples] * (len(keys) - 1)
        return cls(tuple(camera_from_dict(d) for d in keys), samples)


def interpolate(a: Camera, b: Camera, ts: Sequence[float]) -> list[Camera]:
    """Cameras between ``a`` (t=0) and ``b`` (t=1)."""
    ts = np.asarray(ts, dtype=np.float64)
    slerp = Slerp([0.0, 1.0], Rotation.from_matrix(np.stack([a.rotation, b.rotation])))
    rots = slerp(ts).as_matrix()
    out = []
    for t, rot in zip(ts, rots):
        if t == 0.0:
            out.append(a)
            continue

        def lerp(x, y):
            return (1.0 - t) * x + t * y

        out.append(Camera(
            width=a.width, height=a.height,
            fx=lerp(a.fx, b.fx), fy=lerp(a.fy, b.fy), cx=lerp(a.cx, b.cx), cy=lerp(a.cy, b.cy),
            rotation=rot, translation=lerp(a.translation, b.translation),
            near=lerp(a.near, b.near), far=lerp(a.far, b.far),
        ))
    return out


def _read_json(source):
    if isinstance(source, (str, Path)):
        return json.loads(Path(source).read_text())
    return source


def load_path(source) -> CameraPath:
    """A path from a JSON file or an already parsed document."""
    return CameraPath.from_json(_read_json(source))


def load_views(source) -> list[Camera]:
    """Views as a plain list of cameras, or ``{"views": [...]}``; a keyframe path also works."""
    doc = _read_json(source)
    if isinstance(doc, dict) and "views" in doc and "samples" not in doc:
        return [camera_from_dict(d) for d in doc["views"]]
    return CameraPath.from_json(doc).frames()


def orbit_path(center, radius: float, height: float, n_frames: int, *, width: int = 128, height_px: int = 128,
               fx: float | None = None, start: float = 0.0, sweep: float = np.pi / 2) -> CameraPath:
    """Keyframes on a circular arc looking at ``center``, one frame each."""
    center = np.asarray(center, dtype=np.float64)
    angles = start + sweep * np.arange(n_frames) / max(n_frames - 1, 1)
    cams = tuple(
        Camera.look_at(center + (radius * np.cos(a), radius * np.sin(a), height), center,
                       width=width, height=height_px, fx=fx)
        for a in angles
    )
    return CameraPath(cams)
