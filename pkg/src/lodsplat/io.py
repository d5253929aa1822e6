"""Scene files (binary ``LDGS`` and JSON), camera JSON and PPM images."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .scene import ROOT, Camera, LoDTree, validate_tree

MAGIC = b"LDGS"
VERSION = 1
_HEADER = struct.Struct("<4sIIIf")


class SceneFormatError(ValueError):
    """Raised for malformed or invalid scene files."""


def _binary_layout(n: int, n_levels: int):
    return [
        ("means", "<f4", (n, 3)),
        ("scales", "<f4", (n, 3)),
        ("quats", "<f4", (n, 4)),
        ("opacity", "<f4", (n,)),
        ("colors", "<f4", (n, 3)),
        ("parents", "<u4", (n,)),
        ("leaf", "u1", (n,)),
        ("level_offsets", "<u4", (n_levels + 1,)),
    ]


def scene_to_bytes(tree: LoDTree) -> bytes:
    n, n_levels = len(tree), tree.n_levels
    parts = [_HEADER.pack(MAGIC, VERSION, n, n_levels, np.float32(tree.shrink_factor))]
    for name, dtype, shape in _binary_layout(n, n_levels):
        parts.append(np.ascontiguousarray(getattr(tree, name), dtype=dtype).reshape(shape).tobytes())
    return b"".join(parts)


def scene_from_bytes(data: bytes) -> LoDTree:
    if len(data) < _HEADER.size:
        raise SceneFormatError("truncated header")
    magic, version, n, n_levels, gamma = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise SceneFormatError("bad magic")
    if version != VERSION:
        raise SceneFormatError(f"unsupported version {version}")
    pos = _HEADER.size
    arrays = {}
    for name, dtype, shape in _binary_layout(n, n_levels):
        count = int(np.prod(shape))
        nbytes = count * np.dtype(dtype).itemsize
        if pos + nbytes > len(data):
            raise SceneFormatError(f"truncated array '{name}'")
        arrays[name] = np.frombuffer(data, dtype=dtype, count=count, offset=pos).reshape(shape)
        pos += nbytes
    if pos != len(data):
        raise SceneFormatError(f"{len(data) - pos} trailing bytes")
    arrays["leaf"] = arrays["leaf"].astype(bool)
    return LoDTree(**arrays, shrink_factor=gamma)


def scene_to_json(tree: LoDTree) -> dict:
    """Struct-of-arrays JSON form; ``parents`` uses ``null`` for ROOT."""
    return {
        "magic": MAGIC.decode(),
        "version": VERSION,
        "shrink_factor": float(tree.shrink_factor),
        "means": tree.means.tolist(),
        "scales": tree.scales.tolist(),
        "quats": tree.quats.tolist(),
        "opacity": tree.opacity.tolist(),
        "colors": tree.colors.tolist(),
        "parents": [None if p == ROOT else int(p) for p in tree.parents],
        "leaf": tree.leaf.tolist(),
        "level_offsets": tree.level_offsets.tolist(),
    }


def scene_from_json(doc: dict) -> LoDTree:
    if doc.get("magic", MAGIC.decode()) != MAGIC.decode():
        raise SceneFormatError("bad magic")
    if doc.get("version", VERSION) != VERSION:
        raise SceneFormatError(f"unsupported version {doc.get('version')}")
    try:
        n = len(doc["opacity"])
        parents = [int(ROOT) if (p is None or p < 0) else int(p) for p in doc["parents"]]
        return LoDTree(
            means=np.asarray(doc["means"], dtype=np.float32).reshape(n, 3),
            scales=np.asarray(doc["scales"], dtype=np.float32).reshape(n, 3),
            quats=np.asarray(doc["quats"], dtype=np.float32).reshape(n, 4),
            opacity=np.asarray(doc["opacity"], dtype=np.float32),
            colors=np.asarray(doc["colors"], dtype=np.float32).reshape(n, 3),
            parents=np.asarray(parents, dtype=np.uint32),
            leaf=np.asarray(doc["leaf"], dtype=bool),
            level_offsets=np.asarray(doc.get("level_offsets", [0, n]), dtype=np.uint32),
            shrink_factor=doc.get("shrink_factor", 0.5),
        )
    except KeyError as exc:
        raise SceneFormatError(f"missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise SceneFormatError(f"malformed field: {exc}") from None


def save_scene(tree: LoDTree, path) -> None:
    """Write ``tree``; ``.json`` paths get the text form, everything else the binary form."""
    problems = validate_tree(tree)
    if problems:
        raise SceneFormatError(f"refusing to save invalid tree: {problems[0]} (+{len(problems) - 1} more)")
    path = Path(path)
    if path.suffix.lower() == ".json":
        path.write_text(json.dumps(scene_to_json(tree)))
    else:
        path.write_bytes(scene_to_bytes(tree))


def load_scene(path) -> LoDTree:
    path = Path(path)
    data = path.read_bytes()
    if data[:4] == MAGIC:
        tree = scene_from_bytes(data)
    elif data.lstrip()[:1] == b"{":
        try:
            doc = json.loads(data)
        except json.JSONDecodeError as exc:
            raise SceneFormatError(f"invalid JSON: {exc}") from None
        tree = scene_from_json(doc)
    else:
        raise SceneFormatError("bad magic")
    problems = validate_tree(tree)
    if problems:
        raise SceneFormatError(f"validation failed: {problems[0]} (+{len(problems) - 1} more)")
    return tree


# -- cameras -----------------------------------------------------------------


def camera_from_dict(d: dict) -> Camera:
    """Explicit intrinsics/extrinsics, or a look-at form with ``eye``/``target``/``up``."""
    width, height = int(d["width"]), int(d["height"])
    if "eye" in d:
        return Camera.look_at(
            d["eye"], d["target"], d.get("up", (0.0, 0.0, 1.0)),
            width=width, height=height, fx=d.get("fx"), fy=d.get("fy"),
            cx=d.get("cx"), cy=d.get("cy"),
            near=float(d.get("near", 0.01)), far=float(d.get("far", 1000.0)),
        )
    fx = float(d["fx"])
    return Camera(
        width=width,
        height=height,
        fx=fx,
        fy=float(d.get("fy", fx)),
        cx=float(d.get("cx", width / 2.0)),
        cy=float(d.get("cy", height / 2.0)),
        rotation=np.asarray(d.get("rotation", np.eye(3)), dtype=np.float64),
        translation=np.asarray(d.get("translation", np.zeros(3)), dtype=np.float64),
        near=float(d.get("near", 0.01)),
        far=float(d.get("far", 1000.0)),
    )


def camera_to_dict(cam: Camera) -> dict:
    return {
        "width": cam.width,
        "height": cam.height,
        "fx": cam.fx,
        "fy": cam.fy,
        "cx": cam.cx,
        "cy": cam.cy,
        "rotation": cam.rotation.tolist(),
        "translation": cam.translation.tolist(),
        "near": cam.near,
        "far": cam.far,
    }


# -- images ------------------------------------------------------------------


def to_8bit(image: np.ndarray) -> np.ndarray:
    """Quantize [0, 1] floats to uint8, rounding half up."""
    x = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return np.floor(x * 255.0 + 0.5).astype(np.uint8)


def write_ppm(path, image: np.ndarray) -> None:
    """Binary P6, maxval 255."""
    img = to_8bit(image)
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(img[..., :3]).tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a P6 file back as float32 in [0, 1]."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PPM header")
        tokens.append(data[start:pos])
    pos += 1
    if tokens[0] != b"P6":
        raise ValueError("not a binary PPM (P6)")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError("only maxval 255 is supported")
    raw = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos)
    return (raw.reshape(h, w, 3).astype(np.float32) / np.float32(255.0))
