"""Core scene types: Gaussian nodes, the level-major LoD tree, and the pinhole camera."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

ROOT = np.uint32(0xFFFFFFFF)
"""Parent sentinel for level-0 nodes (maximum value of the u32 index type)."""

QUAT_TOL = 1e-6
ROTATION_TOL = 1e-6


def quat_to_rotmat(q) -> np.ndarray:
    """Rotation matrices for (w, x, y, z) quaternions; accepts shape (4,) or (N, 4)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def quat_multiply(a, b) -> np.ndarray:
    """Hamilton product a*b for (w, x, y, z) quaternions."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


@dataclass(frozen=True)
class GaussianNode:
    """One primitive of the LoD tree.

    Covariance is kept factored as rotation * diag(scale**2) * rotation^T.
    """

    mean: tuple[float, float, float]
    scale: tuple[float, float, float]
    rotation: tuple[float, float, float, float]  # (w, x, y, z)
    opacity: float
    color: tuple[float, float, float]
    level: int = 0
    parent: int = int(ROOT)
    leaf: bool = True

    def covariance(self) -> np.ndarray:
        R = quat_to_rotmat(self.rotation)
        s = np.asarray(self.scale, dtype=np.float64)
        return R @ np.diag(s * s) @ R.T


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LoDTree:
    """Level-major struct-of-arrays node arena.

    Nodes in ``level_offsets[i]:level_offsets[i+1]`` all sit at level ``i``.
    Float fields are float32 so that the binary scene format round-trips
    bit-exactly.
    """

    means: np.ndarray  # (N, 3) float32
    scales: np.ndarray  # (N, 3) float32
    quats: np.ndarray  # (N, 4) float32, (w, x, y, z)
    opacity: np.ndarray  # (N,) float32
    colors: np.ndarray  # (N, 3) float32
    parents: np.ndarray  # (N,) uint32, ROOT for level 0
    leaf: np.ndarray  # (N,) bool
    level_offsets: np.ndarray  # (n_levels + 1,) uint32
    shrink_factor: float = 0.5

    def __post_init__(self):
        conv = {
            "means": np.float32,
            "scales": np.float32,
            "quats": np.float32,
            "opacity": np.float32,
            "colors": np.float32,
            "parents": np.uint32,
            "leaf": np.bool_,
            "level_offsets": np.uint32,
        }
        for name, dtype in conv.items():
            arr = np.array(getattr(self, name), dtype=dtype, copy=True)
            object.__setattr__(self, name, _frozen(arr))
        object.__setattr__(self, "shrink_factor", float(np.float32(self.shrink_factor)))
        n = len(self.opacity)
        shapes = {
            "means": (n, 3),
            "scales": (n, 3),
            "quats": (n, 4),
            "colors": (n, 3),
            "parents": (n,),
            "leaf": (n,),
        }
        for name, shape in shapes.items():
            got = getattr(self, name).shape
            if got != shape:
                if n == 0 and got == (0,):
                    object.__setattr__(self, name, _frozen(np.zeros(shape, dtype=conv[name])))
                    continue
                raise ValueError(f"{name} has shape {got}, expected {shape}")
        if self.level_offsets.ndim != 1 or len(self.level_offsets) < 1:
            raise ValueError("level_offsets must be a non-empty 1-D array")

    def __len__(self) -> int:
        return len(self.opacity)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LoDTree):
            return NotImplemented
        return (
            np.float32(self.shrink_factor).tobytes() == np.float32(other.shrink_factor).tobytes()
            and all(
                getattr(self, f).dtype == getattr(other, f).dtype
                and getattr(self, f).shape == getattr(other, f).shape
                and getattr(self, f).tobytes() == getattr(other, f).tobytes()
                for f in ARRAY_FIELDS
            )
        )

    __hash__ = None

    @property
    def n_levels(self) -> int:
        return len(self.level_offsets) - 1

    @property
    def depth(self) -> int:
        """Maximum level index L."""
        return self.n_levels - 1

    def level_range(self, level: int) -> range:
        return range(int(self.level_offsets[level]), int(self.level_offsets[level + 1]))

    @cached_property
    def levels(self) -> np.ndarray:
        """Per-node level derived from ``level_offsets``; nodes outside any range get -1."""
        lv = np.full(len(self), -1, dtype=np.int64)
        offs = self.level_offsets.astype(np.int64)
        for i in range(self.n_levels):
            lo, hi = offs[i], offs[i + 1]
            if 0 <= lo <= hi <= len(self):
                lv[lo:hi] = i
        return _frozen(lv)

    @cached_property
    def parent_index(self) -> np.ndarray:
        """Parents as int64 with -1 for roots; convenient for gathers."""
        p = self.parents.astype(np.int64)
        p[self.parents == ROOT] = -1
        return _frozen(p)

    @cached_property
    def children_csr(self) -> tuple[np.ndarray, np.ndarray]:
        """(offsets, child indices): children of node i are ``idx[offsets[i]:offsets[i+1]]``."""
        p = self.parent_index
        has_parent = np.flatnonzero(p >= 0)
        order = has_parent[np.argsort(p[has_parent], kind="stable")]
        counts = np.bincount(p[has_parent], minlength=len(self))
        offsets = np.zeros(len(self) + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        return _frozen(offsets), _frozen(order.astype(np.int64))

    @cached_property
    def cov3d(self) -> np.ndarray:
        """World-space covariance per node as (N, 3, 3) float64."""
        R = quat_to_rotmat(self.quats)
        s2 = self.scales.astype(np.float64) ** 2
        return _frozen(np.einsum("nij,nj,nkj->nik", R, s2, R))

    @cached_property
    def means_t(self) -> np.ndarray:
        """Means as contiguous (3, N) float64 rows."""
        return _frozen(np.ascontiguousarray(self.means.T, dtype=np.float64))

    @cached_property
    def cov6(self) -> np.ndarray:
        """Upper triangle (xx, xy, xz, yy, yz, zz) of the world covariance as (6, N) rows."""
        c = self.cov3d
        rows = [c[:, i, j] for i, j in COV6_INDEX]
        return _frozen(np.ascontiguousarray(np.stack(rows)) if len(self) else np.zeros((6, 0)))

    @cached_property
    def bound_radius(self) -> np.ndarray:
        """Bounding-sphere radius 3 * max(scale) per node (float64)."""
        return _frozen(3.0 * self.scales.astype(np.float64).max(axis=1) if len(self) else np.zeros(0))

    def node(self, i: int) -> GaussianNode:
        return GaussianNode(
            mean=tuple(float(v) for v in self.means[i]),
            scale=tuple(float(v) for v in self.scales[i]),
            rotation=tuple(float(v) for v in self.quats[i]),
            opacity=float(self.opacity[i]),
            color=tuple(float(v) for v in self.colors[i]),
            level=int(self.levels[i]),
            parent=int(self.parents[i]),
            leaf=bool(self.leaf[i]),
        )

    def nodes(self) -> list[GaussianNode]:
        return [self.node(i) for i in range(len(self))]

    def replace(self, **changes) -> LoDTree:
        """Copy with some arrays swapped out (used by tests to inject corruption)."""
        kw = {f: getattr(self, f) for f in ARRAY_FIELDS}
        kw["shrink_factor"] = self.shrink_factor
        kw.update(changes)
        return LoDTree(**kw)

    @classmethod
    def from_nodes(cls, nodes: Sequence[GaussianNode], shrink_factor: float = 0.5) -> LoDTree:
        """Assemble a tree from nodes already listed in level-major order."""
        n = len(nodes)
        levels = [nd.level for nd in nodes]
        n_levels = (max(levels) + 1) if n else 1
        counts = np.bincount(np.asarray(levels, dtype=np.int64), minlength=n_levels) if n else np.zeros(1, np.int64)
        offsets = np.zeros(n_levels + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        return cls(
            means=np.array([nd.mean for nd in nodes], dtype=np.float32).reshape(n, 3),
            scales=np.array([nd.scale for nd in nodes], dtype=np.float32).reshape(n, 3),
            quats=np.array([nd.rotation for nd in nodes], dtype=np.float32).reshape(n, 4),
            opacity=np.array([nd.opacity for nd in nodes], dtype=np.float32),
            colors=np.array([nd.color for nd in nodes], dtype=np.float32).reshape(n, 3),
            parents=np.array([nd.parent for nd in nodes], dtype=np.uint32),
            leaf=np.array([nd.leaf for nd in nodes], dtype=bool),
            level_offsets=offsets,
            shrink_factor=shrink_factor,
        )


COV6_INDEX = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))
ARRAY_FIELDS = ("means", "scales", "quats", "opacity", "colors", "parents", "leaf", "level_offsets")


@dataclass(frozen=True, eq=False)
class Camera:
    """Pinhole camera. Camera space looks down +z with x right and y down."""

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))  # world -> camera
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    near: float = 0.01
    far: float = 1000.0

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen(np.array(self.rotation, dtype=np.float64).reshape(3, 3)))
        object.__setattr__(self, "translation", _frozen(np.array(self.translation, dtype=np.float64).reshape(3)))
        problems = self.validate()
        if problems:
            raise ValueError("invalid camera: " + "; ".join(problems))

    def validate(self) -> list[str]:
        problems = []
        if self.width <= 0 or self.height <= 0:
            problems.append("image size must be positive")
        if not (self.fx > 0 and self.fy > 0):
            problems.append("focal lengths must be positive")
        if not (0 < self.near < self.far):
            problems.append("need 0 < near < far")
        R = self.rotation
        if not np.all(np.isfinite(R)) or np.abs(R @ R.T - np.eye(3)).max() > ROTATION_TOL:
            problems.append("rotation is not orthonormal")
        if not np.all(np.isfinite(self.translation)):
            problems.append("translation is not finite")
        return problems

    @property
    def center(self) -> np.ndarray:
        """Camera position in world space."""
        return -self.rotation.T @ self.translation

    def to_camera(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0), *, width=128, height=128, fx=None, fy=None,
                cx=None, cy=None, near=0.01, far=1000.0) -> Camera:
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        up = np.asarray(up, dtype=np.float64)
        right = np.cross(forward, up)
        if np.linalg.norm(right) < 1e-9:
            # up parallel to view direction: pick any perpendicular
            right = np.cross(forward, [1.0, 0.0, 0.0] if abs(forward[0]) < 0.9 else [0.0, 1.0, 0.0])
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        R = np.stack([right, down, forward])
        fx = float(fx) if fx is not None else float(width)
        return cls(
            width=int(width),
            height=int(height),
            fx=fx,
            fy=float(fy) if fy is not None else fx,
            cx=float(cx) if cx is not None else width / 2.0,
            cy=float(cy) if cy is not None else height / 2.0,
            rotation=R,
            translation=-R @ eye,
            near=near,
            far=far,
        )


# -- validation --------------------------------------------------------------


def validate_node(node: GaussianNode) -> list[str]:
    """Per-node rule violations (no tree context)."""
    out = []
    q = np.asarray(node.rotation, dtype=np.float64)
    if not np.all(np.isfinite(q)) or abs(np.linalg.norm(q) - 1.0) > QUAT_TOL:
        out.append("quaternion norm == 1")
    s = np.asarray(node.scale, dtype=np.float64)
    if not np.all(s > 0) or not np.all(np.isfinite(s)):
        out.append("scale > 0")
    if not (0.0 < node.opacity <= 1.0):
        out.append("0 < opacity <= 1")
    c = np.asarray(node.color, dtype=np.float64)
    if not np.all((c >= 0.0) & (c <= 1.0)):
        out.append("color in [0,1]")
    if not np.all(np.isfinite(node.mean)):
        out.append("mean finite")
    return out


def validate_tree(tree: LoDTree) -> list[str]:
    """Every violated node/tree invariant, formatted as ``"node <i>: <rule>"`` or ``"tree: <rule>"``.

    An empty list means the tree is well formed.
    """
    v: list[str] = []
    n = len(tree)
    offs = tree.level_offsets.astype(np.int64)
    if offs[0] != 0 or offs[-1] != n or np.any(np.diff(offs) < 0):
        v.append(f"tree: level_offsets must start at 0, end at {n} and be non-decreasing")
        return v
    if not (0.0 < tree.shrink_factor < 1.0):
        v.append("tree: 0 < shrink_factor < 1")

    def flag(mask, rule):
        for i in np.flatnonzero(mask):
            v.append(f"node {i}: {rule}")

    q = tree.quats.astype(np.float64)
    with np.errstate(invalid="ignore"):
        qn = np.linalg.norm(q, axis=1)
        flag(~(np.abs(qn - 1.0) <= QUAT_TOL), "quaternion norm == 1")
        flag(~np.all(tree.scales > 0, axis=1), "scale > 0")
        flag(~((tree.opacity > 0) & (tree.opacity <= 1)), "0 < opacity <= 1")
        flag(~np.all((tree.colors >= 0) & (tree.colors <= 1), axis=1), "color in [0,1]")
        flag(~np.all(np.isfinite(tree.means), axis=1), "mean finite")

    levels = tree.levels
    p = tree.parents
    is_root = p == ROOT
    flag((levels == 0) & ~is_root, "level-0 node must have ROOT parent")
    flag((levels > 0) & is_root, "non-root node must have a parent")
    linked = np.flatnonzero(~is_root)
    bad_range = linked[p[linked].astype(np.int64) >= n]
    flag(np.isin(np.arange(n), bad_range), "parent index in range")
    ok = linked[p[linked].astype(np.int64) < n]
    pl = levels[p[ok].astype(np.int64)]
    flag(np.isin(np.arange(n), ok[pl != levels[ok] - 1]), "parent level == level - 1")

    has_child = np.zeros(n, dtype=bool)
    has_child[p[ok].astype(np.int64)] = True
    flag(tree.leaf & has_child, "leaf node must have no children")
    flag(~tree.leaf & ~has_child, "node without children must be leaf")
    return v
