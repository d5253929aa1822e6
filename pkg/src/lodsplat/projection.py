"""EWA projection of 3D Gaussians to screen space and conservative frustum tests.

Screen covariance is ``J W Sigma W^T J^T + 0.3 I`` where ``W`` is the camera
rotation and ``J`` the perspective Jacobian at the camera-space mean. The
0.3 px^2 dilation is the usual low-pass term that keeps sub-pixel splats alive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import COV6_INDEX, Camera, GaussianNode, LoDTree

DILATION = 0.3
CULLED = None
"""Returned by :func:`project` for Gaussians that cannot be drawn."""


@dataclass(frozen=True)
class Projected2D:
    mean2d: np.ndarray  # (2,) pixels
    cov2d: np.ndarray  # (2, 2) pixels^2, dilated
    conic: np.ndarray  # (2, 2) inverse of cov2d
    sigma_max: float
    sigma_min: float
    depth: float
    radius: float  # 3 * sigma_max
    node: int = -1


def side_plane_normals(cam: Camera) -> np.ndarray:
    """Inward unit normals (camera space) of the left, right, top and bottom planes.

    All four planes pass through the camera center, so the signed distance of a
    point ``p`` is simply ``normal . p``.
    """
    lx = cam.cx / cam.fx
    rx = (cam.width - cam.cx) / cam.fx
    ty = cam.cy / cam.fy
    by = (cam.height - cam.cy) / cam.fy
    n = np.array(
        [
            [1.0, 0.0, lx],  # x >= -lx * z
            [-1.0, 0.0, rx],  # x <= rx * z
            [0.0, 1.0, ty],
            [0.0, -1.0, by],
        ]
    )
    return n / np.linalg.norm(n, axis=1, keepdims=True)


def sphere_in_frustum(p_cam: np.ndarray, radius, cam: Camera) -> np.ndarray:
    """Sphere/frustum intersection for camera-space centers (..., 3).

    Conservative: a sphere is kept unless it lies entirely on the outer side of
    one of the six planes.
    """
    p_cam = np.asarray(p_cam, dtype=np.float64)
    radius = np.asarray(radius, dtype=np.float64)
    z = p_cam[..., 2]
    ok = (z >= cam.near - radius) & (z <= cam.far + radius)
    d = p_cam @ side_plane_normals(cam).T
    ok &= np.all(d >= -radius[..., None], axis=-1)
    return ok


def in_frustum(node: GaussianNode, cam: Camera) -> bool:
    """Bounding sphere of radius ``3 * max(scale)`` against the view frustum."""
    p = cam.to_camera(node.mean)
    return bool(sphere_in_frustum(p, 3.0 * max(node.scale), cam))


def eig2x2(a, b, c):
    """Closed-form eigenvalues (larger first) of symmetric [[a, b], [b, c]]."""
    a, b, c = (np.asarray(v, dtype=np.float64) for v in (a, b, c))
    mid = 0.5 * (a + c)
    det = a * c - b * b
    disc = np.sqrt(np.maximum(mid * mid - det, 0.0))
    lam1 = mid + disc
    with np.errstate(divide="ignore", invalid="ignore"):
        lam2 = np.where(lam1 > 0, det / lam1, mid - disc)
    return lam1, lam2


def eigvecs2x2(a, b, c):
    """Unit eigenvector for the larger eigenvalue; the other is its perpendicular."""
    lam1, _ = eig2x2(a, b, c)
    a, b, c = (np.asarray(v, dtype=np.float64) for v in (a, b, c))
    # (A - lam1 I) v = 0 -> v ~ (b, lam1 - a) or (lam1 - c, b); pick the better conditioned one
    v1 = np.stack([b, lam1 - a], axis=-1)
    v2 = np.stack([lam1 - c, b], axis=-1)
    use2 = np.linalg.norm(v2, axis=-1) > np.linalg.norm(v1, axis=-1)
    v = np.where(use2[..., None], v2, v1)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    degenerate = norm[..., 0] == 0
    v = np.where(degenerate[..., None], np.array([1.0, 0.0]), v / np.where(norm == 0, 1.0, norm))
    return v


def radius_2d(cov2d) -> float:
    """Pixel radius ``3 * sqrt(lambda_max)`` of a positive-definite 2x2 covariance."""
    cov = np.asarray(cov2d, dtype=np.float64)
    a, b, c = cov[0, 0], 0.5 * (cov[0, 1] + cov[1, 0]), cov[1, 1]
    lam1, lam2 = eig2x2(a, b, c)
    if not (lam1 > 0 and lam2 > 0 and np.isfinite(lam1)):
        raise ValueError("cov2d is not positive definite")
    return float(3.0 * np.sqrt(lam1))


def project(node: GaussianNode, cam: Camera, index: int = -1) -> Projected2D | None:
    """Project one Gaussian, or return ``CULLED``.

    A node is culled when its bounding sphere misses the frustum or its center
    lies in front of the near plane (the perspective Jacobian is undefined there).
    Raises ``ValueError`` if the result is not finite.
    """
    if not in_frustum(node, cam):
        return CULLED
    W = cam.rotation
    x, y, z = cam.to_camera(node.mean)
    if z < cam.near:
        return CULLED
    J = np.array([[cam.fx / z, 0.0, -cam.fx * x / (z * z)], [0.0, cam.fy / z, -cam.fy * y / (z * z)]])
    cov = J @ W @ node.covariance() @ W.T @ J.T + DILATION * np.eye(2)
    cov = 0.5 * (cov + cov.T)
    lam1, lam2 = eig2x2(cov[0, 0], cov[0, 1], cov[1, 1])
    mean2d = np.array([cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy])
    if not (np.all(np.isfinite(cov)) and np.all(np.isfinite(mean2d)) and lam2 > 0):
        raise ValueError("projection produced a non-finite or degenerate footprint")
    det = cov[0, 0] * cov[1, 1] - cov[0, 1] ** 2
    conic = np.array([[cov[1, 1], -cov[0, 1]], [-cov[0, 1], cov[0, 0]]]) / det
    smax = float(np.sqrt(lam1))
    return Projected2D(
        mean2d=mean2d,
        cov2d=cov,
        conic=conic,
        sigma_max=smax,
        sigma_min=float(np.sqrt(lam2)),
        depth=float(z),
        radius=3.0 * smax,
        node=index,
    )


# -- batched paths -------------------------------------------------------------


def _rotation_cov6(W: np.ndarray) -> np.ndarray:
    """6x6 matrix taking world covariance rows (xx, xy, xz, yy, yz, zz) to camera-space rows."""
    K = np.zeros((6, 6))
    for r, (i, j) in enumerate(COV6_INDEX):
        for col, (k, l) in enumerate(COV6_INDEX):
            K[r, col] = W[i, k] * W[j, l] + (W[i, l] * W[j, k] if k != l else 0.0)
    return K


def _lincomb(M: np.ndarray, rows, offset=None) -> list[np.ndarray]:
    """``M @ rows`` written out elementwise.

    BLAS may pick different kernels (and roundings) for different array lengths;
    plain ufunc arithmetic gives every element the same result however the node
    range is chunked.
    """
    out = []
    for i in range(M.shape[0]):
        acc = M[i, 0] * rows[0]
        for k in range(1, M.shape[1]):
            acc = acc + M[i, k] * rows[k]
        if offset is not None:
            acc = acc + offset[i]
        out.append(acc)
    return out


def _soa_footprint(tree: LoDTree, cam: Camera, idx):
    """Camera-space centers (3, M) and dilated screen covariance rows (a, b, c).

    ``idx`` may be a slice, in which case only views of the cached rows are read.
    Entries for nodes at or behind the camera plane are not meaningful.
    """
    W = cam.rotation
    m = tree.means_t
    x, y, z = _lincomb(W, (m[0, idx], m[1, idx], m[2, idx]), cam.translation)
    cv = tree.cov6
    cc = _lincomb(_rotation_cov6(W), [cv[r, idx] for r in range(6)])
    p = np.stack([x, y, z])
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        inv_z = 1.0 / z
        j00 = cam.fx * inv_z
        j11 = cam.fy * inv_z
        j02 = -cam.fx * x * inv_z * inv_z
        j12 = -cam.fy * y * inv_z * inv_z
        c00, c01, c02, c11, c12, c22 = cc
        a = j00 * j00 * c00 + 2.0 * j00 * j02 * c02 + j02 * j02 * c22 + DILATION
        b = j00 * j11 * c01 + j00 * j12 * c02 + j02 * j11 * c12 + j02 * j12 * c22
        c = j11 * j11 * c11 + 2.0 * j11 * j12 * c12 + j12 * j12 * c22 + DILATION
    return p, a, b, c


def _frustum_mask(p: np.ndarray, radius: np.ndarray, cam: Camera) -> np.ndarray:
    z = p[2]
    ok = (z >= cam.near - radius) & (z <= cam.far + radius)
    for d in _lincomb(side_plane_normals(cam), p):
        ok &= d >= -radius
    return ok


def footprint_marks(tree: LoDTree, cam: Camera, idx) -> tuple[np.ndarray, np.ndarray]:
    """``(in_frustum, radius)`` for nodes ``idx`` (an index array or a slice).

    ``radius`` is ``3 * sigma_max`` in pixels and ``inf`` for nodes that are
    outside the frustum or whose center is in front of the near plane.
    """
    p, a, b, c = _soa_footprint(tree, cam, idx)
    inside = _frustum_mask(p, tree.bound_radius[idx], cam)
    with np.errstate(invalid="ignore"):
        lam1, _ = eig2x2(a, b, c)
        radius = np.where(inside & (p[2] >= cam.near), 3.0 * np.sqrt(lam1), np.inf)
    return inside, radius


@dataclass(frozen=True)
class ProjectedBatch:
    """Screen-space footprints of a set of drawable Gaussians (struct of arrays)."""

    node: np.ndarray  # (M,) source node index
    mean2d: np.ndarray  # (M, 2)
    cov2d: np.ndarray  # (M, 3) a, b, c of [[a, b], [b, c]]
    conic: np.ndarray  # (M, 3)
    depth: np.ndarray  # (M,)
    sigma_max: np.ndarray
    sigma_min: np.ndarray
    radius: np.ndarray  # 3 * sigma_max
    opacity: np.ndarray  # (M,) float64
    color: np.ndarray  # (M, 3) float64

    def __len__(self) -> int:
        return len(self.node)

    def item(self, i: int) -> Projected2D:
        a, b, c = self.cov2d[i]
        ca, cb, cc = self.conic[i]
        return Projected2D(
            mean2d=self.mean2d[i].copy(),
            cov2d=np.array([[a, b], [b, c]]),
            conic=np.array([[ca, cb], [cb, cc]]),
            sigma_max=float(self.sigma_max[i]),
            sigma_min=float(self.sigma_min[i]),
            depth=float(self.depth[i]),
            radius=float(self.radius[i]),
            node=int(self.node[i]),
        )

    @classmethod
    def from_arrays(cls, mean2d, cov2d, depth, opacity, color, node=None) -> ProjectedBatch:
        """Build a batch straight from screen-space parameters (tests, hand fixtures)."""
        mean2d = np.asarray(mean2d, dtype=np.float64).reshape(-1, 2)
        cov2d = np.asarray(cov2d, dtype=np.float64).reshape(-1, 3)
        a, b, c = cov2d.T
        lam1, lam2 = eig2x2(a, b, c)
        det = a * c - b * b
        m = len(mean2d)
        return cls(
            node=np.arange(m) if node is None else np.asarray(node),
            mean2d=mean2d,
            cov2d=cov2d,
            conic=np.stack([c / det, -b / det, a / det], axis=1),
            depth=np.asarray(depth, dtype=np.float64).reshape(m),
            sigma_max=np.sqrt(lam1),
            sigma_min=np.sqrt(lam2),
            radius=3.0 * np.sqrt(lam1),
            opacity=np.asarray(opacity, dtype=np.float64).reshape(m),
            color=np.asarray(color, dtype=np.float64).reshape(m, 3),
        )


def project_batch(tree: LoDTree, cam: Camera, indices=None) -> ProjectedBatch:
    """Project ``indices`` (default: all nodes), dropping culled ones. Order is preserved."""
    idx = np.arange(len(tree)) if indices is None else np.asarray(indices, dtype=np.int64)
    p, a, b, c = _soa_footprint(tree, cam, idx)
    keep = _frustum_mask(p, tree.bound_radius[idx], cam) & (p[2] >= cam.near)
    idx, p, a, b, c = idx[keep], p[:, keep], a[keep], b[keep], c[keep]
    lam1, lam2 = eig2x2(a, b, c)
    det = a * c - b * b
    z = p[2]
    mean2d = np.stack([cam.fx * p[0] / z + cam.cx, cam.fy * p[1] / z + cam.cy], axis=1).reshape(-1, 2)
    if not (np.all(np.isfinite(mean2d)) and np.all(np.isfinite(lam1)) and np.all(lam2 > 0)):
        raise ValueError("projection produced a non-finite or degenerate footprint")
    smax = np.sqrt(lam1)
    return ProjectedBatch(
        node=idx,
        mean2d=mean2d,
        cov2d=np.stack([a, b, c], axis=1).reshape(-1, 3),
        conic=np.stack([c / det, -b / det, a / det], axis=1).reshape(-1, 3),
        depth=z,
        sigma_max=smax,
        sigma_min=np.sqrt(lam2),
        radius=3.0 * smax,
        opacity=tree.opacity[idx].astype(np.float64),
        color=tree.colors[idx].astype(np.float64).reshape(-1, 3),
    )
