"""CPU forward renderer: EWA projection, SH colour, depth-sorted alpha compositing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from splatmark import _kernels
from splatmark.gsmodel import Gaussian, GaussianScene, covariance_from, quat_to_rotmat, sigmoid
from splatmark.image import Image

COV2D_DILATION = 0.3
FOOTPRINT_SIGMAS = 3.0

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)


def rotmat_to_quat(r: np.ndarray) -> np.ndarray:
    """(w, x, y, z) unit quaternion for a proper rotation matrix."""
    r = np.asarray(r, dtype=np.float64)
    tr = np.trace(r)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = 2.0 * np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
        q = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
    elif r[1, 1] > r[2, 2]:
        s = 2.0 * np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
        q = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
        q = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
    q = np.asarray(q)
    return q / np.linalg.norm(q)


@dataclass(frozen=True, eq=False)
class Camera:
    """Pinhole camera. ``orientation`` rotates camera axes into world axes;
    the camera looks down +z with x right and y down."""

    position: np.ndarray
    orientation: np.ndarray
    focal: float
    width: int
    height: int
    near: float = 0.01
    far: float = 100.0

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64).reshape(3))
        q = np.asarray(self.orientation, dtype=np.float64).reshape(4)
        object.__setattr__(self, "orientation", q / np.linalg.norm(q))
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")
        if not 0 < self.near < self.far:
            raise ValueError("need 0 < near < far")

    @property
    def cam_to_world(self) -> np.ndarray:
        return quat_to_rotmat(self.orientation)

    @property
    def principal_point(self) -> tuple[float, float]:
        return (self.width - 1) / 2.0, (self.height - 1) / 2.0

    def to_dict(self) -> dict:
        return {
            "position": [float(v) for v in self.position],
            "orientation": [float(v) for v in self.orientation],
            "focal": float(self.focal),
            "width": int(self.width),
            "height": int(self.height),
            "near": float(self.near),
            "far": float(self.far),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(**d)

    @classmethod
    def look_at(cls, position, target, up=(0.0, 0.0, 1.0), focal=100.0, width=128, height=128,
                near=0.01, far=100.0) -> "Camera":
        position = np.asarray(position, dtype=np.float64)
        z = np.asarray(target, dtype=np.float64) - position
        z /= np.linalg.norm(z)
        x = np.cross(z, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(x) < 1e-9:
            x = np.cross(z, [1.0, 0.0, 0.0] if abs(z[0]) < 0.9 else [0.0, 1.0, 0.0])
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        r = np.stack([x, y, z], axis=1)
        return cls(position, rotmat_to_quat(r), focal, width, height, near, far)


def orbit_cameras(scene: GaussianScene, count: int = 4, width: int = 96, height: int = 96,
                  distance_factor: float = 2.5, elevation: float = 0.35) -> list[Camera]:
    """Evenly spaced cameras on a ring around the scene's bounding box, looking at its centre."""
    lo, hi = scene.bbox()
    center = (lo + hi) / 2
    radius = max(np.linalg.norm(hi - lo) / 2, 1e-6)
    dist = distance_factor * radius
    cams = []
    for i in range(count):
        az = 2 * np.pi * i / count
        d = np.array([np.cos(az) * np.cos(elevation), np.sin(az) * np.cos(elevation), np.sin(elevation)])
        focal = 0.5 * width / np.tan(np.radians(30))
        cams.append(Camera.look_at(center + dist * d, center, focal=focal, width=width,
                                   height=height, near=0.01, far=dist + 4 * radius))
    return cams


# ---------------------------------------------------------------------------
# SH colour


def sh_basis(dirs, degree: int) -> np.ndarray:
    """Real SH basis values, shape (M, (degree+1)^2), in the 3DGS ordering."""
    d = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    cols = [np.full_like(x, SH_C0)]
    if degree > 0:
        cols += [-SH_C1 * y, SH_C1 * z, -SH_C1 * x]
    if degree > 1:
        xx, yy, zz = x * x, y * y, z * z
        cols += [
            SH_C2[0] * x * y,
            SH_C2[1] * y * z,
            SH_C2[2] * (2 * zz - xx - yy),
            SH_C2[3] * x * z,
            SH_C2[4] * (xx - yy),
        ]
    if degree > 2:
        cols += [
            SH_C3[0] * y * (3 * xx - yy),
            SH_C3[1] * x * y * z,
            SH_C3[2] * y * (4 * zz - xx - yy),
            SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy),
            SH_C3[4] * x * (4 * zz - xx - yy),
            SH_C3[5] * z * (xx - yy),
            SH_C3[6] * x * (xx - 3 * yy),
        ]
    return np.stack(cols, axis=1)


def sh_colors(sh: np.ndarray, dirs, degree: int) -> np.ndarray:
    """Clamped RGB for SH arrays of shape (M, 3, K) viewed along ``dirs``."""
    basis = sh_basis(dirs, degree)
    return np.clip(0.5 + np.einsum("mck,mk->mc", sh, basis), 0.0, 1.0)


def eval_sh_color(g: Gaussian, view_dir) -> np.ndarray:
    k = len(g.sh) // 3
    degree = int(round(np.sqrt(k))) - 1
    return sh_colors(g.sh.reshape(1, 3, k), view_dir, degree)[0]


# ---------------------------------------------------------------------------
# Projection


@dataclass(frozen=True)
class Splat:
    center2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    bbox: tuple[int, int, int, int]  # x0, x1, y0, y1 (half-open)


def _project(centers, covs, cam: Camera):
    w = cam.cam_to_world.T
    pc = (centers - cam.position) @ w.T
    x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
    valid = (z > cam.near) & (z < cam.far)
    zs = np.where(valid, z, 1.0)
    f = cam.focal
    cx, cy = cam.principal_point
    uv = np.stack([f * x / zs + cx, f * y / zs + cy], axis=1)
    jac = np.zeros((len(z), 2, 3))
    jac[:, 0, 0] = f / zs
    jac[:, 0, 2] = -f * x / zs**2
    jac[:, 1, 1] = f / zs
    jac[:, 1, 2] = -f * y / zs**2
    m = jac @ w
    cov2d = m @ covs @ np.swapaxes(m, 1, 2) + COV2D_DILATION * np.eye(2)
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    lam = 0.5 * (a + c) + np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
    r = FOOTPRINT_SIGMAS * np.sqrt(lam)
    x0 = np.maximum(0, np.ceil(uv[:, 0] - r)).astype(np.int64)
    x1 = np.minimum(cam.width, np.floor(uv[:, 0] + r) + 1).astype(np.int64)
    y0 = np.maximum(0, np.ceil(uv[:, 1] - r)).astype(np.int64)
    y1 = np.minimum(cam.height, np.floor(uv[:, 1] + r) + 1).astype(np.int64)
    valid &= (x0 < x1) & (y0 < y1)
    return uv, cov2d, z, np.stack([x0, x1, y0, y1], axis=1), valid


def project_gaussian(g: Gaussian, cam: Camera) -> Splat | None:
    """Screen-space splat for one Gaussian, or None when culled."""
    cov = covariance_from(g.scale, g.rotation)[None]
    uv, cov2d, z, bbox, valid = _project(np.asarray(g.center)[None], cov, cam)
    if not valid[0]:
        return None
    return Splat(uv[0], cov2d[0], float(z[0]), tuple(int(v) for v in bbox[0]))


@dataclass
class RenderStats:
    """Per-pixel compositing bookkeeping: sum of alpha_i T_i and final transmittance."""

    weight_sum: np.ndarray
    final_transmittance: np.ndarray
    n_visible: int


def prepare_splats(scene: GaussianScene, cam: Camera):
    """Depth-sorted compositing inputs (means, conics, opacities, colors, bboxes)."""
    uv, cov2d, depth, bbox, valid = _project(scene.centers, scene.covariances(), cam)
    idx = np.flatnonzero(valid)
    # global depth order, ties by original index
    idx = idx[np.argsort(depth[idx], kind="stable")]
    a, b, c = cov2d[idx, 0, 0], cov2d[idx, 0, 1], cov2d[idx, 1, 1]
    det = a * c - b * b
    conics = np.stack([c / det, -b / det, a / det], axis=1)
    dirs = scene.centers[idx] - cam.position
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    colors = sh_colors(scene.sh[idx], dirs, scene.sh_degree)
    opac = sigmoid(scene.opacities[idx])
    return uv[idx], conics, opac, colors, bbox[idx]


def render_with_stats(scene: GaussianScene, cam: Camera, background=(0.0, 0.0, 0.0)):
    background = np.asarray(background, dtype=np.float64)
    if len(scene) == 0:
        h, w = cam.height, cam.width
        return Image.filled(w, h, background), RenderStats(np.zeros((h, w)), np.ones((h, w)), 0)
    splats = prepare_splats(scene, cam)
    rgb, trans, wsum = _kernels.composite(*splats, cam.width, cam.height, background)
    return Image(rgb), RenderStats(wsum, trans, len(splats[2]))


def render(scene: GaussianScene, cam: Camera, background=(0.0, 0.0, 0.0)) -> Image:
    return render_with_stats(scene, cam, background)[0]
