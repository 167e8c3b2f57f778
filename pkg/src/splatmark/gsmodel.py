"""3D Gaussian Splatting scenes: in-memory model, PLY I/O, synthesis and SH flattening.

Scenes are stored struct-of-arrays. Opacity is kept in the logit domain and
scales in the log domain, exactly as in distributed 3DGS PLY files; activation
happens only at render time.
"""

from __future__ import annotations

import dataclasses
import io
import logging
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

MAX_SH_DEGREE = 3
QUAT_UNIT_TOL = 1e-6
QUAT_DRIFT_WARN = 1e-3


class SceneError(ValueError):
    """Base class for scene construction and I/O failures."""


class PlyParseError(SceneError):
    pass


class PlySchemaError(SceneError):
    pass


class PlyDataError(SceneError):
    pass


class DimensionError(SceneError):
    pass


def sh_basis_count(degree: int) -> int:
    return (degree + 1) ** 2


def sh_length(degree: int) -> int:
    """Per-Gaussian SH vector length: 3 colour channels times the basis count."""
    return 3 * sh_basis_count(degree)


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrix (or stack of them) from (w, x, y, z) quaternions."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    r = np.empty(q.shape[:-1] + (3, 3))
    r[..., 0, 0] = 1 - 2 * (y * y + z * z)
    r[..., 0, 1] = 2 * (x * y - w * z)
    r[..., 0, 2] = 2 * (x * z + w * y)
    r[..., 1, 0] = 2 * (x * y + w * z)
    r[..., 1, 1] = 1 - 2 * (x * x + z * z)
    r[..., 1, 2] = 2 * (y * z - w * x)
    r[..., 2, 0] = 2 * (x * z - w * y)
    r[..., 2, 1] = 2 * (y * z + w * x)
    r[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return r


def covariance_from(scale: np.ndarray, rotation: np.ndarray) -> np.ndarray:
    """Sigma = R diag(exp(scale))^2 R^T, vectorised over leading axes."""
    r = quat_to_rotmat(rotation)
    s = np.exp(np.asarray(scale, dtype=np.float64))
    m = r * s[..., None, :]
    return m @ np.swapaxes(m, -1, -2)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


@dataclass(frozen=True, eq=False)
class Gaussian:
    center: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray
    opacity: float
    sh: np.ndarray  # channel-major, basis innermost

    @property
    def degree(self) -> int:
        return int(round(np.sqrt(len(self.sh) // 3))) - 1

    @property
    def activated_opacity(self) -> float:
        return float(sigmoid(self.opacity))

    def covariance(self) -> np.ndarray:
        return covariance_from(self.scale, self.rotation)


def _frozen(a, dtype=np.float64) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class GaussianScene:
    """Ordered set of Gaussians. Arrays are read-only copies.

    ``sh`` has shape (N, 3, K) with K = (degree + 1)^2. ``extras`` carries
    non-core float columns found in a PLY (e.g. normals) so they survive a
    round trip.
    """

    centers: np.ndarray
    scales: np.ndarray
    rotations: np.ndarray
    opacities: np.ndarray
    sh: np.ndarray
    sh_degree: int
    provenance: str = ""
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.sh_degree <= MAX_SH_DEGREE:
            raise SceneError(f"sh_degree must be in 0..{MAX_SH_DEGREE}, got {self.sh_degree}")
        k = sh_basis_count(self.sh_degree)
        n = len(np.asarray(self.opacities).reshape(-1))
        shapes = {
            "centers": (n, 3),
            "scales": (n, 3),
            "rotations": (n, 4),
            "opacities": (n,),
            "sh": (n, 3, k),
        }
        for name, shape in shapes.items():
            arr = np.asarray(getattr(self, name), dtype=np.float64).reshape(shape)
            object.__setattr__(self, name, _frozen(arr))
        extras = {}
        for name, col in self.extras.items():
            col = np.asarray(col, dtype=np.float64).reshape(n)
            extras[name] = _frozen(col)
        object.__setattr__(self, "extras", extras)

    def __len__(self) -> int:
        return self.opacities.shape[0]

    def __getitem__(self, i: int) -> Gaussian:
        return Gaussian(
            center=self.centers[i],
            scale=self.scales[i],
            rotation=self.rotations[i],
            opacity=float(self.opacities[i]),
            sh=self.sh[i].reshape(-1),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def __eq__(self, other) -> bool:
        if not isinstance(other, GaussianScene):
            return NotImplemented
        if self.sh_degree != other.sh_degree or len(self) != len(other):
            return False
        if self.extras.keys() != other.extras.keys():
            return False
        fields = ("centers", "scales", "rotations", "opacities", "sh")
        return all(np.array_equal(getattr(self, f), getattr(other, f)) for f in fields) and all(
            np.array_equal(v, other.extras[k]) for k, v in self.extras.items()
        )

    @property
    def gaussians(self) -> list[Gaussian]:
        return list(self)

    @property
    def n(self) -> int:
        return len(self)

    @property
    def sh_len(self) -> int:
        """Flattened SH length L = N * 3 * (degree + 1)^2."""
        return len(self) * sh_length(self.sh_degree)

    def covariances(self) -> np.ndarray:
        return covariance_from(self.scales, self.rotations)

    def activated_opacities(self) -> np.ndarray:
        return sigmoid(self.opacities)

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        if len(self) == 0:
            return np.zeros(3), np.zeros(3)
        return self.centers.min(axis=0), self.centers.max(axis=0)

    def bbox_diagonal(self) -> float:
        lo, hi = self.bbox()
        return float(np.linalg.norm(hi - lo))

    def replace(self, **changes) -> "GaussianScene":
        return dataclasses.replace(self, **changes)

    def subset(self, index) -> "GaussianScene":
        """Scene restricted to (or reordered by) an index array."""
        index = np.asarray(index, dtype=np.int64)
        return self.replace(
            centers=self.centers[index],
            scales=self.scales[index],
            rotations=self.rotations[index],
            opacities=self.opacities[index],
            sh=self.sh[index],
            extras={k: v[index] for k, v in self.extras.items()},
        )

    @classmethod
    def empty(cls, sh_degree: int = 0, provenance: str = "") -> "GaussianScene":
        k = sh_basis_count(sh_degree)
        return cls(
            centers=np.zeros((0, 3)),
            scales=np.zeros((0, 3)),
            rotations=np.zeros((0, 4)),
            opacities=np.zeros(0),
            sh=np.zeros((0, 3, k)),
            sh_degree=sh_degree,
            provenance=provenance,
        )


def eval_density(g: Gaussian, x) -> float:
    """Unnormalised density exp(-1/2 (x-mu)^T Sigma^-1 (x-mu))."""
    d = np.asarray(x, dtype=np.float64) - g.center
    # Sigma^-1 = R diag(exp(-2 scale)) R^T, so the quadratic form is |diag(exp(-scale)) R^T d|^2
    r = quat_to_rotmat(g.rotation)
    local = (r.T @ d) * np.exp(-np.asarray(g.scale, dtype=np.float64))
    return float(np.exp(-0.5 * local @ local))


# ---------------------------------------------------------------------------
# SH flattening


@dataclass(frozen=True, eq=False)
class FlatSHVector:
    """Flattened SH coefficients, Gaussian-major, then channel, then basis."""

    values: np.ndarray
    n: int
    sh_degree: int
    layout: str = "gaussian,channel,basis"

    def __len__(self) -> int:
        return self.values.shape[0]

    def locate(self, index: int) -> tuple[int, int, int]:
        """(gaussian, channel, basis) for a flat index."""
        k = sh_basis_count(self.sh_degree)
        g, rem = divmod(int(index), 3 * k)
        c, b = divmod(rem, k)
        return g, c, b


def flatten_sh(scene: GaussianScene) -> FlatSHVector:
    values = np.ascontiguousarray(scene.sh, dtype=np.float64).reshape(-1).copy()
    return FlatSHVector(values=values, n=len(scene), sh_degree=scene.sh_degree)


def unflatten_sh(scene: GaussianScene, flat) -> GaussianScene:
    values = flat.values if isinstance(flat, FlatSHVector) else np.asarray(flat, dtype=np.float64)
    if values.ndim != 1 or values.shape[0] != scene.sh_len:
        raise DimensionError(
            f"flat SH length {values.shape} does not match scene length {scene.sh_len}"
        )
    return scene.replace(sh=values.reshape(scene.sh.shape))


# ---------------------------------------------------------------------------
# Synthesis


def synth_scene(seed: int, n: int, degree: int = 3, extent: float = 1.0) -> GaussianScene:
    """Deterministic pseudo-random scene; every value is float32-representable."""
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = np.random.default_rng(seed)
    k = sh_basis_count(degree)
    centers = rng.uniform(-extent, extent, size=(n, 3))
    scales = np.log(rng.uniform(0.02, 0.08, size=(n, 3)) * extent)
    quats = rng.normal(size=(n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    act = rng.uniform(0.2, 0.95, size=n)
    opacities = np.log(act / (1 - act))
    sh = np.empty((n, 3, k))
    sh[:, :, 0] = rng.uniform(0.0, 1.0, size=(n, 3))
    if k > 1:
        sh[:, :, 1:] = rng.uniform(-0.1, 0.1, size=(n, 3, k - 1))

    def f32(a):
        return a.astype(np.float32).astype(np.float64)

    return GaussianScene(
        centers=f32(centers),
        scales=f32(scales),
        rotations=f32(quats),
        opacities=f32(opacities),
        sh=f32(sh),
        sh_degree=degree,
        provenance=f"synth(seed={seed}, n={n}, degree={degree}, extent={extent})",
    )


# ---------------------------------------------------------------------------
# PLY

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}

_NORMALS = ("nx", "ny", "nz")


def _field_names(degree: int) -> tuple[list[str], list[str]]:
    """Core property names in reference order, split around the optional normals."""
    n_rest = 3 * (sh_basis_count(degree) - 1)
    head = ["x", "y", "z"]
    tail = (
        [f"f_dc_{i}" for i in range(3)]
        + [f"f_rest_{i}" for i in range(n_rest)]
        + ["opacity"]
        + [f"scale_{i}" for i in range(3)]
        + [f"rot_{i}" for i in range(4)]
    )
    return head, tail


def _parse_header(blob: bytes) -> tuple[int, list[tuple[str, str]], int]:
    end = blob.find(b"end_header\n")
    if end < 0:
        raise PlyParseError("line ?: missing 'end_header'")
    body_start = end + len(b"end_header\n")
    lines = blob[:end].decode("ascii", errors="replace").split("\n")
    if not lines or lines[0].strip() != "ply":
        raise PlyParseError(f"line 1: expected 'ply', got {lines[0][:40]!r}")
    count = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    for no, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith(("comment", "obj_info")):
            continue
        parts = line.split()
        if parts[0] == "format":
            if len(parts) != 3 or parts[1] != "binary_little_endian":
                raise PlyParseError(f"line {no}: unsupported format {line!r}")
        elif parts[0] == "element":
            if len(parts) != 3 or not re.fullmatch(r"\d+", parts[2]):
                raise PlyParseError(f"line {no}: malformed element line {line!r}")
            if parts[1] == "vertex":
                if count is not None:
                    raise PlyParseError(f"line {no}: duplicate vertex element")
                count = int(parts[2])
                in_vertex = True
            else:
                if int(parts[2]) != 0:
                    raise PlyParseError(f"line {no}: unsupported non-empty element {parts[1]!r}")
                in_vertex = False
        elif parts[0] == "property":
            if len(parts) != 3 or parts[1] not in _PLY_TYPES:
                raise PlyParseError(f"line {no}: malformed property line {line!r}")
            if in_vertex:
                props.append((parts[2], _PLY_TYPES[parts[1]]))
        else:
            raise PlyParseError(f"line {no}: unexpected header line {line!r}")
    if count is None:
        raise PlyParseError("line ?: no 'element vertex' declaration")
    return count, props, body_start


def load_ply(blob: bytes | str | Path) -> GaussianScene:
    """Parse a little-endian binary 3DGS PLY."""
    if isinstance(blob, (str, Path)):
        blob = Path(blob).read_bytes()
    count, props, start = _parse_header(blob)
    names = [p for p, _ in props]
    if len(set(names)) != len(names):
        raise PlySchemaError("duplicate property names in header")
    n_rest = sum(1 for p in names if p.startswith("f_rest_"))
    degree = None
    for d in range(MAX_SH_DEGREE + 1):
        if 3 * (sh_basis_count(d) - 1) == n_rest:
            degree = d
    if degree is None:
        raise PlySchemaError(f"field f_rest_*: count {n_rest} matches no SH degree in 0..3")
    head, tail = _field_names(degree)
    for name in head + tail:
        if name not in names:
            raise PlySchemaError(f"missing field {name!r}")

    dtype = np.dtype([(p, "<" + t) for p, t in props])
    need = count * dtype.itemsize
    if len(blob) - start < need:
        raise PlyDataError(
            f"vertex data truncated: need {need} bytes, have {len(blob) - start}"
        )
    data = np.frombuffer(blob, dtype=dtype, count=count, offset=start)
    cols = {p: data[p].astype(np.float64) for p in names}
    for p in names:
        bad = np.flatnonzero(~np.isfinite(cols[p]))
        if bad.size:
            raise PlyDataError(f"non-finite value in field {p!r} at vertex index {int(bad[0])}")

    k = sh_basis_count(degree)
    sh = np.empty((count, 3, k))
    for c in range(3):
        sh[:, c, 0] = cols[f"f_dc_{c}"]
        for b in range(1, k):
            sh[:, c, b] = cols[f"f_rest_{c * (k - 1) + (b - 1)}"]
    rot = np.stack([cols[f"rot_{i}"] for i in range(4)], axis=1)
    rot = _renormalize(rot)
    core = set(head + tail)
    extras = {p: cols[p] for p in names if p not in core}
    return GaussianScene(
        centers=np.stack([cols["x"], cols["y"], cols["z"]], axis=1),
        scales=np.stack([cols[f"scale_{i}"] for i in range(3)], axis=1),
        rotations=rot,
        opacities=cols["opacity"],
        sh=sh,
        sh_degree=degree,
        provenance="ply",
        extras=extras,
    )


def _renormalize(rot: np.ndarray) -> np.ndarray:
    # Quaternions already unit within tolerance are kept bit-exact so canonical files round-trip.
    if rot.shape[0] == 0:
        return rot
    norms = np.linalg.norm(rot, axis=1)
    zero = norms == 0
    if np.any(zero):
        # an all-zero rotation carries no orientation; read it as identity
        warnings.warn(
            f"zero quaternion at vertex index {int(np.flatnonzero(zero)[0])}; using identity",
            stacklevel=3,
        )
        rot = rot.copy()
        rot[zero] = (1.0, 0.0, 0.0, 0.0)
        norms = np.linalg.norm(rot, axis=1)
    drift = np.abs(norms - 1.0)
    if drift.max() > QUAT_DRIFT_WARN:
        warnings.warn(
            f"quaternion norm drift up to {drift.max():.3g}; renormalising", stacklevel=3
        )
    fix = drift > QUAT_UNIT_TOL
    rot = rot.copy()
    rot[fix] /= norms[fix, None]
    return rot


def _ordered_columns(scene: GaussianScene) -> list[tuple[str, np.ndarray]]:
    head, tail = _field_names(scene.sh_degree)
    k = sh_basis_count(scene.sh_degree)
    cols: dict[str, np.ndarray] = {
        "x": scene.centers[:, 0],
        "y": scene.centers[:, 1],
        "z": scene.centers[:, 2],
        "opacity": scene.opacities,
    }
    for c in range(3):
        cols[f"f_dc_{c}"] = scene.sh[:, c, 0]
        for b in range(1, k):
            cols[f"f_rest_{c * (k - 1) + (b - 1)}"] = scene.sh[:, c, b]
    for i in range(3):
        cols[f"scale_{i}"] = scene.scales[:, i]
    for i in range(4):
        cols[f"rot_{i}"] = scene.rotations[:, i]
    order = list(head)
    order += [nm for nm in _NORMALS if nm in scene.extras]
    order += tail
    order += [nm for nm in scene.extras if nm not in _NORMALS]
    cols.update(scene.extras)
    return [(nm, cols[nm]) for nm in order]


def save_ply(scene: GaussianScene, path: str | Path | None = None) -> bytes:
    """Serialise to canonical little-endian float32 PLY; also writes ``path`` if given."""
    columns = _ordered_columns(scene)
    header = io.StringIO()
    header.write("ply\nformat binary_little_endian 1.0\n")
    header.write(f"element vertex {len(scene)}\n")
    for name, _ in columns:
        header.write(f"property float {name}\n")
    header.write("end_header\n")
    dtype = np.dtype([(name, "<f4") for name, _ in columns])
    rec = np.empty(len(scene), dtype=dtype)
    for name, col in columns:
        rec[name] = col
    out = header.getvalue().encode("ascii") + rec.tobytes()
    if path is not None:
        Path(path).write_bytes(out)
    return out


# ---------------------------------------------------------------------------
# npz fixture container


def save_npz(scene: GaussianScene, path: str | Path) -> None:
    arrays = {
        "centers": scene.centers,
        "scales": scene.scales,
        "rotations": scene.rotations,
        "opacities": scene.opacities,
        "sh": scene.sh,
        "sh_degree": np.array(scene.sh_degree),
        "provenance": np.array(scene.provenance),
    }
    for k, v in scene.extras.items():
        arrays[f"extra__{k}"] = v
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_npz(path: str | Path) -> GaussianScene:
    with np.load(path, allow_pickle=False) as z:
        extras = {k[len("extra__"):]: z[k] for k in z.files if k.startswith("extra__")}
        return GaussianScene(
            centers=z["centers"],
            scales=z["scales"],
            rotations=z["rotations"],
            opacities=z["opacities"],
            sh=z["sh"],
            sh_degree=int(z["sh_degree"]),
            provenance=str(z["provenance"]),
            extras=extras,
        )


def load_scene(path: str | Path) -> GaussianScene:
    path = Path(path)
    if path.suffix == ".npz":
        return load_npz(path)
    return load_ply(path.read_bytes())
