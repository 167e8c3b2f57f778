"""Robustness attacks on 3DGS models and rendered images, plus index realignment."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dctn, idctn
from scipy.ndimage import convolve1d, map_coordinates
from scipy.spatial import cKDTree

from splatmark import _kernels
from splatmark.detect import AlignmentError
from splatmark.gsmodel import GaussianScene
from splatmark.image import Image


class DegenerateOutputError(ValueError):
    pass


class ModelAttack(str, enum.Enum):
    GAUSS_NOISE = "GAUSS_NOISE"
    DROPOUT = "DROPOUT"
    CROP3D = "CROP3D"
    CLONE = "CLONE"
    TRANSLATE = "TRANSLATE"


class ImageAttack(str, enum.Enum):
    GAUSS_NOISE = "GAUSS_NOISE"
    BLUR = "BLUR"
    CROP2D = "CROP2D"
    RESIZE = "RESIZE"
    BRIGHTNESS = "BRIGHTNESS"
    JPEG_LIKE = "JPEG_LIKE"
    ROTATE = "ROTATE"
    TRANSLATE2D = "TRANSLATE2D"


# JSON parameter name per kind
MODEL_PARAM = {
    ModelAttack.GAUSS_NOISE: "sigma",
    ModelAttack.DROPOUT: "rate",
    ModelAttack.CROP3D: "keep_fraction",
    ModelAttack.CLONE: "rate",
    ModelAttack.TRANSLATE: "fraction",
}
IMAGE_PARAM = {
    ImageAttack.GAUSS_NOISE: "sigma",
    ImageAttack.BLUR: "sigma",
    ImageAttack.CROP2D: "fraction",
    ImageAttack.RESIZE: "scale",
    ImageAttack.BRIGHTNESS: "factor",
    ImageAttack.JPEG_LIKE: "quality",
    ImageAttack.ROTATE: "angle",
    ImageAttack.TRANSLATE2D: "fraction",
}


@dataclass(frozen=True)
class ModelAttackSpec:
    kind: ModelAttack
    value: float
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelAttack(self.kind))
        if self.kind is ModelAttack.GAUSS_NOISE:
            if self.value < 0:
                raise ValueError("sigma must be >= 0")
        elif not 0 < self.value <= 1:
            raise ValueError(f"{MODEL_PARAM[self.kind]} must be in (0, 1]")

    level = "model"

    def to_dict(self) -> dict:
        return {"level": "model", "kind": self.kind.value,
                "params": {MODEL_PARAM[self.kind]: self.value}, "seed": self.seed}

    def label(self) -> str:
        return f"model:{self.kind.value}({MODEL_PARAM[self.kind]}={self.value:g})"


@dataclass(frozen=True)
class ImageAttackSpec:
    kind: ImageAttack
    value: float
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", ImageAttack(self.kind))
        if self.kind is ImageAttack.JPEG_LIKE and not 1 <= self.value <= 100:
            raise ValueError("quality must be in [1, 100]")
        if self.kind is ImageAttack.RESIZE and self.value <= 0:
            raise ValueError("scale must be > 0")
        if self.kind in (ImageAttack.GAUSS_NOISE, ImageAttack.BLUR, ImageAttack.BRIGHTNESS) and self.value < 0:
            raise ValueError(f"{IMAGE_PARAM[self.kind]} must be >= 0")
        if self.kind is ImageAttack.CROP2D and not 0 < self.value <= 1:
            raise ValueError("fraction must be in (0, 1]")

    level = "image"

    def to_dict(self) -> dict:
        return {"level": "image", "kind": self.kind.value,
                "params": {IMAGE_PARAM[self.kind]: self.value}, "seed": self.seed}

    def label(self) -> str:
        return f"image:{self.kind.value}({IMAGE_PARAM[self.kind]}={self.value:g})"


def spec_from_dict(d: dict):
    level = d.get("level")
    params = d.get("params", {})
    seed = int(d.get("seed", 0))
    if level == "model":
        kind = ModelAttack(d["kind"])
        name = MODEL_PARAM[kind]
        cls = ModelAttackSpec
    elif level == "image":
        kind = ImageAttack(d["kind"])
        name = IMAGE_PARAM[kind]
        cls = ImageAttackSpec
    else:
        raise ValueError(f"attack level must be 'model' or 'image', got {level!r}")
    if name in params:
        value = params[name]
    elif "value" in params:
        value = params["value"]
    else:
        raise ValueError(f"attack {kind.value} needs parameter {name!r}")
    return cls(kind, float(value), seed)


def load_manifest(source) -> list:
    """Attack list from a JSON file path, JSON text, or already-parsed list."""
    if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith(("[", "{"))):
        source = Path(source).read_text()
    if isinstance(source, str):
        source = json.loads(source)
    if isinstance(source, dict):
        source = source.get("attacks", [])
    return [spec_from_dict(d) for d in source]


def table2_matrix(seed: int = 0) -> list:
    """The attack rows of the literature matrix at their listed strengths."""
    return [
        ImageAttackSpec(ImageAttack.GAUSS_NOISE, 0.1, seed),
        ImageAttackSpec(ImageAttack.ROTATE, math.pi / 6, seed),
        ImageAttackSpec(ImageAttack.RESIZE, 0.75, seed),
        ImageAttackSpec(ImageAttack.BLUR, 0.1, seed),
        ImageAttackSpec(ImageAttack.CROP2D, 0.4, seed),
        ImageAttackSpec(ImageAttack.BRIGHTNESS, 0.5, seed),
        ImageAttackSpec(ImageAttack.BRIGHTNESS, 1.5, seed),
        ImageAttackSpec(ImageAttack.JPEG_LIKE, 50, seed),
        ImageAttackSpec(ImageAttack.TRANSLATE2D, 0.2, seed),
        ModelAttackSpec(ModelAttack.GAUSS_NOISE, 0.1, seed),
        ModelAttackSpec(ModelAttack.DROPOUT, 0.2, seed),
        ModelAttackSpec(ModelAttack.CROP3D, 0.5, seed),
        ModelAttackSpec(ModelAttack.CLONE, 0.2, seed),
        ModelAttackSpec(ModelAttack.TRANSLATE, 0.2, seed),
    ]


# ---------------------------------------------------------------------------
# Model level


def attack_model(scene: GaussianScene, spec: ModelAttackSpec) -> GaussianScene:
    rng = np.random.default_rng(spec.seed)
    n = len(scene)
    kind, v = spec.kind, spec.value
    if kind is ModelAttack.GAUSS_NOISE:
        if v == 0 or n == 0:
            return scene
        # noise std is relative to each SH field's spread across Gaussians
        field_std = scene.sh.std(axis=0)
        noise = rng.standard_normal(scene.sh.shape) * (v * field_std)
        return scene.replace(sh=scene.sh + noise)
    if kind is ModelAttack.DROPOUT:
        drop = rng.choice(n, size=int(math.floor(v * n)), replace=False)
        keep = np.setdiff1d(np.arange(n), drop)
        return scene.subset(keep)
    if kind is ModelAttack.CROP3D:
        lo, hi = scene.bbox()
        margin = (hi - lo) * (1.0 - v ** (1.0 / 3.0)) / 2.0
        box_lo, box_hi = lo + margin, hi - margin
        inside = np.all((scene.centers >= box_lo) & (scene.centers <= box_hi), axis=1)
        if not inside.any():
            raise DegenerateOutputError("3D crop removed every Gaussian")
        return scene.subset(np.flatnonzero(inside))
    if kind is ModelAttack.CLONE:
        m = int(math.floor(v * n))
        if m == 0:
            return scene
        src = np.sort(rng.choice(n, size=m, replace=False))
        clones = scene.subset(src)
        jitter = rng.standard_normal((m, 3)) * (1e-3 * scene.bbox_diagonal())
        return _concat(scene, clones.replace(centers=clones.centers + jitter))
    if kind is ModelAttack.TRANSLATE:
        shift = np.array([v * scene.bbox_diagonal(), 0.0, 0.0])
        return scene.replace(centers=scene.centers + shift)
    raise ValueError(f"unknown model attack {kind}")


def _concat(a: GaussianScene, b: GaussianScene) -> GaussianScene:
    return a.replace(
        centers=np.concatenate([a.centers, b.centers]),
        scales=np.concatenate([a.scales, b.scales]),
        rotations=np.concatenate([a.rotations, b.rotations]),
        opacities=np.concatenate([a.opacities, b.opacities]),
        sh=np.concatenate([a.sh, b.sh]),
        extras={k: np.concatenate([v, b.extras[k]]) for k, v in a.extras.items()},
    )


@dataclass(frozen=True)
class RealignStats:
    matched: int
    neutralized: int
    exact: int


def realign_with_stats(original: GaussianScene, suspect: GaussianScene, k: int = 8):
    """Greedy nearest-neighbour re-association of suspect Gaussians to the original's order.

    Candidate (original, suspect) pairs from a k-NN query are taken in order of
    increasing centre distance. Originals left unmatched keep their own
    parameters, which zeroes their contribution to the residual.
    """
    if len(suspect) == 0:
        raise AlignmentError("suspect scene is empty")
    if suspect.sh_degree != original.sh_degree:
        raise AlignmentError("suspect SH degree differs from the original")
    n_o, n_s = len(original), len(suspect)
    match = np.full(n_o, -1, dtype=np.int64)
    free_o = np.arange(n_o)
    free_s = np.arange(n_s)
    while free_o.size and free_s.size:
        kk = min(k, free_s.size)
        dist, nbr = cKDTree(suspect.centers[free_s]).query(original.centers[free_o], k=kk)
        dist = dist.reshape(free_o.size, kk)
        nbr = nbr.reshape(free_o.size, kk)
        o_local = np.repeat(np.arange(free_o.size), kk)
        order = np.lexsort((nbr.ravel(), o_local, dist.ravel()))
        local = _kernels.greedy_assign(o_local[order], nbr.ravel()[order], free_o.size, free_s.size)
        got = local >= 0
        if not got.any():
            break
        match[free_o[got]] = free_s[local[got]]
        free_o = free_o[~got]
        free_s = np.setdiff1d(free_s, free_s[local[got]])
    hit = match >= 0
    out = {}
    for name in ("centers", "scales", "rotations", "opacities", "sh"):
        arr = np.array(getattr(original, name), copy=True)
        arr[hit] = getattr(suspect, name)[match[hit]]
        out[name] = arr
    exact = int(np.sum(np.all(original.centers[hit] == suspect.centers[match[hit]], axis=1)))
    aligned = original.replace(provenance=f"realigned({suspect.provenance})", **out)
    return aligned, RealignStats(matched=int(hit.sum()), neutralized=int((~hit).sum()), exact=exact)


def realign(original: GaussianScene, suspect: GaussianScene) -> GaussianScene:
    return realign_with_stats(original, suspect)[0]


# ---------------------------------------------------------------------------
# Image level

JPEG_LUMA_TABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)


def jpeg_quant_table(quality: float) -> np.ndarray:
    q = float(quality)
    scale = 5000.0 / q if q < 50 else 200.0 - 2.0 * q
    return np.clip(np.floor((JPEG_LUMA_TABLE * scale + 50.0) / 100.0), 1.0, 255.0)


def _jpeg_like(rgb: np.ndarray, quality: float) -> np.ndarray:
    h, w, _ = rgb.shape
    ph, pw = -h % 8, -w % 8
    x = np.pad(rgb * 255.0 - 128.0, ((0, ph), (0, pw), (0, 0)), mode="edge")
    H, W = x.shape[:2]
    blocks = x.reshape(H // 8, 8, W // 8, 8, 3).transpose(0, 2, 4, 1, 3)
    coef = dctn(blocks, axes=(-2, -1), norm="ortho")
    table = jpeg_quant_table(quality)
    coef = np.round(coef / table) * table
    out = idctn(coef, axes=(-2, -1), norm="ortho")
    out = out.transpose(0, 3, 1, 4, 2).reshape(H, W, 3)[:h, :w]
    return (out + 128.0) / 255.0


def _gauss_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3 * sigma))
    r = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(r**2) / (2 * sigma**2))
    return k / k.sum()


def _sample(rgb: np.ndarray, rows: np.ndarray, cols: np.ndarray, mode: str, cval: float = 0.0) -> np.ndarray:
    return np.stack(
        [map_coordinates(rgb[..., c], [rows, cols], order=1, mode=mode, cval=cval) for c in range(3)],
        axis=-1,
    )


def _resize(rgb: np.ndarray, h: int, w: int) -> np.ndarray:
    sh, sw = rgb.shape[:2]
    rows = (np.arange(h) + 0.5) * (sh / h) - 0.5
    cols = (np.arange(w) + 0.5) * (sw / w) - 0.5
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return _sample(rgb, rr, cc, mode="nearest")


def attack_image(img: Image, spec: ImageAttackSpec) -> Image:
    rng = np.random.default_rng(spec.seed)
    rgb = img.rgb
    h, w = img.height, img.width
    kind, v = spec.kind, spec.value
    if kind is ImageAttack.GAUSS_NOISE:
        out = rgb + rng.standard_normal(rgb.shape) * v
    elif kind is ImageAttack.BLUR:
        if v == 0:
            return img
        k = _gauss_kernel(v)
        out = convolve1d(convolve1d(rgb, k, axis=0, mode="nearest"), k, axis=1, mode="nearest")
    elif kind is ImageAttack.CROP2D:
        side = math.sqrt(v)
        ch, cw = max(1, round(side * h)), max(1, round(side * w))
        y0, x0 = (h - ch) // 2, (w - cw) // 2
        out = np.zeros_like(rgb)
        out[y0:y0 + ch, x0:x0 + cw] = rgb[y0:y0 + ch, x0:x0 + cw]
    elif kind is ImageAttack.RESIZE:
        nh, nw = max(1, round(v * h)), max(1, round(v * w))
        out = _resize(_resize(rgb, nh, nw), h, w)
    elif kind is ImageAttack.BRIGHTNESS:
        out = rgb * v
    elif kind is ImageAttack.JPEG_LIKE:
        out = _jpeg_like(rgb, v)
    elif kind is ImageAttack.ROTATE:
        cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
        rr, cc = np.meshgrid(np.arange(h, dtype=np.float64) - cy, np.arange(w, dtype=np.float64) - cx,
                             indexing="ij")
        cos, sin = math.cos(v), math.sin(v)
        # inverse map: output pixel samples the source rotated by -angle
        src_c = cos * cc + sin * rr + cx
        src_r = -sin * cc + cos * rr + cy
        out = _sample(rgb, src_r, src_c, mode="constant", cval=0.0)
    elif kind is ImageAttack.TRANSLATE2D:
        dx = int(round(v * w))
        out = np.zeros_like(rgb)
        if dx < w:
            out[:, dx:] = rgb[:, : w - dx]
    else:
        raise ValueError(f"unknown image attack {kind}")
    return Image(np.clip(out, 0.0, 1.0))
