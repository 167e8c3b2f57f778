"""RGB float images and binary PPM (P6) I/O."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True, eq=False)
class Image:
    rgb: np.ndarray  # (H, W, 3) float64 in [0, 1]

    def __post_init__(self):
        rgb = np.asarray(self.rgb, dtype=np.float64)
        if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.shape[0] < 1 or rgb.shape[1] < 1:
            raise ValueError(f"expected (H, W, 3) image, got {rgb.shape}")
        if not np.all(np.isfinite(rgb)):
            raise ValueError("image contains non-finite values")
        rgb = np.clip(rgb, 0.0, 1.0)
        rgb.flags.writeable = False
        object.__setattr__(self, "rgb", rgb)

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def width(self) -> int:
        return self.rgb.shape[1]

    @classmethod
    def filled(cls, width: int, height: int, color=(0.0, 0.0, 0.0)) -> "Image":
        return cls(np.broadcast_to(np.asarray(color, dtype=np.float64), (height, width, 3)).copy())

    def to_uint8(self) -> np.ndarray:
        return np.round(self.rgb * 255.0).astype(np.uint8)

    def luma(self) -> np.ndarray:
        """Rec.601 luma."""
        return self.rgb @ np.array([0.299, 0.587, 0.114])


def encode_ppm(img: Image) -> bytes:
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.to_uint8().tobytes()


def write_ppm(img: Image, path: str | Path) -> None:
    Path(path).write_bytes(encode_ppm(img))


def decode_ppm(blob: bytes) -> Image:
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            pos = blob.index(b"\n", pos) + 1
            continue
        start = pos
        while not blob[pos:pos + 1].isspace():
            pos += 1
        tokens.append(blob[start:pos])
    pos += 1
    if tokens[0] != b"P6" or int(tokens[3]) != 255:
        raise ValueError("only 8-bit binary PPM (P6) is supported")
    w, h = int(tokens[1]), int(tokens[2])
    data = np.frombuffer(blob, dtype=np.uint8, count=w * h * 3, offset=pos)
    return Image(data.reshape(h, w, 3) / 255.0)


def read_ppm(path: str | Path) -> Image:
    return decode_ppm(Path(path).read_bytes())


def difference_image(a: Image, b: Image, gain: float = 10.0) -> Image:
    """Amplified absolute difference, clamped to [0, 1]."""
    if a.rgb.shape != b.rgb.shape:
        raise ValueError("image dimensions differ")
    return Image(np.clip(gain * np.abs(a.rgb - b.rgb), 0.0, 1.0))
