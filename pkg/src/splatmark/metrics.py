"""Image fidelity metrics: PSNR on RGB and single-scale SSIM on luma."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from splatmark.image import Image

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_dims(a: Image, b: Image) -> None:
    if a.rgb.shape != b.rgb.shape:
        raise ValueError(f"image dimensions differ: {a.rgb.shape} vs {b.rgb.shape}")


def psnr(a: Image, b: Image) -> float:
    """Peak-1.0 PSNR over all channels, capped at 99 dB."""
    _check_dims(a, b)
    mse = float(np.mean((a.rgb - b.rgb) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-(r**2) / (2 * sigma**2))
    return w / w.sum()


def _filter_valid(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    # separable correlation, then keep only positions where the window fits
    y = correlate1d(correlate1d(x, w, axis=0, mode="constant"), w, axis=1, mode="constant")
    h = len(w) // 2
    return y[h:x.shape[0] - h, h:x.shape[1] - h]


def ssim(a: Image, b: Image) -> float:
    """Mean SSIM over all 11x11 window positions, on Rec.601 luma, dynamic range 1."""
    _check_dims(a, b)
    if min(a.height, a.width) < SSIM_WINDOW:
        raise ValueError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    x, y = a.luma(), b.luma()
    w = gaussian_window()
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    mx, my = _filter_valid(x, w), _filter_valid(y, w)
    sxx = _filter_valid(x * x, w) - mx * mx
    syy = _filter_valid(y * y, w) - my * my
    sxy = _filter_valid(x * y, w) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


@dataclass
class FidelityReport:
    psnr: float
    ssim: float
    per_view: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"psnr": self.psnr, "ssim": self.ssim, "per_view": self.per_view}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def fidelity_report(reference: list[Image], test: list[Image]) -> FidelityReport:
    if len(reference) != len(test) or not reference:
        raise ValueError("need matching, non-empty view lists")
    views = [{"view": i, "psnr": psnr(r, t), "ssim": ssim(r, t)} for i, (r, t) in enumerate(zip(reference, test))]
    return FidelityReport(
        psnr=float(np.mean([v["psnr"] for v in views])),
        ssim=float(np.mean([v["ssim"] for v in views])),
        per_view=views,
    )
