import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import ssim_constant
from splatmark.image import Image
from splatmark.metrics import PSNR_CAP, fidelity_report, gaussian_window, psnr, ssim


def gray(v, size=16):
    return Image(np.full((size, size, 3), v))


def noisy(img, sigma, seed):
    return Image(img.rgb + np.random.default_rng(seed).normal(scale=sigma, size=img.rgb.shape))


def textured(seed=0, size=32):
    return Image(np.random.default_rng(seed).uniform(0.2, 0.8, size=(size, size, 3)))


class TestPsnr:
    def test_identical_capped(self):
        a = textured()
        assert psnr(a, a) == PSNR_CAP == 99.0

    def test_uniform_diff_01(self):
        assert psnr(gray(0.5), gray(0.6)) == pytest.approx(20.0, abs=1e-9)

    def test_uniform_diff_001(self):
        assert psnr(gray(0.5), gray(0.51)) == pytest.approx(40.0, abs=1e-9)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimensions"):
            psnr(gray(0.5, 16), gray(0.5, 17))

    @given(st.integers(0, 1000), st.floats(0.001, 0.3))
    def test_symmetric_nonnegative(self, seed, sigma):
        a = textured(seed)
        b = noisy(a, sigma, seed + 1)
        assert psnr(a, b) == psnr(b, a)
        assert psnr(a, b) >= 0


class TestSsim:
    def test_identical(self):
        a = textured()
        assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)

    def test_constant_images(self):
        want = ssim_constant(0.5, 0.6)
        assert ssim(gray(0.5), gray(0.6)) == pytest.approx(want, abs=1e-12)
        # closed form with C1 = 1e-4, C2 = 9e-4
        assert want == pytest.approx(0.6001 / 0.6101, abs=1e-15)
        assert want == pytest.approx(0.983609, abs=5e-7)

    def test_window_normalised(self):
        w = gaussian_window()
        assert w.shape == (11,) and w.sum() == pytest.approx(1.0, abs=1e-15)
        assert w[5] == w.max()

    def test_noise_monotone(self):
        a = textured(3, 48)
        assert ssim(a, noisy(a, 0.2, 1)) < ssim(a, noisy(a, 0.02, 1))

    def test_too_small(self):
        with pytest.raises(ValueError, match="window"):
            ssim(gray(0.5, 10), gray(0.5, 10))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            ssim(gray(0.5, 16), gray(0.5, 20))

    @given(st.integers(0, 1000), st.floats(0.001, 0.5))
    def test_symmetric_bounded(self, seed, sigma):
        a = textured(seed, 24)
        b = noisy(a, sigma, seed + 7)
        s = ssim(a, b)
        assert abs(s - ssim(b, a)) <= 1e-12
        assert -1 <= s <= 1


class TestReport:
    def test_aggregate_is_mean(self):
        refs = [textured(i) for i in range(3)]
        tests = [noisy(r, 0.05 * (i + 1), i) for i, r in enumerate(refs)]
        rep = fidelity_report(refs, tests)
        assert rep.psnr == pytest.approx(np.mean([psnr(r, t) for r, t in zip(refs, tests)]))
        assert rep.ssim == pytest.approx(np.mean([ssim(r, t) for r, t in zip(refs, tests)]))
        d = json.loads(rep.to_json())
        assert len(d["per_view"]) == 3 and d["psnr"] >= 0 and d["ssim"] <= 1

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            fidelity_report([], [])
