import math

import numpy as np
import pytest

from retouchkit.errors import InsufficientDatasetError, ShapeMismatchError, TooSmallError
from retouchkit.image import ImageBuffer, luminance
from retouchkit.metrics import (
    PSNR_CAP_DB,
    build_reference_pairs,
    delta_e,
    metric_report,
    psnr,
    ssim,
)
from retouchkit.scoring import GLOBAL_PROMPTS, StatsProvider

from conftest import random_image, synthetic_photo, uniform_image
from test_image import srgb_to_lab_scalar


def ssim_oracle(x, y):
    """Direct windowed SSIM on two luminance fields (explicit loops)."""
    half = 5
    ax = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(ax * ax) / (2 * 1.5**2))
    w = np.outer(g, g)
    w /= w.sum()
    c1, c2 = 0.01**2, 0.03**2
    h, wd = x.shape
    values = []
    for i in range(h - 10):
        for j in range(wd - 10):
            px = x[i : i + 11, j : j + 11]
            py = y[i : i + 11, j : j + 11]
            mx, my = (w * px).sum(), (w * py).sum()
            vx = (w * px * px).sum() - mx * mx
            vy = (w * py * py).sum() - my * my
            cxy = (w * px * py).sum() - mx * my
            values.append(
                ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
            )
    return float(np.mean(values))


class TestPSNR:
    def test_identical_is_cap(self):
        rng = np.random.default_rng(1)
        img = random_image(rng, 8, 8)
        assert psnr(img, img) == PSNR_CAP_DB

    def test_constant_offset_20db(self):
        a = uniform_image(8, 8, 0.4)
        b = uniform_image(8, 8, 0.5)
        assert psnr(a, b) == pytest.approx(20.0, abs=1e-6)

    def test_random_pair_matches_double_loop(self):
        rng = np.random.default_rng(3)
        a, b = random_image(rng, 6, 6), random_image(rng, 6, 6)
        total, count = 0.0, 0
        for i in range(6):
            for j in range(6):
                for c in range(3):
                    diff = float(a.data[i, j, c]) - float(b.data[i, j, c])
                    total += diff * diff
                    count += 1
        expected = 10.0 * math.log10(1.0 / (total / count))
        assert psnr(a, b) == pytest.approx(expected, abs=1e-9)

    def test_symmetry(self):
        rng = np.random.default_rng(5)
        a, b = random_image(rng, 8, 8), random_image(rng, 8, 8)
        assert psnr(a, b) == psnr(b, a)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            psnr(uniform_image(4, 4, 0.5), uniform_image(4, 5, 0.5))


class TestSSIM:
    def test_self_is_one(self):
        rng = np.random.default_rng(7)
        img = random_image(rng, 16, 16)
        assert ssim(img, img) == pytest.approx(1.0, abs=1e-9)

    def test_uniform_closed_form(self):
        a = uniform_image(16, 16, 0.5)
        b = uniform_image(16, 16, 0.6)
        v1, v2 = 0.5, float(np.float32(0.6))
        c1 = 0.01**2
        expected = (2 * v1 * v2 + c1) / (v1 * v1 + v2 * v2 + c1)
        assert ssim(a, b) == pytest.approx(expected, abs=1e-7)

    def test_binary_inversion_matches_windowed_oracle(self):
        rng = np.random.default_rng(9)
        bits = (rng.random((16, 16)) > 0.5).astype(np.float32)
        a = ImageBuffer(data=np.repeat(bits[:, :, None], 3, axis=2))
        b = ImageBuffer(data=1.0 - a.data)
        expected = ssim_oracle(
            luminance(a).astype(np.float64), luminance(b).astype(np.float64)
        )
        assert ssim(a, b) == pytest.approx(expected, abs=1e-9)

    def test_random_pair_matches_windowed_oracle(self):
        rng = np.random.default_rng(11)
        a, b = random_image(rng, 14, 18), random_image(rng, 14, 18)
        expected = ssim_oracle(
            luminance(a).astype(np.float64), luminance(b).astype(np.float64)
        )
        assert ssim(a, b) == pytest.approx(expected, abs=1e-9)

    def test_too_small(self):
        with pytest.raises(TooSmallError):
            ssim(uniform_image(8, 8, 0.5), uniform_image(8, 8, 0.5))


class TestDeltaE:
    def test_self_zero(self):
        rng = np.random.default_rng(13)
        img = random_image(rng, 8, 8)
        assert delta_e(img, img) == 0.0

    def test_black_vs_white_is_100(self):
        black = uniform_image(4, 4, 0.0)
        white = uniform_image(4, 4, 1.0)
        assert delta_e(black, white) == pytest.approx(100.0, abs=0.1)

    def test_random_pair_matches_scalar_oracle(self):
        rng = np.random.default_rng(15)
        a, b = random_image(rng, 4, 4), random_image(rng, 4, 4)
        total = 0.0
        for i in range(4):
            for j in range(4):
                la = srgb_to_lab_scalar(*(float(v) for v in a.data[i, j]))
                lb = srgb_to_lab_scalar(*(float(v) for v in b.data[i, j]))
                total += math.dist(la, lb)
        assert delta_e(a, b) == pytest.approx(total / 16.0, abs=1e-9)

    def test_symmetry(self):
        rng = np.random.default_rng(17)
        a, b = random_image(rng, 6, 6), random_image(rng, 6, 6)
        assert delta_e(a, b) == pytest.approx(delta_e(b, a), abs=1e-12)


def test_metric_report_identical():
    img = uniform_image(16, 16, 0.5)
    report = metric_report(img, img)
    assert report.as_dict() == {"psnr": 100.0, "ssim": 1.0, "delta_e": 0.0}


class TestReferencePairs:
    def test_duplicate_is_rank_one(self):
        rng = np.random.default_rng(19)
        base = synthetic_photo(rng, 32)
        duplicate = ImageBuffer(data=base.data.copy())
        others = [synthetic_photo(rng, 32) for _ in range(3)]
        dataset = [base, duplicate] + others
        pairs = build_reference_pairs(dataset, StatsProvider(), GLOBAL_PROMPTS, 1)
        assert pairs[0] == [1]
        assert pairs[1] == [0]

    def test_three_images_match_brute_force(self):
        from retouchkit.scoring import kl_selection_score, prompt_distribution

        rng = np.random.default_rng(21)
        dataset = [synthetic_photo(rng, 32) for _ in range(3)]
        provider = StatsProvider()
        pairs = build_reference_pairs(dataset, provider, GLOBAL_PROMPTS, 1)
        dists = [prompt_distribution(provider, img, GLOBAL_PROMPTS) for img in dataset]
        for i in range(3):
            best, best_d = None, None
            for j in range(3):
                if j == i:
                    continue
                d = kl_selection_score(dists[i], dists[j]) + kl_selection_score(dists[j], dists[i])
                if best_d is None or d < best_d:
                    best, best_d = j, d
            assert pairs[i] == [best]

    def test_never_pairs_with_self(self):
        rng = np.random.default_rng(23)
        dataset = [synthetic_photo(rng, 32) for _ in range(5)]
        pairs = build_reference_pairs(dataset, StatsProvider(), GLOBAL_PROMPTS, 3)
        for i, refs in enumerate(pairs):
            assert i not in refs
            assert len(refs) == 3

    def test_insufficient_dataset(self):
        rng = np.random.default_rng(25)
        dataset = [synthetic_photo(rng, 32) for _ in range(4)]
        with pytest.raises(InsufficientDatasetError):
            build_reference_pairs(dataset, StatsProvider(), GLOBAL_PROMPTS, 5)
