import numpy as np
import pytest
from hypothesis import given, strategies as st
from skimage.metrics import structural_similarity

from hybridblur.imaging import (Homography, Image, bilinear_sample, downsample_avg, downscale_map, psnr, ssim,
                                upsample_bilinear, warp_image)
from conftest import smooth_texture


def test_image_rejects_bad_input():
    with pytest.raises(ValueError):
        Image(np.zeros((4, 4, 2)))
    with pytest.raises(ValueError):
        Image(np.array([[np.nan]]))
    img = Image(np.zeros((3, 5)))
    assert img.shape == (3, 5, 1) and img.mask.all()


def test_homography_normalized_and_invertible():
    H = Homography(2.0 * np.array([[1, 0.1, 3], [0, 1, 2], [0.001, 0, 1.0]]))
    assert H.matrix[2, 2] == 1.0
    assert np.allclose((H @ H.inverse()).matrix, np.eye(3))
    with pytest.raises(ValueError):
        Homography(np.zeros((3, 3)))


def test_warp_identity_is_bit_exact(rng):
    img = Image(rng.random((20, 30, 3)))
    out = warp_image(img, Homography.identity(), 30, 20)
    assert np.array_equal(out.data, img.data)
    assert out.mask.all()


def test_warp_half_pixel_impulse_split():
    data = np.zeros((9, 12))
    data[4, 6] = 1.0
    out = warp_image(Image(data), Homography.translation(2.5, 0.0), 12, 9)
    # output p samples input at p + 2.5, so the impulse lands on x = 3.5
    assert out.data[4, 3, 0] == pytest.approx(0.5)
    assert out.data[4, 4, 0] == pytest.approx(0.5)
    assert out.data.sum() == pytest.approx(1.0)
    assert not out.mask[:, 10:].any() and out.mask[:, :9].all()


def test_warp_scaling_constant_image():
    img = Image.constant(40, 40, 0.3)
    out = warp_image(img, Homography.scaling(2.0), 40, 40)
    assert np.allclose(out.data[out.mask], 0.3)
    assert out.mask[:20, :20].all()
    assert not out.mask[25:, :].any()


def test_warp_rejects_singular():
    with pytest.raises(ValueError):
        warp_image(Image.constant(4, 4), Homography(np.diag([1.0, 0.0, 1.0])), 4, 4)


def test_warp_composition():
    img = Image(smooth_texture(80, 80, sigma=12.0))
    H1 = Homography([[1.02, 0.03, 1.3], [-0.02, 0.99, -0.7], [1e-4, 0, 1]])
    H2 = Homography([[0.98, -0.01, 2.2], [0.02, 1.01, 0.4], [0, -1e-4, 1]])
    two = warp_image(warp_image(img, H2, 80, 80), H1, 80, 80)
    one = warp_image(img, H2 @ H1, 80, 80)
    both = two.mask & one.mask
    assert both.sum() > 3000
    assert np.max(np.abs(two.data - one.data)[both]) < 1e-3


def test_bilinear_sample_edges():
    arr = np.arange(12.0).reshape(3, 4)
    v, inside = bilinear_sample(arr, np.array([3.0, 3.0 + 1e-12, 3.5]), np.array([2.0, 2.0, 0.0]))
    assert inside.tolist() == [True, True, False]
    assert v[0] == 11.0


def test_downsample_examples():
    img = Image(np.array([[0.0, 0.0], [1.0, 1.0]]))
    assert downsample_avg(img, 2).data[0, 0, 0] == 0.5
    r = np.random.default_rng(0).random((12, 18))
    assert np.array_equal(downsample_avg(Image(r), 1).data[..., 0], r)
    with pytest.raises(ValueError):
        downsample_avg(img, 0)


def test_downsample_full_resolution_shape():
    big = Image(np.zeros((2160, 3840)))
    assert downsample_avg(big, 6).shape[:2] == (360, 640)


def test_downsample_mask_any_invalid():
    mask = np.ones((6, 6), bool)
    mask[0, 0] = False
    out = downsample_avg(Image(np.ones((6, 6)), mask), 3)
    assert out.mask.tolist() == [[False, True], [True, True]]


@given(st.integers(1, 6), st.integers(1, 5), st.integers(1, 5), st.integers(0, 10_000))
def test_downsample_preserves_mean(f, bh, bw, seed):
    r = np.random.default_rng(seed).random((f * bh, f * bw))
    out = downsample_avg(Image(r), f)
    assert abs(out.data.mean() - r.mean()) < 1e-6


def test_downscale_map_block_centers():
    S = downscale_map(6)
    x, y = S.apply(np.array([2.5, 8.5]), np.array([2.5, 2.5]))
    assert np.allclose(x, [0.0, 1.0]) and np.allclose(y, [0.0, 0.0])


def test_upsample_constant():
    out = upsample_bilinear(np.full((4, 5), 0.7), 6, 24, 30)
    assert out.shape == (24, 30) and np.allclose(out, 0.7)


def test_psnr_examples():
    a = Image.constant(16, 16, 0.0)
    b = Image.constant(16, 16, 0.1)
    assert psnr(a, a) == 99.0
    assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)
    assert psnr(a, b) == psnr(b, a)
    with pytest.raises(ValueError):
        psnr(a, Image.constant(8, 8))
    with pytest.raises(ValueError):
        psnr(a, Image(b.data, np.zeros((16, 16), bool)))


def test_psnr_ignores_masked_pixels():
    a = Image.constant(8, 8, 0.5)
    d = a.data.copy()
    d[0, 0] = 0.0
    mask = np.ones((8, 8), bool)
    mask[0, 0] = False
    assert psnr(a, Image(d, mask)) == 99.0


def test_psnr_decreases_with_noise():
    clean = Image(smooth_texture(64, 64))
    means = []
    for amp in (0.01, 0.02, 0.04, 0.08):
        vals = [psnr(Image(clean.data + amp * np.random.default_rng(s).standard_normal(clean.data.shape)), clean)
                for s in range(10)]
        means.append(np.mean(vals))
    assert all(a > b for a, b in zip(means, means[1:]))


def test_ssim_examples():
    x = Image(smooth_texture(48, 48))
    assert ssim(x, x) == pytest.approx(1.0)
    checker = (np.indices((48, 48)).sum(axis=0) % 2).astype(float)
    assert ssim(Image(checker), Image(1.0 - checker)) < 0
    with pytest.raises(ValueError):
        ssim(Image(np.zeros((8, 8))), Image(np.zeros((8, 8))))


def test_ssim_noisy_flat_pinned():
    rng = np.random.default_rng(0)
    clean = Image(np.full((128, 128, 1), 0.5))
    noisy = Image(clean.data + 0.05 * rng.standard_normal(clean.data.shape))
    assert ssim(noisy, clean) == pytest.approx(0.2838802197196384, abs=1e-9)


def test_ssim_matches_reference_implementation():
    rng = np.random.default_rng(3)
    a = rng.random((64, 64))
    b = np.clip(a + 0.1 * rng.standard_normal(a.shape), 0, 1)
    ref = structural_similarity(a, b, gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
                                data_range=1.0)
    assert ssim(Image(a), Image(b)) == pytest.approx(ref, abs=1e-3)


def test_luminance_weights():
    img = Image(np.dstack([np.full((2, 2), 1.0), np.zeros((2, 2)), np.zeros((2, 2))]))
    assert np.allclose(img.luminance(), 0.299)
