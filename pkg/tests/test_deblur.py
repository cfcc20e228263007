import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.ndimage import convolve1d, correlate1d, gaussian_filter

from hybridblur.capture import MotionScript, NoiseParams, make_capture, random_scene
from hybridblur.deblur import (BlurOperator, SolverError, deblur, deconvolve_cg, deconvolve_rl, grad,
                               grad_adjoint, poisson_nll, polyline_samples)
from hybridblur.imaging import Image, psnr
from hybridblur.trajectory import KERNEL_TIMES, KernelField
from conftest import oracle_kernels, smooth_texture


def random_kernels(h, w, seed, scale=3.0):
    """Smoothly varying curved kernels, anchored anywhere along their path."""
    r = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    a = r.uniform(-1, 1, size=(6,)) * scale
    vx = a[0] + a[1] * xx + a[2] * yy
    vy = a[3] + a[4] * xx + a[5] * yy
    curl = r.uniform(-1, 1) * scale
    t = KERNEL_TIMES[:, None, None] - r.uniform(0, 1)
    taps = np.stack([np.dstack([vx * tt + curl * tt ** 2, vy * tt - curl * tt ** 3]) for tt in t])
    return KernelField(taps, KERNEL_TIMES, np.array([0.0, 1.0]), np.zeros(9, bool), np.ones((h, w), bool))


def uniform_kernels(h, w, vx, vy):
    taps = np.stack([np.full((h, w, 2), [(t - 0.5) * vx, (t - 0.5) * vy]) for t in KERNEL_TIMES])
    return KernelField(taps, KERNEL_TIMES, np.array([0.0, 1.0]), np.zeros(9, bool), np.ones((h, w), bool))


def dense_oracle(kf, substeps=4):
    """Explicit PSF matrix, one output pixel at a time."""
    h, w = kf.height, kf.width
    taps = kf.taps - kf.taps[4]
    pts = []
    for k in range(8):
        for j in range(substeps):
            pts.append((k, j / substeps))
    pts.append((7, 1.0))
    wts = np.ones(len(pts))
    wts[0] = wts[-1] = 0.5
    A = np.zeros((h * w, h * w))
    for yi in range(h):
        for xi in range(w):
            row = np.zeros(h * w)
            total = 0.0
            for (k, u), wt in zip(pts, wts):
                d = taps[k, yi, xi] + u * (taps[k + 1, yi, xi] - taps[k, yi, xi]) if u < 1 else taps[8, yi, xi]
                sx, sy = xi - d[0], yi - d[1]
                x0, y0 = int(np.floor(sx)), int(np.floor(sy))
                for cx, cy in ((x0, y0), (x0 + 1, y0), (x0, y0 + 1), (x0 + 1, y0 + 1)):
                    bw = (1 - abs(sx - cx)) * (1 - abs(sy - cy))
                    if bw > 0 and 0 <= cx < w and 0 <= cy < h:
                        row[cy * w + cx] += wt * bw
                        total += wt * bw
            if total > 0:
                A[yi * w + xi] = row / total
            else:
                A[yi * w + xi, yi * w + xi] = 1.0
    return A


def test_polyline_samples():
    taps = np.linspace(0, 8, 9)[:, None] * np.array([1.0, 0.0])
    pts, w = polyline_samples(taps, 4)
    assert pts.shape == (33, 2) and w.sum() == pytest.approx(1.0)
    assert np.allclose(pts[:, 0], np.linspace(0, 8, 33))
    assert w[0] == w[-1] == pytest.approx(w[1] / 2)


def test_zero_kernels_identity():
    A = BlurOperator(KernelField.zeros(16, 20))
    x = np.random.default_rng(0).random((16, 20, 3))
    assert np.allclose(A.apply(x), x, atol=1e-6)
    assert np.allclose(A.apply_adjoint(x), x, atol=1e-6)


def test_dense_oracle_small_instances():
    for seed in range(3):
        kf = random_kernels(32, 32, seed, scale=6.0)
        A = BlurOperator(kf)
        D = dense_oracle(kf)
        x = np.random.default_rng(seed).random((32, 32))
        got = A.apply(x)[..., 0].ravel()
        assert np.sqrt(np.mean((got - D @ x.ravel()) ** 2)) < 1e-6


def test_flat_in_flat_out():
    for seed in range(4):
        A = BlurOperator(random_kernels(40, 36, seed, scale=12.0))
        out = A.apply(np.full((40, 36), 0.37))
        assert np.abs(out - 0.37).max() < 1e-5


@given(st.integers(0, 10_000))
def test_psf_rows_nonnegative_and_normalized(seed):
    A = BlurOperator(random_kernels(16, 16, seed, scale=8.0))
    M = A.matrix
    assert M.min() >= 0
    assert np.allclose(np.asarray(M.sum(axis=1)).ravel(), 1.0)


@given(st.integers(0, 10_000))
def test_adjoint_identity(seed):
    r = np.random.default_rng(seed)
    A = BlurOperator(random_kernels(24, 24, seed, scale=5.0))
    x, y = r.standard_normal((24, 24)), r.standard_normal((24, 24))
    lhs = np.sum(A.apply(x)[..., 0] * y)
    rhs = np.sum(x * A.apply_adjoint(y)[..., 0])
    assert abs(lhs - rhs) <= 1e-5 * np.linalg.norm(x) * np.linalg.norm(y)


def test_linearity():
    r = np.random.default_rng(4)
    A = BlurOperator(random_kernels(20, 20, 4))
    x, y = r.random((20, 20)), r.random((20, 20))
    assert np.allclose(A.apply(2.5 * x - 0.7 * y), 2.5 * A.apply(x) - 0.7 * A.apply(y), atol=1e-6)


def line_psf(length, reach):
    """Exact box-along-x of width ``length`` convolved with the bilinear tent."""
    j = np.arange(-reach, reach + 1, dtype=float)
    s = np.linspace(-length / 2, length / 2, 200001)
    tent = np.maximum(0, 1 - np.abs(j[:, None] - s[None, :]))
    return np.trapezoid(tent, s, axis=1) / length


@pytest.mark.parametrize("length", [8.0, 5.0])
def test_uniform_kernels_match_line_convolution(length):
    h, w = 40, 60
    img = random_scene(h, w, np.random.default_rng(1)).data[..., 0]
    A = BlurOperator(uniform_kernels(h, w, length, 0.0))
    k = line_psf(length, 6)
    m = 8
    fwd = A.apply(img)[..., 0]
    ref = correlate1d(img, k[::-1], axis=1)
    assert np.sqrt(np.mean((fwd - ref)[:, m:-m] ** 2)) < 1e-4
    adj = A.apply_adjoint(img)[..., 0]
    ref_adj = convolve1d(img, k[::-1], axis=1)
    assert np.sqrt(np.mean((adj - ref_adj)[:, m:-m] ** 2)) < 1e-4


def test_small_kernel_perturbation_is_benign():
    # kernels vary smoothly in space, so perturbations are smooth fields too
    h, w = 64, 64
    img = random_scene(h, w, np.random.default_rng(2)).data
    kf = random_kernels(h, w, 3, scale=6.0)
    base = BlurOperator(kf).apply(img)
    r = np.random.default_rng(9)
    fields = [np.broadcast_to([0.25 / np.sqrt(2), -0.25 / np.sqrt(2)], kf.taps.shape)]
    for _ in range(3):
        d = gaussian_filter(r.standard_normal(kf.taps.shape), (0, 8, 8, 0))
        fields.append(d * 0.25 / np.linalg.norm(d, axis=-1).max())
    for d in fields:
        kp = KernelField(kf.taps + d, kf.times, kf.r, kf.extrapolated, kf.valid)
        out = BlurOperator(kp).apply(img)
        assert np.sqrt(np.mean((out - base) ** 2)) <= 0.01 * np.sqrt(np.mean(base ** 2))


def test_dimension_mismatch():
    A = BlurOperator(KernelField.zeros(8, 8))
    with pytest.raises(ValueError):
        A.apply(np.zeros((8, 9)))


@pytest.fixture(scope="module")
def blurred_scene():
    te = 7 / 30
    script = MotionScript.constant_velocity(60.0, 25.0, 0.0, te, center=(71.5, 71.5), omega=0.4)
    cap = make_capture(2, wide_dims=(144, 144), subframes=7, script=script, noise_wide=NoiseParams(0, 0),
                       noise_burst=NoiseParams(0, 0))
    return cap, oracle_kernels(cap.manifest)


def test_rl_zero_kernels_fixed_point():
    W = Image(smooth_texture(24, 24))
    x, log = deconvolve_rl(W, BlurOperator(KernelField.zeros(24, 24)), 7)
    assert np.allclose(x.data, W.data, atol=1e-12) and len(log) == 7


def test_rl_improves_and_stays_nonnegative(blurred_scene):
    cap, kf = blurred_scene
    x, log = deconvolve_rl(cap.wide, BlurOperator(kf), 30)
    assert x.data.min() >= 0
    # content entering through the frame edge is not modeled, so score the interior
    crop = (slice(12, -12), slice(12, -12))
    gain = psnr(Image(x.data[crop]), Image(cap.gt.data[crop])) - psnr(Image(cap.wide.data[crop]),
                                                                       Image(cap.gt.data[crop]))
    assert gain >= 3.0
    nll = [e["nll"] for e in log]
    assert all(b <= a + 1e-9 * abs(a) for a, b in zip(nll, nll[1:]))


def test_rl_rejects_bad_input():
    A = BlurOperator(KernelField.zeros(8, 8))
    with pytest.raises(ValueError):
        deconvolve_rl(Image(np.full((8, 8), -0.1)), A)
    with pytest.raises(ValueError):
        deconvolve_rl(Image(np.zeros((8, 8))), A, floor=0)


def test_poisson_nll_minimized_at_data():
    W = np.array([0.2, 0.5, 0.9])
    assert poisson_nll(W, W) < poisson_nll(W * 1.1, W)


def test_grad_adjoint():
    r = np.random.default_rng(0)
    x = r.standard_normal((9, 11))
    gx, gy = r.standard_normal((2, 9, 11))
    ax, ay = grad(x)
    assert np.sum(ax * gx + ay * gy) == pytest.approx(np.sum(x * grad_adjoint(gx, gy)))


def test_cg_identity_with_zero_lambda():
    W = Image(smooth_texture(20, 20))
    x, log = deconvolve_cg(W, BlurOperator(KernelField.zeros(20, 20)), lam=0.0, iterations=1)
    assert np.allclose(x.data, W.data, atol=1e-12)


def test_cg_residual_monotone(blurred_scene):
    cap, kf = blurred_scene
    _, log = deconvolve_cg(cap.wide, BlurOperator(kf), lam=1e-3, iterations=40)
    res = [e["residual"] for e in log]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(res, res[1:]))
    assert res[-1] < 0.1 * res[0]


def test_cg_lambda_sweep_smooths(blurred_scene):
    cap, kf = blurred_scene
    A = BlurOperator(kf)
    energy = []
    for lam in (1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0):
        x, _ = deconvolve_cg(cap.wide, A, lam=lam, iterations=60)
        gx, gy = grad(x.data[..., 0])
        energy.append(np.sum(gx ** 2 + gy ** 2))
    assert all(b < a for a, b in zip(energy, energy[1:]))


def test_cg_input_validation():
    A = BlurOperator(KernelField.zeros(8, 8))
    with pytest.raises(ValueError):
        deconvolve_cg(Image(np.zeros((8, 8))), A, lam=-1)
    assert issubclass(SolverError, RuntimeError)


def test_deblur_dispatch():
    W = Image(smooth_texture(12, 12))
    kf = KernelField.zeros(12, 12)
    assert np.allclose(deblur(W, kf, "cg", 3, lam=0.0)[0].data, W.data)
    with pytest.raises(ValueError):
        deblur(W, kf, "wiener")


def test_cg_heavy_regularization_tends_to_data_mean(blurred_scene):
    cap, kf = blurred_scene
    x, _ = deconvolve_cg(cap.wide, BlurOperator(kf), lam=1e6, iterations=20)
    assert np.abs(x.data - cap.wide.data.mean()).max() < 1e-3
