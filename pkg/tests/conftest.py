import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("repo", deadline=None, max_examples=25, derandomize=True)
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def smooth_texture(h, w, seed=0, sigma=2.0):
    from scipy.ndimage import gaussian_filter
    r = np.random.default_rng(seed)
    t = gaussian_filter(r.random((h, w)), sigma)
    t = (t - t.min()) / (t.max() - t.min())
    return 0.1 + 0.8 * t


def oracle_kernels(manifest, script=None):
    """Exact gather kernels from a motion script: tap t of pixel y is the
    offset from where y's scene point sits at time t to y itself, with the
    latent frame at mid-exposure."""
    from hybridblur.imaging import pixel_grid
    from hybridblur.trajectory import KERNEL_TIMES, KernelField
    script = script or manifest.motion
    h, w = manifest.wide_dims
    x, y = pixel_grid(h, w)
    ts, te = manifest.wide_exposure
    tm = 0.5 * (ts + te)
    taps = np.zeros((9, h, w, 2))
    for k, t in enumerate(KERNEL_TIMES):
        bx, by = script.displacement(ts + t * (te - ts), tm, x, y)
        taps[k, ..., 0] = x - bx
        taps[k, ..., 1] = y - by
    return KernelField(taps, KERNEL_TIMES, np.array([0.0, 1.0]), np.zeros(9, bool), np.ones((h, w), bool))


ACCEPTANCE = []


def report(number, ok, detail):
    ACCEPTANCE.append(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
