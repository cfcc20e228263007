"""Image containers, homographies, bilinear resampling and quality metrics.

Coordinates follow the pixel-center convention: pixel ``(row i, col j)`` sits
at ``(x=j, y=i)``.  All samples are linear radiometry stored as float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

PSNR_CAP = 99.0
_EDGE_EPS = 1e-9


@dataclass
class Image:
    """Planar float raster of shape (H, W, C) with a per-pixel validity mask."""

    data: np.ndarray
    mask: np.ndarray = field(default=None)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ValueError(f"image must be HxW, HxWx1 or HxWx3, got {data.shape}")
        if data.shape[0] <= 0 or data.shape[1] <= 0:
            raise ValueError("image dimensions must be positive")
        if not np.all(np.isfinite(data)):
            raise ValueError("image samples must be finite")
        if self.mask is None:
            mask = np.ones(data.shape[:2], dtype=bool)
        else:
            mask = np.asarray(self.mask, dtype=bool)
            if mask.shape != data.shape[:2]:
                raise ValueError("mask shape does not match image")
        self.data = data
        self.mask = mask

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape

    def copy(self) -> "Image":
        return Image(self.data.copy(), self.mask.copy())

    def luminance(self) -> np.ndarray:
        if self.channels == 1:
            return self.data[:, :, 0]
        return self.data @ np.array([0.299, 0.587, 0.114])

    @classmethod
    def constant(cls, height: int, width: int, value: float = 0.0, channels: int = 1) -> "Image":
        return cls(np.full((height, width, channels), float(value)))


class Homography:
    """3x3 projective map, normalized so that ``H[2, 2] == 1``."""

    def __init__(self, matrix):
        m = np.array(matrix, dtype=np.float64).reshape(3, 3)
        if not np.all(np.isfinite(m)):
            raise ValueError("homography entries must be finite")
        if abs(m[2, 2]) < 1e-15:
            raise ValueError("homography cannot be normalized (H[2,2] == 0)")
        m = m / m[2, 2]
        if abs(np.linalg.det(m)) <= 1e-12:
            raise ValueError("homography is not invertible")
        self.matrix = m

    def __repr__(self):
        return f"Homography({self.matrix.tolist()!r})"

    def __matmul__(self, other: "Homography") -> "Homography":
        return Homography(self.matrix @ other.matrix)

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix))

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx: float, ty: float) -> "Homography":
        return cls([[1, 0, tx], [0, 1, ty], [0, 0, 1]])

    @classmethod
    def scaling(cls, sx: float, sy: float | None = None, cx: float = 0.0, cy: float = 0.0) -> "Homography":
        """Scale by (sx, sy) about the fixed point (cx, cy)."""
        sy = sx if sy is None else sy
        return cls([[sx, 0, cx - sx * cx], [0, sy, cy - sy * cy], [0, 0, 1]])

    def apply(self, x, y):
        """Map point arrays (x, y); returns the mapped (x', y')."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        m = self.matrix
        w = m[2, 0] * x + m[2, 1] * y + m[2, 2]
        xo = (m[0, 0] * x + m[0, 1] * y + m[0, 2]) / w
        yo = (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / w
        return xo, yo

    def tolist(self):
        return self.matrix.tolist()


def pixel_grid(height: int, width: int):
    """Return (x, y) coordinate arrays of shape (H, W)."""
    y, x = np.mgrid[0:height, 0:width].astype(np.float64)
    return x, y


def bilinear_sample(arr: np.ndarray, x: np.ndarray, y: np.ndarray, clamp: bool = False):
    """Sample ``arr`` (H, W) or (H, W, C) at float positions.

    Returns ``(values, inside)``.  Positions outside ``[0, W-1] x [0, H-1]``
    are flagged in ``inside``; their values are computed from clamped
    coordinates (constant edge extension), which is what ``clamp=True`` asks
    for and harmless otherwise.
    """
    h, w = arr.shape[:2]
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    inside = (x >= -_EDGE_EPS) & (x <= w - 1 + _EDGE_EPS) & (y >= -_EDGE_EPS) & (y <= h - 1 + _EDGE_EPS)
    inside &= np.isfinite(x) & np.isfinite(y)
    xc = np.clip(np.nan_to_num(x), 0.0, w - 1)
    yc = np.clip(np.nan_to_num(y), 0.0, h - 1)
    x0 = np.floor(xc).astype(np.intp)
    y0 = np.floor(yc).astype(np.intp)
    x0 = np.minimum(x0, w - 1)
    y0 = np.minimum(y0, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xc - x0
    fy = yc - y0
    if arr.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = arr[y0, x0] * (1.0 - fx) + arr[y0, x1] * fx
    bot = arr[y1, x0] * (1.0 - fx) + arr[y1, x1] * fx
    vals = top * (1.0 - fy) + bot * fy
    return vals, inside


def warp_image(img: Image, H: Homography, out_w: int, out_h: int) -> Image:
    """Inverse warp: output pixel p takes the bilinear sample of ``img`` at H(p).

    Output pixels whose source position falls outside ``img`` (or touches an
    invalid source pixel with nonzero weight) are masked off and zero-filled.
    """
    if not isinstance(H, Homography):
        H = Homography(H)
    x, y = pixel_grid(out_h, out_w)
    sx, sy = H.apply(x, y)
    vals, inside = bilinear_sample(img.data, sx, sy)
    if img.mask.all():
        valid = inside
    else:
        mvals, _ = bilinear_sample(img.mask.astype(np.float64), sx, sy)
        valid = inside & (mvals >= 1.0 - 1e-9)
    vals = np.where(valid[..., None], vals, 0.0)
    return Image(vals, valid)


def downsample_avg(img: Image, factor: int) -> Image:
    """Block-mean downsampling.  Trailing rows/columns that do not fill a
    whole block are cropped.  A block is valid only if all its pixels are."""
    factor = int(factor)
    if factor <= 0:
        raise ValueError("downsample factor must be >= 1")
    if factor == 1:
        return img.copy()
    h = img.height // factor
    w = img.width // factor
    if h == 0 or w == 0:
        raise ValueError("image smaller than one downsampling block")
    d = img.data[: h * factor, : w * factor]
    d = d.reshape(h, factor, w, factor, img.channels).mean(axis=(1, 3))
    m = img.mask[: h * factor, : w * factor].reshape(h, factor, w, factor).all(axis=(1, 3))
    return Image(d, m)


def downscale_map(factor: int) -> Homography:
    """Map from full-resolution pixel coordinates to block-mean coordinates."""
    c = (factor - 1) / 2.0
    return Homography([[1.0 / factor, 0, -c / factor], [0, 1.0 / factor, -c / factor], [0, 0, 1]])


def upsample_bilinear(arr: np.ndarray, factor: int, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear upsampling consistent with :func:`downsample_avg` pixel centers."""
    x, y = pixel_grid(out_h, out_w)
    sx, sy = downscale_map(factor).apply(x, y)
    vals, _ = bilinear_sample(arr, sx, sy)
    return vals


def _check_pair(a: Image, b: Image):
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    valid = a.mask & b.mask
    if not valid.any():
        raise ValueError("images share no valid pixels")
    return valid


def mse(a: Image, b: Image) -> float:
    valid = _check_pair(a, b)
    da = np.clip(a.data[valid], 0.0, 1.0)
    db = np.clip(b.data[valid], 0.0, 1.0)
    return float(np.mean((da - db) ** 2))


def psnr(a: Image, b: Image) -> float:
    err = mse(a, b)
    if err <= 0.0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(1.0 / err)))


def ssim(a: Image, b: Image, sigma: float = 1.5, win: int = 11, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean local SSIM on luminance (Gaussian window, dynamic range 1).

    The map is averaged over jointly valid pixels.
    """
    valid = _check_pair(a, b)
    if a.height < win or a.width < win:
        raise ValueError(f"image smaller than the {win}x{win} SSIM window")
    x = a.luminance()
    y = b.luminance()
    c1 = (k1 * 1.0) ** 2
    c2 = (k2 * 1.0) ** 2
    trunc = ((win - 1) / 2) / sigma

    def filt(z):
        return gaussian_filter(z, sigma, truncate=trunc, mode="reflect")

    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    smap = num / den
    return float(np.mean(smap[valid]))
