"""Dense optical flow by coarse-to-fine iterative Lucas-Kanade, and flow
composition.

Convention: a flow "from A to B" lives on A's pixel grid and sends the
A-pixel p to the B-position ``p + f(p)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter, uniform_filter

from . import io as hio
from .imaging import Image, bilinear_sample, pixel_grid


@dataclass
class FlowParams:
    levels: int = 4
    radius: int = 7
    iterations: int = 10
    # structure-tensor eigenvalue at which confidence reaches 0.5
    conf_scale: float = 1e-4
    max_step: float = 2.0


@dataclass
class FlowField:
    flow: np.ndarray
    confidence: np.ndarray

    def __post_init__(self):
        self.flow = np.asarray(self.flow, dtype=np.float64)
        self.confidence = np.asarray(self.confidence, dtype=np.float64)
        if self.flow.ndim != 3 or self.flow.shape[2] != 2:
            raise ValueError("flow must have shape (H, W, 2)")
        if self.confidence.shape != self.flow.shape[:2]:
            raise ValueError("confidence shape does not match flow")
        if not (np.all(np.isfinite(self.flow)) and np.all(np.isfinite(self.confidence))):
            raise ValueError("flow field must be finite")
        if self.confidence.min(initial=0.0) < 0 or self.confidence.max(initial=0.0) > 1:
            raise ValueError("confidence must lie in [0, 1]")

    @property
    def height(self):
        return self.flow.shape[0]

    @property
    def width(self):
        return self.flow.shape[1]

    @classmethod
    def zeros(cls, height, width, confidence=1.0):
        return cls(np.zeros((height, width, 2)), np.full((height, width), float(confidence)))

    @classmethod
    def constant(cls, height, width, dx, dy, confidence=1.0):
        f = np.empty((height, width, 2))
        f[..., 0], f[..., 1] = dx, dy
        return cls(f, np.full((height, width), float(confidence)))

    def save(self, path):
        """Write ``path`` as 3-channel PFM (dx, dy, 0) and the confidence as a
        1-channel PFM next to it with suffix ``.conf.pfm``."""
        path = Path(path)
        hio.save_vector_field(path, self.flow)
        hio.write_pfm(_conf_path(path), self.confidence)

    @classmethod
    def load(cls, path):
        path = Path(path)
        vec, _ = hio.load_vector_field(path)
        return cls(vec, np.clip(hio.read_pfm(_conf_path(path)), 0.0, 1.0))


def _conf_path(path: Path) -> Path:
    return path.with_name(path.stem + ".conf.pfm")


def _gray(img) -> tuple:
    if isinstance(img, Image):
        return img.luminance(), img.mask.astype(np.float64)
    a = np.asarray(img, dtype=np.float64)
    return a, np.ones(a.shape)


def _pyr_down(a: np.ndarray) -> np.ndarray:
    return gaussian_filter(a, 1.0, mode="nearest")[::2, ::2]


def _upsample_flow(flow: np.ndarray, shape) -> np.ndarray:
    x, y = pixel_grid(*shape)
    vals, _ = bilinear_sample(flow, x / 2.0, y / 2.0)
    return 2.0 * vals


def structure_confidence(img: np.ndarray, weight: np.ndarray, radius: int, scale: float) -> np.ndarray:
    """Normalized smaller eigenvalue of the windowed structure tensor."""
    gy, gx = np.gradient(img)
    size = 2 * radius + 1
    a = uniform_filter(weight * gx * gx, size, mode="nearest")
    b = uniform_filter(weight * gx * gy, size, mode="nearest")
    c = uniform_filter(weight * gy * gy, size, mode="nearest")
    lam = 0.5 * (a + c) - np.sqrt(0.25 * (a - c) ** 2 + b * b)
    lam = np.maximum(lam, 0.0)
    return lam / (lam + scale)


def _lk_level(src, dst, wsrc, wdst, flow, radius, iterations, max_step):
    h, w = src.shape
    size = 2 * radius + 1
    x, y = pixel_grid(h, w)
    gsy, gsx = np.gradient(src)
    gdy, gdx = np.gradient(dst)
    stacked = np.dstack([dst, gdx, gdy, wdst])
    eps = 1e-9
    for _ in range(iterations):
        vals, inside = bilinear_sample(stacked, x + flow[..., 0], y + flow[..., 1], clamp=True)
        warped, wgx, wgy, wv = vals[..., 0], vals[..., 1], vals[..., 2], vals[..., 3]
        wt = wsrc * inside * (wv > 0.999)
        gx = 0.5 * (gsx + wgx)
        gy = 0.5 * (gsy + wgy)
        it = warped - src
        # each constraint is linearized at its own pixel's flow: the solve
        # returns the window's least-squares flow rather than an increment
        fx, fy = flow[..., 0], flow[..., 1]
        normal = gx * fx + gy * fy - it
        a = uniform_filter(wt * gx * gx, size, mode="nearest") + eps
        b = uniform_filter(wt * gx * gy, size, mode="nearest")
        c = uniform_filter(wt * gy * gy, size, mode="nearest") + eps
        bx = uniform_filter(wt * gx * normal, size, mode="nearest") + eps * fx
        by = uniform_filter(wt * gy * normal, size, mode="nearest") + eps * fy
        det = a * c - b * b
        dx = (c * bx - b * by) / det - fx
        dy = (a * by - b * bx) / det - fy
        step = np.hypot(dx, dy)
        shrink = np.where(step > max_step, max_step / np.maximum(step, 1e-12), 1.0)
        flow[..., 0] += dx * shrink
        flow[..., 1] += dy * shrink
        if np.max(step) < 1e-4:
            break
    return flow


def estimate_flow(src, dst, params: FlowParams | None = None) -> FlowField:
    """Flow from ``src`` to ``dst`` (``src(p) ~ dst(p + f(p))``)."""
    params = params or FlowParams()
    s, ws = _gray(src)
    d, wd = _gray(dst)
    if s.shape != d.shape:
        raise ValueError(f"flow inputs differ in size: {s.shape} vs {d.shape}")
    win = 2 * params.radius + 1
    if min(s.shape) < win:
        raise ValueError(f"images smaller than the {win}x{win} flow window")
    pyr = [(s, d, ws, wd)]
    for _ in range(params.levels - 1):
        ps, pd, pws, pwd = pyr[-1]
        if min(ps.shape) // 2 < win:
            break
        pyr.append((_pyr_down(ps), _pyr_down(pd), _pyr_down(pws) > 0.999, _pyr_down(pwd) > 0.999))
    flow = np.zeros(pyr[-1][0].shape + (2,))
    for lvl in range(len(pyr) - 1, -1, -1):
        ps, pd, pws, pwd = pyr[lvl]
        if flow.shape[:2] != ps.shape:
            flow = _upsample_flow(flow, ps.shape)
        flow = _lk_level(ps, pd, np.asarray(pws, float), np.asarray(pwd, float), flow,
                         params.radius, params.iterations, params.max_step)
    conf = structure_confidence(s, ws, params.radius, params.conf_scale) * (ws > 0)
    # pixels whose target lands outside dst carry no evidence
    _, inside = bilinear_sample(wd, pixel_grid(*s.shape)[0] + flow[..., 0], pixel_grid(*s.shape)[1] + flow[..., 1])
    conf = np.where(inside, conf, 0.0)
    return FlowField(flow, np.clip(conf, 0.0, 1.0))


def compose_flows(f_ab: FlowField, f_bc: FlowField) -> FlowField:
    """Flow from A to C: ``f_ab(p) + f_bc(p + f_ab(p))`` sampled bilinearly.

    Samples landing outside B extend ``f_bc`` constantly and get zero
    confidence.
    """
    if f_ab.flow.shape != f_bc.flow.shape:
        raise ValueError("flow fields differ in size")
    x, y = pixel_grid(f_ab.height, f_ab.width)
    px = x + f_ab.flow[..., 0]
    py = y + f_ab.flow[..., 1]
    stacked = np.dstack([f_bc.flow, f_bc.confidence])
    vals, inside = bilinear_sample(stacked, px, py, clamp=True)
    flow = f_ab.flow + vals[..., :2]
    conf = np.where(inside, np.minimum(f_ab.confidence, vals[..., 2]), 0.0)
    return FlowField(flow, np.clip(conf, 0.0, 1.0))


def warp_by_flow(img: Image, f: FlowField) -> Image:
    """Sample ``img`` at ``p + f(p)``; out-of-bounds pixels are masked off."""
    x, y = pixel_grid(f.height, f.width)
    vals, inside = bilinear_sample(img.data, x + f.flow[..., 0], y + f.flow[..., 1])
    mvals, _ = bilinear_sample(img.mask.astype(float), x + f.flow[..., 0], y + f.flow[..., 1])
    valid = inside & (mvals >= 1.0 - 1e-9)
    return Image(np.where(valid[..., None], vals, 0.0), valid)
