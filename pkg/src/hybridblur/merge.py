"""Alignment of the burst to the deblurred wide image at 1/6 scale, robust
weighted temporal merge, and band-pass detail injection at full scale."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .flow import FlowField, FlowParams, compose_flows, estimate_flow
from .imaging import (Homography, Image, bilinear_sample, downsample_avg, downscale_map, pixel_grid,
                      upsample_bilinear, warp_image)
from .trajectory import TrajectoryField, warp_trajectories

SCALE = 6
WEIGHT_FLOOR = 1e-3


@dataclass
class AlignedBurst:
    frames: np.ndarray      # (N, h, w, C) on the downsampled wide grid
    masks: np.ndarray       # (N, h, w)
    flows: np.ndarray       # (N, h, w, 2) from the downsampled wide image to each FOV-aligned frame
    weights: np.ndarray     # (N, h, w) in [0, 1]
    center: int
    H_down: Homography

    @property
    def n(self):
        return self.frames.shape[0]

    def confidence(self) -> np.ndarray:
        """Per-pixel merge confidence: mean frame weight."""
        return np.clip(np.mean(np.where(self.masks, self.weights, 0.0), axis=0), 0.0, 1.0)


def downscaled_homography(H: Homography, factor: int = SCALE) -> Homography:
    """Homography from the block-mean reduced wide grid to ultra-wide pixels.

    Only the domain is rescaled: the ultra-wide frames keep their own
    resolution.
    """
    return H @ downscale_map(factor).inverse()


def residual_weights(lum, ref, valid, confidence, sigma_w: float = 0.05, window: int = 3) -> np.ndarray:
    """Gaussian weight of the windowed RMS residual, times flow confidence."""
    sq = np.where(valid, (lum - ref) ** 2, 0.0)
    cnt = uniform_filter(valid.astype(float), window, mode="nearest")
    res2 = uniform_filter(sq, window, mode="nearest") / np.maximum(cnt, 1e-12)
    wt = np.exp(-res2 / (2.0 * sigma_w ** 2)) * confidence
    return np.where(valid, np.clip(wt, 0.0, 1.0), 0.0)


def align_burst(burst, P: TrajectoryField, H: Homography, W_D: Image, factor: int = SCALE,
                flow_params: FlowParams | None = None, sigma_w: float = 0.05, window: int = 3) -> AlignedBurst:
    """Bring every burst frame onto the block-mean reduced grid of W_D.

    Weights are ``exp(-res^2 / 2 sigma_w^2) * confidence`` where ``res`` is
    the local RMS luminance residual against reduced W_D over a
    ``window`` x ``window`` neighbourhood, so isolated coincidental matches
    of a misaligned frame do not earn weight.
    """
    frames = list(getattr(burst, "frames", burst))
    Wd = downsample_avg(W_D, factor)
    h, w = Wd.height, Wd.width
    H6 = downscaled_homography(H, factor)
    c = P.center
    U_c = warp_image(frames[c], H6, w, h)
    Pt = warp_trajectories(P, H6, h, w)
    F = estimate_flow(Wd, U_c, flow_params)
    x, y = pixel_grid(h, w)
    n = len(frames)
    ch = frames[0].channels
    out = np.zeros((n, h, w, ch))
    masks = np.zeros((n, h, w), dtype=bool)
    flows = np.zeros((n, h, w, 2))
    weights = np.zeros((n, h, w))
    ref = Wd.luminance()
    for i, fr in enumerate(frames):
        Pi = FlowField(Pt.maps[i], Pt.confidence[i])
        PW = compose_flows(F, Pi)
        # sample the original frame once: downsampled-wide -> aligned -> ultra-wide
        ux, uy = H6.apply(x + PW.flow[..., 0], y + PW.flow[..., 1])
        vals, inside = bilinear_sample(fr.data, ux, uy)
        mv, _ = bilinear_sample(fr.mask.astype(float), ux, uy)
        valid = inside & (mv >= 1.0 - 1e-9) & Wd.mask
        img = Image(np.where(valid[..., None], vals, 0.0), valid)
        out[i] = img.data
        masks[i] = valid
        flows[i] = PW.flow
        weights[i] = residual_weights(img.luminance(), ref, valid, PW.confidence, sigma_w, window)
    return AlignedBurst(out, masks, flows, weights, c, H6)


def merge(ab: AlignedBurst) -> Image:
    """Per-pixel weighted mean of the aligned frames (weights floored at 1e-3)."""
    w = np.where(ab.masks, np.maximum(ab.weights, WEIGHT_FLOOR), 0.0)
    tot = w.sum(axis=0)
    num = np.einsum("nhw,nhwc->hwc", w, ab.frames)
    valid = tot > 0
    data = np.where(valid[..., None], num / np.where(tot > 0, tot, 1.0)[..., None], 0.0)
    return Image(data, valid)


def detail_inject(W_D: Image, merged: Image, weights: np.ndarray, factor: int = SCALE) -> Image:
    """Add the gated, upsampled difference between the merged burst and the
    block-mean of W_D.  Pixels with zero gate are returned untouched."""
    Wd = downsample_avg(W_D, factor)
    if merged.shape[:2] != Wd.shape[:2]:
        raise ValueError("merged image must live on the downsampled wide grid")
    if merged.channels != W_D.channels:
        mdata = np.repeat(merged.data[..., :1], W_D.channels, axis=2) if merged.channels == 1 else \
            merged.luminance()[..., None]
    else:
        mdata = merged.data
    ok = merged.mask & Wd.mask
    gate = np.where(ok, np.clip(weights, 0.0, 1.0), 0.0)
    corr = np.where(ok[..., None], mdata - Wd.data, 0.0)
    up_corr = upsample_bilinear(corr, factor, W_D.height, W_D.width)
    up_gate = upsample_bilinear(gate, factor, W_D.height, W_D.width)
    data = np.where(up_gate[..., None] > 0, W_D.data + up_gate[..., None] * up_corr, W_D.data)
    return Image(data, W_D.mask)
