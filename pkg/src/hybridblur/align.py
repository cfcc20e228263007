"""Plane-sweep field-of-view alignment of the ultra-wide burst to the wide image."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imaging import Homography, Image, downsample_avg, downscale_map, warp_image

MIN_OVERLAP = 0.10


class AlignmentError(RuntimeError):
    pass


def depth_candidates(dmin: float = 0.2, dmax: float = 100.0, count: int = 32) -> np.ndarray:
    """Depths uniformly spaced in inverse depth, returned in increasing order."""
    if not 0 < dmin < dmax or count < 2:
        raise ValueError("need 0 < dmin < dmax and at least two candidates")
    inv = np.linspace(1.0 / dmax, 1.0 / dmin, count)
    return np.sort(1.0 / inv)


def check_candidates(D) -> np.ndarray:
    D = np.asarray(D, dtype=np.float64).ravel()
    if D.size < 2 or np.any(D <= 0) or np.any(np.diff(D) <= 0):
        raise ValueError("depth candidates must be positive, strictly increasing, at least two")
    return D


def plane_homography(K_u, R, t, d: float, K_w) -> Homography:
    """Homography induced by the fronto-parallel plane Z = d of the wide camera.

    Maps wide pixels to ultra-wide pixels, i.e. ``K_u (R + t n^T / d) K_w^-1``
    with ``n = (0, 0, 1)``.
    """
    if not d > 0:
        raise ValueError("plane depth must be positive")
    n = np.array([0.0, 0.0, 1.0])
    m = np.asarray(K_u) @ (np.asarray(R) + np.outer(np.asarray(t, dtype=float), n) / d) @ np.linalg.inv(K_w)
    return Homography(m)


def average_burst(frames) -> Image:
    frames = list(getattr(frames, "frames", frames))
    if not frames:
        raise ValueError("empty burst")
    shape = frames[0].shape
    if any(f.shape != shape for f in frames):
        raise ValueError("burst frames differ in size")
    data = np.mean([f.data for f in frames], axis=0)
    mask = np.logical_and.reduce([f.mask for f in frames])
    return Image(data, mask)


@dataclass
class AlignmentResult:
    depth: float
    H: Homography
    depths: np.ndarray
    scores: np.ndarray

    def to_dict(self):
        return {"depth": float(self.depth), "H": self.H.tolist(),
                "depths": [float(d) for d in self.depths],
                "scores": [None if not np.isfinite(s) else float(s) for s in self.scores]}


def _normalized(v: np.ndarray) -> np.ndarray:
    v = v - v.mean()
    sd = v.std()
    return v / sd if sd > 1e-12 else v


def _gray(img: Image) -> Image:
    return img if img.channels == 1 else Image(img.luminance(), img.mask)


def sweep_scores(W: Image, U_avg: Image, D, K_u, R, t, K_w, factor: int = 6) -> np.ndarray:
    """Normalized MSE between W (block-mean reduced to burst scale) and the
    burst average warped into it, for every candidate depth.  Candidates
    with less than 10% overlap score +inf."""
    Wd = downsample_avg(_gray(W), factor)
    U = _gray(U_avg)
    to_full = downscale_map(factor).inverse()
    scores = np.full(len(D), np.inf)
    for k, d in enumerate(D):
        H = plane_homography(K_u, R, t, d, K_w) @ to_full
        warped = warp_image(U, H, Wd.width, Wd.height)
        valid = warped.mask & Wd.mask
        if valid.sum() < MIN_OVERLAP * Wd.mask.size:
            continue
        a = _normalized(Wd.data[valid, 0])
        b = _normalized(warped.data[valid, 0])
        scores[k] = float(np.mean((a - b) ** 2))
    return scores


def pick_best(D, scores, rtol: float = 1e-9) -> int:
    """Argmin with ties broken toward the candidate nearest the median depth."""
    best = np.min(scores)
    ties = np.flatnonzero(np.isclose(scores, best, rtol=rtol, atol=1e-15))
    med = np.median(D)
    return int(ties[np.argmin(np.abs(np.asarray(D)[ties] - med))])


def fov_align(W: Image, burst, D, K_u, R, t, K_w, factor: int = 6) -> AlignmentResult:
    """Pick the candidate depth whose plane homography best registers the
    burst average onto W."""
    D = check_candidates(D)
    U_avg = average_burst(burst)
    scores = sweep_scores(W, U_avg, D, K_u, R, t, K_w, factor)
    if not np.any(np.isfinite(scores)):
        raise AlignmentError("insufficient overlap between wide image and burst at every depth")
    k = pick_best(D, scores)
    return AlignmentResult(float(D[k]), plane_homography(K_u, R, t, D[k], K_w), D, scores)


def fov_align_manifest(W: Image, burst, manifest, D=None) -> AlignmentResult:
    D = depth_candidates() if D is None else D
    return fov_align(W, burst, D, manifest.K_u, manifest.R, manifest.t, manifest.K_w)
