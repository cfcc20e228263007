"""Synthetic hybrid captures: a long-exposure wide image plus a short-exposure
ultra-wide burst of a textured fronto-parallel plane under scripted motion.

Time is absolute seconds shared by the manifest and the motion script.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .align import plane_homography
from .imaging import Homography, Image, bilinear_sample, pixel_grid
from . import io as hio

WIDE_FRAME_COUNTS = (5, 7, 9, 11, 13)
MIN_BURST, MAX_BURST = 5, 14
BURST_FPS = 60.0
WIDE_VIDEO_FPS = 30.0
MAX_BURST_EXPOSURE = 1.0 / 120.0
WIDE_EXPOSURE_RANGE = (1.0 / 15.0, 1.0 / 2.0)
MAX_STEP_DISPLACEMENT = 36.0
# 35 mm equivalent focal lengths of the two cameras
WIDE_FOCAL_MM, ULTRAWIDE_FOCAL_MM = 26.0, 13.0
SENSOR_WIDTH_MM = 36.0
# wide has 3x the pixels per axis of the ultra-wide
RESOLUTION_RATIO = 3
_TIME_EPS = 1e-9


@dataclass
class NoiseParams:
    shot: float = 0.0
    read: float = 0.0
    poisson: bool = False

    def __post_init__(self):
        if self.shot < 0 or self.read < 0:
            raise ValueError("noise parameters must be non-negative")

    def to_dict(self):
        return {"shot": self.shot, "read": self.read, "poisson": self.poisson}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d.get("shot", 0.0)), float(d.get("read", 0.0)), bool(d.get("poisson", False)))


@dataclass
class MotionScript:
    """Piecewise-linear planar motion in wide-camera pixel coordinates.

    Control points carry translation (tx, ty), rotation theta (radians) and
    isotropic scale, all applied about ``center``.  Outside the control range
    the pose is held constant.
    """

    times: list
    tx: list
    ty: list
    theta: list
    scale: list
    center: tuple = (0.0, 0.0)

    def __post_init__(self):
        n = len(self.times)
        if n == 0 or any(len(v) != n for v in (self.tx, self.ty, self.theta, self.scale)):
            raise ValueError("motion script control arrays must be non-empty and equal length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("motion script times must be strictly increasing")
        if np.any(np.asarray(self.scale) <= 0):
            raise ValueError("motion script scale must stay positive")

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    def params(self, t: float):
        ts = np.asarray(self.times, dtype=np.float64)
        return tuple(float(np.interp(t, ts, np.asarray(v, dtype=np.float64)))
                     for v in (self.tx, self.ty, self.theta, self.scale))

    def pose(self, t: float) -> Homography:
        """Homography taking a reference-plane position to its position at t."""
        tx, ty, th, s = self.params(t)
        cx, cy = self.center
        c, sn = s * np.cos(th), s * np.sin(th)
        m = np.array([[c, -sn, 0.0], [sn, c, 0.0], [0.0, 0.0, 1.0]])
        m[0, 2] = cx + tx - (c * cx - sn * cy)
        m[1, 2] = cy + ty - (sn * cx + c * cy)
        return Homography(m)

    def displacement(self, t_from: float, t_to: float, x, y):
        """Where points at (x, y) at ``t_from`` are at ``t_to`` (wide px)."""
        h = self.pose(t_to) @ self.pose(t_from).inverse()
        return h.apply(x, y)

    @classmethod
    def static(cls, center=(0.0, 0.0)):
        return cls([0.0, 1.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [1.0, 1.0], tuple(center))

    @classmethod
    def constant_velocity(cls, vx: float, vy: float, t0: float, t1: float, center=(0.0, 0.0),
                          omega: float = 0.0):
        """Translation at (vx, vy) px/s and rotation rate omega rad/s over [t0, t1]."""
        dt = t1 - t0
        return cls([t0, t1], [0.0, vx * dt], [0.0, vy * dt], [0.0, omega * dt], [1.0, 1.0], tuple(center))

    def to_dict(self):
        return {"times": list(map(float, self.times)), "tx": list(map(float, self.tx)),
                "ty": list(map(float, self.ty)), "theta": list(map(float, self.theta)),
                "scale": list(map(float, self.scale)), "center": list(map(float, self.center))}

    @classmethod
    def from_dict(cls, d):
        return cls(d["times"], d["tx"], d["ty"], d["theta"], d["scale"], tuple(d["center"]))


@dataclass
class CaptureManifest:
    wide_exposure: tuple
    burst_windows: list
    K_w: np.ndarray
    K_u: np.ndarray
    R: np.ndarray
    t: np.ndarray
    depth: float
    wide_dims: tuple
    burst_dims: tuple
    noise_wide: NoiseParams = field(default_factory=NoiseParams)
    noise_burst: NoiseParams = field(default_factory=NoiseParams)
    motion: MotionScript | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.wide_exposure = (float(self.wide_exposure[0]), float(self.wide_exposure[1]))
        self.burst_windows = [(float(s), float(e)) for s, e in self.burst_windows]
        self.K_w = np.asarray(self.K_w, dtype=np.float64).reshape(3, 3)
        self.K_u = np.asarray(self.K_u, dtype=np.float64).reshape(3, 3)
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        self.wide_dims = tuple(int(v) for v in self.wide_dims)
        self.burst_dims = tuple(int(v) for v in self.burst_dims)

    @property
    def n_frames(self) -> int:
        return len(self.burst_windows)

    @property
    def midpoints(self) -> np.ndarray:
        return np.array([(s + e) / 2.0 for s, e in self.burst_windows])

    def homography(self, depth: float | None = None) -> Homography:
        """Wide-pixel to ultra-wide-pixel map for the scene plane."""
        return plane_homography(self.K_u, self.R, self.t, self.depth if depth is None else depth, self.K_w)

    def validate(self, strict: bool = True):
        """Raise ValueError on a malformed manifest.

        ``strict`` additionally enforces the capture-device constraints
        (frame count, exposure ranges).
        """
        ts, te = self.wide_exposure
        if not te > ts:
            raise ValueError("wide exposure must have positive length")
        prev_end = -np.inf
        for s, e in self.burst_windows:
            if not e > s:
                raise ValueError("burst window must have positive length")
            if s < prev_end - _TIME_EPS:
                raise ValueError("burst windows must be ordered and non-overlapping")
            prev_end = e
        mids = self.midpoints
        if np.any(mids < ts - _TIME_EPS) or np.any(mids > te + _TIME_EPS):
            raise ValueError("burst midpoints must lie inside the wide exposure")
        if self.depth <= 0:
            raise ValueError("plane depth must be positive")
        if strict:
            if not MIN_BURST <= self.n_frames <= MAX_BURST:
                raise ValueError(f"burst length {self.n_frames} outside [{MIN_BURST}, {MAX_BURST}]")
            if any(e - s > MAX_BURST_EXPOSURE + _TIME_EPS for s, e in self.burst_windows):
                raise ValueError("burst frame exposure exceeds 1/120 s")
            lo, hi = WIDE_EXPOSURE_RANGE
            if not lo - _TIME_EPS <= te - ts <= hi + _TIME_EPS:
                raise ValueError("wide exposure outside [1/15, 1/2] s")
        return self

    def to_dict(self):
        d = {
            "wide_exposure": list(self.wide_exposure),
            "burst_windows": [list(w) for w in self.burst_windows],
            "K_w": self.K_w.tolist(),
            "K_u": self.K_u.tolist(),
            "E": {"R": self.R.tolist(), "t": self.t.tolist()},
            "depth": float(self.depth),
            "noise": {"wide": self.noise_wide.to_dict(), "burst": self.noise_burst.to_dict()},
            "wide_dims": list(self.wide_dims),
            "burst_dims": list(self.burst_dims),
        }
        if self.motion is not None:
            d["motion"] = self.motion.to_dict()
        d.update(self.extra)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {"wide_exposure", "burst_windows", "K_w", "K_u", "E", "depth", "noise",
                 "wide_dims", "burst_dims", "motion"}
        noise = d.get("noise", {})
        return cls(
            wide_exposure=d["wide_exposure"], burst_windows=d["burst_windows"],
            K_w=d["K_w"], K_u=d["K_u"], R=d["E"]["R"], t=d["E"]["t"], depth=d["depth"],
            wide_dims=d["wide_dims"], burst_dims=d["burst_dims"],
            noise_wide=NoiseParams.from_dict(noise.get("wide", {})),
            noise_burst=NoiseParams.from_dict(noise.get("burst", {})),
            motion=MotionScript.from_dict(d["motion"]) if "motion" in d else None,
            extra={k: v for k, v in d.items() if k not in known},
        )


@dataclass
class BurstCapture:
    frames: list
    windows: list

    def __len__(self):
        return len(self.frames)


def intrinsics(width: int, height: int, focal_mm: float) -> np.ndarray:
    """Pinhole intrinsics for a 35 mm equivalent focal length."""
    f = width * focal_mm / SENSOR_WIDTH_MM
    return np.array([[f, 0.0, (width - 1) / 2.0], [0.0, f, (height - 1) / 2.0], [0.0, 0.0, 1.0]])


def default_rig(wide_h: int, wide_w: int, baseline: float = 0.08):
    """Wide/ultra-wide pair: half the focal length and a third of the pixels
    per axis, so scene content appears 6x smaller in the ultra-wide."""
    if wide_h % RESOLUTION_RATIO or wide_w % RESOLUTION_RATIO:
        raise ValueError("wide dims must be divisible by 3")
    bh, bw = wide_h // RESOLUTION_RATIO, wide_w // RESOLUTION_RATIO
    K_w = intrinsics(wide_w, wide_h, WIDE_FOCAL_MM)
    K_u = intrinsics(bw, bh, ULTRAWIDE_FOCAL_MM)
    return K_w, K_u, np.eye(3), np.array([baseline, 0.0, 0.0]), (bh, bw)


def add_noise(img: Image, p: NoiseParams, seed) -> Image:
    """Heteroscedastic Gaussian noise, variance ``shot*signal + read**2``."""
    if p.shot == 0 and p.read == 0:
        return img.copy()
    rng = np.random.default_rng(seed)
    x = img.data
    if p.poisson and p.shot > 0:
        photons = rng.poisson(np.maximum(x, 0.0) / p.shot)
        out = photons * p.shot + p.read * rng.standard_normal(x.shape)
    else:
        var = p.shot * np.maximum(x, 0.0) + p.read ** 2
        out = x + np.sqrt(var) * rng.standard_normal(x.shape)
    return Image(np.maximum(out, 0.0), img.mask.copy())


def max_displacement(script: MotionScript, dt: float, dims, t_range=None, grid: int = 17) -> float:
    """Largest pixel displacement between poses ``dt`` apart, over a pixel
    grid spanning the frame and over start times in ``t_range``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    h, w = dims
    xs = np.linspace(0.0, w - 1, grid)
    ys = np.linspace(0.0, h - 1, grid)
    x, y = np.meshgrid(xs, ys)
    t0, t1 = t_range if t_range is not None else (script.times[0], script.times[-1])
    starts = np.arange(t0, max(t0, t1 - dt) + 1e-12, dt) if t1 - dt > t0 else np.array([t0])
    best = 0.0
    for t in starts:
        xo, yo = script.displacement(t, t + dt, x, y)
        best = max(best, float(np.max(np.hypot(xo - x, yo - y))))
    return best


def _scene_offset(scene: Image, wide_dims):
    h, w = wide_dims
    return (scene.width - w) / 2.0, (scene.height - h) / 2.0


def render_wide(scene: Image, script: MotionScript, t: float, wide_dims) -> Image:
    """Sharp wide frame at time t.  The scene image is centered on the wide
    frame at the reference pose."""
    h, w = wide_dims
    ox, oy = _scene_offset(scene, wide_dims)
    back = Homography.translation(ox, oy) @ script.pose(t).inverse()
    x, y = pixel_grid(h, w)
    sx, sy = back.apply(x, y)
    vals, inside = bilinear_sample(scene.data, sx, sy)
    return Image(np.where(inside[..., None], vals, 0.0), inside)


def synth_wide(scene: Image, script: MotionScript, manifest: CaptureManifest, subframes: int,
               supersample: int = 4, seed: int = 0, max_step: float = MAX_STEP_DISPLACEMENT):
    """Blurred long exposure as a temporal mean of sharp renders.

    Returns ``(blurred, sharp_gt)``; the ground truth is the noiseless render
    at the exposure midpoint.
    """
    if subframes < 5 or subframes % 2 == 0:
        raise ValueError("subframes must be odd and >= 5")
    if supersample < 1:
        raise ValueError("supersample factor must be >= 1")
    ts, te = manifest.wide_exposure
    if not te > ts:
        raise ValueError("wide exposure must have positive length")
    dims = manifest.wide_dims
    if max_step is not None:
        step = max_displacement(script, (te - ts) / subframes, dims, t_range=(ts, te))
        if step > max_step:
            raise ValueError(f"motion of {step:.1f} px between wide frames exceeds {max_step} px")
    m = subframes * supersample
    times = ts + (np.arange(m) + 0.5) / m * (te - ts)
    acc = np.zeros(dims + (scene.channels,))
    mask = np.ones(dims, dtype=bool)
    for t in times:
        fr = render_wide(scene, script, t, dims)
        acc += fr.data
        mask &= fr.mask
    blurred = Image(np.minimum(acc / m, 1.0), mask)
    blurred = add_noise(blurred, manifest.noise_wide, [seed, 0])
    gt = render_wide(scene, script, 0.5 * (ts + te), dims)
    return blurred, gt


def _prefiltered(scene: Image, ratio: float) -> Image:
    sigma = ratio / np.sqrt(12.0)
    if sigma < 0.3:
        return scene
    data = gaussian_filter(scene.data, (sigma, sigma, 0), mode="nearest")
    return Image(data, scene.mask)


def _local_scale(H: Homography, dims) -> float:
    """Wide px per ultra-wide px around the wide frame center."""
    h, w = dims
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    x, y = H.apply(np.array([cx, cx + 1, cx]), np.array([cy, cy, cy + 1]))
    det = abs((x[1] - x[0]) * (y[2] - y[0]) - (x[2] - x[0]) * (y[1] - y[0]))
    return 1.0 / np.sqrt(det)


def render_burst_frame(scene: Image, script: MotionScript, t: float, manifest: CaptureManifest,
                       prefiltered: Image | None = None) -> Image:
    H = manifest.homography()
    if prefiltered is None:
        prefiltered = _prefiltered(scene, _local_scale(H, manifest.wide_dims))
    ox, oy = _scene_offset(scene, manifest.wide_dims)
    back = Homography.translation(ox, oy) @ script.pose(t).inverse() @ H.inverse()
    bh, bw = manifest.burst_dims
    x, y = pixel_grid(bh, bw)
    sx, sy = back.apply(x, y)
    vals, inside = bilinear_sample(prefiltered.data, sx, sy)
    return Image(np.where(inside[..., None], vals, 0.0), inside)


def synth_burst(scene: Image, script: MotionScript, manifest: CaptureManifest, seed: int = 0) -> BurstCapture:
    """Ultra-wide burst, frame i rendered at its exposure midpoint."""
    manifest.validate(strict=False)
    H = manifest.homography()
    pre = _prefiltered(scene, _local_scale(H, manifest.wide_dims))
    frames = []
    for i, tm in enumerate(manifest.midpoints):
        fr = render_burst_frame(scene, script, tm, manifest, pre)
        frames.append(add_noise(fr, manifest.noise_burst, [seed, 1, i]))
    return BurstCapture(frames, list(manifest.burst_windows))


def burst_windows(ts: float, te: float, rng, fps: float = BURST_FPS, exposure: float = MAX_BURST_EXPOSURE,
                  n: int | None = None, jitter: float = 0.0):
    """Timestamps of a 60 FPS burst running alongside the wide exposure.

    The burst clock phase is random; ``jitter`` (seconds) shifts the whole
    burst to model unsynchronized exposures.  A random subset of ``n`` frames
    (or a random count in [5, 14]) among those whose midpoint falls inside
    the wide exposure is kept.
    """
    period = 1.0 / fps
    phase = rng.uniform(0.0, period) + jitter
    k0 = int(np.floor((ts - phase) / period)) - 2
    k1 = int(np.ceil((te - phase) / period)) + 2
    wins = []
    for k in range(k0, k1 + 1):
        s = phase + k * period
        mid = s + exposure / 2.0
        if ts <= mid <= te:
            wins.append((s, s + exposure))
    avail = len(wins)
    if avail < MIN_BURST:
        raise ValueError(f"only {avail} burst frames fit in the wide exposure")
    if n is None:
        n = int(rng.integers(MIN_BURST, min(MAX_BURST, avail) + 1))
    if n > avail:
        raise ValueError(f"requested {n} burst frames, only {avail} available")
    # the first and last frames always survive so the burst spans the exposure
    inner = rng.choice(np.arange(1, avail - 1), size=n - 2, replace=False)
    keep = np.sort(np.concatenate([[0, avail - 1], inner]))
    return [wins[i] for i in keep]


def random_scene(height: int, width: int, rng, channels: int = 1) -> Image:
    """Multi-scale noise texture with a few soft-edged shapes, in [0.05, 0.95]."""
    acc = np.zeros((height, width))
    for sigma, amp in ((1.2, 0.35), (3.0, 0.6), (8.0, 0.8), (24.0, 1.0)):
        layer = gaussian_filter(rng.standard_normal((height, width)), sigma, mode="wrap")
        acc += amp * layer / (layer.std() + 1e-12)
    shapes = np.zeros((height, width))
    for _ in range(max(4, (height * width) // 6000)):
        cx, cy = rng.uniform(0, width), rng.uniform(0, height)
        r = rng.uniform(4, 30)
        x0, x1 = int(max(0, cx - r)), int(min(width, cx + r + 1))
        if rng.random() < 0.5:
            y0, y1 = int(max(0, cy - r)), int(min(height, cy + r + 1))
            y, x = np.mgrid[y0:y1, x0:x1]
            shape = np.hypot(x - cx, y - cy) < r
        else:
            ry = rng.uniform(4, 30)
            y0, y1 = int(max(0, cy - ry)), int(min(height, cy + ry + 1))
            shape = np.ones((y1 - y0, x1 - x0), dtype=bool)
        shapes[y0:y1, x0:x1] += rng.uniform(-2.0, 2.0) * shape
    acc += gaussian_filter(shapes, 0.7)
    lo, hi = np.percentile(acc, [1, 99])
    base = np.clip((acc - lo) / (hi - lo + 1e-12), 0.0, 1.0) * 0.9 + 0.05
    if channels == 1:
        return Image(base)
    tint = rng.uniform(0.7, 1.0, size=3)
    return Image(np.clip(base[..., None] * tint, 0.0, 1.0))


def random_script(rng, ts: float, te: float, center, max_speed: float = 150.0, max_omega: float = 0.15,
                  n_ctrl: int = 3, translation_only: bool = False) -> MotionScript:
    """Random camera-shake-like motion: a few control points across the
    exposure with translation speed up to ``max_speed`` px/s."""
    dur = te - ts
    times = np.linspace(ts - 0.05 * dur, te + 0.05 * dur, n_ctrl)
    v = rng.uniform(-max_speed, max_speed, size=(n_ctrl - 1, 2))
    steps = np.diff(times)[:, None] * v
    tr = np.vstack([[0.0, 0.0], np.cumsum(steps, axis=0)])
    if translation_only:
        th = np.zeros(n_ctrl)
    else:
        om = rng.uniform(-max_omega, max_omega, size=n_ctrl - 1)
        th = np.concatenate([[0.0], np.cumsum(np.diff(times) * om)])
    return MotionScript(times.tolist(), tr[:, 0].tolist(), tr[:, 1].tolist(), th.tolist(),
                        [1.0] * n_ctrl, tuple(center))


def required_scene_size(manifest: CaptureManifest, script: MotionScript, margin: int = 16):
    """Smallest centered scene (h, w) covering the ultra-wide view at all burst
    times and the wide view over the exposure."""
    hw, ww = manifest.wide_dims
    bh, bw = manifest.burst_dims
    Hinv = manifest.homography().inverse()
    bx = np.array([0, bw - 1, 0, bw - 1], dtype=float)
    by = np.array([0, 0, bh - 1, bh - 1], dtype=float)
    wx, wy = Hinv.apply(bx, by)
    wx = np.concatenate([wx, [0, ww - 1, 0, ww - 1]])
    wy = np.concatenate([wy, [0, 0, hw - 1, hw - 1]])
    ts, te = manifest.wide_exposure
    ext_x, ext_y = 0.0, 0.0
    for t in np.linspace(min(ts, manifest.midpoints.min()), max(te, manifest.midpoints.max()), 9):
        sx, sy = script.pose(t).inverse().apply(wx, wy)
        ext_x = max(ext_x, np.max(np.abs(sx - (ww - 1) / 2.0)))
        ext_y = max(ext_y, np.max(np.abs(sy - (hw - 1) / 2.0)))
    h = int(2 * np.ceil(ext_y + margin)) + hw % 2
    w = int(2 * np.ceil(ext_x + margin)) + ww % 2
    return h, w


def draw_subframes(rng) -> int:
    """Number of wide-video frames averaged into one blurred exposure."""
    return int(rng.choice(WIDE_FRAME_COUNTS))


@dataclass
class Capture:
    wide: Image
    gt: Image
    burst: BurstCapture
    manifest: CaptureManifest


def make_capture(seed: int, wide_dims=(288, 288), subframes: int | None = None, n_burst: int | None = None,
                 depth: float | None = None, noise_wide: NoiseParams | None = None,
                 noise_burst: NoiseParams | None = None, baseline: float = 0.08,
                 script: MotionScript | None = None, max_speed: float = 150.0, max_omega: float = 0.15,
                 translation_only: bool = False, jitter: float = 0.0, supersample: int = 4,
                 channels: int = 1, scene_seed: int | None = None) -> Capture:
    """Draw a complete random capture deterministically from ``seed``.

    The wide exposure spans ``subframes`` wide-video frames at 30 FPS.  When
    ``scene_seed`` is given the texture depends on it alone, so several
    captures can share one scene.
    """
    rng = np.random.default_rng(seed)
    if subframes is None:
        subframes = draw_subframes(rng)
    ts = 0.0
    te = subframes / WIDE_VIDEO_FPS
    hw, ww = wide_dims
    K_w, K_u, R, t, bdims = default_rig(hw, ww, baseline)
    if depth is None:
        depth = float(1.0 / rng.uniform(1.0 / 100.0, 1.0 / 0.2))
    if noise_wide is None:
        noise_wide = NoiseParams(shot=2e-4, read=0.005)
    if noise_burst is None:
        noise_burst = noise_wide
    wins = burst_windows(ts, te, rng, n=n_burst, jitter=jitter)
    center = ((ww - 1) / 2.0, (hw - 1) / 2.0)
    if script is None:
        for _ in range(50):
            script = random_script(rng, ts, te, center, max_speed, max_omega, translation_only=translation_only)
            if max_displacement(script, (te - ts) / subframes, wide_dims, (ts, te)) <= MAX_STEP_DISPLACEMENT:
                break
    manifest = CaptureManifest((ts, te), wins, K_w, K_u, R, t, depth, wide_dims, bdims,
                               noise_wide, noise_burst, script,
                               extra={"seed": int(seed), "subframes": int(subframes)})
    manifest.validate()
    sh, sw = required_scene_size(manifest, script)
    if scene_seed is None:
        scene = random_scene(sh, sw, rng, channels)
    else:
        side = max(sh, sw, int(3.2 * max(wide_dims)) + 128)
        scene = random_scene(side, side, np.random.default_rng(scene_seed), channels)
    noise_seed = int(rng.integers(0, 2**31 - 1))
    wide, gt = synth_wide(scene, script, manifest, subframes, supersample, seed=noise_seed)
    burst = synth_burst(scene, script, manifest, seed=noise_seed)
    return Capture(wide, gt, burst, manifest)


def save_capture(directory, cap: Capture):
    d = Path(directory)
    (d / "burst").mkdir(parents=True, exist_ok=True)
    hio.save_image(d / "wide.pfm", cap.wide)
    hio.save_image(d / "gt.pfm", cap.gt)
    for i, fr in enumerate(cap.burst.frames):
        hio.save_image(d / "burst" / f"{i:03d}.pfm", fr)
    hio.write_json(d / "manifest.json", cap.manifest.to_dict())


def load_burst(directory) -> tuple:
    d = Path(directory)
    manifest = CaptureManifest.from_dict(hio.read_json(d / "manifest.json"))
    frames = [hio.load_image(d / "burst" / f"{i:03d}.pfm") for i in range(manifest.n_frames)]
    return manifest, BurstCapture(frames, list(manifest.burst_windows))


def load_capture(directory) -> Capture:
    d = Path(directory)
    manifest, burst = load_burst(d)
    gt = hio.load_image(d / "gt.pfm") if (d / "gt.pfm").exists() else None
    return Capture(hio.load_image(d / "wide.pfm"), gt, burst, manifest)
