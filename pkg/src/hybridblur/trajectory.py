"""Center-anchored pixel trajectories from adjacent burst flows, and their
resampling into fixed 9-tap blur kernels synchronized to the wide exposure."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .flow import FlowField, FlowParams, compose_flows, estimate_flow
from .imaging import Homography, bilinear_sample, pixel_grid
from . import io as hio

KERNEL_TIMES = np.linspace(0.0, 1.0, 9)
R_SLACK = 0.25


def center_index(n: int) -> int:
    """0-based index of the temporal-center frame, ``ceil(n / 2) - 1``."""
    if n < 1:
        raise ValueError("empty burst")
    return (n + 1) // 2 - 1


@dataclass
class TrajectoryField:
    """``maps[i]`` is the displacement from the center frame to frame i,
    on the center frame's pixel grid (burst px)."""

    maps: np.ndarray
    confidence: np.ndarray
    center: int

    def __post_init__(self):
        self.maps = np.asarray(self.maps, dtype=np.float64)
        if self.maps.ndim != 4 or self.maps.shape[3] != 2:
            raise ValueError("trajectory maps must have shape (N, H, W, 2)")
        if not np.all(np.isfinite(self.maps)):
            raise ValueError("trajectory maps must be finite")
        if not 0 <= self.center < self.maps.shape[0]:
            raise ValueError("center index out of range")
        if np.any(self.maps[self.center] != 0):
            raise ValueError("center trajectory must be identically zero")

    @property
    def n(self):
        return self.maps.shape[0]


def adjacent_flows(frames, params: FlowParams | None = None):
    """N-1 flows between neighbours, oriented away from the center frame:
    ``flows[j]`` runs from frame j+1 to j when j+1 <= c, otherwise from j to j+1."""
    frames = list(getattr(frames, "frames", frames))
    c = center_index(len(frames))
    out = []
    for j in range(len(frames) - 1):
        if j + 1 <= c:
            out.append(estimate_flow(frames[j + 1], frames[j], params))
        else:
            out.append(estimate_flow(frames[j], frames[j + 1], params))
    return out


def accumulate(flows, c: int) -> TrajectoryField:
    """Chain adjacent flows outward from the center frame ``c`` (0-based)."""
    n = len(flows) + 1
    if any(f is None for f in flows):
        raise ValueError("missing flow in adjacent chain")
    if not 0 <= c < n:
        raise ValueError("center index out of range")
    h, w = flows[0].height, flows[0].width
    traj = [None] * n
    traj[c] = FlowField.zeros(h, w)
    for i in range(c + 1, n):
        traj[i] = compose_flows(traj[i - 1], flows[i - 1])
    for i in range(c - 1, -1, -1):
        traj[i] = compose_flows(traj[i + 1], flows[i])
    maps = np.stack([t.flow for t in traj])
    maps[c] = 0.0
    conf = np.stack([t.confidence for t in traj])
    return TrajectoryField(maps, conf, c)


def estimate_trajectories(frames, params: FlowParams | None = None) -> TrajectoryField:
    frames = list(getattr(frames, "frames", frames))
    return accumulate(adjacent_flows(frames, params), center_index(len(frames)))


@dataclass
class WarpedTrajectories:
    """Trajectories re-expressed on another pixel grid through a homography."""

    maps: np.ndarray
    confidence: np.ndarray
    valid: np.ndarray
    center: int


def warp_trajectories(P: TrajectoryField, H: Homography, out_h: int, out_w: int) -> WarpedTrajectories:
    """For each output pixel q with preimage ``p = H(q)`` on the trajectory
    grid, map both ``p`` and ``p + P_i(p)`` back through ``H^-1`` and take
    the difference.  Pixels whose preimage leaves the grid get zero-length
    trajectories and ``valid == False``."""
    Hinv = H.inverse()
    x, y = pixel_grid(out_h, out_w)
    px, py = H.apply(x, y)
    stacked = np.concatenate([P.maps.transpose(1, 2, 0, 3).reshape(P.maps.shape[1], P.maps.shape[2], -1),
                              P.confidence.transpose(1, 2, 0)], axis=2)
    vals, inside = bilinear_sample(stacked, px, py, clamp=True)
    n = P.n
    disp = vals[..., : 2 * n].reshape(out_h, out_w, n, 2)
    conf = vals[..., 2 * n:]
    bx, by = Hinv.apply(px, py)
    maps = np.empty((n, out_h, out_w, 2))
    for i in range(n):
        ex, ey = Hinv.apply(px + disp[:, :, i, 0], py + disp[:, :, i, 1])
        maps[i, ..., 0] = np.where(inside, ex - bx, 0.0)
        maps[i, ..., 1] = np.where(inside, ey - by, 0.0)
    maps[P.center] = 0.0
    conf = np.where(inside[..., None], conf, 0.0).transpose(2, 0, 1)
    return WarpedTrajectories(maps, conf, inside, P.center)


@dataclass
class RelativeTimestamps:
    r: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r, dtype=np.float64).ravel()
        if r.size < 2:
            raise ValueError("need at least two relative timestamps")
        if np.any(np.diff(r) <= 0):
            raise ValueError("relative timestamps must be strictly increasing")
        if np.any(r < -R_SLACK) or np.any(r > 1 + R_SLACK):
            raise ValueError("relative timestamp outside [-0.25, 1.25]")
        if np.count_nonzero((r >= 0) & (r <= 1)) < 2:
            raise ValueError("fewer than two burst frames inside the wide exposure")
        self.r = r


def relative_timestamps(manifest) -> RelativeTimestamps:
    """Burst exposure midpoints normalized into the wide exposure window,
    oriented so that 0 is exposure start and 1 exposure end."""
    ts, te = manifest.wide_exposure
    span = te - ts
    if span == 0:
        raise ValueError("zero-length wide exposure")
    mids = np.array([(s + e) / 2.0 for s, e in manifest.burst_windows])
    return RelativeTimestamps((mids - ts) / span)


@dataclass
class KernelField:
    """Nine displacement taps per wide pixel at ``times``; stored as 18 channels."""

    taps: np.ndarray
    times: np.ndarray
    r: np.ndarray
    extrapolated: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.taps = np.asarray(self.taps, dtype=np.float64)
        if self.taps.ndim != 4 or self.taps.shape[0] != 9 or self.taps.shape[3] != 2:
            raise ValueError("kernel field must have 9 taps of 2D displacements")
        if not np.all(np.isfinite(self.taps)):
            raise ValueError("kernel taps must be finite")
        self.times = np.asarray(self.times, dtype=np.float64)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("kernel taps must be ordered by time")
        self.valid = np.asarray(self.valid, dtype=bool)

    @property
    def height(self):
        return self.taps.shape[1]

    @property
    def width(self):
        return self.taps.shape[2]

    @property
    def extrapolation_mask(self) -> np.ndarray:
        """(9, H, W) flags for taps extrapolated beyond the burst's time span."""
        return np.broadcast_to(self.extrapolated[:, None, None] & self.valid[None], self.taps.shape[:3])

    def as_channels(self) -> np.ndarray:
        """(H, W, 18) array ordered dx0, dy0, dx1, dy1, ..."""
        return self.taps.transpose(1, 2, 0, 3).reshape(self.height, self.width, 18)

    @classmethod
    def from_channels(cls, ch, times=KERNEL_TIMES, r=None, extrapolated=None, valid=None):
        ch = np.asarray(ch, dtype=np.float64)
        h, w = ch.shape[:2]
        if ch.shape[2] != 18:
            raise ValueError("kernel field needs 18 channels")
        taps = ch.reshape(h, w, 9, 2).transpose(2, 0, 1, 3)
        return cls(taps, times, np.asarray(r if r is not None else []),
                   np.zeros(9, bool) if extrapolated is None else extrapolated,
                   np.ones((h, w), bool) if valid is None else valid)

    @classmethod
    def zeros(cls, h, w):
        return cls(np.zeros((9, h, w, 2)), KERNEL_TIMES, np.array([0.0, 1.0]), np.zeros(9, bool),
                   np.ones((h, w), bool))

    def recentered(self) -> "KernelField":
        """Taps shifted so the exposure-midpoint tap is zero."""
        mid = int(np.argmin(np.abs(self.times - 0.5)))
        return KernelField(self.taps - self.taps[mid], self.times, self.r, self.extrapolated, self.valid)


def resample_kernels(Phat, r) -> KernelField:
    """Linear interpolation of trajectories at the nine kernel times.

    Each time t uses the bracketing pair of burst timestamps; outside the
    burst span the end segment is extrapolated and flagged."""
    maps = Phat.maps if hasattr(Phat, "maps") else np.asarray(Phat)
    valid = getattr(Phat, "valid", np.ones(maps.shape[1:3], bool))
    r = r.r if isinstance(r, RelativeTimestamps) else np.asarray(r, dtype=np.float64)
    n = len(r)
    if n < 2 or n != maps.shape[0]:
        raise ValueError("timestamp count must match trajectory count and be >= 2")
    if np.any(np.diff(r) == 0):
        raise ValueError("duplicate relative timestamps")
    if np.any(np.diff(r) < 0):
        raise ValueError("relative timestamps must increase")
    taps = np.empty((9,) + maps.shape[1:])
    extrap = np.zeros(9, dtype=bool)
    for k, t in enumerate(KERNEL_TIMES):
        i = int(np.clip(np.searchsorted(r, t, side="right") - 1, 0, n - 2))
        extrap[k] = t < r[0] or t > r[-1]
        slope = (maps[i + 1] - maps[i]) / (r[i + 1] - r[i])
        taps[k] = (t - r[i]) * slope + maps[i]
    return KernelField(taps, KERNEL_TIMES.copy(), r.copy(), extrap, valid)


def suppress_subpixel_kernels(kf: KernelField, min_extent: float = 0.5) -> KernelField:
    """Zero the kernels whose taps all stay within ``min_extent`` wide px of
    the mid-exposure tap.

    Such motion smears by at most a pixel, which the bilinear blur model
    cannot tell apart from interpolation smoothing; deblurring it only
    sharpens noise.  ``min_extent <= 0`` returns the field unchanged.
    """
    if min_extent <= 0:
        return kf
    mid = int(np.argmin(np.abs(kf.times - 0.5)))
    ext = np.hypot(*np.moveaxis(kf.taps - kf.taps[mid], -1, 0)).max(axis=0)
    still = ext < min_extent
    taps = np.where(still[None, :, :, None], 0.0, kf.taps)
    return KernelField(taps, kf.times, kf.r, kf.extrapolated, kf.valid)


def save_kernels(directory, kf: KernelField, stats: dict | None = None):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for k in range(9):
        hio.save_vector_field(d / f"tap_{k}.pfm", kf.taps[k], kf.valid.astype(float))
    side = {"t": kf.times.tolist(), "r": kf.r.tolist(), "extrapolated": kf.extrapolated.tolist(),
            "channels": 18, "layout": "tap_k.pfm holds (dx, dy, valid) for time t[k]"}
    if stats:
        side.update(stats)
    hio.write_json(d / "kernels.json", side)


def load_kernels(directory) -> KernelField:
    d = Path(directory)
    side = hio.read_json(d / "kernels.json")
    taps, valid = [], None
    for k in range(9):
        vec, v = hio.load_vector_field(d / f"tap_{k}.pfm")
        taps.append(vec)
        valid = v > 0.5
    return KernelField(np.stack(taps), side["t"], np.asarray(side["r"]), np.asarray(side["extrapolated"], bool),
                       valid)


def kernel_stats(kf: KernelField) -> dict:
    length = np.hypot(*np.moveaxis(np.diff(kf.taps, axis=0), -1, 0)).sum(axis=0)
    v = kf.valid
    return {
        "extrapolated_taps": int(kf.extrapolated.sum()),
        "valid_fraction": float(v.mean()),
        "mean_length_px": float(length[v].mean()) if v.any() else 0.0,
        "max_length_px": float(length[v].max()) if v.any() else 0.0,
    }


def render_kernel_plot(kf: KernelField, background, path, step: int = 24):
    """Draw each kernel as a polyline streak over the wide image."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    h, w = kf.height, kf.width
    fig, ax = plt.subplots(figsize=(w / 80.0, h / 80.0), dpi=100)
    bg = np.clip(background.luminance(), 0, 1) ** (1 / 2.2)
    ax.imshow(bg, cmap="gray", vmin=0, vmax=1)
    for yy in range(step // 2, h, step):
        for xx in range(step // 2, w, step):
            if not kf.valid[yy, xx]:
                continue
            k = kf.taps[:, yy, xx]
            k = k - k[4]
            ax.plot(xx + k[:, 0], yy + k[:, 1], "-", color="red", lw=1.0)
            ax.plot(xx + k[0, 0], yy + k[0, 1], ".", color="yellow", ms=2)
    ax.set_axis_off()
    fig.savefig(path, bbox_inches="tight", pad_inches=0)
    plt.close(fig)
