"""Spatially varying blur operator built from a kernel field, and two
non-blind solvers for it (Richardson-Lucy and regularized least squares).

The operator is a gather: output pixel y averages the latent image along
its own polyline, sampling at ``y - K(y)`` with bilinear weights.  Rows are
normalized, so a flat image stays flat whatever the kernels are.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .imaging import Image
from .trajectory import KernelField


class SolverError(RuntimeError):
    pass


def polyline_samples(taps: np.ndarray, substeps: int = 4):
    """Sample points along the 9-tap polyline and their trapezoid weights.

    ``taps`` is (9, ..., 2); returns (M, ..., 2) positions and (M,) weights
    with ``M = 9 + 8 * (substeps - 1)``.
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    nseg = taps.shape[0] - 1
    pts = []
    for k in range(nseg):
        for j in range(substeps):
            u = j / substeps
            pts.append(taps[k] + u * (taps[k + 1] - taps[k]))
    pts.append(taps[-1])
    m = len(pts)
    w = np.ones(m)
    w[0] = w[-1] = 0.5
    return np.stack(pts), w / w.sum()


@dataclass
class BlurOperator:
    """Linear blur A rendered from a kernel field.

    With ``recenter`` (default) the taps are shifted so the exposure-midpoint
    tap is zero, making the latent image the one at mid-exposure.
    """

    kernels: KernelField
    substeps: int = 4
    recenter: bool = True
    matrix: sp.csr_matrix = field(init=False, repr=False)

    def __post_init__(self):
        kf = self.kernels.recentered() if self.recenter else self.kernels
        self.shape = (kf.height, kf.width)
        self.matrix = build_matrix(kf, self.substeps)
        self._mt = self.matrix.T.tocsr()
        self._ones_adj = None

    def _check(self, img):
        data = img.data if isinstance(img, Image) else np.asarray(img, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.shape[:2] != self.shape:
            raise ValueError(f"image {data.shape[:2]} does not match kernel field {self.shape}")
        return data

    def _run(self, mat, data):
        h, w, c = data.shape
        return (mat @ data.reshape(h * w, c)).reshape(h, w, c)

    def apply(self, x):
        data = self._check(x)
        out = self._run(self.matrix, data)
        return Image(out, x.mask) if isinstance(x, Image) else out

    def apply_adjoint(self, y):
        data = self._check(y)
        out = self._run(self._mt, data)
        return Image(out, y.mask) if isinstance(y, Image) else out

    def adjoint_ones(self) -> np.ndarray:
        if self._ones_adj is None:
            self._ones_adj = np.asarray(self._mt @ np.ones(self._mt.shape[1])).reshape(self.shape)
        return self._ones_adj


def build_matrix(kf: KernelField, substeps: int = 4) -> sp.csr_matrix:
    h, w = kf.height, kf.width
    n = h * w
    taps = np.where(kf.valid[None, :, :, None], kf.taps, 0.0)
    pts, wts = polyline_samples(taps, substeps)
    yy, xx = np.mgrid[0:h, 0:w]
    rows_all, cols_all, vals_all = [], [], []
    total = np.zeros((h, w))
    pix = (yy * w + xx).ravel()
    for p, ws in zip(pts, wts):
        sx = xx - p[..., 0]
        sy = yy - p[..., 1]
        x0 = np.floor(sx).astype(np.int64)
        y0 = np.floor(sy).astype(np.int64)
        fx = sx - x0
        fy = sy - y0
        for dx, dy, cw in ((0, 0, (1 - fx) * (1 - fy)), (1, 0, fx * (1 - fy)),
                           (0, 1, (1 - fx) * fy), (1, 1, fx * fy)):
            cx, cy = x0 + dx, y0 + dy
            ok = (cx >= 0) & (cx < w) & (cy >= 0) & (cy < h) & (cw > 0)
            v = ws * cw
            total += np.where(ok, v, 0.0)
            sel = ok.ravel()
            rows_all.append(pix[sel])
            cols_all.append((cy * w + cx).ravel()[sel])
            vals_all.append(v.ravel()[sel])
    rows = np.concatenate(rows_all)
    cols = np.concatenate(cols_all)
    vals = np.concatenate(vals_all)
    tot = total.ravel()
    # rows with no in-frame mass fall back to the identity
    empty = np.flatnonzero(tot <= 0)
    vals = vals / np.where(tot[rows] > 0, tot[rows], 1.0)
    rows = np.concatenate([rows, empty])
    cols = np.concatenate([cols, empty])
    vals = np.concatenate([vals, np.ones(len(empty))])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def poisson_nll(Ax: np.ndarray, W: np.ndarray, floor: float = 1e-12) -> float:
    a = np.maximum(Ax, floor)
    return float(np.sum(a - W * np.log(a)))


def deconvolve_rl(W: Image, A: BlurOperator, iterations: int = 30, floor: float = 1e-4):
    """Richardson-Lucy starting from the blurred image.

    Returns ``(image, log)`` where ``log`` holds per-iteration Poisson
    negative log-likelihood and residual RMS of the iterate it starts from.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if floor <= 0:
        raise ValueError("floor must be positive")
    y = A._check(W)
    if np.any(y < 0):
        raise ValueError("Richardson-Lucy needs a non-negative image")
    norm = A.adjoint_ones()[..., None]
    safe = np.where(norm > 0, norm, 1.0)
    x = y.copy()
    log = []
    for it in range(iterations):
        ax = A._run(A.matrix, x)
        log.append({"iter": it, "nll": poisson_nll(ax, y),
                    "residual_rms": float(np.sqrt(np.mean((ax - y) ** 2)))})
        ratio = y / np.maximum(ax, floor)
        x = np.where(norm > 0, x * A._run(A._mt, ratio) / safe, x)
    x = np.maximum(x, 0.0)
    return Image(x, W.mask), log


def grad(x: np.ndarray):
    """Forward differences with a zero last row/column (Neumann)."""
    gx = np.zeros_like(x)
    gy = np.zeros_like(x)
    gx[:, :-1] = x[:, 1:] - x[:, :-1]
    gy[:-1, :] = x[1:, :] - x[:-1, :]
    return gx, gy


def grad_adjoint(gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    out = np.zeros_like(gx)
    out[:, :-1] -= gx[:, :-1]
    out[:, 1:] += gx[:, :-1]
    out[:-1, :] -= gy[:-1, :]
    out[1:, :] += gy[:-1, :]
    return out


def deconvolve_cg(W: Image, A: BlurOperator, lam: float = 1e-3, iterations: int = 50, tol: float = 1e-10):
    """Solve ``(A^T A + lam (I + grad^T grad)) x = A^T W`` per channel.

    The Tikhonov term acts on the deviation from the channel mean of W
    (``x = mean + z``), so heavy regularization flattens toward the data
    mean instead of darkening the image.  A keeps constants, so this only
    adds ``lam * mean`` to the right-hand side.

    Uses the conjugate-residual variant of CG, whose residual norm never
    increases.  Returns ``(image, log)``; raises SolverError if the residual
    grows more than tenfold.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    y = A._check(W)
    h, w, c = y.shape
    M, Mt = A.matrix, A._mt

    def normal_op(v):
        img = v.reshape(h, w)
        out = Mt @ (M @ v)
        if lam > 0:
            out = out + lam * (v + grad_adjoint(*grad(img)).ravel())
        return out

    out = np.empty_like(y)
    log = []
    valid = W.mask if isinstance(W, Image) else np.ones((h, w), bool)
    for ch in range(c):
        mu = float(y[..., ch][valid].mean()) if valid.any() else 0.0
        b = Mt @ (y[..., ch].ravel() - mu)
        x = y[..., ch].ravel() - mu
        r = b - normal_op(x)
        r0 = np.linalg.norm(r)
        bnorm = max(np.linalg.norm(b), 1e-300)
        p = r.copy()
        Ar = normal_op(r)
        Ap = Ar.copy()
        rAr = r @ Ar
        log.append({"channel": ch, "iter": 0, "residual": float(r0)})
        for it in range(1, iterations + 1):
            if np.linalg.norm(r) <= tol * bnorm or rAr == 0:
                break
            ApAp = Ap @ Ap
            if ApAp == 0:
                break
            alpha = rAr / ApAp
            x += alpha * p
            r -= alpha * Ap
            res = float(np.linalg.norm(r))
            log.append({"channel": ch, "iter": it, "residual": res})
            if res > 10.0 * max(r0, 1e-300) and r0 > 0:
                raise SolverError(f"CG diverged at iteration {it}")
            Ar = normal_op(r)
            rAr_new = r @ Ar
            beta = rAr_new / rAr
            rAr = rAr_new
            p = r + beta * p
            Ap = Ar + beta * Ap
        out[..., ch] = x.reshape(h, w) + mu
    return Image(out, W.mask), log


def deblur(W: Image, kernels: KernelField, solver: str = "rl", iterations: int | None = None,
           lam: float = 1e-3, substeps: int = 4):
    A = BlurOperator(kernels, substeps)
    if solver == "rl":
        return deconvolve_rl(W, A, iterations or 30)
    if solver == "cg":
        return deconvolve_cg(W, A, lam, iterations or 50)
    raise ValueError(f"unknown solver {solver!r}")
