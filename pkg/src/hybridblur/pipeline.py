"""End-to-end processing of one capture directory, and evaluation reports."""
from __future__ import annotations

import csv
import io as _io
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import io as hio
from .align import depth_candidates, fov_align
from .capture import load_burst
from .deblur import BlurOperator, deconvolve_cg, deconvolve_rl
from .flow import FlowParams
from .imaging import psnr, ssim
from .merge import align_burst, detail_inject, merge
from .trajectory import (accumulate, adjacent_flows, center_index, kernel_stats, relative_timestamps,
                         resample_kernels, save_kernels, suppress_subpixel_kernels,
                         warp_trajectories)

log = logging.getLogger(__name__)

STAGES = ("align", "flow", "trajectory", "kernels", "deblur", "merge")
METRIC_KEYS = ("psnr_blurred", "ssim_blurred", "psnr_deblurred", "ssim_deblurred", "psnr_final", "ssim_final")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineConfig:
    solver: str = "rl"
    iters: int | None = None
    lam: float = 1e-3
    depths: tuple = (0.2, 100.0, 32)
    flow_levels: int = 4
    flow_radius: int = 7
    flow_iterations: int = 10
    substeps: int = 4
    min_kernel_px: float = 0.5
    sigma_w: float = 0.05
    seed: int = 0
    write_png: bool = True
    extra: dict = field(default_factory=dict)

    def flow_params(self) -> FlowParams:
        return FlowParams(levels=self.flow_levels, radius=self.flow_radius, iterations=self.flow_iterations)

    def candidates(self):
        lo, hi, n = self.depths
        return depth_candidates(float(lo), float(hi), int(n))


def parse_depths(text: str) -> tuple:
    try:
        lo, hi, n = text.split(":")
        return float(lo), float(hi), int(n)
    except ValueError as exc:
        raise ValueError(f"depth spec must be min:max:count, got {text!r}") from exc


class _Timer:
    def __init__(self):
        self.timings = {}

    def run(self, stage, fn, *args, **kwargs):
        t0 = time.perf_counter()
        try:
            out = fn(*args, **kwargs)
        except Exception as exc:
            raise StageError(stage, exc) from exc
        self.timings[stage] = max(time.perf_counter() - t0, 1e-9)
        log.info("stage %s: %.3f s", stage, self.timings[stage])
        return out


def compute_kernels(W, burst, manifest, cfg: PipelineConfig, timer: _Timer | None = None):
    """align -> flow -> trajectory -> kernels.  Returns (alignment, trajectories, kernel field)."""
    timer = timer or _Timer()
    al = timer.run("align", fov_align, W, burst, cfg.candidates(), manifest.K_u, manifest.R, manifest.t,
                   manifest.K_w)
    flows = timer.run("flow", adjacent_flows, burst.frames, cfg.flow_params())

    def _traj():
        P = accumulate(flows, center_index(len(burst.frames)))
        return P, warp_trajectories(P, al.H, W.height, W.width)

    P, Phat = timer.run("trajectory", _traj)
    kf = timer.run("kernels", lambda: suppress_subpixel_kernels(
        resample_kernels(Phat, relative_timestamps(manifest)), cfg.min_kernel_px))
    return al, P, kf


def run_deblur(W, kf, cfg: PipelineConfig):
    A = BlurOperator(kf, cfg.substeps)
    if cfg.solver == "rl":
        return deconvolve_rl(W, A, cfg.iters or 30)
    if cfg.solver == "cg":
        return deconvolve_cg(W, A, cfg.lam, cfg.iters or 50)
    raise ValueError(f"unknown solver {cfg.solver!r}")


def run_merge(burst, P, H, W_D, cfg: PipelineConfig):
    ab = align_burst(burst, P, H, W_D, flow_params=cfg.flow_params(), sigma_w=cfg.sigma_w)
    merged = merge(ab)
    gate = ab.confidence()
    final = detail_inject(W_D, merged, gate)
    return ab, merged, gate, final


def process_capture(capture_dir, out_dir, cfg: PipelineConfig | None = None) -> dict:
    """Run every stage on one capture and write results to ``out_dir``.

    Ground truth is read only for the final metrics.
    """
    cfg = cfg or PipelineConfig()
    capture_dir, out_dir = Path(capture_dir), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    W = hio.load_image(capture_dir / "wide.pfm")
    manifest, burst = load_burst(capture_dir)
    manifest.motion = None
    timer = _Timer()

    al, P, kf = compute_kernels(W, burst, manifest, cfg, timer)
    hio.write_json(out_dir / "alignment.json", al.to_dict())
    save_kernels(out_dir / "kernels", kf, kernel_stats(kf))

    W_D, dlog = timer.run("deblur", run_deblur, W, kf, cfg)
    hio.save_image(out_dir / "deblurred.pfm", W_D)
    hio.write_json(out_dir / "deblur_log.json", {"solver": cfg.solver, "log": dlog})

    ab, merged, gate, final = timer.run("merge", run_merge, burst, P, al.H, W_D, cfg)
    hio.save_image(out_dir / "merged_6x.pfm", merged)
    hio.write_pfm(out_dir / "weights.pfm", gate)
    hio.save_image(out_dir / "final.pfm", final)
    if cfg.write_png:
        hio.save_image(out_dir / "deblurred.png", W_D)
        hio.save_image(out_dir / "final.png", final)

    metrics = {"capture": capture_dir.name, "depth": al.depth, "timings": timer.timings,
               "config": {k: v for k, v in asdict(cfg).items() if k != "extra"}}
    gt_path = capture_dir / "gt.pfm"
    if gt_path.exists():
        gt = hio.load_image(gt_path)
        for name, img in (("blurred", W), ("deblurred", W_D), ("final", final)):
            metrics[f"psnr_{name}"] = psnr(img, gt)
            metrics[f"ssim_{name}"] = ssim(img, gt)
    hio.write_json(out_dir / "metrics.json", metrics)
    return metrics


def find_captures(root) -> list:
    root = Path(root)
    if (root / "manifest.json").exists():
        return [root]
    return sorted(p.parent for p in root.rglob("manifest.json"))


def capture_id(path, root) -> str:
    rel = Path(path).relative_to(root) if Path(path) != Path(root) else Path(Path(path).name)
    return "_".join(rel.parts)


def _fmt(v):
    return "absent" if v is None else f"{v:.4f}"


def evaluation_rows(result_dirs) -> tuple:
    """Per-capture metric rows sorted by capture id, plus the mean row."""
    rows = []
    for d in result_dirs:
        d = Path(d)
        mpath = d / "metrics.json"
        row = {"capture": d.name}
        if mpath.exists():
            m = hio.read_json(mpath)
            row["capture"] = d.name
            for k in METRIC_KEYS:
                row[k] = m.get(k)
        else:
            for k in METRIC_KEYS:
                row[k] = None
        rows.append(row)
    rows.sort(key=lambda r: r["capture"])
    mean = {"capture": "mean"}
    for k in METRIC_KEYS:
        vals = [r[k] for r in rows if r[k] is not None]
        mean[k] = float(np.mean(vals)) if vals else None
    return rows, mean


def format_report(rows, mean, fmt: str = "csv") -> str:
    header = ["capture", *METRIC_KEYS]
    table = [[r["capture"], *(_fmt(r[k]) for k in METRIC_KEYS)] for r in rows + [mean]]
    if fmt == "csv":
        buf = _io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(header)
        wr.writerows(table)
        return buf.getvalue()
    if fmt == "md":
        lines = ["| " + " | ".join(header) + " |", "|" + "|".join(["---"] * len(header)) + "|"]
        lines += ["| " + " | ".join(r) + " |" for r in table]
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")
