"""Command-line front end.

Exit codes: 0 success, 1 stage/algorithm failure, 2 I/O or configuration error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io as hio
from .align import AlignmentError
from .capture import NoiseParams, load_burst, make_capture, save_capture
from .deblur import SolverError
from .pipeline import (PipelineConfig, StageError, capture_id, compute_kernels, evaluation_rows, find_captures,
                       format_report, parse_depths, process_capture, run_deblur, run_merge)
from .trajectory import kernel_stats, load_kernels, render_kernel_plot, save_kernels

log = logging.getLogger("hybridblur")

EXIT_OK, EXIT_STAGE, EXIT_IO = 0, 1, 2


def worker_count() -> int:
    env = os.environ.get("HCD_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"HCD_THREADS must be an integer, got {env!r}")
    return os.cpu_count() or 1


def _pmap(fn, items):
    items = list(items)
    n = min(worker_count(), max(1, len(items)))
    if n == 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig(seed=args.seed)
    if getattr(args, "solver", None):
        cfg.solver = args.solver
    if getattr(args, "iters", None):
        cfg.iters = args.iters
    if getattr(args, "lam", None) is not None:
        cfg.lam = args.lam
    if getattr(args, "depths", None):
        cfg.depths = parse_depths(args.depths)
    if getattr(args, "flow_levels", None):
        cfg.flow_levels = args.flow_levels
    return cfg


def split_scenes(n: int, seed: int) -> dict:
    """Assign scene indices to train/val/test (~70/10/20) by a seeded shuffle."""
    perm = np.random.default_rng([seed, 7919]).permutation(n)
    n_test = int(round(0.2 * n))
    n_val = int(round(0.1 * n))
    split = {}
    for k, idx in enumerate(perm):
        split[int(idx)] = "test" if k < n_test else ("val" if k < n_test + n_val else "train")
    return split


def cmd_synth(args) -> int:
    out = Path(args.out)
    size = (args.size, args.size)
    noise = NoiseParams(shot=args.shot, read=args.read)
    split = split_scenes(args.scenes, args.seed)
    jobs = [(i, j) for i in range(args.scenes) for j in range(args.captures_per_scene)]

    def one(job):
        i, j = job
        seed = int(np.random.SeedSequence([args.seed, i, j]).generate_state(1)[0])
        scene_seed = int(np.random.SeedSequence([args.seed, i]).generate_state(1)[0])
        cap = make_capture(seed, wide_dims=size, noise_wide=noise, noise_burst=noise, baseline=args.baseline,
                           scene_seed=scene_seed)
        name = f"scene_{i:03d}" if args.captures_per_scene == 1 else f"scene_{i:03d}_{j:02d}"
        path = out / split[i] / name
        save_capture(path, cap)
        return str(path)

    paths = _pmap(one, jobs)
    hio.write_json(out / "dataset.json", {"seed": args.seed, "scenes": args.scenes,
                                          "captures": [str(Path(p).relative_to(out)) for p in paths],
                                          "splits": {str(k): v for k, v in sorted(split.items())}})
    print(f"wrote {len(paths)} captures to {out}")
    return EXIT_OK


def cmd_align(args) -> int:
    cfg = _config(args)
    W = hio.load_image(Path(args.capture) / "wide.pfm")
    manifest, burst = load_burst(args.capture)
    from .align import fov_align
    res = fov_align(W, burst, cfg.candidates(), manifest.K_u, manifest.R, manifest.t, manifest.K_w)
    doc = res.to_dict()
    if args.out:
        hio.write_json(args.out, doc)
    else:
        import json
        print(json.dumps(doc, indent=2))
    return EXIT_OK


def cmd_kernels(args) -> int:
    cfg = _config(args)
    W = hio.load_image(Path(args.capture) / "wide.pfm")
    manifest, burst = load_burst(args.capture)
    manifest.motion = None
    al, P, kf = compute_kernels(W, burst, manifest, cfg)
    out = Path(args.out)
    save_kernels(out, kf, kernel_stats(kf))
    render_kernel_plot(kf, W, out / "kernels.png")
    print(f"kernels written to {out}")
    return EXIT_OK


def cmd_deblur(args) -> int:
    cfg = _config(args)
    W = hio.load_image(Path(args.capture) / "wide.pfm")
    if args.kernels:
        kf = load_kernels(args.kernels)
    else:
        manifest, burst = load_burst(args.capture)
        manifest.motion = None
        _, _, kf = compute_kernels(W, burst, manifest, cfg)
    W_D, dlog = run_deblur(W, kf, cfg)
    out = Path(args.out)
    hio.save_image(out / "deblurred.pfm", W_D)
    hio.save_image(out / "deblurred.png", W_D)
    hio.write_json(out / "deblur_log.json", {"solver": cfg.solver, "log": dlog})
    return EXIT_OK


def cmd_merge(args) -> int:
    cfg = _config(args)
    W = hio.load_image(Path(args.capture) / "wide.pfm")
    manifest, burst = load_burst(args.capture)
    manifest.motion = None
    al, P, kf = compute_kernels(W, burst, manifest, cfg)
    W_D = hio.load_image(args.deblurred) if args.deblurred else run_deblur(W, kf, cfg)[0]
    _, merged, gate, final = run_merge(burst, P, al.H, W_D, cfg)
    out = Path(args.out)
    hio.save_image(out / "merged_6x.pfm", merged)
    hio.write_pfm(out / "weights.pfm", gate)
    hio.save_image(out / "final.pfm", final)
    hio.save_image(out / "final.png", final)
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = _config(args)
    caps = []
    for root in args.captures:
        found = find_captures(root)
        if not found:
            raise FileNotFoundError(f"no capture found under {root}")
        caps += [(c, root) for c in found]
    out = Path(args.out)
    single = len(caps) == 1

    def one(item):
        cap, root = item
        dest = out if single else out / capture_id(cap, root)
        return process_capture(cap, dest, cfg)

    results = _pmap(one, caps)
    for m in results:
        if "psnr_blurred" in m:
            print(f"{m['capture']}: blurred {m['psnr_blurred']:.2f} dB, deblurred {m['psnr_deblurred']:.2f} dB, "
                  f"final {m['psnr_final']:.2f} dB")
    return EXIT_OK


def cmd_eval(args) -> int:
    dirs = []
    for d in args.results:
        d = Path(d)
        if not d.is_dir():
            raise FileNotFoundError(f"results directory {d} does not exist")
        if (d / "metrics.json").exists() or not any(d.glob("*/metrics.json")):
            dirs.append(d)
        else:
            dirs += sorted(p.parent for p in d.glob("*/metrics.json"))
    rows, mean = evaluation_rows(dirs)
    text = format_report(rows, mean, args.report)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hybridblur", description="Hybrid-camera motion deblurring toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, solver=False):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--depths", help="depth candidates min:max:count (default 0.2:100:32)")
        sp.add_argument("--flow-levels", type=int, dest="flow_levels")
        if solver:
            sp.add_argument("--solver", choices=("rl", "cg"), default="rl")
            sp.add_argument("--iters", type=int)
            sp.add_argument("--lambda", type=float, dest="lam")

    s = sub.add_parser("synth", help="generate synthetic captures")
    s.add_argument("--out", required=True)
    s.add_argument("--scenes", type=int, default=1)
    s.add_argument("--captures-per-scene", type=int, default=1, dest="captures_per_scene")
    s.add_argument("--size", type=int, default=288, help="wide frame side, divisible by 6")
    s.add_argument("--shot", type=float, default=2e-4)
    s.add_argument("--read", type=float, default=0.005)
    s.add_argument("--baseline", type=float, default=0.08)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("align", help="plane-sweep FOV alignment")
    s.add_argument("capture")
    s.add_argument("--out")
    common(s)
    s.set_defaults(func=cmd_align)

    s = sub.add_parser("kernels", help="estimate and dump the blur kernel field")
    s.add_argument("capture")
    s.add_argument("--out", required=True)
    common(s)
    s.set_defaults(func=cmd_kernels)

    s = sub.add_parser("deblur", help="non-blind deblurring of the wide image")
    s.add_argument("capture")
    s.add_argument("--out", required=True)
    s.add_argument("--kernels", help="kernel dump directory (estimated when omitted)")
    common(s, solver=True)
    s.set_defaults(func=cmd_deblur)

    s = sub.add_parser("merge", help="burst merge and detail injection")
    s.add_argument("capture")
    s.add_argument("--out", required=True)
    s.add_argument("--deblurred", help="deblurred wide image (computed when omitted)")
    common(s, solver=True)
    s.set_defaults(func=cmd_merge)

    s = sub.add_parser("pipeline", help="run every stage and write metrics")
    s.add_argument("captures", nargs="+")
    s.add_argument("--out", required=True)
    common(s, solver=True)
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("eval", help="tabulate metrics of result directories")
    s.add_argument("results", nargs="+")
    s.add_argument("--report", choices=("csv", "md"), default="csv")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (AlignmentError, SolverError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
