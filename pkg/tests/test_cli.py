import csv
import shutil
from pathlib import Path

import numpy as np
import pytest

from hybridblur import io as hio
from hybridblur.capture import MotionScript, make_capture, save_capture
from hybridblur.cli import main, split_scenes, worker_count
from hybridblur.pipeline import (METRIC_KEYS, STAGES, PipelineConfig, evaluation_rows, format_report,
                                 parse_depths, process_capture)


def tree_bytes(root):
    root = Path(root)
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def blur_capture(tmp_path_factory):
    d = tmp_path_factory.mktemp("cap") / "scene_000"
    save_capture(d, make_capture(31, wide_dims=(144, 144)))
    return d


@pytest.fixture(scope="module")
def pipeline_result(blur_capture, tmp_path_factory):
    out = tmp_path_factory.mktemp("res")
    assert main(["pipeline", str(blur_capture), "--out", str(out)]) == 0
    return out


def test_synth_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["synth", "--scenes", "3", "--seed", "7", "--out", str(a)]) == 0
    assert main(["synth", "--scenes", "3", "--seed", "7", "--out", str(b)]) == 0
    ta, tb = tree_bytes(a), tree_bytes(b)
    assert ta.keys() == tb.keys() and all(ta[k] == tb[k] for k in ta)
    ds = hio.read_json(a / "dataset.json")
    assert len(ds["captures"]) == 3
    for rel in ds["captures"]:
        m = hio.read_json(a / rel / "manifest.json")
        assert 5 <= len(m["burst_windows"]) <= 14
        assert m["subframes"] in (5, 7, 9, 11, 13)
        assert (a / rel / "wide.pfm").exists() and (a / rel / "gt.pfm").exists()


def test_split_assignment():
    s = split_scenes(20, 0)
    counts = {k: list(s.values()).count(k) for k in ("train", "val", "test")}
    assert counts == {"train": 14, "val": 2, "test": 4}
    assert split_scenes(20, 0) == s


def test_pipeline_outputs_and_timings(pipeline_result):
    m = hio.read_json(pipeline_result / "metrics.json")
    assert set(m["timings"]) == set(STAGES)
    assert all(v > 0 for v in m["timings"].values())
    for k in METRIC_KEYS:
        assert np.isfinite(m[k])
    assert m["psnr_deblurred"] > m["psnr_blurred"]
    for name in ("deblurred.pfm", "final.pfm", "merged_6x.pfm", "weights.pfm", "alignment.json",
                 "deblur_log.json", "kernels/kernels.json", "kernels/tap_0.pfm"):
        assert (pipeline_result / name).exists()
    al = hio.read_json(pipeline_result / "alignment.json")
    assert {"depth", "H", "scores"} <= set(al)


def test_pipeline_static_capture(tmp_path):
    cap = make_capture(32, wide_dims=(144, 144), script=MotionScript.static())
    save_capture(tmp_path / "c", cap)
    m = process_capture(tmp_path / "c", tmp_path / "r")
    assert abs(m["psnr_deblurred"] - m["psnr_blurred"]) <= 0.1


def test_pipeline_without_ground_truth(blur_capture, tmp_path):
    cap = tmp_path / "nogt"
    shutil.copytree(blur_capture, cap)
    (cap / "gt.pfm").unlink()
    m = process_capture(cap, tmp_path / "r")
    assert "psnr_final" not in m and (tmp_path / "r" / "final.pfm").exists()


def test_eval_report(pipeline_result, tmp_path, capsys):
    missing = tmp_path / "empty_run"
    missing.mkdir()
    out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["eval", str(pipeline_result), str(missing), "--out", str(out1)]) == 0
    assert main(["eval", str(pipeline_result), str(missing), "--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()
    rows = list(csv.reader(out1.read_text().splitlines()))
    assert rows[0] == ["capture", *METRIC_KEYS]
    assert [r[0] for r in rows[1:]] == sorted([pipeline_result.name, "empty_run"]) + ["mean"]
    absent = [r for r in rows if r[0] == "empty_run"][0]
    assert absent[1:] == ["absent"] * len(METRIC_KEYS)
    assert main(["eval", str(pipeline_result), "--report", "md"]) == 0
    md = capsys.readouterr().out.splitlines()
    assert md[0].startswith("| capture |") and len(md) == 4


def test_eval_mean_row():
    import tempfile
    with tempfile.TemporaryDirectory() as d:
        dirs = []
        r = np.random.default_rng(0)
        for i in range(4):
            p = Path(d) / f"cap_{3 - i}"
            hio.write_json(p / "metrics.json", {k: float(r.uniform(10, 40)) for k in METRIC_KEYS})
            dirs.append(p)
        rows, mean = evaluation_rows(dirs)
        assert [x["capture"] for x in rows] == ["cap_0", "cap_1", "cap_2", "cap_3"]
        for k in METRIC_KEYS:
            assert abs(mean[k] - np.mean([x[k] for x in rows])) <= 1e-9
        single, _ = evaluation_rows(dirs[:1])
        assert format_report(single, mean).count("\n") == 3


def test_stage_commands(blur_capture, tmp_path):
    assert main(["align", str(blur_capture), "--out", str(tmp_path / "al.json")]) == 0
    assert "depth" in hio.read_json(tmp_path / "al.json")
    assert main(["kernels", str(blur_capture), "--out", str(tmp_path / "k")]) == 0
    assert (tmp_path / "k" / "kernels.png").exists()
    assert main(["deblur", str(blur_capture), "--kernels", str(tmp_path / "k"), "--solver", "cg",
                 "--iters", "10", "--lambda", "0.01", "--out", str(tmp_path / "d")]) == 0
    log = hio.read_json(tmp_path / "d" / "deblur_log.json")
    assert log["solver"] == "cg" and len(log["log"]) == 11
    assert main(["merge", str(blur_capture), "--deblurred", str(tmp_path / "d" / "deblurred.pfm"),
                 "--out", str(tmp_path / "m")]) == 0
    assert (tmp_path / "m" / "final.pfm").exists() and (tmp_path / "m" / "weights.pfm").exists()


def test_exit_code_io_errors(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["synth", "--scenes", "1", "--size", "72", "--out", str(blocker / "sub")]) == 2
    assert main(["pipeline", str(tmp_path / "nowhere"), "--out", str(tmp_path / "o")]) == 2
    assert main(["align", str(tmp_path), "--depths", "bad"]) == 2
    assert main(["eval", str(tmp_path / "nope")]) == 2


def test_exit_code_stage_failure(blur_capture, tmp_path, capsys):
    cap = tmp_path / "broken"
    shutil.copytree(blur_capture, cap)
    m = hio.read_json(cap / "manifest.json")
    m["K_u"][0][2] += 1e5                      # burst never overlaps the wide view
    hio.write_json(cap / "manifest.json", m)
    assert main(["pipeline", str(cap), "--out", str(tmp_path / "o")]) == 1
    assert "align" in capsys.readouterr().err


def test_config_parsing(monkeypatch):
    assert parse_depths("0.5:50:16") == (0.5, 50.0, 16)
    with pytest.raises(ValueError):
        parse_depths("1:2")
    assert len(PipelineConfig(depths=(1.0, 10.0, 5)).candidates()) == 5
    monkeypatch.setenv("HCD_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("HCD_THREADS", "x")
    with pytest.raises(ValueError):
        worker_count()
