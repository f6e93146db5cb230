import json
import subprocess
import sys

import numpy as np
import pytest

from gdemscale import pipeline
from gdemscale.cli import main
from gdemscale.errors import ConfigError
from gdemscale.pipeline import PipelineConfig, run_pipeline, timing_report


@pytest.fixture(scope="module")
def scene(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "scene"
    rc = main(["synth", "--output", str(out), "--frames", "3", "--width", "128", "--height", "64"])
    assert rc == 0
    return out


def test_synth_pipeline_eval(scene, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["pipeline", "--scene-dir", str(scene), "--output-dir", str(out)]) == 0
    assert "ok=3 failed=0" in capsys.readouterr().out
    for fid in ("0000", "0001", "0002"):
        side = json.loads((out / "depth" / f"{fid}.json").read_text())
        assert side["ok"] and side["method"] == "tandepth" and side["n_anchors"] > 0
    report = tmp_path / "report.json"
    assert main(["eval", "--pred-dir", str(out / "depth"), "--ref-dir", str(scene / "depth"),
                 "--report", str(report), "--markdown"]) == 0
    doc = json.loads(report.read_text())
    assert doc["pooled"]["abs_rel"] < 0.01
    assert doc["pooled"]["n_frames"] == 3
    assert report.with_suffix(".md").read_text().startswith("| Scene |")


def test_missing_gdem_is_fatal(scene, tmp_path, capsys):
    missing = tmp_path / "nope.tdgd"
    rc = main(["pipeline", "--scene-dir", str(scene), "--output-dir", str(tmp_path / "o"),
               "--gdem", str(missing)])
    assert rc == 2
    assert str(missing) in capsys.readouterr().err
    with pytest.raises(ConfigError, match="nope.tdgd"):
        run_pipeline(PipelineConfig.from_scene_dir(scene, tmp_path / "o", gdem=missing))


def test_failed_frame_is_isolated(scene, tmp_path, monkeypatch):
    real = pipeline.segment_ground

    def fake(disp, pose, *a, **kw):
        mask = real(disp, pose, *a, **kw)
        return np.zeros_like(mask) if pose.frame_id == "0001" else mask

    monkeypatch.setattr(pipeline, "segment_ground", fake)
    session = run_pipeline(PipelineConfig.from_scene_dir(scene, tmp_path / "o"))
    assert list(session.failures) == ["0001"]
    assert session.failures["0001"].startswith("NoGroundAnchors")
    assert [f.frame_id for f in session.succeeded] == ["0000", "0002"]
    assert not (tmp_path / "o" / "depth" / "0001.pfm").exists()
    assert json.loads((tmp_path / "o" / "depth" / "0001.json").read_text())["ok"] is False
    summary = json.loads((tmp_path / "o" / "session.json").read_text())
    assert summary["n_failed"] == 1


def test_timing_report(scene, tmp_path):
    session = run_pipeline(PipelineConfig.from_scene_dir(scene, tmp_path / "o"))
    for f in session.frames:
        assert all(v >= 0 for v in f.timing_ms.values())
        assert sum(f.timing_ms.values()) <= f.total_ms
    one = pipeline.Session(session.frames[:1])
    rep = timing_report(one)
    assert rep["csf"]["mean"] == rep["csf"]["median"] == session.frames[0].timing_ms["csf"]
    assert set(rep) >= {"csf", "projection", "occlusion", "least_squares", "apply", "total"}
    with pytest.raises(ValueError):
        timing_report(pipeline.Session([]))


def test_toml_config_with_override(scene, tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text(f'[pipeline]\nscene_dir = "{scene}"\noutput_dir = "out"\nmethod = "fixed"\n')
    assert main(["pipeline", "--config", str(cfg), "--method", "camheight"]) == 0
    side = json.loads((tmp_path / "out" / "depth" / "0000.json").read_text())
    assert side["method"] == "camheight"
    cfg.write_text('[pipeline]\nbogus = 1\n')
    assert main(["pipeline", "--config", str(cfg)]) == 2


def test_parallel_matches_serial(scene, tmp_path):
    a = run_pipeline(PipelineConfig.from_scene_dir(scene, tmp_path / "a"))
    b = run_pipeline(PipelineConfig.from_scene_dir(scene, tmp_path / "b", jobs=2))
    for fid in ("0000", "0001", "0002"):
        assert (tmp_path / "a" / "depth" / f"{fid}.pfm").read_bytes() == \
            (tmp_path / "b" / "depth" / f"{fid}.pfm").read_bytes()
    assert [f.params for f in a.frames] == [f.params for f in b.frames]


def test_single_frame_commands(scene, tmp_path):
    common = ["--disparity", str(scene / "disparity" / "0000.pfm"), "--pose", str(scene / "poses.jsonl"),
              "--frame-id", "0000", "--intrinsics", str(scene / "intrinsics.json"),
              "--rough-params", str(scene / "rough_params.json")]
    assert main(["segment-ground", *common, "--output", str(tmp_path / "m.png")]) == 0
    assert (tmp_path / "m.png").stat().st_size > 0
    assert main(["scale", *common, "--method", "reference", "--ref", str(scene / "depth" / "0000.pfm"),
                 "--output", str(tmp_path / "d.pfm")]) == 0
    assert main(["scale", *common, "--method", "median", "--output", str(tmp_path / "d.pfm")]) == 2


def test_version():
    r = subprocess.run([sys.executable, "-m", "gdemscale.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip()
