import json
import math

import pytest

from wstrack import cli, io
from wstrack.errors import ConfigError, StageError
from wstrack.pipeline import PipelineConfig, load_config, run_pipeline, subsample_tracks
from conftest import track

SMOKE = """
[pipeline]
seed = 3
width = 4
[sim]
image_size = 64, 64
n_frames = 6
initial_cells = 4
min_separation = 8
[codetect]
epochs = 2
[track]
epochs = 2
"""


def test_load_config_file_and_env(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text(SMOKE)
    cfg = load_config(p, env={"WSTRACK_CODETECT__EPOCHS": "7", "WSTRACK_BFPROP__TH_CONF": "0.6"})
    assert cfg.sim.image_size == (64, 64) and cfg.sim.n_frames == 6
    assert cfg.codetect.epochs == 7 and cfg.track.epochs == 2
    assert cfg.bfprop.th_conf == 0.6 and cfg.seed == 3 and cfg.width == 4


def test_defaults():
    cfg = load_config(env={})
    assert (cfg.bfprop.th, cfg.bfprop.th_conf, cfg.bfprop.r) == (0.01, 0.5, 18.0)
    assert cfg.codetect.learning_rate == 1e-3 and cfg.eval.match_radius == 10.0


@pytest.mark.parametrize(
    "text",
    ["[nope]\na = 1\n", "[sim]\nbogus = 1\n", "[codetect]\nepochs = many\n", "[pipeline]\nsim = 1\n"],
)
def test_bad_config(tmp_path, text):
    p = tmp_path / "c.ini"
    p.write_text(text)
    with pytest.raises(ConfigError):
        load_config(p, env={})


def test_missing_data_dir(tmp_path):
    cfg = PipelineConfig(workdir=str(tmp_path / "w"), data_dir=str(tmp_path / "absent"))
    with pytest.raises(StageError) as info:
        run_pipeline(cfg)
    assert info.value.stage == "config"
    assert "absent" in str(info.value)


def test_subsample_tracks():
    tracks = [track(1, [(f, f, 0) for f in range(4)]), track(2, [(4, 9, 9), (5, 9, 9), (6, 9, 9)], parent=1)]
    out = subsample_tracks(tracks, 3)
    assert [t.points for t in out] == [[(0, 0, 0), (1, 3, 0)], [(2, 9, 9)]]
    assert out[1].parent_id == 1


def test_smoke_pipeline_and_resume(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text(SMOKE)
    cfg = load_config(p, env={})
    cfg.workdir = str(tmp_path / "run")
    report = run_pipeline(cfg)
    d = report.as_dict()
    for key in ("association_accuracy", "target_effectiveness", "precision", "recall", "f1", "codetect_f1"):
        assert math.isfinite(d[key])
    for name in ("tracks.csv", "report.json", "codetect.npz", "tracknet.npz", "points.csv"):
        assert (tmp_path / "run" / name).exists()
    on_disk = json.loads((tmp_path / "run" / "report.json").read_text())
    assert on_disk["association_accuracy"] == pytest.approx(d["association_accuracy"])
    # a second run resumes every stage and reproduces the same report
    again = run_pipeline(cfg).as_dict()
    assert again["association_accuracy"] == d["association_accuracy"]
    assert again["seconds_codetect"] < d["seconds_codetect"]


def test_cli_stage_by_stage(tmp_path, capsys):
    d = tmp_path
    assert cli.main(["synth", "--out", str(d / "seq"), "--seed", "2", "--size", "64", "--n-frames", "4", "--initial-cells", "3"]) == 0
    assert cli.main(["extract-points", "--data", str(d / "seq"), "--out", str(d / "pts.csv")]) == 0
    assert io.read_points_csv(d / "pts.csv")
    assert cli.main(["train-codetect", "--data", str(d / "seq"), "--points", str(d / "pts.csv"), "--out", str(d / "cd.npz"), "--epochs", "1", "--width", "2"]) == 0
    assert cli.main(["bfprop", "--ckpt", str(d / "cd.npz"), "--data", str(d / "seq"), "--out", str(d / "bf")]) == 0
    assert (d / "bf" / "associations.csv").exists()
    assert cli.main(["build-pseudo", "--bfprop", str(d / "bf"), "--data", str(d / "seq"), "--out", str(d / "ps")]) == 0
    assert cli.main(["train-track", "--pseudo", str(d / "ps"), "--out", str(d / "tr.npz"), "--epochs", "1", "--width", "2"]) == 0
    assert cli.main(["track", "--ckpt", str(d / "tr.npz"), "--data", str(d / "seq"), "--out", str(d / "tracks.csv")]) == 0
    capsys.readouterr()
    gt = str(d / "seq" / "tracks.csv")
    assert cli.main(["eval", "--gt", gt, "--pred", gt, "--report", str(d / "r.json")]) == 0
    rep = json.loads((d / "r.json").read_text())
    assert rep["association_accuracy"] == 1.0 and rep["f1"] == 1.0
    assert cli.main(["plot", "--tracks", gt, "--data", str(d / "seq"), "--out", str(d / "plots")]) == 0
    assert (d / "plots" / "tracks_3d.png").exists()


def test_cli_error_exit(tmp_path, capsys):
    assert cli.main(["track", "--ckpt", str(tmp_path / "x.npz"), "--data", str(tmp_path), "--out", "o.csv"]) == 1
    assert "error" in capsys.readouterr().err
