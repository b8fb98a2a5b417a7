import json
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adasr import config as cfgmod
from adasr.cli import METRIC_COLUMNS, cmd_ablate, format_table, main
from adasr.config import ConfigError, RunConfig, SceneSource
from adasr.dataio import read_cube, read_pgm, synth_scene, write_cube
from adasr.degradation import simulate_spatial_degrade, simulate_spectral_degrade
from adasr.metrics import cc, ergas, psnr, rmse, sam
from adasr.training import ARMS, TrainConfig

TINY_SYNTH = {"W": 16, "H": 16, "C": 8, "C_m": 2, "r": 4, "seed": 2}
TINY_TRAIN = {"total_steps": 6, "stage2_steps": 6, "log_interval": 3, "lr": 1e-3}


def write_config(path, out, **extra):
    doc = {"scene": {"synth": TINY_SYNTH}, "train": TINY_TRAIN, "out": str(out)}
    doc.update(extra)
    path.write_text(json.dumps(doc))
    return str(path)


def file_bytes(d):
    return {name: (d / name).read_bytes() for name in sorted(os.listdir(d)) if (d / name).is_file()}


# --- synth ------------------------------------------------------------------------------------------


def test_synth_default_shapes(tmp_path):
    out = tmp_path / "scene"
    assert main(["synth", "--out", str(out)]) == 0
    shapes = {k: read_cube(out / f"{k}.hsic").shape for k in "XYZM"}
    assert shapes == {"X": (64, 64, 31), "Y": (16, 16, 31), "Z": (64, 64, 3), "M": (16, 16, 3)}


def test_synth_deterministic(tmp_path):
    cfg = write_config(tmp_path / "c.json", tmp_path / "a")
    assert main(["synth", "--config", cfg]) == 0
    assert main(["synth", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    assert file_bytes(tmp_path / "a") == file_bytes(tmp_path / "b")
    assert main(["synth", "--config", cfg, "--out", str(tmp_path / "c"), "--seed", "9"]) == 0
    assert file_bytes(tmp_path / "a")["X.hsic"] != file_bytes(tmp_path / "c")["X.hsic"]


def test_manifest_reload_reproduces_m(tmp_path):
    cfg = write_config(tmp_path / "c.json", tmp_path / "s")
    assert main(["synth", "--config", cfg]) == 0
    scene = cfgmod.load_manifest(str(tmp_path / "s" / "manifest.json"))
    m_disk = read_cube(tmp_path / "s" / "M.hsic")
    m_other = simulate_spatial_degrade(simulate_spectral_degrade(scene.x, scene.srf), scene.psf)
    assert np.max(np.abs(scene.m - m_other)) < 1e-10
    # disk copy is float32-rounded
    assert np.max(np.abs(scene.m - m_disk)) < 1e-6
    ref = synth_scene(**TINY_SYNTH)
    assert np.max(np.abs(scene.m - ref.m)) < 1e-10


# --- train / eval --------------------------------------------------------------------------------


def test_train_emits_artifacts(tmp_path):
    cfg = write_config(tmp_path / "c.json", tmp_path / "run")
    assert main(["train", "--config", cfg]) == 0
    run = tmp_path / "run"
    for name in ("config.json", "log.jsonl", "params.npz", "xhat.hsic", "timing.json", "metrics.json"):
        assert (run / name).exists(), name
    lines = [json.loads(line) for line in (run / "log.jsonl").read_text().splitlines()]
    assert lines[-1]["summary"] is True
    assert {(r["stage"], r["step"]) for r in lines[:-1]} == {(1, 3), (1, 6), (2, 3), (2, 6)}
    saved = cfgmod.load(str(run / "config.json"))
    assert saved == cfgmod.load(cfg)


def test_train_from_manifest_matches_synth(tmp_path):
    cfg = write_config(tmp_path / "c.json", tmp_path / "s")
    assert main(["synth", "--config", cfg]) == 0
    man = tmp_path / "m.json"
    man.write_text(json.dumps({"scene": {"manifest": "s/manifest.json"}, "train": TINY_TRAIN,
                               "out": str(tmp_path / "r1")}))
    assert main(["train", "--config", str(man)]) == 0
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "r2")]) == 0
    a = json.loads((tmp_path / "r1" / "metrics.json").read_text())
    b = json.loads((tmp_path / "r2" / "metrics.json").read_text())
    assert a == b


def test_train_deterministic_logs(tmp_path):
    cfg = write_config(tmp_path / "c.json", tmp_path / "a")
    assert main(["train", "--config", cfg]) == 0
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    for name in ("log.jsonl", "xhat.hsic", "metrics.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_eval_identity(tmp_path, capsys):
    x = synth_scene(**TINY_SYNTH).x
    write_cube(tmp_path / "x.hsic", x)
    before = (tmp_path / "x.hsic").read_bytes()
    assert main(["eval", "--xhat", str(tmp_path / "x.hsic"), "--x", str(tmp_path / "x.hsic"),
                 "-r", "4", "--out", str(tmp_path / "ev")]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report == {"sam": 0.0, "rmse": 0.0, "psnr": 100.0, "cc": pytest.approx(1.0, abs=1e-12),
                      "ergas": 0.0, "scale": 4}
    assert (tmp_path / "x.hsic").read_bytes() == before
    for name in ("mae.pgm", "sam.pgm"):
        assert not read_pgm(tmp_path / "ev" / name).any()


def test_eval_matches_library(tmp_path, rng):
    x = synth_scene(**TINY_SYNTH).x
    xhat = np.clip(x + rng.normal(scale=0.02, size=x.shape), 0, 1)
    write_cube(tmp_path / "x.hsic", x)
    write_cube(tmp_path / "xh.hsic", xhat)
    assert main(["eval", "--xhat", str(tmp_path / "xh.hsic"), "--x", str(tmp_path / "x.hsic"),
                 "-r", "4", "--out", str(tmp_path / "ev")]) == 0
    doc = json.loads((tmp_path / "ev" / "metrics.json").read_text())
    a, b = read_cube(tmp_path / "xh.hsic"), read_cube(tmp_path / "x.hsic")
    assert doc["sam"] == sam(a, b)
    assert doc["ergas"] == ergas(a, b, 4)
    assert doc["psnr"] == psnr(a, b)
    assert doc["rmse"] == rmse(a, b)
    assert doc["cc"] == cc(a, b)
    assert read_pgm(tmp_path / "ev" / "mae.pgm").shape == (16, 16)


# --- exit codes -----------------------------------------------------------------------------------


def test_exit_config_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["train", "--config", str(bad)]) == 2
    bad.write_text(json.dumps({"trian": {}}))
    assert main(["train", "--config", str(bad)]) == 2
    bad.write_text(json.dumps({"train": {"lr": -1}}))
    assert main(["train", "--config", str(bad)]) == 2
    bad.write_text(json.dumps({"scene": {"synth": {"W": 30, "r": 4}}}))
    assert main(["synth", "--config", str(bad)]) == 2
    assert main(["train", "--seed", "-1", "--out", str(tmp_path / "o")]) == 2


def test_exit_argparse_rejects_unknown_arm(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["train", "--arm", "bogus"])
    assert info.value.code == 2


def test_exit_io_errors(tmp_path):
    assert main(["eval", "--xhat", str(tmp_path / "nope.hsic"), "--x", str(tmp_path / "nope.hsic"),
                 "-r", "2"]) == 4
    (tmp_path / "junk.hsic").write_bytes(b"JUNKJUNKJUNKJUNKJUNK")
    assert main(["eval", "--xhat", str(tmp_path / "junk.hsic"), "--x", str(tmp_path / "junk.hsic"),
                 "-r", "2"]) == 4
    assert main(["train", "--config", str(tmp_path / "missing.json")]) == 4


def test_exit_numeric_abort(tmp_path):
    x = np.ones((4, 4, 2))
    write_cube(tmp_path / "flat.hsic", x)
    # constant bands make CC undefined
    assert main(["eval", "--xhat", str(tmp_path / "flat.hsic"), "--x", str(tmp_path / "flat.hsic"),
                 "-r", "2"]) == 3
    scene = synth_scene(**TINY_SYNTH)
    y = scene.y.copy()
    y[0, 0, 0] = np.inf
    for k, v in (("y", y), ("z", scene.z), ("m", scene.m)):
        write_cube(tmp_path / f"{k}.hsic", v)
    doc = {"scene": {"files": {"y": "y.hsic", "z": "z.hsic", "m": "m.hsic"}, "srf": scene.srf.to_dict()},
           "train": TINY_TRAIN, "out": str(tmp_path / "run"), "arm": "no-G"}
    (tmp_path / "c.json").write_text(json.dumps(doc))
    with np.errstate(invalid="ignore"):
        assert main(["train", "--config", str(tmp_path / "c.json")]) == 3
    last = (tmp_path / "run" / "log.jsonl").read_text().splitlines()[-1]
    assert json.loads(last)["aborted"] is True


# --- ablate ----------------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def ablation(tmp_path_factory):
    base = tmp_path_factory.mktemp("abl")
    cfg = RunConfig.from_dict({"scene": {"synth": TINY_SYNTH}, "train": TINY_TRAIN, "out": str(base / "a")})
    rows = cmd_ablate(cfg)
    return base, cfg, rows


def test_ablate_table_shape(ablation):
    base, _, rows = ablation
    lines = (base / "a" / "ablation.tsv").read_text().splitlines()
    assert lines[0].split("\t") == ["arm", *METRIC_COLUMNS]
    body = [line.split("\t") for line in lines[1:]]
    assert len(body) == 6 and all(len(r) == 6 for r in body)
    assert [r[0] for r in body] == list(ARMS)
    for j, col in enumerate(METRIC_COLUMNS, start=1):
        assert sum(r[j].endswith("*") for r in body) >= 1, col


def test_ablate_composition(ablation, tmp_path):
    base, cfg, rows = ablation
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(cfgmod.dumps(cfg))
    assert main(["train", "--config", str(cfg_path), "--arm", "no-G-no-LU2", "--out", str(tmp_path / "r")]) == 0
    for name in ("xhat.hsic", "log.jsonl", "metrics.json"):
        assert (tmp_path / "r" / name).read_bytes() == (base / "a" / "no-G-no-LU2" / name).read_bytes()


def test_ablate_deterministic(ablation, tmp_path):
    base, cfg, rows = ablation
    again = cmd_ablate(cfgmod.loads(cfgmod.dumps(cfg).replace(str(base / "a"), str(tmp_path / "b"))))
    assert again == rows
    assert (tmp_path / "b" / "ablation.tsv").read_bytes() == (base / "a" / "ablation.tsv").read_bytes()


def test_format_table_marks_failures():
    rows = [{"arm": "full", "sam": 1.0, "ergas": 2.0, "psnr": 30.0, "rmse": 0.1, "cc": 0.9},
            {"arm": "no-G", "error": "boom"}]
    text = format_table(rows)
    assert "FAILED" in text.splitlines()[2]
    assert text.splitlines()[1].split("\t")[1] == "1.0*"


# --- config -------------------------------------------------------------------------------------------


def test_config_defaults_round_trip():
    cfg = RunConfig()
    assert cfgmod.loads(cfgmod.dumps(cfg)) == cfg
    assert cfg.train.lr == 1e-4 and cfg.train.total_steps == 40000


@settings(max_examples=40, deadline=None)
@given(lr=st.floats(1e-6, 1.0), alpha=st.floats(0, 10), rho=st.floats(-5, 5), seed=st.integers(0, 2**31),
       steps=st.integers(1, 10**6), arm=st.sampled_from(ARMS), scale=st.one_of(st.none(), st.integers(1, 16)))
def test_config_round_trip(lr, alpha, rho, seed, steps, arm, scale):
    cfg = RunConfig(train=TrainConfig(lr=lr, alpha=alpha, rho=rho, seed=seed, total_steps=steps),
                    scene=SceneSource(synth={**TINY_SYNTH, "seed": seed}), arm=arm, metric_scale=scale)
    text = cfgmod.dumps(cfg)
    assert cfgmod.loads(text) == cfg
    assert cfgmod.dumps(cfgmod.loads(text)) == text


def test_scene_source_validation():
    with pytest.raises(ConfigError):
        SceneSource()
    with pytest.raises(ConfigError):
        SceneSource(synth=TINY_SYNTH, manifest="m.json")
    with pytest.raises(ConfigError):
        SceneSource(files={"y": "y.hsic"}, srf={})
    with pytest.raises(ConfigError):
        SceneSource(files={"x": "x.hsic"}, srf={"band_count": 2, "supports": [[0, 1]], "weights": [[1, 1]]})
    with pytest.raises(ConfigError):
        RunConfig(arm="nope")
