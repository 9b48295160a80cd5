import os

import numpy as np
import pytest

from taylorcast.cli import main, parse_config_file, resolve_config
from taylorcast.data import load_clip
from taylorcast.io_utils import read_pgm, write_csv, write_pgm, write_ppm


def run(*argv) -> int:
    return main([str(a) for a in argv])


TRAIN_ARGS = [
    "train",
    "--dataset", "moving-shapes",
    "--grid", 8,
    "--shapes", 1,
    "--observe", 4,
    "--horizon", 2,
    "--clips", 4,
    "--epochs", 2,
    "--batch", 2,
    "--gamma", 1,
    "--latent", 8,
    "--spatial-down", 2,
    "--encoder-depth", 1,
    "--lr", 1e-3,
    "--seed", 7,
]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    code = run(*TRAIN_ARGS, "--out", out)
    assert code == 0
    return out


def test_train_outputs(trained):
    assert (trained / "checkpoint.tsn").exists()
    assert (trained / "run_config.txt").exists()
    log = (trained / "train_log.csv").read_text()
    lines = log.strip().split("\n")
    assert lines[0] == "epoch,loss,lr,train_ssim"
    assert len(lines) == 3  # header + 2 epochs
    assert "\r" not in log


def test_run_config_records_resolved_values(trained):
    text = (trained / "run_config.txt").read_text()
    assert "gamma=1" in text
    assert "seed=7" in text
    assert "command=train" in text


def test_train_is_byte_reproducible(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    assert run(*TRAIN_ARGS, "--out", a) == 0
    assert run(*TRAIN_ARGS, "--out", b) == 0
    assert (a / "checkpoint.tsn").read_bytes() == (b / "checkpoint.tsn").read_bytes()
    assert (a / "train_log.csv").read_bytes() == (b / "train_log.csv").read_bytes()


def test_eval_csv_structure(trained, tmp_path):
    out = tmp_path / "eval"
    code = run(
        "eval", "--checkpoint", trained / "checkpoint.tsn",
        "--dataset", "moving-shapes", "--grid", 8, "--shapes", 1,
        "--observe", 4, "--horizon", 2, "--clips", 3, "--seed", 9, "--out", out,
    )
    assert code == 0
    lines = (out / "metrics.csv").read_text().strip().split("\n")
    assert lines[0] == "tau,mse,mae,ssim,psnr"
    assert len(lines) == 4  # 2 frames + mean
    body = [line.split(",") for line in lines[1:]]
    assert body[-1][0] == "mean"
    for col in range(1, 5):
        mean_of_rows = np.mean([float(r[col]) for r in body[:-1]])
        assert float(body[-1][col]) == pytest.approx(mean_of_rows, rel=1e-9)


def test_gen_data_and_predict_cycle(trained, tmp_path):
    data_dir = tmp_path / "clips"
    code = run(
        "gen-data", "--dataset", "moving-shapes", "--grid", 8, "--shapes", 1,
        "--clips", 2, "--frames", 8, "--seed", 11, "--out", data_dir,
    )
    assert code == 0
    files = sorted(os.listdir(data_dir))
    assert "clip_000.tcc" in files and "clip_001.tcc" in files
    clip, seed = load_clip(str(data_dir / "clip_000.tcc"))
    assert clip.frames.shape[1] == 8
    assert seed is not None

    out = tmp_path / "pred"
    code = run(
        "predict", "--checkpoint", trained / "checkpoint.tsn",
        "--clip", data_dir / "clip_000.tcc",
        "--taus", "1,1.3,2.75", "--gt-diff", "--seed", 1, "--out", out,
    )
    assert code == 0
    names = sorted(os.listdir(out))
    assert "pred_t+1.00.pgm" in names
    assert "pred_t+1.30.pgm" in names
    assert "pred_t+2.75.pgm" in names
    frame = read_pgm(str(out / "pred_t+1.30.pgm"))
    assert frame.shape == (8, 8)
    assert frame.min() >= 0.0 and frame.max() <= 1.0
    # gt-diff covers only offsets landing on stored frames (tau 1 and 2.75 -> 1 row)
    lines = (out / "gt_diff.csv").read_text().strip().split("\n")
    assert lines[0] == "tau,mse,mae,ssim,psnr"
    assert len(lines) == 2
    assert lines[1].startswith("1.00,")


def test_gen_data_reproducible(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    for out in (a, b):
        assert run("gen-data", "--grid", 8, "--shapes", 1, "--clips", 1, "--frames", 4, "--seed", 3, "--out", out) == 0
    assert (a / "clip_000.tcc").read_bytes() == (b / "clip_000.tcc").read_bytes()


def test_rollout_csv(trained, tmp_path):
    out = tmp_path / "roll"
    code = run(
        "rollout", "--checkpoint", trained / "checkpoint.tsn",
        "--dataset", "moving-shapes", "--grid", 8, "--shapes", 1,
        "--observe", 4, "--rollout-horizon", 4, "--steps", "4,2,1",
        "--clips", 2, "--seed", 5, "--out", out,
    )
    assert code == 0
    lines = (out / "rollout_ssim.csv").read_text().strip().split("\n")
    assert lines[0] == "frame,ssim_step4,ssim_step2,ssim_step1"
    assert len(lines) == 5


def test_lab_euler_taylor_csv(tmp_path):
    out = tmp_path / "lab"
    assert run("lab", "--mode", "euler-taylor", "--out", out) == 0
    lines = (out / "euler_taylor.csv").read_text().strip().split("\n")
    assert lines[0] == "tau,truth,taylor,euler,abs_err_taylor,abs_err_euler"
    assert len(lines) == 9  # 8 quarter steps over horizon 2
    rows = [line.split(",") for line in lines[1:]]
    assert max(float(r[4]) for r in rows) < max(float(r[5]) for r in rows)


def test_lab_derivatives_quick(tmp_path):
    out = tmp_path / "labd"
    code = run(
        "lab", "--mode", "derivatives", "--family", "exp",
        "--epochs", 2, "--n-train", 64, "--out", out,
    )
    assert code == 0
    lines = (out / "derivatives.csv").read_text().strip().split("\n")
    assert lines[0] == "order,estimated,analytic,abs_error,rel_error"
    assert len(lines) == 5


def test_usage_errors_exit_1(tmp_path, capsys):
    assert run("eval", "--out", tmp_path / "x") == 1  # missing checkpoint
    assert run("nonsense") == 1
    assert run("train") == 1  # missing --out


def test_runtime_errors_exit_2(tmp_path):
    assert run("eval", "--checkpoint", tmp_path / "missing.tsn", "--out", tmp_path / "y") == 2


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# test config\ngrid=8\nshapes=1\nclips=1\nframes=4\n")
    out = tmp_path / "gen"
    assert run("gen-data", "--config", cfg, "--frames", 6, "--seed", 2, "--out", out) == 0
    text = (out / "run_config.txt").read_text()
    assert "grid=8" in text  # from file
    assert "frames=6" in text  # flag overrides file
    clip, _ = load_clip(str(out / "clip_000.tcc"))
    assert clip.frames.shape[1] == 6


def test_unknown_config_key_is_usage_error(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("does_not_exist=1\n")
    assert run("gen-data", "--config", cfg, "--out", tmp_path / "z") == 1


def test_parse_config_file_rejects_garbage(tmp_path):
    cfg = tmp_path / "ugly.cfg"
    cfg.write_text("just some words\n")
    with pytest.raises(Exception):
        parse_config_file(str(cfg))


# -- artifact writers ----------------------------------------------------------


def test_pgm_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    frame = rng.uniform(size=(5, 7))
    path = tmp_path / "f.pgm"
    write_pgm(str(path), frame)
    back = read_pgm(str(path))
    assert back.shape == (5, 7)
    assert np.abs(back - frame).max() <= 0.5 / 255 + 1e-12


def test_pgm_round_half_even():
    from taylorcast.io_utils import quantize_frame

    # 0.5/255 quantizes to even 0, 1.5/255 to even 2
    values = np.array([0.5 / 255.0, 1.5 / 255.0, 2.5 / 255.0])
    np.testing.assert_array_equal(quantize_frame(values), [0, 2, 2])


def test_ppm_writer(tmp_path):
    frame = np.zeros((3, 4, 4))
    frame[0] = 1.0
    path = tmp_path / "f.ppm"
    write_ppm(str(path), frame)
    raw = path.read_bytes()
    assert raw.startswith(b"P6\n4 4\n255\n")
    assert raw[-48:] == bytes([255, 0, 0]) * 16


def test_write_csv_format(tmp_path):
    path = tmp_path / "t.csv"
    write_csv(str(path), ["a", "b"], [[1, 0.123456789012345], [2, 1e-7]])
    raw = path.read_bytes()
    assert raw == b"a,b\n1,0.123456789\n2,1e-07\n"
