import csv
import subprocess
import sys

import numpy as np
import pytest

from mcwnet import NetworkConfig, build, param_count
from mcwnet.cli import main, pad_to_multiple
from mcwnet.data import save_dataset, synth_dataset
from mcwnet.imageio import read_image, write_image
from mcwnet.metrics import psnr_rgb
from mcwnet.serialize import decode_arrays, save_weights


def files_under(root):
    return sorted(p.relative_to(root) for p in root.rglob("*") if p.is_file())


def test_params_equals_serialized_length(tmp_path, capsys):
    assert main(["params", "--size", "small"]) == 0
    n = int(capsys.readouterr().out.split()[0])
    assert n == param_count(NetworkConfig.small())
    path = tmp_path / "w.mcww"
    save_weights(build(NetworkConfig.small()), path)
    assert n == sum(a.size for a in decode_arrays(path.read_bytes()).values())


@pytest.mark.parametrize("block", ["tensor", "wrnl"])
def test_grad_check_passes(block, capsys):
    assert main(["grad-check", "--block", block, "--tol", "1e-6"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_grad_check_failure_exit_code(capsys):
    assert main(["grad-check", "--block", "se", "--tol", "1e-30"]) == 1


def test_usage_errors_exit_2(tmp_path, capsys):
    for argv in (["grad-check", "--block", "lstm"], ["frobnicate"], ["params", "--bogus"],
                 ["train", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "o")]):
        with pytest.raises(SystemExit) as e:
            code = main(argv)
            raise SystemExit(code)
        assert e.value.code == 2, argv


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "mcwnet", "grad-check", "--block", "nope"],
                       capture_output=True, text=True)
    assert r.returncode == 2 and "invalid choice" in r.stderr


def test_metrics_identical(tmp_path, capsys, rng):
    write_image(tmp_path / "a.png", rng.uniform(0, 1, (16, 16, 3)))
    assert main(["metrics", "--a", str(tmp_path / "a.png"), "--b", str(tmp_path / "a.png")]) == 0
    out = capsys.readouterr().out
    assert "PSNR=inf" in out and "SSIM=1.000000" in out


def test_metrics_missing_file(tmp_path, capsys):
    assert main(["metrics", "--a", str(tmp_path / "x.png"), "--b", str(tmp_path / "y.png")]) == 2


def test_synth_then_analyze(tmp_path, capsys):
    assert main(["synth", "--n", "4", "--image-size", "64", "--out", str(tmp_path / "ds")]) == 0
    out = tmp_path / "rep"
    out.mkdir()
    assert main(["analyze-rain", "--data", str(tmp_path / "ds"), "--out", str(out / "dist.csv")]) == 0
    assert files_under(out) == [p for p in map(__import__("pathlib").Path,
                                               ["dist.csv", "dist.png", "dist_hist.csv"])]
    rows = list(csv.DictReader(open(out / "dist.csv")))
    means = {g: np.mean([float(r["std"]) for r in rows if r["grid_class"] == g])
             for g in ("wide", "square", "tall")}
    assert min(means, key=means.get) == "wide"


def test_analyze_rain_requires_csv_path(tmp_path, capsys):
    assert main(["analyze-rain", "--synth", "2", "--out", str(tmp_path / "dir")]) == 2


def test_pad_to_multiple_reflects(rng):
    img = rng.uniform(0, 1, (40, 33, 3))
    padded, size = pad_to_multiple(img)
    assert padded.shape == (64, 64, 3) and size == (40, 33)
    np.testing.assert_array_equal(padded[:40, :33], img)
    np.testing.assert_array_equal(padded[40, :33], img[38])
    np.testing.assert_array_equal(padded[:40, 33], img[:, 31])


def test_derain_zero_residual_is_identity_and_deterministic(tmp_path, rng):
    m = build(NetworkConfig.toy(), seed=0)
    m.params["tail.conv.w"].data[:] = 0
    m.params["tail.conv.b"].data[:] = 0
    save_weights(m, tmp_path / "w.mcww")
    write_image(tmp_path / "in.png", rng.uniform(0, 1, (40, 50, 3)))
    args = ["derain", "--weights", str(tmp_path / "w.mcww"), "--input", str(tmp_path / "in.png")]
    assert main(args + ["--output", str(tmp_path / "a.png")]) == 0
    assert main(args + ["--output", str(tmp_path / "b.png"), "--config", str(tmp_path / "w.mcww.json")]) == 0
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
    np.testing.assert_array_equal(read_image(tmp_path / "a.png"), read_image(tmp_path / "in.png"))


def test_derain_rejects_corrupt_weights(tmp_path, capsys, rng):
    save_weights(build(NetworkConfig.toy()), tmp_path / "w.mcww")
    buf = (tmp_path / "w.mcww").read_bytes()
    (tmp_path / "w.mcww").write_bytes(buf[: len(buf) // 3])
    write_image(tmp_path / "in.png", rng.uniform(0, 1, (32, 32, 3)))
    code = main(["derain", "--weights", str(tmp_path / "w.mcww"), "--input", str(tmp_path / "in.png"),
                 "--output", str(tmp_path / "o.png")])
    assert code == 2 and "[truncated]" in capsys.readouterr().err
    assert not (tmp_path / "o.png").exists()


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("train")
    pair = synth_dataset(1, 32, seed=6)
    save_dataset(pair, root / "ds")
    argv = ["train", "--data", str(root / "ds"), "--size", "toy", "--iterations", "150", "--batch", "1",
            "--lr", "1e-3", "--seed", "0"]
    assert main(argv + ["--out", str(root / "a")]) == 0
    assert main(argv + ["--out", str(root / "b")]) == 0
    return root


def test_train_outputs_stay_in_out_dir(trained):
    assert [str(p) for p in files_under(trained / "a")] == ["loss.csv", "loss.png", "weights.mcww",
                                                            "weights.mcww.json"]


def test_train_is_reproducible(trained):
    assert (trained / "a" / "loss.csv").read_bytes() == (trained / "b" / "loss.csv").read_bytes()


def test_trained_model_derains(trained):
    out = trained / "a" / "derained.png"
    ds = trained / "ds"
    assert main(["derain", "--weights", str(trained / "a" / "weights.mcww"),
                 "--input", str(ds / "rainy" / "synth0000.png"), "--output", str(out)]) == 0
    clean = read_image(ds / "clean" / "synth0000.png")
    assert psnr_rgb(read_image(out), clean) > psnr_rgb(read_image(ds / "rainy" / "synth0000.png"), clean)


def test_importance_command(trained, tmp_path, capsys):
    assert main(["importance", "--weights", str(trained / "a" / "weights.mcww"),
                 "--input", str(trained / "ds" / "rainy" / "synth0000.png"),
                 "--out", str(tmp_path / "imp.csv")]) == 0
    rows = list(csv.DictReader(open(tmp_path / "imp.csv")))
    assert len(rows) == 16
    for level in "4321":
        assert sum(float(r["lambda_after"]) for r in rows if r["level"] == level) == pytest.approx(1, abs=1e-9)
    assert (tmp_path / "imp.png").exists()
