"""One test per acceptance criterion; each prints a PASS/FAIL (or FLAGGED) line."""

import time

import numpy as np
import pytest

from mcwnet import NetworkConfig, Tensor, build, loss_l1l2, no_grad, param_count
from mcwnet import blocks as B
from mcwnet.analysis import distribution_report, se_importance
from mcwnet.cli import main
from mcwnet.data import synth_dataset
from mcwnet.gradcheck import check_block
from mcwnet.imageio import from_batch, to_batch, write_image
from mcwnet.metrics import psnr_rgb
from mcwnet.sampling import avg_pool2
from mcwnet.serialize import (
    BadMagicError, EmptyWeightsError, TruncatedFileError, UnsupportedVersionError, WeightShapeError,
    decode_arrays, load_weights, save_weights,
)
from mcwnet.train import TrainConfig, train
from mcwnet.wavelet import dwt_haar, iwt_haar

from test_blocks import rand_wrnl, wrnl_oracle


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail, flagged=False):
        status = "FLAGGED" if flagged else ("PASS" if ok else "FAIL")
        with capsys.disabled():
            print(f"\n[acceptance {n}] {status}: {detail}")
    return emit


def test_1_wavelet_exactness(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    worst, ll_exact = 0.0, True
    for _ in range(200):
        b, c = rng.integers(1, 3), rng.integers(1, 5)
        h, w = 2 * rng.integers(1, 9), 2 * rng.integers(1, 9)
        x = rng.standard_normal((b, c, h, w)) * rng.uniform(0.1, 10)
        y = dwt_haar(Tensor(x))
        worst = max(worst, float(np.max(np.abs(iwt_haar(y).data - x))))
        ll_exact &= bool(np.array_equal(y.data[:, :c], avg_pool2(Tensor(x)).data))
    dt = time.perf_counter() - t0
    ok = worst < 1e-12 and ll_exact and dt < 5
    report(1, ok, f"max |iwt(dwt(x)) - x| = {worst:.2e}, LL == mean pool exactly: {ll_exact}, {dt:.2f} s")
    assert ok


def test_2_gradient_verification(report):
    t0 = time.perf_counter()
    results = {b: check_block(b, seed=0) for b in ("conv", "prelu", "se", "dcr", "wrnl", "mlc")}
    results["network"] = check_block("network", seed=0)
    dt = time.perf_counter() - t0
    ok = all(r.passed for r in results.values()) and results["network"].tolerance == 1e-5 and dt < 120
    detail = ", ".join(f"{k} {r.max_rel_error:.1e}" for k, r in results.items())
    report(2, ok, f"{detail} ({dt:.1f} s)")
    assert ok


def test_3_wrnl_oracle(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    worst_out = worst_rows = 0.0
    for ph in range(1, 5):
        for pw in range(1, 5):
            for grid in (B.GridSpec(1, 1), B.GridSpec(2, 2), B.GridSpec(2, 1)):
                x = rng.standard_normal((2, 4, grid.a * ph, grid.b * pw))
                p = rand_wrnl(rng, 4)
                got = B.wrnl_forward(Tensor(x), grid, p).data
                worst_out = max(worst_out, float(np.max(np.abs(got - wrnl_oracle(x, grid, p)))))
                _, attn = B.wrnl_attention(Tensor(x), grid, p)
                worst_rows = max(worst_rows, float(np.max(np.abs(attn.data.sum(-1) - 1))))
    dt = time.perf_counter() - t0
    ok = worst_out < 1e-9 and worst_rows < 1e-9 and dt < 30
    report(3, ok, f"max oracle diff {worst_out:.1e}, max |row sum - 1| {worst_rows:.1e}, {dt:.2f} s")
    assert ok


def test_4_rain_distribution_ordering(report):
    t0 = time.perf_counter()
    means = distribution_report(synth_dataset(120, 128, seed=0)).means
    dt = time.perf_counter() - t0
    ok = means["wide"] < means["square"] < means["tall"] and dt < 60
    report(4, ok, "mean std " + ", ".join(f"{k} {v:.3f}" for k, v in means.items()) + f" (120 pairs, {dt:.1f} s)")
    assert ok


def test_5_parameter_counts(report):
    small, large = param_count(NetworkConfig.small()), param_count(NetworkConfig.large())
    ds, dl = small / 2_158_586 - 1, large / 129_539_018 - 1
    ratio = large / small
    ok = abs(ds) <= 0.25 and abs(dl) <= 0.25 and 55 <= ratio <= 70
    report(5, ok, f"small {small:,} ({ds:+.1%}), large {large:,} ({dl:+.1%}), ratio {ratio:.1f}")
    assert ok


@pytest.fixture(scope="module")
def overfit():
    pairs = synth_dataset(4, 64, seed=0)
    rainy = to_batch(np.stack([p.rainy for p in pairs]))
    base = float(np.mean([psnr_rgb(p.rainy, p.clean) for p in pairs]))
    model = build(NetworkConfig.toy(), seed=0)
    state = {"gain": -np.inf, "iterations": 0}

    def cb(it, rec, m):
        state["iterations"] = it + 1
        if (it + 1) % 50 == 0:
            with no_grad():
                out = np.clip(from_batch(m(rainy).data), 0, 1)
            state["gain"] = float(np.mean([psnr_rgb(o, p.clean) for o, p in zip(out, pairs)])) - base
            return state["gain"] >= 5.0

    t0 = time.perf_counter()
    train(model, pairs, TrainConfig(crop=32, batch=4, lr=1e-3, iterations=2000, seed=0), cb)
    state["seconds"] = time.perf_counter() - t0
    state["model"], state["pairs"] = model, pairs
    return state


def test_6_toy_overfit(report, overfit):
    ok = overfit["gain"] >= 5.0 and overfit["iterations"] <= 2000 and overfit["seconds"] < 600
    report(6, ok, f"training-pair PSNR +{overfit['gain']:.2f} dB after {overfit['iterations']} iterations "
                  f"({overfit['seconds']:.0f} s)")
    assert ok


def _final_loss(sampling, seed, pairs, iterations):
    model = build(NetworkConfig.toy(sampling=sampling), seed=seed)
    train(model, pairs, TrainConfig(crop=32, batch=4, lr=1e-3, iterations=iterations, seed=seed))
    with no_grad():
        return loss_l1l2(model(to_batch(np.stack([p.rainy for p in pairs]))),
                         to_batch(np.stack([p.clean for p in pairs]))).item()


def test_7_ablations(report):
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, (1, 3, 32, 32))
    built = 0
    variants = [{"wrnl_region": r} for r in ("wide", "square", "tall")] \
        + [{"sampling": s} for s in ("dwt", "mean_pool", "conv1x1_stride2")] \
        + [{"mlc_fusion": f} for f in ("se", "concat", "add", "none")]
    pair = synth_dataset(1, 32, seed=0)
    for kw in variants:
        m = build(NetworkConfig.toy(**kw), seed=0)
        res = train(m, pair, TrainConfig(crop=32, batch=1, lr=1e-3, iterations=1))
        built += bool(np.isfinite(res.log[0].total)) and m(x).shape == x.shape
    reachable = built == len(variants)

    pairs = synth_dataset(20, 32, seed=7)
    losses = {s: [_final_loss(s, seed, pairs, 100) for seed in range(3)] for s in ("dwt", "mean_pool")}
    dwt, pool = np.mean(losses["dwt"]), np.mean(losses["mean_pool"])
    direction = dwt <= pool
    detail = (f"{built}/{len(variants)} variants train one step; final loss dwt {dwt:.4f} vs "
              f"mean_pool {pool:.4f} over 3 seeds")
    report(7, reachable and direction, detail, flagged=reachable and not direction)
    assert reachable


def test_8_se_importance(report, overfit):
    img = overfit["pairs"][0].rainy[:32, :32]
    sums = [abs(v.sum() - 1) for p in se_importance(overfit["model"], img)
            for v in (p.lambdas_before, p.lambdas_after)]
    zero = build(NetworkConfig.toy(), seed=3)
    for k, p in zero.params.items():
        if k.endswith("se.expand"):
            p.data[:] = 0
    cancel = max(float(np.max(np.abs(p.lambdas_after - p.lambdas_before))) for p in se_importance(zero, img))
    ok = max(sums) < 1e-9 and cancel < 1e-9
    # qualitative: gating spreads the importance out more than before
    profiles = se_importance(overfit["model"], img)
    wider = sum(np.std(p.lambdas_after) >= np.std(p.lambdas_before) for p in profiles)
    report(8, ok, f"max |sum - 1| {max(sums):.1e}, zero-expand difference {cancel:.1e}; "
                  f"dispersion grows at {wider}/4 levels (informational)")
    assert ok


def test_9_serialization(report, tmp_path, capsys):
    m = build(NetworkConfig.toy(), seed=4)
    path = save_weights(m, tmp_path / "w.mcww")
    x = np.random.default_rng(0).uniform(0, 1, (1, 3, 32, 32))
    with no_grad():
        diff = float(np.max(np.abs(m(x).data - load_weights(path)(x).data)))
    buf = path.read_bytes()
    cases = {
        TruncatedFileError: buf[:-7],
        BadMagicError: b"MCWX" + buf[4:],
        UnsupportedVersionError: buf[:4] + (9).to_bytes(4, "little") + buf[8:],
        EmptyWeightsError: buf[:8] + (0).to_bytes(4, "little"),
    }
    codes = {}
    for err, data in cases.items():
        try:
            decode_arrays(data)
        except err as e:
            codes[e.code] = True
    try:
        load_weights(path, NetworkConfig.toy(mlc_fusion="concat"))
    except WeightShapeError as e:
        codes[e.code] = True
    # the CLI maps every weight-file error to exit status 2 with its code
    (tmp_path / "bad.mcww").write_bytes(buf[:100])
    write_image(tmp_path / "in.png", x[0].transpose(1, 2, 0))
    cli = main(["derain", "--weights", str(tmp_path / "bad.mcww"), "--config", str(path) + ".json",
                "--input", str(tmp_path / "in.png"), "--output", str(tmp_path / "out.png")])
    err = capsys.readouterr().err
    ok = diff < 1e-5 and len(codes) == 5 and cli == 2 and "[truncated]" in err
    report(9, ok, f"round-trip max diff {diff:.1e}; error codes {sorted(codes)}; CLI exit {cli}")
    assert ok
