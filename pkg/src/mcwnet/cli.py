"""``mcwnet`` command line: derain, train, grad-check, analyze-rain, importance, params, metrics, synth."""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .network import INPUT_MULTIPLE, ConfigError, NetworkConfig, param_breakdown, param_count

log = logging.getLogger("mcwnet")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
SIZES = ("small", "large", "toy")


class UsageError(Exception):
    pass


# -- helpers ----------------------------------------------------------------


def _pairs(args) -> list:
    from .data import load_dataset, synth_dataset

    if args.data is not None:
        return load_dataset(args.data)
    return synth_dataset(args.synth, size=args.image_size, seed=args.seed)


def _csv_out(path: str) -> Path:
    out = Path(path)
    if out.suffix.lower() != ".csv":
        raise UsageError(f"--out must name a .csv file, got {path}")
    if not out.parent.is_dir():
        raise UsageError(f"output directory {out.parent} does not exist")
    return out


def pad_to_multiple(img: np.ndarray, multiple: int = INPUT_MULTIPLE) -> tuple[np.ndarray, tuple[int, int]]:
    """Reflect-pad the bottom/right edges up to the next multiple; returns the original size."""
    H, W = img.shape[:2]
    ph, pw = (-H) % multiple, (-W) % multiple
    if ph == 0 and pw == 0:
        return img, (H, W)
    mode = "reflect" if ph < H and pw < W else "symmetric"
    return np.pad(img, ((0, ph), (0, pw), (0, 0)), mode=mode), (H, W)


# -- subcommands ------------------------------------------------------------


def cmd_derain(args) -> int:
    from .imageio import from_batch, read_image, to_batch, write_image
    from .serialize import load_config, load_weights
    from .tensor import no_grad

    config = load_config(args.config) if args.config else None
    model = load_weights(args.weights, config)
    img = read_image(args.input)
    padded, (H, W) = pad_to_multiple(img)
    if padded.shape != img.shape:
        log.warning("input %dx%d padded by reflection to %dx%d", H, W, *padded.shape[:2])
    with no_grad():
        out = from_batch(model(to_batch(padded)).data)[0, :H, :W]
    write_image(args.output, out)
    print(f"wrote {args.output}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .network import build
    from .plotting import plot_loss
    from .serialize import save_weights
    from .train import DEFAULT_LR, TrainConfig, train, write_loss_log

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pairs = _pairs(args)
    config = NetworkConfig.preset(args.size, sampling=args.sampling, mlc_fusion=args.fusion,
                                  wrnl_region=args.region)
    crop = args.crop or (32 if args.size == "toy" else 64)
    tc = TrainConfig(crop=crop, batch=args.batch, lr=args.lr or DEFAULT_LR[args.size],
                     epochs=args.epochs, iterations=args.iterations, seed=args.seed,
                     checkpoint_every=args.checkpoint_every, out_dir=out)
    model = build(config, seed=args.seed)
    result = train(model, pairs, tc)
    write_loss_log(out / "loss.csv", result.log)
    save_weights(model, out / "weights.mcww")
    if result.log:
        plot_loss([r.iteration for r in result.log], [r.total for r in result.log], out / "loss.png")
        print(f"{len(result.log)} iterations, final loss {result.log[-1].total:.5f}, "
              f"{result.seconds:.1f} s")
    print(f"wrote {out / 'weights.mcww'} and {out / 'loss.csv'}")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    from .gradcheck import check_block

    report = check_block(args.block, seed=args.seed, tolerance=args.tol)
    print(f"{args.block}: {report}")
    if args.verbose:
        for name, e in report.per_tensor.items():
            print(f"  {name:40s} {e:.3e}")
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_analyze_rain(args) -> int:
    from .analysis import distribution_report
    from .plotting import plot_distribution

    out = _csv_out(args.out)
    report = distribution_report(_pairs(args), tau=args.tau, bins=args.bins)
    report.write_csv(out)
    report.write_histogram_csv(out.with_name(out.stem + "_hist.csv"))
    plot_distribution(report, out.with_suffix(".png"))
    for g, m in report.means.items():
        print(f"{g:7s} mean std {m:.4f}")
    return EXIT_OK


def cmd_importance(args) -> int:
    from .analysis import se_importance, write_importance_csv
    from .imageio import read_image
    from .plotting import plot_importance
    from .serialize import load_weights

    out = _csv_out(args.out)
    model = load_weights(args.weights)
    img, _ = pad_to_multiple(read_image(args.input))
    profiles = se_importance(model, img)
    write_importance_csv(out, profiles)
    plot_importance(profiles, out.with_suffix(".png"))
    for p in profiles:
        print(f"level {p.level}: before {np.round(p.lambdas_before, 4)} after {np.round(p.lambdas_after, 4)}")
    return EXIT_OK


def cmd_params(args) -> int:
    config = NetworkConfig.preset(args.size, sampling=args.sampling, mlc_fusion=args.fusion)
    print(param_count(config))
    if args.breakdown:
        for name, n in param_breakdown(config).items():
            print(f"  {name:10s} {n}")
    return EXIT_OK


def cmd_metrics(args) -> int:
    from .imageio import read_image
    from .metrics import psnr_rgb, ssim

    a, b = read_image(args.a), read_image(args.b)
    if a.shape != b.shape:
        raise UsageError(f"image sizes differ: {a.shape[:2]} vs {b.shape[:2]}")
    p = psnr_rgb(a, b)
    print(f"PSNR={'inf' if math.isinf(p) else f'{p:.4f}'}")
    print(f"SSIM={ssim(a, b):.6f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .data import save_dataset, synth_dataset

    pairs = synth_dataset(args.n, size=args.image_size, seed=args.seed)
    save_dataset(pairs, args.out)
    print(f"wrote {len(pairs)} pairs under {args.out}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def _add_source(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="dataset root with rainy/ and clean/ subdirectories")
    src.add_argument("--synth", type=int, metavar="N", help="generate N synthetic pairs instead")
    p.add_argument("--image-size", type=int, default=64, help="edge of synthetic images")


def _add_variant(p: argparse.ArgumentParser) -> None:
    p.add_argument("--sampling", default="dwt", choices=("dwt", "mean_pool", "conv1x1_stride2"))
    p.add_argument("--fusion", default="se", choices=("se", "concat", "add", "none"))


def build_parser() -> argparse.ArgumentParser:
    from .gradcheck import BLOCKS

    parser = argparse.ArgumentParser(prog="mcwnet", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("derain", help="remove rain from one image")
    p.add_argument("--weights", required=True)
    p.add_argument("--config", help="config JSON (default: the weights sidecar)")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_derain)

    p = sub.add_parser("train", help="train a model")
    _add_source(p)
    _add_variant(p)
    p.add_argument("--size", choices=SIZES, default="toy")
    p.add_argument("--region", choices=("wide", "square", "tall"), default="wide")
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--iterations", type=int, help="fixed iteration count (overrides --epochs)")
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--crop", type=int, help="crop edge (default 32 for toy, else 64)")
    p.add_argument("--lr", type=float, help="learning rate (default depends on --size)")
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grad-check", help="finite-difference gradient check")
    p.add_argument("--block", choices=BLOCKS, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, help="relative error tolerance (default 1e-6, network 1e-5)")
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("analyze-rain", help="rain-pixel spread over wide/square/tall grids")
    _add_source(p)
    p.add_argument("--tau", type=float, default=0.1)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="CSV path; figure and histogram go beside it")
    p.set_defaults(func=cmd_analyze_rain)

    p = sub.add_parser("importance", help="MLC feature importance around the SE gate")
    p.add_argument("--weights", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True, help="CSV path; figure goes beside it")
    p.set_defaults(func=cmd_importance)

    p = sub.add_parser("params", help="parameter count")
    _add_variant(p)
    p.add_argument("--size", choices=SIZES, default="small")
    p.add_argument("--breakdown", action="store_true", help="also print per-module counts")
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("metrics", help="PSNR and SSIM between two images")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("synth", help="write a synthetic rain dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    from .serialize import WeightFileError

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except WeightFileError as e:
        print(f"error [{e.code}]: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, ConfigError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ArithmeticError, RuntimeError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
