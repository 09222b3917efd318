"""
Command-line entry points: degrade, restore, evaluate, experiment, gradcheck.

Exit codes: 0 ok, 1 file errors, 2 usage errors, 3 numeric failures.
"""
import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np
from tensorboardX import SummaryWriter

from diptv.autodiff.gradcheck import run_suite
from diptv.degradation import (
    KernelFormatError,
    NoiseSpec,
    measure,
    parse_operator_spec,
    sigma_for_input_snr,
)
from diptv.metrics import psnr_db, snr_db
from diptv.pipeline import ConfigError, run_experiment
from diptv.restore import (
    DEFAULT_LAMBDA_GRID,
    NETWORK_METHODS,
    DivergenceError,
    default_restore_config,
    solve,
    tune_lambda,
)
from diptv.utils.data import (
    ImageFile,
    crop,
    from_pixel_scale,
    load_image,
    pad_to_multiple,
    save_image,
    to_pixel_scale,
)
from diptv.utils.experiment import setup_experiment, setup_logging

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

METHOD_NAMES = {
    "dip": "dip",
    "dip-tv": "dip_tv",
    "dip_tv": "dip_tv",
    "tv": "tv_baseline",
    "tv_baseline": "tv_baseline",
}


class UsageError(Exception):
    pass


def sidecar_path(image_path):
    return os.path.splitext(image_path)[0] + ".json"


def cmd_degrade(args):
    image = load_image(args.input)
    op = parse_operator_spec(args.kernel)
    clean255 = to_pixel_scale(image.to_array(np.float64))
    if args.sigma is not None:
        sigma = args.sigma
    else:
        sigma = sigma_for_input_snr(clean255, args.target_snr)
    y255 = measure(clean255, op, NoiseSpec(sigma, args.seed)).data
    save_image(args.output, from_pixel_scale(y255))
    sidecar = {"operator": op.to_dict(), "sigma": sigma, "seed": args.seed}
    with open(sidecar_path(args.output), "w", encoding="utf-8") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
    logging.info(
        f"Wrote {args.output}: operator={op.describe()} sigma={sigma:.4f} "
        f"snr_in_db={snr_db(clean255, y255):.4f}"
    )
    return EXIT_OK


def _restore_config(args, channels):
    overrides = {"seed": args.seed}
    for name in ("steps", "lr", "tv_eps", "log_every", "precision"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    # tuning replaces lambda; the first grid value only stands in for it
    lam = args.lambda_grid[0] if args.tune_lambda else args.lam
    cfg = default_restore_config(
        args.task, METHOD_NAMES[args.method], lam, output_channels=channels, **overrides
    )
    if args.optimize_input:
        cfg = replace(cfg, generator=replace(cfg.generator, optimize_input=True))
    return cfg


def _write_trace(path, trace):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "loss", "snr_db"])
        for entry in trace:
            snr = "" if entry.snr_db is None else f"{entry.snr_db:.4f}"
            writer.writerow([entry.step, f"{entry.loss:.6g}", snr])


def cmd_restore(args):
    if args.task == "deblur" and args.kernel in ("none", "identity"):
        raise UsageError("--task deblur needs --kernel")
    if args.tune_lambda:
        if args.reference is None:
            raise UsageError("--tune-lambda needs --reference")
        if args.lam is not None:
            raise UsageError("--lambda and --tune-lambda are exclusive")
        if METHOD_NAMES[args.method] == "dip":
            raise UsageError("Plain DIP has no lambda to tune")
    image = load_image(args.input)
    op = parse_operator_spec(args.kernel)
    y = image.to_array(np.float64)
    reference = None
    if args.reference is not None:
        reference = load_image(args.reference).to_array(np.float64)
        if reference.shape != y.shape:
            raise UsageError(f"Reference shape {reference.shape} != input shape {y.shape}")

    cfg = _restore_config(args, y.shape[1])
    height, width = y.shape[-2:]
    y_work, ref_work = y, reference
    if cfg.method in NETWORK_METHODS:
        multiple = 2 ** cfg.generator.depth
        y_work, _ = pad_to_multiple(y, multiple)
        if reference is not None:
            ref_work, _ = pad_to_multiple(reference, multiple)

    writer = SummaryWriter(args.tb_dir) if args.tb_dir else None
    try:
        if args.tune_lambda:
            search = tune_lambda(y_work, op, cfg, ref_work, args.lambda_grid)
            result = search.result
            print(f"lambda={search.lam:g}")
        else:
            result = solve(y_work, op, cfg, ref_work, writer)
    finally:
        if writer is not None:
            writer.close()

    estimate = crop(result.x_star, height, width)
    save_image(args.output, estimate)
    if args.trace:
        _write_trace(args.trace, result.trace)
    if reference is not None:
        saved = ImageFile.from_array(estimate).to_array(np.float64)
        print(
            f"snr_db={snr_db(to_pixel_scale(reference), to_pixel_scale(saved)):.4f}, "
            f"psnr_db={psnr_db(to_pixel_scale(reference), to_pixel_scale(saved)):.4f}"
        )
    return EXIT_OK


def cmd_evaluate(args):
    reference = to_pixel_scale(load_image(args.reference).to_array(np.float64))
    estimate = to_pixel_scale(load_image(args.estimate).to_array(np.float64))
    if reference.shape != estimate.shape:
        raise UsageError(f"Shape mismatch: {reference.shape} vs {estimate.shape}")
    print(f"snr_db={snr_db(reference, estimate):.4f}, psnr_db={psnr_db(reference, estimate):.4f}")
    return EXIT_OK


def cmd_experiment(args):
    writer = None
    if args.log_dir:
        writer, _ = setup_experiment("experiment", None, vars(args), out_dir=args.log_dir)
    try:
        records = run_experiment(args.config, args.out_csv, jobs=args.jobs, writer=writer)
    finally:
        if writer is not None:
            writer.close()
    failed = sum(not r.ok for r in records)
    logging.info(f"{len(records)} records written to {args.out_csv}, {failed} failed")
    return EXIT_OK


def cmd_gradcheck(args):
    passed, results = run_suite(args.size, args.depth, args.tolerance, seed=args.seed)
    worst = max(results, key=lambda r: r.worst_ratio)
    logging.info(
        f"{'PASSED' if passed else 'FAILED'}: {len(results)} checks, "
        f"worst error/bound ratio {worst.worst_ratio:.3g} ({worst.name}, "
        f"rel_error={worst.rel_error:.3e})"
    )
    return EXIT_OK if passed else EXIT_NUMERIC


def build_parser():
    parser = argparse.ArgumentParser(
        prog="diptv", description="Deep image prior with total variation"
    )
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("degrade", help="Blur and add noise to an image")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    noise = p.add_mutually_exclusive_group(required=True)
    noise.add_argument("--sigma", type=float, help="Noise std on the [0, 255] scale")
    noise.add_argument("--target-snr", type=float, help="Input SNR in dB")
    p.add_argument("--kernel", default="none", help="none | gaussian:std,size | kernel file")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("restore", help="Restore a degraded image")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--method", choices=sorted(METHOD_NAMES), default="dip-tv")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument(
        "--tune-lambda",
        action="store_true",
        help="Pick lambda from --lambda-grid by best SNR against --reference",
    )
    p.add_argument("--lambda-grid", type=float, nargs="+", default=list(DEFAULT_LAMBDA_GRID))
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--task", choices=["denoise", "deblur"], default="denoise")
    p.add_argument("--kernel", default="none")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reference")
    p.add_argument("--trace", help="Write the loss trace as CSV")
    p.add_argument("--tv-eps", type=float)
    p.add_argument("--precision", choices=["float32", "float64"])
    p.add_argument("--optimize-input", action="store_true")
    p.add_argument("--log-every", type=int)
    p.add_argument("--tb-dir")
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("evaluate", help="SNR and PSNR of an estimate")
    p.add_argument("--reference", required=True)
    p.add_argument("--estimate", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="Run a JSON experiment grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out-csv", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--log-dir")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("gradcheck", help="Finite-difference gradient suite")
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    setup_logging(level=logging.DEBUG if args.verbose else logging.INFO)
    try:
        return args.func(args)
    except DivergenceError as e:
        logging.error(f"Diverged at step {e.step}: {e}")
        return EXIT_NUMERIC
    except KernelFormatError as e:
        logging.error(f"Bad kernel file: {e}")
        return EXIT_IO
    except (UsageError, ConfigError) as e:
        logging.error(str(e))
        return EXIT_USAGE
    except OSError as e:
        logging.error(str(e))
        return EXIT_IO
    except ValueError as e:
        logging.error(str(e))
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
