"""
Desk-scale denoising: 64x64 piecewise-constant phantom (or --image, e.g. the
bundled diptv/test/data/teapot64.png crop), sigma = 50, DIP vs DIP-TV vs the
TV baseline, median over restoration seeds.
"""
import argparse
import logging
from dataclasses import replace

from diptv.degradation import DegradationOperator
from diptv.experiments.phantom_runs import degrade_source, plot_traces, run_methods, summary_table
from diptv.generator import default_configs
from diptv.metrics import psnr_db, snr_db
from diptv.utils.experiment import setup_experiment

parser = argparse.ArgumentParser()
parser.add_argument("--size", type=int, default=64)
parser.add_argument("--image", help="Image file used instead of the phantom")
parser.add_argument("--sigma", type=float, default=50.0)
parser.add_argument("--steps", type=int, default=2000)
parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
parser.add_argument("--lambda-dip-tv", type=float)
parser.add_argument("--lambda-tv", type=float)
parser.add_argument("--channels", type=int, default=128)
parser.add_argument("--name")


def main(args):
    writer, out_path = setup_experiment("denoise_phantom", args.name, args)
    op = DegradationOperator.identity()
    clean255, y255 = degrade_source(args.image or f"phantom:{args.size}", op, args.sigma)
    generator = replace(
        default_configs("denoise"),
        channels_down=(args.channels,) * 5,
        channels_up=(args.channels,) * 5,
    )
    scores = run_methods(
        "denoise",
        op,
        clean255,
        y255,
        ["dip", "dip_tv", "tv_baseline"],
        args.seeds,
        args.steps,
        {"dip_tv": args.lambda_dip_tv, "tv_baseline": args.lambda_tv},
        writer,
        generator=generator,
    )
    logging.info(summary_table(scores, snr_db(clean255, y255), psnr_db(clean255, y255)))
    plot_traces(scores, out_path("figures", "snr.png"))
    writer.close()


if __name__ == "__main__":
    main(parser.parse_args())
