"""
Desk-scale deblurring: 64x64 phantom, Gaussian blur of std 1.6, sigma = 2,
DIP vs DIP-TV, median PSNR over restoration seeds.
"""
import argparse
import logging
from dataclasses import replace

from diptv.degradation import parse_operator_spec
from diptv.experiments.phantom_runs import degrade_phantom, plot_traces, run_methods, summary_table
from diptv.generator import default_configs
from diptv.metrics import psnr_db, snr_db
from diptv.utils.experiment import setup_experiment

parser = argparse.ArgumentParser()
parser.add_argument("--size", type=int, default=64)
parser.add_argument("--sigma", type=float, default=2.0)
parser.add_argument("--kernel", default="gaussian:1.6,9")
parser.add_argument("--steps", type=int, default=2500)
parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
parser.add_argument("--lambda-dip-tv", type=float)
parser.add_argument("--lr", type=float)
parser.add_argument("--channels", type=int, default=128)
parser.add_argument("--name")


def main(args):
    writer, out_path = setup_experiment("deblur_phantom", args.name, args)
    op = parse_operator_spec(args.kernel)
    clean255, y255 = degrade_phantom(args.size, op, args.sigma)
    generator = replace(
        default_configs("deblur"),
        channels_down=(args.channels,) * 5,
        channels_up=(args.channels,) * 5,
        skip_channels=(args.channels,) * 5,
    )
    overrides = {"generator": generator}
    if args.lr is not None:
        overrides["lr"] = args.lr
    scores = run_methods(
        "deblur",
        op,
        clean255,
        y255,
        ["dip", "dip_tv"],
        args.seeds,
        args.steps,
        {"dip_tv": args.lambda_dip_tv},
        writer,
        **overrides,
    )
    logging.info(summary_table(scores, snr_db(clean255, y255), psnr_db(clean255, y255)))
    plot_traces(scores, out_path("figures", "snr.png"))
    writer.close()


if __name__ == "__main__":
    main(parser.parse_args())
