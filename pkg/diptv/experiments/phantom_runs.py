"""
Shared driver of the desk-scale experiments: one degraded image (the phantom
or a small natural crop), several methods, several restoration seeds, median
scores.
"""
import logging
from collections import OrderedDict, namedtuple
from dataclasses import replace

import matplotlib.pyplot as plt
import numpy as np

from diptv.degradation import NoiseSpec, measure
from diptv.metrics import psnr_db, snr_db
from diptv.restore import default_restore_config, solve
from diptv.utils.data import from_pixel_scale, load_source, to_pixel_scale
from diptv.utils.numerical import median

MethodScores = namedtuple("MethodScores", ["snr_db", "psnr_db", "traces"])


def degrade_source(spec, op, sigma, seed=0):
    """
    :param spec: image path or phantom:<size>[:rgb]
    :return: (clean, measurement), both on the [0, 255] scale
    """
    clean255 = to_pixel_scale(load_source(spec).to_array(np.float64))
    y255 = measure(clean255, op, NoiseSpec(sigma, seed)).data
    return clean255, y255


def degrade_phantom(size, op, sigma, seed=0):
    return degrade_source(f"phantom:{size}", op, sigma, seed)


def run_methods(task, op, clean255, y255, methods, seeds, steps, lambdas, writer=None, **overrides):
    """
    :param lambdas: {method: lambda}, missing entries use the task default
    :return: OrderedDict method -> MethodScores (one entry per seed)
    """
    y, reference = from_pixel_scale(y255), from_pixel_scale(clean255)
    scores = OrderedDict()
    for method in methods:
        snrs, psnrs, traces = [], [], []
        for seed in seeds:
            cfg = default_restore_config(
                task, method, lambdas.get(method), steps=steps, seed=seed, **overrides
            )
            if method == "tv_baseline":
                cfg = replace(cfg, log_every=max(1, steps // 50))
            result = solve(y, op, cfg, reference, writer)
            estimate = np.clip(to_pixel_scale(result.x_star), 0, 255)
            snrs.append(snr_db(clean255, estimate))
            psnrs.append(psnr_db(clean255, estimate))
            traces.append(result.trace)
            logging.info(f"{method} seed={seed}: snr_db={snrs[-1]:.4f} psnr_db={psnrs[-1]:.4f}")
        scores[method] = MethodScores(snrs, psnrs, traces)
    return scores


def summary_table(scores, snr_in, psnr_in):
    lines = [f"{'method':12s} {'snr_db':>8s} {'psnr_db':>8s}"]
    lines.append(f"{'input':12s} {snr_in:8.4f} {psnr_in:8.4f}")
    for method, s in scores.items():
        lines.append(f"{method:12s} {median(s.snr_db):8.4f} {median(s.psnr_db):8.4f}")
    return "\n".join(lines)


def plot_traces(scores, path):
    fig = plt.figure()
    for method, s in scores.items():
        trace = s.traces[0]
        if trace and trace[0].snr_db is not None:
            plt.plot([e.step for e in trace], [e.snr_db for e in trace], label=method)
    plt.xlabel("step")
    plt.ylabel("SNR (dB)")
    plt.legend()
    plt.tight_layout()
    fig.savefig(path)
    plt.close(fig)
