import hashlib
import json
import logging
import os
import secrets
import sys
from collections import OrderedDict
from datetime import datetime, timezone
from os import environ
from pprint import pformat
from subprocess import DEVNULL, CalledProcessError, check_output

import matplotlib
import numpy as np
from tensorboardX import SummaryWriter

if not environ.get("DISPLAY", ""):
    matplotlib.use("Agg")


def setup_logging(path=None, level=logging.INFO):
    formatter = logging.Formatter("%(message)s")
    root_logger = logging.getLogger()
    root_logger.handlers = []

    if path is not None:
        file_handler = logging.FileHandler(path)
        file_handler.setFormatter(formatter)
        root_logger.addHandler(file_handler)

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setFormatter(formatter)
    root_logger.addHandler(console_handler)

    root_logger.setLevel(level)


def source_commit():
    try:
        return (
            check_output(["git", "describe", "--always", "--dirty"], stderr=DEVNULL)
            .decode("utf-8")
            .strip()
        )
    except (CalledProcessError, OSError):
        return "unknown"


def setup_experiment(experiment_name, run_name, args, out_dir=None):
    """
    Results directory, log file, config dump and tensorboard writer for one run.
    The directory is out_dir, else $RESULTS_PATH, else ./outputs.

    :return: (SummaryWriter, out_path(category=None, filename=None))
    """
    if out_dir is None:
        out_dir = environ.get("RESULTS_PATH", "./outputs")

    t = str(int(datetime.now(timezone.utc).timestamp())) + secrets.token_hex(2)
    identifier = f"{run_name}-{t}" if run_name else t

    def out_path(category=None, filename=None):
        path = os.path.join(out_dir, experiment_name, identifier)
        if category is not None:
            path = os.path.join(path, category)
        os.makedirs(path, exist_ok=True)
        if filename is not None:
            return os.path.join(path, filename)
        return path

    setup_logging(out_path(filename="out.log"))

    if not isinstance(args, dict):
        args = vars(args)
    data = {**args, "identifier": identifier, "source_commit": source_commit()}
    logging.info(pformat(data))
    with open(out_path(filename="config.json"), "w") as f:
        json.dump(data, f, indent=2, default=str)

    tb_writer = SummaryWriter(out_path(category="tb"))

    return tb_writer, out_path


def canonical_json(data):
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def config_hash(data):
    """First 12 hex digits of SHA-256 over the canonical JSON of data."""
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()[:12]


def combine_logs(logs):
    keys = sorted(logs[-1].keys())
    return OrderedDict([(k, np.array([r[k] for r in logs])) for k in keys])


def format_log_summary(it, report_freq, results):
    res = combine_logs(results[-report_freq:])
    entries = ["{}={:.4f}".format(k, values.mean()) for k, values in res.items()]
    return "{}: {}".format(it, " ".join(entries))


def print_log_summary(it, report_freq, results):
    logging.info(format_log_summary(it, report_freq, results))
