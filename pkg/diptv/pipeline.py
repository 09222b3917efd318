"""
Grid experiments: every (image, operator, noise level, method, seed) cell is
degraded, restored and scored against the clean image.

Results go to a CSV with one row per cell, written as cells finish, and to a
JSON-lines file next to it with the complete records.
"""
import csv
import json
import logging
import os
import time
from collections import namedtuple
from concurrent.futures import ProcessPoolExecutor
from contextlib import ExitStack
from dataclasses import asdict, dataclass, field, fields, replace
from itertools import product
from typing import Optional

import numpy as np

from diptv.degradation import NoiseSpec, measure, parse_operator_spec, sigma_for_input_snr
from diptv.generator import TASKS, GeneratorConfig, default_configs
from diptv.metrics import psnr_db, snr_db
from diptv.restore import (
    DEFAULT_LAMBDA_GRID,
    METHODS,
    NETWORK_METHODS,
    DivergenceError,
    RestoreConfig,
    default_restore_config,
    solve,
    tune_lambda,
)
from diptv.utils.data import (
    crop,
    from_pixel_scale,
    load_source,
    pad_to_multiple,
    to_pixel_scale,
)
from diptv.utils.experiment import config_hash
from diptv.utils.numerical import derive_seed

CSV_FIELDS = (
    "image",
    "method",
    "operator",
    "sigma",
    "snr_in_db",
    "psnr_in_db",
    "snr_out_db",
    "psnr_out_db",
    "steps",
    "seconds",
    "seed",
    "config_hash",
)

Cell = namedtuple("Cell", ["image", "operator", "noise", "method", "seed"])

# lambdas value selecting the best-SNR lambda of lambda_grid per cell
TUNE = "tune"


class ConfigError(ValueError):
    pass


def _check_type(name, value, types):
    if not isinstance(value, types) or isinstance(value, bool) and bool not in types:
        raise ConfigError(f"{name}: expected {types}, got {type(value).__name__}")


@dataclass(frozen=True)
class ExperimentConfig:
    images: tuple
    name: str = "experiment"
    task: str = "denoise"
    operators: tuple = ("none",)
    sigmas: Optional[tuple] = None
    input_snrs_db: Optional[tuple] = None
    methods: tuple = ("dip", "dip_tv")
    lambdas: dict = field(default_factory=dict)
    lambda_grid: tuple = DEFAULT_LAMBDA_GRID
    tv_eps: dict = field(default_factory=dict)
    seeds: tuple = (0,)
    steps: Optional[int] = None
    lr: Optional[float] = None
    generator: dict = field(default_factory=dict)
    log_every: int = 100
    track_best: bool = True
    precision: str = "float32"
    base_dir: str = field(default=".", compare=False, repr=False)

    def __post_init__(self):
        for name in ("images", "operators", "methods", "seeds", "lambda_grid"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        for name in ("sigmas", "input_snrs_db"):
            if getattr(self, name) is not None:
                object.__setattr__(self, name, tuple(getattr(self, name)))
        self.validate()

    def validate(self):
        if self.task not in TASKS:
            raise ConfigError(f"task: expected one of {TASKS}, got {self.task!r}")
        if (self.sigmas is None) == (self.input_snrs_db is None):
            raise ConfigError("Give exactly one of sigmas and input_snrs_db")
        for name in ("images", "operators"):
            for value in getattr(self, name):
                _check_type(name, value, (str,))
        for value in self.sigmas or ():
            _check_type("sigmas", value, (int, float))
            if value < 0:
                raise ConfigError(f"sigmas: negative noise level {value}")
        for value in self.input_snrs_db or ():
            _check_type("input_snrs_db", value, (int, float))
        for method in self.methods:
            if method not in METHODS:
                raise ConfigError(f"methods: unknown method {method!r}")
        for name in ("lambdas", "tv_eps"):
            _check_type(name, getattr(self, name), (dict,))
            for method, value in getattr(self, name).items():
                if method not in METHODS:
                    raise ConfigError(f"{name}: unknown method {method!r}")
                if name == "lambdas" and value == TUNE:
                    if method == "dip":
                        raise ConfigError("lambdas.dip: plain DIP has no lambda to tune")
                    continue
                _check_type(f"{name}.{method}", value, (int, float))
        if not self.lambda_grid:
            raise ConfigError("lambda_grid: empty")
        for value in self.lambda_grid:
            _check_type("lambda_grid", value, (int, float))
            if value <= 0:
                raise ConfigError(f"lambda_grid: lambda must be > 0, got {value}")
        for seed in self.seeds:
            _check_type("seeds", seed, (int,))
        if self.steps is not None:
            _check_type("steps", self.steps, (int,))
        if self.lr is not None:
            _check_type("lr", self.lr, (int, float))
        _check_type("generator", self.generator, (dict,))
        _check_type("log_every", self.log_every, (int,))
        _check_type("track_best", self.track_best, (bool,))
        try:
            RestoreConfig(
                steps=self.steps or 1,
                lr=self.lr or 0.01,
                generator=self.generator_config(1),
                log_every=self.log_every,
                precision=self.precision,
            )
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e))

    @classmethod
    def schema_keys(cls):
        return [f.name for f in fields(cls) if f.name != "base_dir"]

    def to_dict(self):
        d = asdict(self)
        del d["base_dir"]
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d, base_dir="."):
        if not isinstance(d, dict):
            raise ConfigError("Experiment config must be a JSON object")
        unknown = set(d) - set(cls.schema_keys())
        if unknown:
            raise ConfigError(f"Unknown keys: {sorted(unknown)}")
        if "images" not in d:
            raise ConfigError("Missing required key: images")
        list_keys = ("images", "operators", "methods", "seeds", "sigmas", "input_snrs_db", "lambda_grid")
        for name in list_keys:
            if d.get(name) is not None and not isinstance(d[name], list):
                raise ConfigError(f"{name}: expected a list")
        try:
            return cls(**d, base_dir=base_dir)
        except TypeError as e:
            raise ConfigError(str(e))

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as f:
                document = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: {e}")
        return cls.from_dict(document, base_dir=os.path.dirname(os.path.abspath(path)))

    @property
    def hash(self):
        return config_hash(self.to_dict())

    def resolve(self, spec):
        """Paths relative to the config file; built-in sources pass through."""
        if spec.startswith("phantom:") or spec in ("none", "identity"):
            return spec
        if spec.startswith("gaussian:") or os.path.isabs(spec):
            return spec
        return os.path.join(self.base_dir, spec)

    def noise_levels(self):
        if self.sigmas is not None:
            return [("sigma", float(s)) for s in self.sigmas]
        return [("input_snr_db", float(s)) for s in self.input_snrs_db]

    def cells(self):
        return [
            Cell(*c)
            for c in product(self.images, self.operators, self.noise_levels(), self.methods, self.seeds)
        ]

    def tunes(self, method):
        return self.lambdas.get(method) == TUNE

    def generator_config(self, channels):
        base = default_configs(self.task, channels).to_dict()
        try:
            return GeneratorConfig.from_dict({**base, **self.generator})
        except (TypeError, ValueError) as e:
            raise ConfigError(f"generator: {e}")

    def restore_config(self, method, seed, channels=1):
        overrides = {
            "seed": seed,
            "generator": self.generator_config(channels),
            "log_every": self.log_every,
            "track_best": self.track_best,
            "precision": self.precision,
        }
        if self.steps is not None:
            overrides["steps"] = self.steps
        if self.lr is not None:
            overrides["lr"] = self.lr
        if method in self.tv_eps:
            overrides["tv_eps"] = float(self.tv_eps[method])
        lam = self.lambdas.get(method)
        if lam == TUNE:
            lam = self.lambda_grid[0]
        return default_restore_config(
            self.task, method, lam=None if lam is None else float(lam), **overrides
        )


@dataclass
class ExperimentRecord:
    image: str
    method: str
    operator: str
    sigma: Optional[float] = None
    snr_in_db: Optional[float] = None
    psnr_in_db: Optional[float] = None
    snr_out_db: Optional[float] = None
    psnr_out_db: Optional[float] = None
    steps: Optional[int] = None
    seconds: Optional[float] = None
    seed: Optional[int] = None
    config_hash: str = ""
    lam: Optional[float] = None
    degradation_seed: Optional[int] = None
    selected_step: Optional[int] = None
    final_snr_db: Optional[float] = None
    lambda_scores: Optional[dict] = None
    error: Optional[str] = None

    @property
    def ok(self):
        return self.error is None

    def csv_row(self):
        row = []
        for name in CSV_FIELDS:
            value = getattr(self, name)
            if value is None:
                row.append("")
            elif isinstance(value, float):
                row.append(f"{value:.4f}")
            else:
                row.append(str(value))
        return row

    def to_dict(self):
        return asdict(self)


def run_cell(config, cell, digest=None):
    """
    Degrade, restore and score one cell; failures become error records.
    """
    digest = digest or config.hash
    record = ExperimentRecord(
        image=cell.image, method=cell.method, operator=cell.operator, seed=cell.seed, config_hash=digest
    )
    start = time.perf_counter()
    try:
        source = load_source(config.resolve(cell.image))
        op = parse_operator_spec(config.resolve(cell.operator))
        record.operator = op.describe()

        clean = source.to_array(np.float64)
        clean255 = to_pixel_scale(clean)
        kind, level = cell.noise
        sigma = sigma_for_input_snr(clean255, level) if kind == "input_snr_db" else level
        record.sigma = sigma
        record.degradation_seed = derive_seed(cell.image, cell.operator, list(cell.noise))
        y255 = measure(clean255, op, NoiseSpec(sigma, record.degradation_seed)).data
        record.snr_in_db = snr_db(clean255, y255)
        record.psnr_in_db = psnr_db(clean255, y255)

        cfg = config.restore_config(cell.method, cell.seed, clean.shape[1])
        record.steps = cfg.steps
        y, reference = from_pixel_scale(y255), clean
        if cell.method in NETWORK_METHODS:
            multiple = 2 ** cfg.generator.depth
            y, _ = pad_to_multiple(y, multiple)
            reference, _ = pad_to_multiple(clean, multiple)
        if config.tunes(cell.method):
            search = tune_lambda(y, op, cfg, reference, config.lambda_grid)
            result, cfg = search.result, replace(cfg, lam=search.lam)
            record.lambda_scores = {f"{lam:g}": score for lam, score in search.scores.items()}
        else:
            result = solve(y, op, cfg, reference)
        record.lam = cfg.effective_lam
        height, width = clean.shape[-2:]
        estimate255 = np.clip(to_pixel_scale(crop(result.x_star, height, width)), 0, 255)
        final255 = np.clip(to_pixel_scale(crop(result.x_final, height, width)), 0, 255)

        record.snr_out_db = snr_db(clean255, estimate255)
        record.psnr_out_db = psnr_db(clean255, estimate255)
        record.final_snr_db = snr_db(clean255, final255)
        record.selected_step = result.selected_step
    except (OSError, ValueError, DivergenceError) as e:
        record.error = f"{type(e).__name__}: {e}"
        logging.error(f"Cell {cell} failed: {record.error}")
    record.seconds = time.perf_counter() - start
    return record


def _run_cell_star(args):
    return run_cell(*args)


def jsonl_path(csv_path):
    return os.path.splitext(csv_path)[0] + ".jsonl"


def run_experiment(config, out_csv=None, jobs=1, writer=None):
    """
    Run every cell of the grid.

    :param config: ExperimentConfig or path of a JSON experiment document
    :param out_csv: results CSV; rows are flushed as cells finish
    :param jobs: worker processes; records are still written by this process
        in grid order
    :param writer: optional tensorboardX SummaryWriter for per-cell scores
    :return: list of ExperimentRecord
    """
    if not isinstance(config, ExperimentConfig):
        config = ExperimentConfig.load(config)
    digest = config.hash
    cells = config.cells()
    logging.info(f"Experiment {config.name} ({digest}): {len(cells)} cells, jobs={jobs}")

    records = []
    with ExitStack() as stack:
        csv_file = jsonl_file = None
        if out_csv is not None:
            csv_file = stack.enter_context(open(out_csv, "w", newline="", encoding="utf-8"))
            jsonl_file = stack.enter_context(open(jsonl_path(out_csv), "w", encoding="utf-8"))
            csv_writer = csv.writer(csv_file)
            csv_writer.writerow(CSV_FIELDS)
            csv_file.flush()

        payloads = [(config, cell, digest) for cell in cells]
        if jobs > 1 and len(cells) > 1:
            executor = stack.enter_context(ProcessPoolExecutor(max_workers=jobs))
            results = executor.map(_run_cell_star, payloads)
        else:
            results = map(_run_cell_star, payloads)

        for i, record in enumerate(results):
            records.append(record)
            if record.ok:
                logging.info(
                    f"[{i + 1}/{len(cells)}] {record.image} {record.method} {record.operator} "
                    f"sigma={record.sigma:.4f}: snr_out_db={record.snr_out_db:.4f} "
                    f"psnr_out_db={record.psnr_out_db:.4f}"
                )
                if writer is not None:
                    writer.add_scalar(f"{record.method}/snr_out_db", record.snr_out_db, i)
            if csv_file is not None:
                csv_writer.writerow(record.csv_row())
                csv_file.flush()
                jsonl_file.write(json.dumps(record.to_dict()) + "\n")
                jsonl_file.flush()
    return records
