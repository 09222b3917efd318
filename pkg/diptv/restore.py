"""
Restoration drivers.

Images handled here are (1, C, H, W) arrays on the [0, 1] working scale.
The objective is ||y - H x||^2 + lam * TV(x), with x = f(theta, z) for the
network methods and x the pixel image itself for the TV baseline.
"""
import logging
import math
from collections import namedtuple
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numpy as np

from diptv.autodiff import functional as F
from diptv.autodiff.tensor import Tape, Tensor, backward
from diptv.degradation import apply
from diptv.generator import Generator, GeneratorConfig, build_generator, default_configs
from diptv.metrics import snr_db
from diptv.optim import AdamState, adam_step
from diptv.tv import tv_aniso
from diptv.utils.experiment import print_log_summary

METHODS = ("dip", "dip_tv", "tv_baseline")
NETWORK_METHODS = ("dip", "dip_tv")
PRECISIONS = ("float32", "float64")

DEFAULT_TV_EPS = {"dip": 1e-6, "dip_tv": 1e-6, "tv_baseline": 1e-2}
DEFAULT_LAMBDA = {
    ("dip_tv", "denoise"): 0.1,
    ("dip_tv", "deblur"): 0.01,
    ("tv_baseline", "denoise"): 0.3,
    ("tv_baseline", "deblur"): 0.02,
}
DEFAULT_STEPS = {"denoise": 5000, "deblur": 5500}
DEFAULT_LR = {"denoise": 0.01, "deblur": 0.001}
DEFAULT_LAMBDA_GRID = (1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1)

TraceEntry = namedtuple("TraceEntry", ["step", "loss", "snr_db"])
LambdaSearch = namedtuple("LambdaSearch", ["lam", "result", "scores"])


class DivergenceError(RuntimeError):
    def __init__(self, step, last_finite_step, loss):
        super().__init__(
            f"Loss became {loss} at step {step} (last finite step: {last_finite_step})"
        )
        self.step = step
        self.last_finite_step = last_finite_step


@dataclass(frozen=True)
class RestoreConfig:
    method: str = "dip_tv"
    lam: float = 0.0
    steps: int = 5000
    lr: float = 0.01
    tv_eps: Optional[float] = None
    seed: int = 0
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    log_every: int = 100
    track_best: bool = True
    precision: str = "float32"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"Unknown method {self.method}, expected one of {METHODS}")
        if not self.lam >= 0:
            raise ValueError(f"Lambda must be >= 0, got {self.lam}")
        if self.steps < 1:
            raise ValueError(f"Steps must be >= 1, got {self.steps}")
        if self.lr <= 0:
            raise ValueError(f"Learning rate must be positive, got {self.lr}")
        if self.tv_eps is not None and self.tv_eps < 0:
            raise ValueError(f"TV eps must be >= 0, got {self.tv_eps}")
        if self.log_every < 1:
            raise ValueError(f"log_every must be >= 1, got {self.log_every}")
        if self.precision not in PRECISIONS:
            raise ValueError(f"Precision must be one of {PRECISIONS}, got {self.precision}")

    @property
    def effective_lam(self):
        return 0.0 if self.method == "dip" else self.lam

    @property
    def effective_tv_eps(self):
        return DEFAULT_TV_EPS[self.method] if self.tv_eps is None else self.tv_eps

    @property
    def dtype(self):
        return np.dtype(self.precision)

    def to_dict(self):
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        d["generator"] = self.generator.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"Unknown restore keys: {sorted(unknown)}")
        if isinstance(d.get("generator"), dict):
            d["generator"] = GeneratorConfig.from_dict(d["generator"])
        return cls(**d)


def default_restore_config(task, method, lam=None, output_channels=1, **overrides):
    """
    Per-task defaults: steps, learning rate, generator and, when lam is None,
    a default TV weight (reported as a warning).
    """
    if method not in METHODS:
        raise ValueError(f"Unknown method {method}, expected one of {METHODS}")
    if lam is None:
        lam = DEFAULT_LAMBDA.get((method, task), 0.0)
        if method != "dip":
            logging.warning(f"No lambda given for {method}/{task}, using default {lam}")
    config = RestoreConfig(
        method=method,
        lam=lam,
        steps=DEFAULT_STEPS[task],
        lr=DEFAULT_LR[task],
        generator=default_configs(task, output_channels),
    )
    return replace(config, **overrides)


@dataclass
class RestoreResult:
    x_star: np.ndarray
    x_final: np.ndarray
    trace: list
    selected_step: int
    best_snr_db: Optional[float] = None
    final_snr_db: Optional[float] = None
    # fitted network and input; None for the TV baseline
    generator: Optional[Generator] = None

    @property
    def selected_best(self):
        return self.selected_step != self.trace[-1].step if self.trace else False


def _raw(x, dtype=None):
    return np.asarray(getattr(x, "data", x), dtype=dtype)


def objective(y, op, x, lam, tv_eps):
    """
    :return: (loss, data term, TV term or None when lam == 0), scalar Tensors
    """
    hx = apply(op, x)
    if tuple(np.shape(getattr(y, "data", y))) != tuple(hx.shape):
        raise ValueError(f"Measurement shape {np.shape(y)} != H x shape {hx.shape}")
    data = F.sq_l2(F.sub(y, hx))
    if lam == 0:
        return data, data, None
    tv = tv_aniso(x, tv_eps)
    return data + tv * lam, data, tv


def loss_dip_tv(y, op, gen, lam, tv_eps):
    return objective(y, op, gen.forward(), lam, tv_eps)[0]


def _log_step(step, logs, log_every, trace, writer, snr):
    trace.append(TraceEntry(step, logs[-1]["loss"], snr))
    print_log_summary(step, log_every, logs)
    if writer is not None:
        for key, value in logs[-1].items():
            writer.add_scalar(key, value, step)
        if snr is not None:
            writer.add_scalar("snr_db", snr, step)


def restore(y, op, cfg, reference=None, writer=None):
    """
    Fit theta (and z when optimize_input) to the measurement with Adam.

    Step s evaluates the output of the current parameters, records it, then
    applies update s. With a reference and track_best, the best-SNR output
    seen is returned as x_star; x_final is always the output after the last
    update.

    :param y: measurement (1, C, H, W), [0, 1] scale
    :param reference: optional clean image, [0, 1] scale
    :param writer: optional tensorboardX SummaryWriter
    :return: RestoreResult
    """
    if cfg.method not in NETWORK_METHODS:
        raise ValueError(f"restore handles {NETWORK_METHODS}, got {cfg.method}")
    if cfg.method == "dip" and cfg.lam != 0:
        logging.warning(f"Lambda {cfg.lam} ignored for plain DIP")
    dtype = cfg.dtype
    y = _raw(y, dtype)
    if reference is not None:
        reference = _raw(reference, np.float64)
    lam, tv_eps = cfg.effective_lam, cfg.effective_tv_eps

    _, channels, height, width = y.shape
    gen_config = replace(cfg.generator, seed=cfg.seed, output_channels=channels)
    gen = build_generator(gen_config, height, width, dtype=dtype)
    values = gen.trainable()
    state = AdamState(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)

    trace, logs = [], []
    track = reference is not None and cfg.track_best
    best_snr, best_x, best_step = -math.inf, None, None
    for step in range(1, cfg.steps + 1):
        with Tape() as tape:
            x = gen.with_params(values).forward()
            loss, data, tv = objective(y, op, x, lam, tv_eps)
        loss_value = loss.item()
        if not np.isfinite(loss_value):
            raise DivergenceError(step, step - 1 if step > 1 else None, loss_value)

        snr = snr_db(reference, x.data) if reference is not None else None
        if track and snr > best_snr:
            best_snr, best_x, best_step = snr, x.data, step - 1

        logs.append(
            {"loss": loss_value, "data": data.item(), "tv": 0.0 if tv is None else tv.item()}
        )
        if step % cfg.log_every == 0 or step == cfg.steps:
            _log_step(step, logs, cfg.log_every, trace, writer, snr)

        leaf_grads = backward(tape, loss)
        grads = {
            name: leaf_grads[t].data if t in leaf_grads else np.zeros(t.shape, t.dtype)
            for name, t in values.items()
        }
        state, updated = adam_step(state, values, grads)
        values = type(values)(
            (name, Tensor(value, requires_grad=True, dtype=dtype))
            for name, value in updated.items()
        )

    fitted = gen.with_params(values)
    x_final = fitted.forward().data
    final_snr = snr_db(reference, x_final) if reference is not None else None
    if track and best_snr > final_snr:
        x_star, selected = best_x, best_step
        logging.info(f"Selected output after {selected} updates, snr_db={best_snr:.4f}")
    else:
        x_star, selected = x_final, cfg.steps
        if track:
            best_snr = final_snr
    return RestoreResult(
        x_star=np.array(x_star),
        x_final=np.array(x_final),
        trace=trace,
        selected_step=selected,
        best_snr_db=best_snr if track else None,
        final_snr_db=final_snr,
        generator=fitted,
    )


def _value_and_grad(y, op, x, lam, tv_eps):
    leaf = Tensor(x, requires_grad=True)
    with Tape() as tape:
        loss = objective(y, op, leaf, lam, tv_eps)[0]
    grads = backward(tape, loss)
    return loss.item(), grads[leaf].data


def restore_tv_baseline(y, op, cfg, reference=None, writer=None):
    """
    Smoothed-TV regularized least squares over the pixel image.

    Nesterov-accelerated gradient steps of size 1/L from x = y with
    L = 2 ||H||^2 + 8 lam / tv_eps. When a step would increase the objective
    the momentum restarts and a plain gradient step is taken from the current
    iterate instead; if even that does not decrease it the iterate is kept.
    The objective sequence is therefore non-increasing.

    :return: RestoreResult holding the iterate after cfg.steps
    """
    if cfg.method != "tv_baseline":
        raise ValueError(f"restore_tv_baseline needs method tv_baseline, got {cfg.method}")
    if cfg.lam <= 0:
        raise ValueError(f"The TV baseline needs lambda > 0, got {cfg.lam}")
    tv_eps = cfg.effective_tv_eps
    if tv_eps <= 0:
        raise ValueError(f"The TV baseline needs tv_eps > 0, got {tv_eps}")

    dtype = cfg.dtype
    y = _raw(y, dtype)
    lipschitz = 2 * op.norm_bound(y.shape) ** 2 + 8 * cfg.lam / tv_eps
    step_size = 1 / lipschitz

    x = y.copy()
    f_x, g_x = _value_and_grad(y, op, x, cfg.lam, tv_eps)
    z, g_z, t = x, g_x, 1.0
    trace, logs = [], []
    restarts = 0
    for step in range(1, cfg.steps + 1):
        x_new = z - step_size * g_z
        f_new, g_new = _value_and_grad(y, op, x_new, cfg.lam, tv_eps)
        if f_new > f_x:
            restarts += 1
            t = 1.0
            x_new = x - step_size * g_x
            f_new, g_new = _value_and_grad(y, op, x_new, cfg.lam, tv_eps)
            if f_new > f_x:
                x_new, f_new, g_new = x, f_x, g_x
            z, g_z = x_new, g_new
        else:
            t_new = (1 + math.sqrt(1 + 4 * t * t)) / 2
            momentum = (t - 1) / t_new
            z = x_new + momentum * (x_new - x)
            g_z = g_new if momentum == 0 else None
            t = t_new
        if not np.isfinite(f_new):
            raise DivergenceError(step, step - 1 if step > 1 else None, f_new)
        x, f_x, g_x = x_new, f_new, g_new
        if g_z is None:
            g_z = _value_and_grad(y, op, z, cfg.lam, tv_eps)[1]

        logs.append({"loss": f_x, "restarts": float(restarts)})
        if step % cfg.log_every == 0 or step == cfg.steps:
            snr = snr_db(reference, x) if reference is not None else None
            _log_step(step, logs, cfg.log_every, trace, writer, snr)

    final_snr = snr_db(reference, x) if reference is not None else None
    return RestoreResult(
        x_star=x,
        x_final=x,
        trace=trace,
        selected_step=cfg.steps,
        best_snr_db=final_snr,
        final_snr_db=final_snr,
    )


def solve(y, op, cfg, reference=None, writer=None):
    """Dispatch on cfg.method."""
    if cfg.method == "tv_baseline":
        return restore_tv_baseline(y, op, cfg, reference, writer)
    return restore(y, op, cfg, reference, writer)


def tune_lambda(y, op, cfg, reference, grid=DEFAULT_LAMBDA_GRID):
    """
    Run one restoration per lambda in grid and keep the one whose selected
    output has the best SNR against the reference.

    :return: LambdaSearch(lam, result, scores) with scores {lam: snr_db}
    """
    if cfg.method == "dip":
        raise ValueError("Plain DIP has no lambda to tune")
    if reference is None:
        raise ValueError("Lambda tuning needs a reference image")
    if not grid:
        raise ValueError("Empty lambda grid")
    scores, best = {}, None
    for lam in grid:
        result = solve(y, op, replace(cfg, lam=lam), reference)
        scores[lam] = snr_db(reference, result.x_star)
        logging.info(f"lambda={lam:g}: snr_db={scores[lam]:.4f}")
        if best is None or scores[lam] > scores[best[0]]:
            best = (lam, result)
    return LambdaSearch(best[0], best[1], scores)
