"""
Central finite differences and the float64 gradient suite behind `diptv gradcheck`.
"""
import logging
from collections import namedtuple

import numpy as np

from diptv.autodiff.tensor import Tape, Tensor, backward

GradcheckResult = namedtuple(
    "GradcheckResult", ["name", "rel_error", "worst_ratio", "excluded", "num_coords", "passed"]
)

# Excluded coordinates beyond this share fail the check outright.
MAX_EXCLUDED_FRACTION = 0.05

# Rounding of one float64 evaluation of f, in units of eps |f|.
ROUNDING_FACTOR = 4.0


def _value(out):
    if isinstance(out, Tensor):
        return float(out.item())
    return float(out)


def _shifted_values(f, x, h):
    """f(x + h e_i) and f(x - h e_i) for every coordinate i of x."""
    base = np.array(x.data, dtype=np.float64)
    flat = base.reshape(-1)
    plus = np.empty(flat.size)
    minus = np.empty(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        plus[i] = _value(f(Tensor(base)))
        flat[i] = orig - h
        minus[i] = _value(f(Tensor(base)))
        flat[i] = orig
    return plus, minus


def finite_diff_grad(f, x, h=1e-6):
    """
    Central-difference gradient (f(x + h e_i) - f(x - h e_i)) / 2h.

    :param f: deterministic scalar function of a Tensor
    :param x: point of evaluation, promoted to float64
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    plus, minus = _shifted_values(f, x, h)
    return Tensor(((plus - minus) / (2 * h)).reshape(x.shape))


def rel_error(a, b):
    """Norm-relative error ||a - b|| / max(||a||, ||b||), 0 when both vanish."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def noise_floor(f0, h):
    """Roundoff level of a central difference of f at a point where f = f0."""
    return ROUNDING_FACTOR * np.finfo(np.float64).eps * abs(f0) / h


def autodiff_grads(f, inputs):
    tracked = [Tensor(x, dtype=np.float64, requires_grad=True) for x in inputs]
    with Tape() as tape:
        loss = f(*tracked)
    grads = backward(tape, loss)
    return [
        grads[t].data if t in grads else np.zeros(t.shape) for t in tracked
    ]


def check_gradients(f, inputs, names=None, h=1e-6, tol=1e-5, kink_tol=1e-3):
    """
    Compare backward() with central differences for every input of f.

    Each coordinate must satisfy |g_ad - g_fd| <= atol + tol |g_fd|, with atol
    the roundoff level of the central difference (see noise_floor). Gradients
    below that level, such as the exact zeros of biases feeding a batch norm,
    cannot be resolved by finite differences and pass on the absolute term.

    Coordinates whose one-sided difference quotients disagree by more than
    kink_tol (relative) plus roundoff straddle a kink of a piecewise-linear op
    within +-h; they are excluded and counted.

    :param f: scalar function f(*inputs) built from autodiff primitives
    :param inputs: list of arrays or Tensors, evaluated in float64
    :return: list of GradcheckResult, one per input; worst_ratio is the
        largest |g_ad - g_fd| / (atol + tol |g_fd|) over kept coordinates
    """
    inputs = [np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64) for x in inputs]
    names = names or [f"input{i}" for i in range(len(inputs))]
    analytic = autodiff_grads(f, inputs)
    f0 = _value(f(*[Tensor(x) for x in inputs]))
    atol = noise_floor(f0, h)

    results = []
    for k, (name, x, grad) in enumerate(zip(names, inputs, analytic)):

        def f_k(xk, k=k):
            args = [Tensor(x) for x in inputs]
            args[k] = xk
            return f(*args)

        plus, minus = _shifted_values(f_k, Tensor(x), h)
        central = (plus - minus) / (2 * h)
        one_sided_gap = np.abs((plus - f0) - (f0 - minus)) / h
        scale = np.sqrt(np.mean(central ** 2))
        # the gap mixes three evaluations of f, hence twice the central noise
        kinks = one_sided_gap > kink_tol * (np.abs(central) + scale) + 2 * atol
        keep = ~kinks
        analytic_k, central_k = grad.reshape(-1)[keep], central[keep]
        err = rel_error(analytic_k, central_k)
        bound = atol + tol * np.abs(central_k)
        diff = np.abs(analytic_k - central_k)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = np.where(diff == 0, 0.0, diff / bound)
        worst = float(ratios.max()) if ratios.size else 0.0
        passed = worst <= 1.0 and kinks.mean() <= MAX_EXCLUDED_FRACTION
        results.append(
            GradcheckResult(name, err, worst, int(kinks.sum()), x.size, bool(passed))
        )
    return results


def _primitive_cases(rng):
    from diptv.autodiff import functional as F
    from diptv import tv
    from diptv.degradation import DegradationOperator, adjoint, apply, gaussian_kernel

    blur = DegradationOperator.blur(gaussian_kernel(1.0, 3))
    w = rng.standard_normal((3, 2, 3, 3))
    cases = []
    for mode in ("zero", "reflect", "replicate"):
        for stride in (1, 2):
            cases.append(
                (
                    f"conv2d[{mode},stride={stride}]",
                    lambda x, w, b, mode=mode, stride=stride: F.sq_l2(
                        F.conv2d(x, w, b, stride=stride, padding=mode)
                    ),
                    [rng.standard_normal((1, 2, 8, 8)), w, rng.standard_normal(3)],
                )
            )
    for mode in ("nearest", "bilinear"):
        cases.append(
            (
                f"upsample[{mode}]",
                lambda x, mode=mode: F.sq_l2(F.upsample(x, 2, mode) * F.upsample(x, 2, mode)),
                [rng.standard_normal((1, 1, 3, 3))],
            )
        )
    cases += [
        (
            "batch_norm",
            lambda x, g, b: F.sq_l2(F.leaky_relu(F.batch_norm(x, g, b), 0.3) * 1.7 + x),
            [rng.standard_normal((1, 4, 6, 6)), rng.standard_normal(4), rng.standard_normal(4)],
        ),
        (
            "sigmoid",
            lambda x: F.sq_l2(F.sigmoid(x)),
            [rng.standard_normal((1, 2, 4, 4))],
        ),
        (
            "leaky_relu",
            lambda x: F.sq_l2(F.leaky_relu(x, 0.2)),
            [rng.standard_normal((1, 2, 4, 4))],
        ),
        (
            "add_sub_mul",
            lambda x, c: F.sum((x - c) * (x + c) * c * 2.5),
            [rng.standard_normal((1, 3, 4, 4)), rng.standard_normal(3)],
        ),
        (
            "charbonnier_abs",
            lambda x: F.sum(F.charbonnier_abs(x, 1e-3)),
            [rng.standard_normal((1, 1, 5, 5))],
        ),
        (
            "concat",
            lambda a, b: F.sq_l2(F.concat([a, b * a]) * 0.5),
            [rng.standard_normal((1, 2, 4, 4)), rng.standard_normal((1, 2, 4, 4))],
        ),
        (
            "tv_aniso",
            lambda x: tv.tv_aniso(x, 1e-2),
            [rng.standard_normal((1, 3, 6, 6))],
        ),
        (
            "blur_apply_adjoint",
            lambda x: F.sq_l2(adjoint(blur, apply(blur, x)) - x * 0.5),
            [rng.standard_normal((1, 1, 6, 6))],
        ),
    ]
    return cases


def run_suite(size=16, depth=2, tolerance=1e-4, seed=0, h=1e-6):
    """
    Gradient checks of every primitive and of the full DIP-TV objective.

    Primitives are held to min(tolerance, 1e-5); the generator composed with
    the data term and the TV penalty to `tolerance`.

    :return: (passed, results)
    """
    from diptv.degradation import DegradationOperator, gaussian_kernel
    from diptv.generator import GeneratorConfig, build_generator
    from diptv.restore import objective

    rng = np.random.default_rng(seed)
    results = []
    for name, f, inputs in _primitive_cases(rng):
        names = [f"{name}/arg{i}" for i in range(len(inputs))]
        for r in check_gradients(f, inputs, names, h=h, tol=min(tolerance, 1e-5)):
            results.append(r)
            logging.info(_format(r))

    config = GeneratorConfig(
        depth=depth,
        channels_down=(8,) * depth,
        channels_up=(8,) * depth,
        skip_channels=(4,) * depth,
        input_channels=4,
        seed=seed,
    )
    gen = build_generator(config, size, size, dtype=np.float64)
    op = DegradationOperator.blur(gaussian_kernel(1.0, 3))
    y = rng.uniform(0, 1, (1, 1, size, size))
    names = list(gen.params.names())

    def loss(*values):
        candidate = gen.with_params(dict(zip(names, values)))
        return objective(y, op, candidate.forward(), lam=0.05, tv_eps=1e-2)[0]

    for r in check_gradients(loss, [gen.params[n] for n in names], names, h=h, tol=tolerance):
        results.append(r)
        logging.info(_format(r))

    return all(r.passed for r in results), results


def _format(r):
    status = "ok" if r.passed else "FAIL"
    return (
        f"{status:4s} {r.name}: rel_error={r.rel_error:.3e} worst_ratio={r.worst_ratio:.3g} "
        f"excluded={r.excluded}/{r.num_coords}"
    )
