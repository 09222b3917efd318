"""
Differentiable primitives over 4D image tensors and scalars.

Broadcasting is limited to scalar-vs-tensor and per-channel (C) vs (B, C, H, W).
"""
from itertools import chain

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from diptv.autodiff.tensor import Function

PAD_MODES = ("zero", "reflect", "replicate")
UPSAMPLE_MODES = ("nearest", "bilinear")


def _broadcast_shape(a_shape, b_shape):
    if a_shape == b_shape:
        return a_shape
    a_size, b_size = int(np.prod(a_shape)), int(np.prod(b_shape))
    if b_size == 1 and len(b_shape) <= len(a_shape):
        return a_shape
    if a_size == 1 and len(a_shape) <= len(b_shape):
        return b_shape
    if len(a_shape) == 1 and len(b_shape) == 4 and a_shape[0] == b_shape[1]:
        return b_shape
    if len(b_shape) == 1 and len(a_shape) == 4 and b_shape[0] == a_shape[1]:
        return a_shape
    raise ValueError(f"Cannot broadcast shapes {a_shape} and {b_shape}")


def _expand(x, out_shape):
    if not isinstance(x, np.ndarray):
        return float(x)
    if x.ndim == 1 and len(out_shape) == 4:
        return x.reshape(1, -1, 1, 1)
    return x


def _reduce(grad, shape):
    if grad.shape == shape:
        return grad
    if int(np.prod(shape)) == 1:
        return np.asarray(grad.sum()).reshape(shape)
    return grad.sum(axis=(0, 2, 3))


class Add(Function):
    @staticmethod
    def forward(ctx, a, b):
        ctx.shapes = np.shape(a), np.shape(b)
        out_shape = _broadcast_shape(*ctx.shapes)
        return np.asarray(_expand(a, out_shape) + _expand(b, out_shape))

    @staticmethod
    def backward(ctx, grad_output):
        a_shape, b_shape = ctx.shapes
        grad_a = _reduce(grad_output, a_shape) if ctx.needs_input_grad[0] else None
        grad_b = _reduce(grad_output, b_shape) if ctx.needs_input_grad[1] else None
        return grad_a, grad_b


class Sub(Function):
    @staticmethod
    def forward(ctx, a, b):
        ctx.shapes = np.shape(a), np.shape(b)
        out_shape = _broadcast_shape(*ctx.shapes)
        return np.asarray(_expand(a, out_shape) - _expand(b, out_shape))

    @staticmethod
    def backward(ctx, grad_output):
        a_shape, b_shape = ctx.shapes
        grad_a = _reduce(grad_output, a_shape) if ctx.needs_input_grad[0] else None
        grad_b = _reduce(-grad_output, b_shape) if ctx.needs_input_grad[1] else None
        return grad_a, grad_b


class Mul(Function):
    @staticmethod
    def forward(ctx, a, b):
        ctx.shapes = np.shape(a), np.shape(b)
        out_shape = _broadcast_shape(*ctx.shapes)
        a, b = _expand(a, out_shape), _expand(b, out_shape)
        ctx.save_for_backward(a, b)
        return np.asarray(a * b)

    @staticmethod
    def backward(ctx, grad_output):
        a, b = ctx.saved_tensors
        a_shape, b_shape = ctx.shapes
        grad_a = grad_b = None
        if ctx.needs_input_grad[0]:
            grad_a = _reduce(grad_output * b, a_shape)
        if ctx.needs_input_grad[1]:
            grad_b = _reduce(grad_output * a, b_shape)
        return grad_a, grad_b


class Sum(Function):
    @staticmethod
    def forward(ctx, x):
        ctx.shape = x.shape
        return np.asarray(x.sum())

    @staticmethod
    def backward(ctx, grad_output):
        return np.broadcast_to(grad_output, ctx.shape)


class SquaredL2(Function):
    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x)
        return np.asarray((x * x).sum())

    @staticmethod
    def backward(ctx, grad_output):
        x, = ctx.saved_tensors
        return 2 * x * grad_output


class CharbonnierAbs(Function):
    """sqrt(x^2 + eps^2); |x| with subgradient sign(0) = 0 when eps = 0."""

    @staticmethod
    def forward(ctx, x, eps):
        ctx.eps = eps
        if eps == 0:
            ctx.save_for_backward(np.sign(x))
            return np.abs(x)
        r = np.sqrt(x * x + eps * eps)
        ctx.save_for_backward(x, r)
        return r

    @staticmethod
    def backward(ctx, grad_output):
        if ctx.eps == 0:
            sign, = ctx.saved_tensors
            return grad_output * sign, None
        x, r = ctx.saved_tensors
        return grad_output * x / r, None


class LeakyReLU(Function):
    @staticmethod
    def forward(ctx, x, slope):
        mask = x > 0
        ctx.save_for_backward(mask)
        ctx.slope = slope
        return np.where(mask, x, slope * x)

    @staticmethod
    def backward(ctx, grad_output):
        mask, = ctx.saved_tensors
        return np.where(mask, grad_output, ctx.slope * grad_output), None


class Sigmoid(Function):
    @staticmethod
    def forward(ctx, x):
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1 / (1 + np.exp(-x[pos]))
        e = np.exp(x[~pos])
        out[~pos] = e / (1 + e)
        ctx.save_for_backward(out)
        return out

    @staticmethod
    def backward(ctx, grad_output):
        out, = ctx.saved_tensors
        return grad_output * out * (1 - out)


def pad_indices(n, before, after, mode):
    """Source index of every padded position along an axis of length n."""
    idx = np.arange(-before, n + after)
    if mode == "replicate" or n == 1:
        return np.clip(idx, 0, n - 1)
    period = 2 * (n - 1)
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx)


def pad_array(x, pad_h, pad_w, mode):
    if mode == "zero":
        widths = ((0, 0),) * (x.ndim - 2) + ((pad_h, pad_h), (pad_w, pad_w))
        return np.pad(x, widths)
    h, w = x.shape[-2:]
    x = x.take(pad_indices(h, pad_h, pad_h, mode), axis=-2)
    return x.take(pad_indices(w, pad_w, pad_w, mode), axis=-1)


def _fold_axis(grad, idx, n, before, axis):
    grad = np.moveaxis(grad, axis, -1)
    out = grad[..., before : before + n].copy()
    for k in chain(range(before), range(before + n, len(idx))):
        out[..., idx[k]] += grad[..., k]
    return np.moveaxis(out, -1, axis)


def pad_array_adjoint(grad, shape, pad_h, pad_w, mode):
    """Transpose of pad_array: folds padded positions back onto their sources."""
    h, w = shape[-2:]
    if mode == "zero":
        return grad[..., pad_h : pad_h + h, pad_w : pad_w + w]
    grad = _fold_axis(grad, pad_indices(w, pad_w, pad_w, mode), w, pad_w, -1)
    return _fold_axis(grad, pad_indices(h, pad_h, pad_h, mode), h, pad_h, -2)


class Pad(Function):
    @staticmethod
    def forward(ctx, x, pad_h, pad_w, mode):
        ctx.shape = x.shape
        ctx.pads = pad_h, pad_w, mode
        return pad_array(x, pad_h, pad_w, mode)

    @staticmethod
    def backward(ctx, grad_output):
        return pad_array_adjoint(grad_output, ctx.shape, *ctx.pads), None, None, None


def _windows(x, kh, kw, stride):
    return sliding_window_view(x, (kh, kw), axis=(-2, -1))[:, :, ::stride, ::stride]


def correlate_array(x, w, stride=1):
    """Valid cross-correlation of (B, Cin, H, W) with (Cout, Cin, kh, kw)."""
    windows = _windows(x, *w.shape[-2:], stride)
    out = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def correlate_array_adjoint(grad, w, x_shape, stride=1):
    """Transpose of correlate_array with respect to its input."""
    kh, kw = w.shape[-2:]
    h_out, w_out = grad.shape[-2:]
    out = np.zeros(x_shape, dtype=np.result_type(grad, w))
    for i in range(kh):
        for j in range(kw):
            contrib = np.tensordot(grad, w[:, :, i, j], axes=([1], [0]))
            out[
                :,
                :,
                i : i + stride * h_out : stride,
                j : j + stride * w_out : stride,
            ] += contrib.transpose(0, 3, 1, 2)
    return out


class Correlate2d(Function):
    @staticmethod
    def forward(ctx, x, weight, bias, stride):
        ctx.save_for_backward(x, weight)
        ctx.stride = stride
        out = correlate_array(x, weight, stride)
        if bias is not None:
            out += bias.reshape(1, -1, 1, 1)
        return out

    @staticmethod
    def backward(ctx, grad_output):
        x, weight = ctx.saved_tensors
        grad_x = grad_w = grad_b = None
        if ctx.needs_input_grad[0]:
            grad_x = correlate_array_adjoint(grad_output, weight, x.shape, ctx.stride)
        if ctx.needs_input_grad[1]:
            windows = _windows(x, *weight.shape[-2:], ctx.stride)
            grad_w = np.tensordot(grad_output, windows, axes=([0, 2, 3], [0, 2, 3]))
        if ctx.needs_input_grad[2]:
            grad_b = grad_output.sum(axis=(0, 2, 3))
        return grad_x, grad_w, grad_b, None


def interpolation_matrix(n, factor, mode, dtype=np.float64):
    """
    Matrix mapping a length-n signal to its factor-times upsampled version.

    Bilinear uses the align-corners-false convention: output i samples the
    input at (i + 0.5) / factor - 0.5, clamped at the borders.
    """
    m = n * factor
    rows = np.arange(m)
    a = np.zeros((m, n))
    if mode == "nearest":
        a[rows, rows // factor] = 1.0
    else:
        src = np.maximum((rows + 0.5) / factor - 0.5, 0.0)
        i0 = np.minimum(np.floor(src).astype(np.int64), n - 1)
        i1 = np.minimum(i0 + 1, n - 1)
        frac = src - i0
        np.add.at(a, (rows, i0), 1.0 - frac)
        np.add.at(a, (rows, i1), frac)
    return a.astype(dtype)


class Upsample(Function):
    @staticmethod
    def forward(ctx, x, factor, mode):
        h, w = x.shape[-2:]
        a_h = interpolation_matrix(h, factor, mode, x.dtype)
        a_w = interpolation_matrix(w, factor, mode, x.dtype)
        ctx.save_for_backward(a_h, a_w)
        return a_h @ x @ a_w.T

    @staticmethod
    def backward(ctx, grad_output):
        a_h, a_w = ctx.saved_tensors
        return a_h.T @ grad_output @ a_w, None, None


class BatchNorm(Function):
    """Training-mode batch normalization over (B, H, W) per channel."""

    @staticmethod
    def forward(ctx, x, gamma, beta, eps):
        axes = (0, 2, 3)
        centered = x - x.mean(axis=axes, keepdims=True)
        var = (centered * centered).mean(axis=axes, keepdims=True)
        inv_std = 1 / np.sqrt(var + eps)
        x_hat = centered * inv_std
        ctx.save_for_backward(x_hat, inv_std, gamma)
        return gamma.reshape(1, -1, 1, 1) * x_hat + beta.reshape(1, -1, 1, 1)

    @staticmethod
    def backward(ctx, grad_output):
        x_hat, inv_std, gamma = ctx.saved_tensors
        axes = (0, 2, 3)
        grad_x = grad_gamma = grad_beta = None
        if ctx.needs_input_grad[0]:
            n = x_hat.size // x_hat.shape[1]
            g_hat = grad_output * gamma.reshape(1, -1, 1, 1)
            grad_x = (inv_std / n) * (
                n * g_hat
                - g_hat.sum(axis=axes, keepdims=True)
                - x_hat * (g_hat * x_hat).sum(axis=axes, keepdims=True)
            )
        if ctx.needs_input_grad[1]:
            grad_gamma = (grad_output * x_hat).sum(axis=axes)
        if ctx.needs_input_grad[2]:
            grad_beta = grad_output.sum(axis=axes)
        return grad_x, grad_gamma, grad_beta, None


class Concat(Function):
    @staticmethod
    def forward(ctx, *arrays, axis=1):
        ctx.axis = axis
        ctx.splits = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    @staticmethod
    def backward(ctx, grad_output):
        return tuple(np.split(grad_output, ctx.splits, axis=ctx.axis))


class Reshape(Function):
    @staticmethod
    def forward(ctx, x, shape):
        ctx.shape = x.shape
        return x.reshape(shape)

    @staticmethod
    def backward(ctx, grad_output):
        return grad_output.reshape(ctx.shape), None


def add(a, b):
    return Add.apply(a, b)


def sub(a, b):
    return Sub.apply(a, b)


def mul(a, b):
    return Mul.apply(a, b)


def sum(x):
    return Sum.apply(x)


def sq_l2(x):
    """Sum of squares, returned as a scalar Tensor."""
    return SquaredL2.apply(x)


def charbonnier_abs(x, eps=1e-6):
    if eps < 0:
        raise ValueError(f"Charbonnier eps must be >= 0, got {eps}")
    return CharbonnierAbs.apply(x, float(eps))


def leaky_relu(x, slope=0.1):
    if not 0 < slope < 1:
        raise ValueError(f"Leaky ReLU slope must lie in (0, 1), got {slope}")
    return LeakyReLU.apply(x, float(slope))


def sigmoid(x):
    return Sigmoid.apply(x)


def pad(x, pad_h, pad_w, mode="zero"):
    if mode not in PAD_MODES:
        raise ValueError(f"Unknown pad mode {mode}, expected one of {PAD_MODES}")
    return Pad.apply(x, int(pad_h), int(pad_w), mode)


def conv2d(input, weight, bias=None, stride=1, padding="zero", pad_width=None):
    """
    2D cross-correlation with (kh-1)/2, (kw-1)/2 padding unless pad_width is given.

    :param input: (B, Cin, H, W)
    :param weight: (Cout, Cin, kh, kw), odd kh and kw
    :param bias: (Cout) or None
    :param padding: one of 'zero', 'reflect', 'replicate'
    """
    if len(input.shape) != 4 or len(weight.shape) != 4:
        raise ValueError(f"conv2d expects 4D input and weight, got {input.shape}, {weight.shape}")
    if input.shape[1] != weight.shape[1]:
        raise ValueError(
            f"Input has {input.shape[1]} channels, weight expects {weight.shape[1]}"
        )
    kh, kw = weight.shape[-2:]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"Kernel dims must be odd, got {kh}x{kw}")
    if stride not in (1, 2):
        raise ValueError(f"Stride must be 1 or 2, got {stride}")
    if padding not in PAD_MODES:
        raise ValueError(f"Unknown pad mode {padding}, expected one of {PAD_MODES}")
    if bias is not None and tuple(bias.shape) != (weight.shape[0],):
        raise ValueError(f"Bias shape {bias.shape} does not match {weight.shape[0]} outputs")
    pad_h, pad_w = pad_width if pad_width is not None else ((kh - 1) // 2, (kw - 1) // 2)
    if input.shape[2] + 2 * pad_h < kh or input.shape[3] + 2 * pad_w < kw:
        raise ValueError(
            f"Kernel {kh}x{kw} larger than padded input {input.shape[2:]} (+{pad_h},{pad_w})"
        )
    if pad_h or pad_w:
        input = pad(input, pad_h, pad_w, padding)
    return Correlate2d.apply(input, weight, bias, stride)


def upsample(input, factor=2, mode="nearest"):
    if factor < 2 or int(factor) != factor:
        raise ValueError(f"Upsampling factor must be an int >= 2, got {factor}")
    if mode not in UPSAMPLE_MODES:
        raise ValueError(f"Unknown upsampling mode {mode}, expected one of {UPSAMPLE_MODES}")
    if len(input.shape) != 4:
        raise ValueError(f"upsample expects a 4D input, got {input.shape}")
    return Upsample.apply(input, int(factor), mode)


def batch_norm(input, gamma, beta, eps=1e-5):
    if eps <= 0:
        raise ValueError(f"Batch norm eps must be > 0, got {eps}")
    if len(input.shape) != 4:
        raise ValueError(f"batch_norm expects a 4D input, got {input.shape}")
    channels = input.shape[1]
    if tuple(gamma.shape) != (channels,) or tuple(beta.shape) != (channels,):
        raise ValueError(f"gamma/beta must have shape ({channels},)")
    return BatchNorm.apply(input, gamma, beta, float(eps))


def concat(tensors, axis=1):
    return Concat.apply(*tensors, axis=axis)


def reshape(x, shape):
    return Reshape.apply(x, tuple(shape))
