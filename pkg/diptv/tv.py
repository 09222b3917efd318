"""
Anisotropic total variation with replicate boundary.

D1 differences along rows (vertical), D2 along columns (horizontal); the last
difference along each axis is zero, so constant images have zero variation.
"""
from dataclasses import dataclass

import numpy as np

from diptv.autodiff import functional as F
from diptv.autodiff.tensor import Function, Tensor

SUPPORTED_CHANNELS = (1, 3)


def forward_difference_array(x, axis):
    return np.diff(x, axis=axis, append=np.take(x, [-1], axis=axis))


def forward_difference_adjoint_array(g, axis):
    n = g.shape[axis]
    inner = np.take(g, np.arange(n - 1), axis=axis)
    zero = g.dtype.type(0)
    return -np.diff(inner, axis=axis, prepend=zero, append=zero)


class ForwardDifference(Function):
    @staticmethod
    def forward(ctx, x, axis):
        ctx.axis = axis
        return forward_difference_array(x, axis)

    @staticmethod
    def backward(ctx, grad_output):
        return forward_difference_adjoint_array(grad_output, ctx.axis), None


@dataclass(frozen=True)
class DiffOperator:
    name: str
    axis: int
    boundary: str = "replicate"

    def __call__(self, x):
        return ForwardDifference.apply(x, self.axis)

    def adjoint(self, g):
        return Tensor(_explicit_adjoint(np.asarray(getattr(g, "data", g)), self.axis))


D1 = DiffOperator("d1", axis=-2)
D2 = DiffOperator("d2", axis=-1)


def d1(x):
    return D1(x)


def d2(x):
    return D2(x)


def _explicit_adjoint(g, axis):
    # (D^T g)[i] = g[i-1] - g[i], with g[-1] and g[n-1] treated as zero
    g = np.moveaxis(g, axis, -1)
    zero = np.zeros(g.shape[:-1] + (1,), dtype=g.dtype)
    shifted = np.concatenate([zero, g[..., :-1]], axis=-1)
    own = np.concatenate([g[..., :-1], zero], axis=-1)
    return np.moveaxis(shifted - own, -1, axis)


def d1_adjoint(g):
    return D1.adjoint(g)


def d2_adjoint(g):
    return D2.adjoint(g)


def _check_image(shape):
    if len(shape) != 4:
        raise ValueError(f"TV expects a (1, C, H, W) image, got shape {shape}")
    if shape[1] not in SUPPORTED_CHANNELS:
        raise ValueError(
            f"TV supports {SUPPORTED_CHANNELS} channels, got {shape[1]}"
        )


def tv_aniso(x, eps=1e-6):
    """
    Sum over pixels and channels of |D1 x| + |D2 x|, Charbonnier-smoothed.

    Color images are handled as the sum of per-channel variations.

    :param x: Tensor of shape (1, C, H, W) with C in {1, 3}
    :param eps: smoothing, 0 gives the exact absolute value
    :return: scalar Tensor
    """
    _check_image(tuple(x.shape))
    return F.sum(F.charbonnier_abs(d1(x), eps)) + F.sum(F.charbonnier_abs(d2(x), eps))


def tv_aniso_value(x):
    """Exact (eps = 0) variation of a raw array, as a float."""
    x = np.asarray(getattr(x, "data", x), dtype=np.float64)
    return float(np.abs(np.diff(x, axis=-2)).sum() + np.abs(np.diff(x, axis=-1)).sum())


def tv_grad_oracle(x, eps):
    """
    Gradient of tv_aniso assembled from explicit D1^T, D2^T and the
    Charbonnier derivative t / sqrt(t^2 + eps^2).
    """
    if eps <= 0:
        raise ValueError(f"TV gradient oracle needs eps > 0, got {eps}")
    x = np.asarray(getattr(x, "data", x), dtype=np.float64)
    _check_image(x.shape)
    grad = np.zeros_like(x)
    for axis in (-2, -1):
        t = np.zeros_like(x)
        n = x.shape[axis]
        diff = np.diff(x, axis=axis)
        index = [slice(None)] * x.ndim
        index[axis] = slice(0, n - 1)
        t[tuple(index)] = diff
        grad += _explicit_adjoint(t / np.sqrt(t * t + eps * eps), axis)
    return Tensor(grad)
