"""
Stateless layers whose parameters live in a ParamStore under dotted names.

Each layer declares its parameters through `init_parameters(rng, dtype)` and
evaluates with `layer(params, x)`, so one network description serves any
parameter values (restoration steps, gradient checks).
"""
from collections import OrderedDict

import numpy as np

from diptv.autodiff import functional as F


class Layer:
    def init_parameters(self, rng, dtype):
        return OrderedDict()

    def __call__(self, params, x):
        raise NotImplementedError


class Conv2d(Layer):
    """Convolution with bias, fan-in scaled uniform init U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""

    def __init__(self, name, in_channels, out_channels, kernel_size, stride=1, padding="reflect"):
        self.name = name
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding

    def init_parameters(self, rng, dtype):
        k = self.kernel_size
        bound = 1 / np.sqrt(self.in_channels * k * k)
        weight = rng.uniform(-bound, bound, (self.out_channels, self.in_channels, k, k))
        bias = rng.uniform(-bound, bound, self.out_channels)
        return OrderedDict(
            [
                (f"{self.name}.weight", weight.astype(dtype)),
                (f"{self.name}.bias", bias.astype(dtype)),
            ]
        )

    def __call__(self, params, x):
        return F.conv2d(
            x,
            params[f"{self.name}.weight"],
            params[f"{self.name}.bias"],
            stride=self.stride,
            padding=self.padding,
        )

    def __repr__(self):
        return (
            f"Conv2d({self.name}: {self.in_channels}->{self.out_channels}, "
            f"k={self.kernel_size}, stride={self.stride})"
        )


class BatchNorm2d(Layer):
    def __init__(self, name, channels, eps=1e-5):
        self.name = name
        self.channels = channels
        self.eps = eps

    def init_parameters(self, rng, dtype):
        return OrderedDict(
            [
                (f"{self.name}.gamma", np.ones(self.channels, dtype=dtype)),
                (f"{self.name}.beta", np.zeros(self.channels, dtype=dtype)),
            ]
        )

    def __call__(self, params, x):
        return F.batch_norm(
            x, params[f"{self.name}.gamma"], params[f"{self.name}.beta"], self.eps
        )

    def __repr__(self):
        return f"BatchNorm2d({self.name}: {self.channels})"


class LeakyReLU(Layer):
    def __init__(self, slope):
        self.slope = slope

    def __call__(self, params, x):
        return F.leaky_relu(x, self.slope)


class Sigmoid(Layer):
    def __call__(self, params, x):
        return F.sigmoid(x)


class Upsample(Layer):
    def __init__(self, factor, mode):
        self.factor = factor
        self.mode = mode

    def __call__(self, params, x):
        return F.upsample(x, self.factor, self.mode)


class Sequential(Layer):
    def __init__(self, layers):
        self.layers = list(layers)

    def init_parameters(self, rng, dtype):
        params = OrderedDict()
        for layer in self.layers:
            for name, value in layer.init_parameters(rng, dtype).items():
                assert name not in params, f"Duplicate parameter name {name}"
                params[name] = value
        return params

    def __call__(self, params, x):
        for layer in self.layers:
            x = layer(params, x)
        return x

    def modules(self):
        """Depth-first iterator over all leaf layers."""
        for layer in self.layers:
            if isinstance(layer, (Sequential, Concat)):
                yield from layer.modules()
            else:
                yield layer


class Concat(Layer):
    """Evaluates branches on the same input and stacks them along channels."""

    def __init__(self, *branches):
        self.branches = branches

    def init_parameters(self, rng, dtype):
        params = OrderedDict()
        for branch in self.branches:
            params.update(branch.init_parameters(rng, dtype))
        return params

    def __call__(self, params, x):
        return F.concat([branch(params, x) for branch in self.branches], axis=1)

    def modules(self):
        for branch in self.branches:
            yield from branch.modules()
