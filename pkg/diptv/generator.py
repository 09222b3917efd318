"""
Untrained encoder-decoder f(theta, z) with convolutional skip connections.

Level i of the network, applied to the level input u:

    concat(skip(u), deeper(u)) -> BN -> conv(k_up) -> BN -> act -> conv 1x1 -> BN -> act

    skip(u)   = conv(k_skip) -> BN -> act                      (n_s[i] > 0 only)
    deeper(u) = conv(k_down, stride 2) -> BN -> act -> conv(k_down) -> BN -> act
                -> level i + 1 (if any) -> upsample x2

followed at the top by a 1x1 conv and a sigmoid.
"""
from collections import OrderedDict
from dataclasses import asdict, dataclass, fields

import numpy as np

from diptv.autodiff.functional import UPSAMPLE_MODES
from diptv.autodiff.tensor import Tensor
from diptv.utils.modules import (
    BatchNorm2d,
    Concat,
    Conv2d,
    LeakyReLU,
    Sequential,
    Sigmoid,
    Upsample,
)
from diptv.utils.numerical import rng_streams

TASKS = ("denoise", "deblur")
INPUT_NAME = "input"


@dataclass(frozen=True)
class GeneratorConfig:
    depth: int = 5
    channels_down: tuple = (128,) * 5
    channels_up: tuple = (128,) * 5
    skip_channels: tuple = (4,) * 5
    kernel_down: int = 3
    kernel_up: int = 3
    kernel_skip: int = 1
    upsample_mode: str = "bilinear"
    activation_slope: float = 0.1
    input_channels: int = 32
    input_amplitude: float = 0.1
    optimize_input: bool = False
    output_channels: int = 1
    seed: int = 0
    padding: str = "reflect"

    def __post_init__(self):
        for name in ("channels_down", "channels_up", "skip_channels"):
            value = tuple(int(c) for c in getattr(self, name))
            object.__setattr__(self, name, value)
            if len(value) != self.depth:
                raise ValueError(f"{name} has {len(value)} entries, depth is {self.depth}")
        if self.depth < 1:
            raise ValueError(f"Depth must be >= 1, got {self.depth}")
        if min(self.channels_down) < 1 or min(self.channels_up) < 1:
            raise ValueError("Down and up levels need at least one channel")
        if min(self.skip_channels) < 0:
            raise ValueError("Skip channel counts must be >= 0")
        for name in ("kernel_down", "kernel_up", "kernel_skip"):
            k = getattr(self, name)
            if k < 1 or k % 2 == 0:
                raise ValueError(f"{name} must be a positive odd int, got {k}")
        if self.upsample_mode not in UPSAMPLE_MODES:
            raise ValueError(f"Unknown upsampling mode {self.upsample_mode}")
        if not 0 < self.activation_slope < 1:
            raise ValueError(f"Activation slope must lie in (0, 1), got {self.activation_slope}")
        if self.input_channels < 1 or self.input_amplitude <= 0:
            raise ValueError("Input needs >= 1 channel and a positive amplitude")
        if self.output_channels not in (1, 3):
            raise ValueError(f"Output channels must be 1 or 3, got {self.output_channels}")

    def to_dict(self):
        d = asdict(self)
        for name in ("channels_down", "channels_up", "skip_channels"):
            d[name] = list(d[name])
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"Unknown generator keys: {sorted(unknown)}")
        return cls(**d)


def default_configs(task, output_channels=1):
    """Reference DIP architecture; 4 skip channels for denoising, 128 for deblurring."""
    if task not in TASKS:
        raise ValueError(f"Unknown task {task}, expected one of {TASKS}")
    skip = 4 if task == "denoise" else 128
    return GeneratorConfig(skip_channels=(skip,) * 5, output_channels=output_channels)


def _level(config, i, in_channels):
    c = config
    act = LeakyReLU(c.activation_slope)
    prefix = f"level{i}"
    down = c.channels_down[i]
    deeper = [
        Conv2d(f"{prefix}.down.conv1", in_channels, down, c.kernel_down, 2, c.padding),
        BatchNorm2d(f"{prefix}.down.bn1", down),
        act,
        Conv2d(f"{prefix}.down.conv2", down, down, c.kernel_down, 1, c.padding),
        BatchNorm2d(f"{prefix}.down.bn2", down),
        act,
    ]
    if i < c.depth - 1:
        deeper.append(_level(c, i + 1, down))
        k = c.channels_up[i + 1]
    else:
        k = down
    deeper.append(Upsample(2, c.upsample_mode))

    n_s = c.skip_channels[i]
    if n_s > 0:
        skip = Sequential(
            [
                Conv2d(f"{prefix}.skip.conv", in_channels, n_s, c.kernel_skip, 1, c.padding),
                BatchNorm2d(f"{prefix}.skip.bn", n_s),
                act,
            ]
        )
        layers = [Concat(skip, Sequential(deeper))]
    else:
        layers = [Sequential(deeper)]

    up = c.channels_up[i]
    layers += [
        BatchNorm2d(f"{prefix}.up.bn0", n_s + k),
        Conv2d(f"{prefix}.up.conv1", n_s + k, up, c.kernel_up, 1, c.padding),
        BatchNorm2d(f"{prefix}.up.bn1", up),
        act,
        Conv2d(f"{prefix}.up.conv2", up, up, 1, 1, c.padding),
        BatchNorm2d(f"{prefix}.up.bn2", up),
        act,
    ]
    return Sequential(layers)


def build_network(config):
    return Sequential(
        [
            _level(config, 0, config.input_channels),
            Conv2d("head.conv", config.channels_up[0], config.output_channels, 1, 1, config.padding),
            Sigmoid(),
        ]
    )


def count_parameters(config, output_channels=None):
    """Closed-form size of theta, summed level by level."""
    out = config.output_channels if output_channels is None else output_channels

    def conv(c_out, c_in, k):
        return c_out * c_in * k * k + c_out

    total = 0
    in_channels = config.input_channels
    for i in range(config.depth):
        down, up, n_s = config.channels_down[i], config.channels_up[i], config.skip_channels[i]
        k = config.channels_up[i + 1] if i < config.depth - 1 else down
        total += conv(down, in_channels, config.kernel_down) + 2 * down
        total += conv(down, down, config.kernel_down) + 2 * down
        if n_s:
            total += conv(n_s, in_channels, config.kernel_skip) + 2 * n_s
        total += 2 * (n_s + k)
        total += conv(up, n_s + k, config.kernel_up) + 2 * up
        total += conv(up, up, 1) + 2 * up
        in_channels = down
    return total + conv(out, config.channels_up[0], 1)


class ParamStore:
    """Ordered, immutable map from layer path to grad-tracked Tensor."""

    def __init__(self, tensors):
        self._tensors = OrderedDict(tensors)

    def __getitem__(self, name):
        return self._tensors[name]

    def __contains__(self, name):
        return name in self._tensors

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self):
        return len(self._tensors)

    def names(self):
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def num_parameters(self):
        return sum(t.size for t in self._tensors.values())

    def replace(self, updates):
        """New store with some entries swapped; names and shapes must match."""
        tensors = OrderedDict(self._tensors)
        for name, value in updates.items():
            if name not in tensors:
                raise ValueError(f"Unknown parameter {name}")
            old = tensors[name]
            if not isinstance(value, Tensor):
                value = Tensor(value, requires_grad=True, dtype=old.dtype)
            if value.shape != old.shape:
                raise ValueError(f"Parameter {name}: shape {value.shape} != {old.shape}")
            tensors[name] = value
        return ParamStore(tensors)

    def to_dict(self):
        return OrderedDict((name, t.data) for name, t in self._tensors.items())


class Generator:
    def __init__(self, config, network, params, input):
        self.config = config
        self.network = network
        self.params = params
        self.input = input

    @property
    def output_shape(self):
        return (1, self.config.output_channels) + self.input.shape[2:]

    def forward(self):
        return self.network(self.params, self.input)

    def trainable(self):
        """Tensors optimized during restoration: theta, plus z when optimize_input."""
        values = OrderedDict(self.params.items())
        if self.config.optimize_input:
            values[INPUT_NAME] = self.input
        return values

    def with_params(self, values):
        """Generator sharing the network, with some parameters (or z) replaced."""
        values = dict(values)
        z = values.pop(INPUT_NAME, self.input)
        if not isinstance(z, Tensor):
            z = Tensor(z, requires_grad=self.config.optimize_input, dtype=self.input.dtype)
        if z.shape != self.input.shape:
            raise ValueError(f"Input shape {z.shape} != {self.input.shape}")
        return Generator(self.config, self.network, self.params.replace(values), z)


def build_generator(config, image_height, image_width, dtype=np.float32):
    """
    Network, theta and z for an image of the given size. Theta and z come from
    separate streams of config.seed.
    """
    factor = 2 ** config.depth
    if image_height % factor or image_width % factor:
        raise ValueError(
            f"Image size {image_height}x{image_width} not divisible by {factor} (depth {config.depth})"
        )
    param_rng, input_rng = rng_streams(config.seed, 2)
    network = build_network(config)
    params = ParamStore(
        (name, Tensor(value, requires_grad=True, dtype=dtype))
        for name, value in network.init_parameters(param_rng, dtype).items()
    )
    z = input_rng.uniform(
        0, config.input_amplitude, (1, config.input_channels, image_height, image_width)
    )
    z = Tensor(z, requires_grad=config.optimize_input, dtype=dtype)
    return Generator(config, network, params, z)
