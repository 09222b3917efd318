"""
Forward models y = Hx + e: identity and blur operators with exact adjoints,
additive white Gaussian noise and noise-level calibration from a target SNR.

Pixel values handed to add_awgn and measure are on the [0, 255] scale.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from diptv.autodiff import functional as F
from diptv.autodiff.functional import (
    correlate_array,
    correlate_array_adjoint,
    pad_array,
    pad_array_adjoint,
)
from diptv.autodiff.tensor import Function, Tensor, as_tensor

BOUNDARY = "replicate"


class KernelFormatError(ValueError):
    def __init__(self, message, line):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True, eq=False)
class Kernel:
    taps: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        taps = np.array(self.taps, dtype=np.float64)
        if taps.ndim != 2:
            raise ValueError(f"Kernel taps must be 2D, got shape {taps.shape}")
        if taps.shape[0] % 2 == 0 or taps.shape[1] % 2 == 0:
            raise ValueError(f"Kernel dims must be odd, got {taps.shape}")
        taps.flags.writeable = False
        object.__setattr__(self, "taps", taps)

    @property
    def shape(self):
        return self.taps.shape


def gaussian_kernel(std, size):
    """Sampled isotropic Gaussian of odd size, normalized to sum 1."""
    if std <= 0:
        raise ValueError(f"Gaussian std must be positive, got {std}")
    if int(size) != size or size < 3 or size % 2 == 0:
        raise ValueError(f"Gaussian kernel size must be an odd int >= 3, got {size}")
    r = np.arange(size) - size // 2
    g = np.exp(-(r ** 2) / (2 * std ** 2))
    taps = np.outer(g, g)
    return Kernel(taps / taps.sum(), normalized=True)


def _parse_kernel_rows(lines):
    rows = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            row = [float(v) for v in line.split()]
        except ValueError:
            raise KernelFormatError(f"non-numeric entry in {line.strip()!r}", lineno)
        if not all(np.isfinite(row)):
            raise KernelFormatError("non-finite entry", lineno)
        if rows and len(row) != len(rows[0][1]):
            raise KernelFormatError(
                f"expected {len(rows[0][1])} columns, found {len(row)}", lineno
            )
        rows.append((lineno, row))
    return rows


def load_kernel(path):
    """
    Read a plain-text kernel, one row per line, whitespace-separated floats.

    The taps are normalized to sum 1; a sum deviating from 1 by more than 1e-6
    is reported as a warning.
    """
    with open(path, encoding="utf-8") as f:
        rows = _parse_kernel_rows(f.read().splitlines())
    if not rows:
        raise KernelFormatError("empty kernel file", 1)
    if len(rows) % 2 == 0:
        raise KernelFormatError(f"even number of rows ({len(rows)})", rows[-1][0])
    if len(rows[0][1]) % 2 == 0:
        raise KernelFormatError(f"even number of columns ({len(rows[0][1])})", rows[0][0])

    taps = np.array([row for _, row in rows], dtype=np.float64)
    total = taps.sum()
    if total == 0:
        raise KernelFormatError("taps sum to zero", rows[-1][0])
    if abs(total - 1) > 1e-6:
        logging.warning(f"Kernel {path} sums to {total:.6g}, normalizing")
    return Kernel(taps / total, normalized=True)


@dataclass(frozen=True, eq=False)
class DegradationOperator:
    """
    Linear forward map H. `source` records how the kernel was obtained so the
    operator can be re-created from a sidecar.
    """

    kind: str
    kernel: Optional[Kernel] = None
    source: dict = field(default_factory=dict)
    boundary: str = BOUNDARY

    def __post_init__(self):
        if self.kind not in ("identity", "blur"):
            raise ValueError(f"Unknown operator kind {self.kind}")
        if (self.kind == "blur") != (self.kernel is not None):
            raise ValueError("A blur operator needs a kernel and identity none")

    @classmethod
    def identity(cls):
        return cls("identity")

    @classmethod
    def blur(cls, kernel, source=None):
        return cls("blur", kernel, dict(source or {}))

    @property
    def is_identity(self):
        return self.kind == "identity"

    def describe(self):
        if self.is_identity:
            return "identity"
        if "gaussian" in self.source:
            g = self.source["gaussian"]
            return f"gaussian:{g['std']:g},{g['size']}"
        if "kernel_path" in self.source:
            return f"kernel:{self.source['kernel_path']}"
        return "blur:{}x{}".format(*self.kernel.shape)

    def to_dict(self):
        if self.is_identity:
            return {"kind": "identity"}
        if self.source:
            return {"kind": "blur", **self.source}
        return {"kind": "blur", "taps": self.kernel.taps.tolist()}

    @classmethod
    def from_dict(cls, d):
        kind = d.get("kind")
        if kind == "identity":
            return cls.identity()
        if kind != "blur":
            raise ValueError(f"Unknown operator kind {kind!r}")
        if "gaussian" in d:
            g = d["gaussian"]
            return cls.blur(gaussian_kernel(g["std"], g["size"]), {"gaussian": dict(g)})
        if "kernel_path" in d:
            return cls.blur(load_kernel(d["kernel_path"]), {"kernel_path": d["kernel_path"]})
        if "taps" in d:
            return cls.blur(Kernel(d["taps"]))
        raise ValueError("Blur operator needs one of gaussian, kernel_path, taps")

    def norm_bound(self, shape):
        """
        Upper bound sqrt(||H||_1 ||H||_inf) of the spectral norm on images of
        spatial shape (H, W).
        """
        if self.is_identity:
            return 1.0
        h, w = shape[-2:]
        taps = np.abs(self.kernel.taps)
        ph, pw = taps.shape[0] // 2, taps.shape[1] // 2
        ones = np.ones((1, 1, h, w))
        columns = _blur_adjoint_array(ones, taps, ph, pw)
        return float(np.sqrt(columns.max() * taps.sum()))


def _blur_array(x, taps, ph, pw):
    return correlate_array(pad_array(x, ph, pw, BOUNDARY), taps[None, None])


def _blur_adjoint_array(y, taps, ph, pw):
    padded_shape = y.shape[:2] + (y.shape[2] + 2 * ph, y.shape[3] + 2 * pw)
    g = correlate_array_adjoint(y, taps[None, None], padded_shape)
    return pad_array_adjoint(g, y.shape, ph, pw, BOUNDARY)


class BlurAdjoint(Function):
    """H^T on (N, 1, H, W): transposed correlation folded back through the padding."""

    @staticmethod
    def forward(ctx, y, taps):
        ctx.save_for_backward(taps)
        return _blur_adjoint_array(y, taps, taps.shape[0] // 2, taps.shape[1] // 2)

    @staticmethod
    def backward(ctx, grad_output):
        taps, = ctx.saved_tensors
        return _blur_array(grad_output, taps, taps.shape[0] // 2, taps.shape[1] // 2), None


def _check_spatial(op, shape):
    if len(shape) != 4:
        raise ValueError(f"Operators act on (B, C, H, W) tensors, got shape {shape}")
    kh, kw = op.kernel.shape
    if shape[2] < kh or shape[3] < kw:
        raise ValueError(f"Image {shape[2:]} smaller than kernel {kh}x{kw}")


def apply(op, x):
    """Hx; correlation with replicate padding, shape preserving."""
    x = as_tensor(x)
    if op.is_identity:
        return x
    _check_spatial(op, x.shape)
    b, c, h, w = x.shape
    taps = op.kernel.taps.astype(x.dtype)
    out = F.conv2d(F.reshape(x, (b * c, 1, h, w)), taps[None, None], padding=BOUNDARY)
    return F.reshape(out, (b, c, h, w))


def adjoint(op, y):
    """H^T y, the exact transpose of apply."""
    y = as_tensor(y)
    if op.is_identity:
        return y
    _check_spatial(op, y.shape)
    b, c, h, w = y.shape
    taps = op.kernel.taps.astype(y.dtype)
    out = BlurAdjoint.apply(F.reshape(y, (b * c, 1, h, w)), taps)
    return F.reshape(out, (b, c, h, w))


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float
    seed: int = 0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError(f"Noise sigma must be >= 0, got {self.sigma}")


def add_awgn(x, spec):
    """x + sigma * g with g standard normal from the seeded generator; no clipping."""
    x = as_tensor(x)
    if spec.sigma == 0:
        return Tensor(x.data)
    noise = np.random.default_rng(spec.seed).standard_normal(x.shape)
    return Tensor(x.data + spec.sigma * noise, dtype=x.dtype)


def sigma_for_input_snr(x, target_snr_db):
    """Noise std giving an expected SNR of target_snr_db against the clean x."""
    x = np.asarray(getattr(x, "data", x), dtype=np.float64)
    norm = np.linalg.norm(x)
    if norm == 0:
        raise ValueError("Cannot calibrate noise against an all-zero image")
    return float(norm / (np.sqrt(x.size) * 10 ** (target_snr_db / 20)))


def measure(x, op, noise):
    """Degraded measurement H x + e of a [0, 255]-scaled image."""
    return add_awgn(apply(op, x).detach(), noise)


def parse_operator_spec(spec):
    """
    Operator from a command-line descriptor.

    :param spec: 'none', 'identity', 'gaussian:<std>,<size>' or a kernel file path
    """
    if spec in ("none", "identity"):
        return DegradationOperator.identity()
    if spec.startswith("gaussian:"):
        try:
            std, size = spec[len("gaussian:") :].split(",")
            std, size = float(std), int(size)
        except ValueError:
            raise ValueError(f"Expected gaussian:<std>,<size>, got {spec!r}")
        return DegradationOperator.blur(
            gaussian_kernel(std, size), {"gaussian": {"std": std, "size": size}}
        )
    return DegradationOperator.blur(load_kernel(spec), {"kernel_path": spec})
