"""Convolution blocks, residual blocks and weight initialization."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import autograd as ag
from .autograd import ShapeError, Tensor

ACTIVATIONS = ("leaky_relu", "relu", "tanh", "none")
LEAKY_SLOPE = 0.2
INIT_STD = 0.02


class Module:
    """Minimal parameter container.

    Parameters and sub-modules are discovered from instance attributes in
    insertion order, so ``named_parameters`` is deterministic.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator[Module]:
        yield self
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0
    transposed: bool = False
    output_padding: int = 0
    use_norm: bool = False
    activation: str = "none"
    bias: bool | None = None  # default: bias only when no norm follows

    def __post_init__(self):
        for field in ("in_channels", "out_channels", "kernel", "stride"):
            if getattr(self, field) < 1:
                raise ValueError(f"ConvSpec.{field} must be positive, got {getattr(self, field)}")
        if self.padding < 0:
            raise ValueError(f"ConvSpec.padding must be non-negative, got {self.padding}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; expected one of {ACTIVATIONS}")
        if self.output_padding and not self.transposed:
            raise ValueError("output_padding only applies to transposed convolutions")

    @property
    def has_bias(self) -> bool:
        return (not self.use_norm) if self.bias is None else self.bias

    def output_size(self, size: int) -> int:
        k, s, p = self.kernel, self.stride, self.padding
        if self.transposed:
            return (size - 1) * s - 2 * p + k + self.output_padding
        return (size + 2 * p - k) // s + 1


class ConvBlock(Module):
    """convolution -> optional instance norm -> activation"""

    def __init__(self, spec: ConvSpec, dtype=np.float32):
        self._spec = spec
        if spec.transposed:
            shape = (spec.in_channels, spec.out_channels, spec.kernel, spec.kernel)
        else:
            shape = (spec.out_channels, spec.in_channels, spec.kernel, spec.kernel)
        self.weight = Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(spec.out_channels, dtype=dtype), requires_grad=True) if spec.has_bias else None

    @property
    def spec(self) -> ConvSpec:
        return self._spec

    def forward(self, x: Tensor) -> Tensor:
        return conv_block_forward(self, x)


def init_weights(layer: ConvBlock, seed) -> None:
    """Draw weights from N(0, 0.02) with a generator local to this call; zero the bias.

    ``seed`` may be an int or anything ``numpy.random.default_rng`` accepts.
    """
    rng = np.random.default_rng(seed)
    w = layer.weight
    w.data = rng.normal(0.0, INIT_STD, size=w.shape).astype(w.dtype)
    if layer.bias is not None:
        layer.bias.data = np.zeros_like(layer.bias.data)


def conv_block_forward(block: ConvBlock, x: Tensor) -> Tensor:
    spec = block.spec
    if x.ndim != 4 or x.shape[1] != spec.in_channels:
        got = x.shape[1] if x.ndim == 4 else x.shape
        raise ShapeError("conv_block", f"expected {spec.in_channels} input channels, got {got}")
    if spec.transposed:
        h = ag.conv_transpose2d(x, block.weight, block.bias, stride=spec.stride,
                                padding=spec.padding, output_padding=spec.output_padding)
    else:
        h = ag.conv2d(x, block.weight, block.bias, stride=spec.stride, padding=spec.padding)
    if spec.use_norm:
        h = ag.instance_norm(h)
    return activate(h, spec.activation)


def activate(x: Tensor, activation: str) -> Tensor:
    if activation == "leaky_relu":
        return ag.leaky_relu(x, LEAKY_SLOPE)
    if activation == "relu":
        return ag.relu(x)
    if activation == "tanh":
        return ag.tanh(x)
    return x


class ResidualBlock(Module):
    """x + F(x), F = conv3-norm-relu-conv3-norm, channel preserving."""

    def __init__(self, channels: int, dtype=np.float32):
        self.conv1 = ConvBlock(ConvSpec(channels, channels, 3, 1, 1, use_norm=True, activation="relu"), dtype)
        self.conv2 = ConvBlock(ConvSpec(channels, channels, 3, 1, 1, use_norm=True, activation="none"), dtype)

    @property
    def channels(self) -> int:
        return self.conv1.spec.in_channels

    def forward(self, x: Tensor) -> Tensor:
        return residual_forward(self, x)


def residual_forward(block: ResidualBlock, x: Tensor) -> Tensor:
    if x.ndim != 4 or x.shape[1] != block.channels:
        raise ShapeError("residual", f"block has {block.channels} channels, input shape is {x.shape}")
    return x + block.conv2(block.conv1(x))
