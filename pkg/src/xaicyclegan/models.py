"""Mask-encoding generator, patch discriminator and mask discriminator."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import ShapeError, Tensor
from .nn import ConvBlock, ConvSpec, Module, ResidualBlock, init_weights

COMPOSITE_MODES = ("blend", "add")


@dataclass(frozen=True)
class GeneratorConfig:
    ngf: int = 8
    num_resnet: int = 2
    image_channels: int = 3
    image_size: int = 16

    def __post_init__(self):
        if self.image_size % 8 or self.image_size < 16:
            raise ValueError(f"image_size must be a multiple of 8 and at least 16, got {self.image_size}")
        if self.ngf < 4:
            raise ValueError(f"ngf must be at least 4, got {self.ngf}")
        if self.num_resnet < 0:
            raise ValueError(f"num_resnet must be non-negative, got {self.num_resnet}")
        if self.image_channels < 1:
            raise ValueError(f"image_channels must be positive, got {self.image_channels}")


def _batched(x: Tensor, ndim: int = 4) -> tuple[Tensor, bool]:
    if x.ndim == ndim - 1:
        return ag.slice_(x, (None,)), True
    return x, False


class Generator(Module):
    def __init__(self, cfg: GeneratorConfig, dtype=np.float32, composite: str = "blend"):
        if composite not in COMPOSITE_MODES:
            raise ValueError(f"composite must be one of {COMPOSITE_MODES}, got {composite!r}")
        c, ngf = cfg.image_channels, cfg.ngf
        self._cfg = cfg
        self._composite = composite
        # mask first, inverted mask second
        self.mask_enc = ConvBlock(ConvSpec(c + 1, c, 1), dtype)
        self.inv_mask_enc = ConvBlock(ConvSpec(c + 1, c, 1), dtype)
        self.initial = ConvBlock(ConvSpec(c, ngf, 7, 1, 3, activation="leaky_relu"), dtype)
        self.down = [
            ConvBlock(ConvSpec(ngf * m, ngf * m * 2, 3, 2, 1, use_norm=True, activation="leaky_relu"), dtype)
            for m in (1, 2, 4)
        ]
        self.res = [ResidualBlock(ngf * 8, dtype) for _ in range(cfg.num_resnet)]
        self.up = [
            ConvBlock(ConvSpec(ngf * m * 2, ngf * m, 3, 2, 1, transposed=True, output_padding=1,
                               activation="relu"), dtype)
            for m in (4, 2, 1)
        ]
        self.final = ConvBlock(ConvSpec(ngf, c, 7, 1, 3, activation="tanh"), dtype)

    @property
    def config(self) -> GeneratorConfig:
        return self._cfg

    @property
    def composite(self) -> str:
        return self._composite

    def forward(self, image: Tensor, mask: Tensor) -> Tensor:
        return generator_forward(self, image, mask)


class Discriminator(Module):
    """Patch critic alternating stride-2 k4 halvings with k7 feature layers."""

    def __init__(self, ndf: int = 8, image_channels: int = 3, dtype=np.float32):
        if ndf < 1:
            raise ValueError(f"ndf must be positive, got {ndf}")
        self._ndf = ndf
        self.layers = [
            ConvBlock(ConvSpec(image_channels, ndf, 4, 2, 1, activation="leaky_relu"), dtype),
            ConvBlock(ConvSpec(ndf, ndf, 7, 1, 3, activation="leaky_relu"), dtype),
            ConvBlock(ConvSpec(ndf, ndf * 2, 4, 2, 1, activation="leaky_relu"), dtype),
            ConvBlock(ConvSpec(ndf * 2, ndf * 2, 7, 1, 3, use_norm=True, activation="leaky_relu"), dtype),
            ConvBlock(ConvSpec(ndf * 2, ndf * 4, 4, 2, 1, activation="leaky_relu"), dtype),
        ]
        self.head = ConvBlock(ConvSpec(ndf * 4, 1, 1), dtype)

    @property
    def ndf(self) -> int:
        return self._ndf

    def forward(self, image: Tensor) -> Tensor:
        return discriminator_forward(self, image)


class MaskDiscriminator(Discriminator):
    """Same topology as :class:`Discriminator`, independent parameters."""


def _init_all(model: Module, seed: int) -> None:
    for i, block in enumerate(m for m in model.modules() if isinstance(m, ConvBlock)):
        init_weights(block, (seed, i))


def _pass_through_image(block: ConvBlock) -> None:
    # image channels start as identity so the soft mask is near-transparent
    w = block.weight.data
    c = w.shape[0]
    w[:, :c, 0, 0] += np.eye(c, dtype=w.dtype)


def build_generator(cfg: GeneratorConfig, seed: int, dtype=np.float32, composite: str = "blend") -> Generator:
    if cfg.image_size % 8:
        raise ValueError(f"image_size must be divisible by 8, got {cfg.image_size}")
    g = Generator(cfg, dtype=dtype, composite=composite)
    _init_all(g, seed)
    _pass_through_image(g.mask_enc)
    _pass_through_image(g.inv_mask_enc)
    return g


def build_discriminator(ndf: int, seed: int, dtype=np.float32, mask: bool = False) -> Discriminator:
    d = (MaskDiscriminator if mask else Discriminator)(ndf, dtype=dtype)
    _init_all(d, seed)
    return d


def generator_forward(g: Generator, image: Tensor, mask: Tensor) -> Tensor:
    """Translate ``image`` (NCHW or CHW) under soft ``mask`` (N1HW or 1HW)."""
    image, squeeze = _batched(image)
    mask, _ = _batched(mask)
    if image.ndim != 4 or mask.ndim != 4:
        raise ShapeError("generator", f"bad ranks: image {image.shape}, mask {mask.shape}")
    if image.shape[2:] != mask.shape[2:] or image.shape[0] != mask.shape[0] or mask.shape[1] != 1:
        raise ShapeError("generator", f"mask {mask.shape} does not match image {image.shape}")
    h, w = image.shape[2:]
    if h % 8 or w % 8:
        raise ShapeError("generator", f"spatial dims {h}x{w} must be divisible by 8")

    inv = 1.0 - mask
    h1 = g.mask_enc(ag.concat([image, mask], axis=1))
    h2 = g.inv_mask_enc(ag.concat([h1, inv], axis=1))

    skips = [g.initial(h2)]
    for block in g.down:
        skips.append(block(skips[-1]))
    z = skips.pop()
    for block in g.res:
        z = block(z)
    for block in g.up:
        z = block(z) + skips.pop()
    gen = g.final(z)

    if g.composite == "blend":
        out = gen * mask + image * inv
    else:
        out = gen + inv
    return out[0] if squeeze else out


def discriminator_forward(d: Discriminator, image: Tensor) -> Tensor:
    image, squeeze = _batched(image)
    if image.ndim != 4:
        raise ShapeError("discriminator", f"expected CHW or NCHW input, got {image.shape}")
    h, w = image.shape[2:]
    if h % 8 or w % 8:
        raise ShapeError("discriminator", f"spatial dims {h}x{w} must be divisible by 8")
    x = image
    for block in d.layers:
        x = block(x)
    out = d.head(x)
    return out[0] if squeeze else out
