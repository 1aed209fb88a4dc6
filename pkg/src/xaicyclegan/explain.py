"""Discriminator saliency, the lambda dampening curve, gradient masking and
input-mask composition."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autograd as ag
from .autograd import Tensor

SUPPRESS = 1
EXAGGERATE = -1
SIGNS = {"suppress": SUPPRESS, "exaggerate": EXAGGERATE}
MASK_RANGE = (0.0, 2.0)


@dataclass(frozen=True)
class ExplanationMap:
    """Per-pixel attribution in [0, 1], shape (N, 1, H, W) or (1, H, W)."""

    values: np.ndarray
    source: str = ""

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape


@dataclass(frozen=True)
class LambdaParams:
    gamma: int = 2
    alpha: float = 0.1

    def __post_init__(self):
        validate_gamma(self.gamma)
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")


def validate_gamma(gamma) -> int:
    if isinstance(gamma, bool) or int(gamma) != gamma or gamma <= 0 or int(gamma) % 2:
        raise ValueError(f"gamma must be a positive even integer, got {gamma!r}")
    return int(gamma)


def lambda_weight(x: float, gamma: int = 2) -> float:
    """Trust weight for a discriminator with loss ``x``: 1 at x=0, 0 from x=0.5 on."""
    validate_gamma(gamma)
    if x < 0:
        raise ValueError(f"discriminator loss must be non-negative, got {x}")
    return min(1.0, 4.0 * (min(0.5, float(x)) - 0.5) ** int(gamma))


def lambda_input(real_scores: np.ndarray, fake_scores: np.ndarray) -> float:
    """Mean absolute deviation of critic scores from their LSGAN targets.

    A perfect critic gives 0; one that answers 0.5 everywhere gives 0.5.
    """
    dev = np.concatenate([np.abs(np.ravel(real_scores) - 1.0), np.abs(np.ravel(fake_scores))])
    return float(dev.mean())


def _saliency(critic: Callable[[Tensor], Tensor], image, target: float, reduce: str):
    data = image.data if isinstance(image, Tensor) else np.asarray(image)
    squeeze = data.ndim == 3
    if squeeze:
        data = data[None]
    x = Tensor(data, requires_grad=True)
    scores = critic(x)
    # one score per sample (mean over the patch map), then squared error to the target
    loss = ag.mse(ag.mean(scores, axis=tuple(range(1, scores.ndim))), target)
    (g,) = ag.grad(loss, [x])
    if not np.isfinite(g).all():
        raise FloatingPointError("saliency gradient is not finite; the critic has likely diverged")
    mag = np.abs(g)
    if reduce == "max":
        raw = mag.max(axis=1, keepdims=True)
    elif reduce == "mean":
        raw = mag.mean(axis=1, keepdims=True)
    else:
        raise ValueError(f"unknown channel reduction {reduce!r}")
    peak = raw.max(axis=(1, 2, 3), keepdims=True)
    values = np.divide(raw, peak, out=np.zeros_like(raw), where=peak > 0)
    if squeeze:
        values = values[0]
    return values, scores.data


def compute_saliency(critic, image, target: float = 1.0, reduce: str = "max", source: str = "") -> ExplanationMap:
    """Saliency of ``critic`` at ``image``: |d MSE(mean(critic(image)), target) / d image|.

    Channels are collapsed with ``reduce`` and each sample is scaled so its
    largest entry is 1.  Only the input gradient is computed; the critic's
    parameters are neither read for gradients nor modified.
    """
    values, _ = _saliency(critic, image, target, reduce)
    return ExplanationMap(values, source)


def saliency_and_scores(critic, image, target: float = 1.0, reduce: str = "max", source: str = ""):
    """Like :func:`compute_saliency` but also returns the critic's raw scores."""
    values, scores = _saliency(critic, image, target, reduce)
    return ExplanationMap(values, source), scores


def _map_values(m) -> np.ndarray:
    return m.values if isinstance(m, ExplanationMap) else np.asarray(m)


def apply_gradient_mask(grad: np.ndarray, M, alpha: float, lambda_a: float) -> np.ndarray:
    """grad + alpha * (grad ⊙ (lambda_a * M)), M broadcast over channels."""
    m = _map_values(M)
    grad = np.asarray(grad)
    if m.shape[-2:] != grad.shape[-2:]:
        raise ag.ShapeError("apply_gradient_mask", f"map {m.shape} does not match gradient {grad.shape}")
    try:
        np.broadcast_shapes(m.shape, grad.shape)
    except ValueError:
        raise ag.ShapeError("apply_gradient_mask", f"map {m.shape} does not broadcast to {grad.shape}") from None
    scaled = (lambda_a * m).astype(grad.dtype, copy=False)
    return grad + alpha * (grad * scaled)


def gradient_mask_hook(M, alpha: float, lambda_a: float) -> Callable[[np.ndarray], np.ndarray]:
    def transform(g):
        return apply_gradient_mask(g, M, alpha, lambda_a)
    return transform


def compose_input_mask(noise, M_mask, lambda_b: float, sign: int | str = SUPPRESS) -> np.ndarray:
    """noise + sign * lambda_b * M, clipped to [0, 2]."""
    if isinstance(sign, str):
        sign = SIGNS[sign]
    if sign not in (SUPPRESS, EXAGGERATE):
        raise ValueError(f"sign must be +1 (suppress) or -1 (exaggerate), got {sign}")
    n = noise.data if isinstance(noise, Tensor) else np.asarray(noise)
    m = _map_values(M_mask)
    if m.shape != n.shape:
        raise ag.ShapeError("compose_input_mask", f"map {m.shape} does not match noise {n.shape}")
    scaled = (sign * lambda_b * m).astype(n.dtype, copy=False)
    return np.clip(n + scaled, *MASK_RANGE)
