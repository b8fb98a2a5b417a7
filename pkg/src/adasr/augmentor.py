"""Sample-aware rotation augmentor.

Pixel-wise features of the low-resolution HSI are pooled to one vector, an
MLP maps it to a bounded angle, and the same rotation is applied to Y, Z and M.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    adaptive_avg_pool_to_1,
    as_tensor,
    leaky_relu,
    linear,
    reshape,
    rotate_bilinear,
    scalar_mul,
    tanh,
)

LEAK = 0.2


@dataclass
class AugmentedTriple:
    y: Tensor
    z: Tensor
    m: Tensor
    angle: float


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Augmentor:
    """Feature extractor ``C -> 16 -> 16`` (1x1 convs), MLP ``16 -> 8 -> 1``, scaled tanh.

    Every layer starts from a fan-in uniform draw. A zero last layer would put
    the first angle at exactly 0, where all bilinear taps sit on the pixel grid
    and the loss has a kink that traps the adversarial update.
    """

    def __init__(self, band_count: int, angle_range: float = np.pi / 4, seed: int = 0,
                 width: int = 16, hidden: int = 8):
        if angle_range < 0:
            raise ValueError("angle_range must be nonnegative")
        rng = np.random.default_rng(seed)
        self.band_count = band_count
        self.angle_range = float(angle_range)
        self.w1 = Tensor(_uniform(rng, band_count, (band_count, width)), requires_grad=True)
        self.b1 = Tensor(_uniform(rng, band_count, (width,)), requires_grad=True)
        self.w2 = Tensor(_uniform(rng, width, (width, width)), requires_grad=True)
        self.b2 = Tensor(_uniform(rng, width, (width,)), requires_grad=True)
        self.w3 = Tensor(_uniform(rng, width, (width, hidden)), requires_grad=True)
        self.b3 = Tensor(_uniform(rng, width, (hidden,)), requires_grad=True)
        self.w4 = Tensor(_uniform(rng, hidden, (hidden, 1)), requires_grad=True)
        self.b4 = Tensor(_uniform(rng, hidden, (1,)), requires_grad=True)

    def parameters(self) -> List[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3, self.w4, self.b4]

    def predict_angle(self, y: Tensor, frozen: bool = False) -> Tensor:
        """Scalar angle tensor in ``[-angle_range, angle_range]``."""
        if y.shape[-1] != self.band_count:
            raise ShapeError(f"augmentor expects {self.band_count} bands, got {y.shape[-1]}")
        p = [t.detach() for t in self.parameters()] if frozen else self.parameters()
        w1, b1, w2, b2, w3, b3, w4, b4 = p
        f = leaky_relu(linear(y, w1, b1), LEAK)
        f = leaky_relu(linear(f, w2, b2), LEAK)
        pooled = reshape(adaptive_avg_pool_to_1(f), (f.shape[-1],))
        h = leaky_relu(linear(pooled, w3, b3), LEAK)
        out = tanh(linear(h, w4, b4))
        return reshape(scalar_mul(out, self.angle_range), ())

    def augment(self, y: Tensor, z: Tensor, m: Tensor, frozen: bool = False) -> AugmentedTriple:
        check_triple(y, z, m)
        angle = self.predict_angle(y, frozen=frozen)
        return rotate_triple(y, z, m, angle)


def check_triple(y: Tensor, z: Tensor, m: Tensor) -> None:
    if y.data.ndim != 3 or z.data.ndim != 3 or m.data.ndim != 3:
        raise ShapeError("augment: Y, Z, M must be (W,H,C) cubes")
    if y.shape[:2] != m.shape[:2]:
        raise ShapeError(f"augment: Y {y.shape} and M {m.shape} differ spatially")
    if z.shape[2] != m.shape[2]:
        raise ShapeError(f"augment: Z {z.shape} and M {m.shape} differ in band count")
    W, H = z.shape[:2]
    w, h = y.shape[:2]
    if W % w or H % h or W // w != H // h:
        raise ShapeError(f"augment: Z {z.shape} is not an integer upscale of Y {y.shape}")


def rotate_triple(y: Tensor, z: Tensor, m: Tensor, angle) -> AugmentedTriple:
    """Rotate all three cubes by one shared ``angle`` (float or scalar tensor)."""
    angle = as_tensor(angle)
    return AugmentedTriple(
        y=rotate_bilinear(y, angle),
        z=rotate_bilinear(z, angle),
        m=rotate_bilinear(m, angle),
        angle=angle.item(),
    )


def replay(triple: AugmentedTriple, y, z, m) -> AugmentedTriple:
    """Recompute a triple from its recorded angle."""
    return rotate_triple(as_tensor(y), as_tensor(z), as_tensor(m), triple.angle)


def random_angle(rng: np.random.Generator, angle_range: float) -> float:
    return float(rng.uniform(-angle_range, angle_range))


__all__ = ["Augmentor", "AugmentedTriple", "rotate_triple", "replay", "random_angle", "check_triple"]
