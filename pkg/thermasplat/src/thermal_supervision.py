"""
Thermal supervision: the alignment maps that put RGB and thermal images into a shared [0, 1] space,
and the two-term thermal consistency loss built on them.
"""

from dataclasses import dataclass

import torch

from ..thermasplat import Utility, ValidationError

DEFAULT_GAMMA = 0.1


@dataclass
class AlignedGray:
    image: torch.Tensor  # (H, W) in [0, 1]
    low: torch.Tensor  # scalar used as the minimum
    high: torch.Tensor  # scalar used as the maximum

    @property
    def degenerate(self):
        return bool(self.high <= self.low)


def min_max_normalize(gray):
    """
    Affine map of a gray image onto [0, 1]; a constant image maps to zeros.

    The extremes are picked by argmin/argmax so the gradient reaches the first occurring extreme only.
    """
    flat = gray.reshape(-1)
    low = flat[torch.argmin(flat.detach())]
    high = flat[torch.argmax(flat.detach())]
    spread = high - low
    if float(spread.detach()) <= 0:
        return AlignedGray(torch.zeros_like(gray), low, high)
    return AlignedGray((gray - low) / spread, low, high)


def phi_rgb(image):
    """Per-image luminance, min-max normalized."""
    return min_max_normalize(Utility.luminance(image))


def phi_therm(thermal):
    return min_max_normalize(thermal)


def phi_cross(image):
    """The RGB-to-thermal map: the same luminance and normalization as phi_rgb."""
    return min_max_normalize(Utility.luminance(image))


def thermal_terms(enhanced, rendered, thermal, gamma=DEFAULT_GAMMA):
    """(gamma-weighted render agreement, (1 - gamma)-weighted thermal preservation)."""
    if not 0.0 <= gamma <= 1.0:
        raise ValidationError(f"gamma must lie in [0, 1], got {gamma}")
    Utility.check_image_dimensions([enhanced, rendered, thermal], ["enhanced", "rendered", "thermal"])

    agreement = (phi_rgb(enhanced).image - phi_rgb(rendered).image).abs().mean()
    preservation = (phi_cross(enhanced).image - phi_therm(thermal).image).abs().mean()
    return gamma * agreement, (1.0 - gamma) * preservation


def thermal_loss(enhanced, rendered, thermal, gamma=DEFAULT_GAMMA):
    agreement, preservation = thermal_terms(enhanced, rendered, thermal, gamma)
    return agreement + preservation


def thermal_loss_and_grad(enhanced, rendered, thermal, gamma=DEFAULT_GAMMA):
    """(loss, (dL/d enhanced, dL/d rendered))."""
    loss, grads = Utility.loss_and_grad(lambda e, r: thermal_loss(e, r, thermal, gamma), enhanced, rendered)
    return loss, grads
