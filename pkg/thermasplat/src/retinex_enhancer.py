"""
Parametric Retinex enhancement: I_low = R * L, I_enh = R * L'.

Each view owns a coarse illumination grid in log space and a correction exponent. The grid is
bilinearly upsampled to the image, R follows by division and L' = L^(1/gamma) brightens the
illumination. Everything is plain torch so the reconstruction losses can reach the grid.
"""

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from ..thermasplat import Logger, Utility, ValidationError
from .scene_core import DTYPE

ILLUMINATION_FLOOR = 1e-3
DEFAULT_GRID = (12, 16)  # rows, columns
DEFAULT_GAMMA = 2.2
DEFAULT_EXPOSURE = 0.45
LOSS_WEIGHTS = (1.0, 0.1, 0.5)  # reconstruction, smoothness, exposure
EDGE_SOFTNESS = 0.1


def softplus_inverse(y):
    return math.log(math.expm1(y))


@dataclass
class Decomposition:
    reflectance: torch.Tensor  # (H, W, 3) in [0, 1]
    illumination: torch.Tensor  # (H, W) >= floor
    corrected: torch.Tensor  # (H, W) in (0, 1]


class EnhancerParams:
    """Per-view illumination grid (log space) and raw correction exponent."""

    def __init__(self, grid, gamma_raw, exposure=DEFAULT_EXPOSURE):
        if not 0 < exposure < 1:
            raise ValidationError(f"Exposure target must lie in (0, 1), got {exposure}")
        self.grid = torch.as_tensor(grid, dtype=DTYPE).detach().clone().requires_grad_(True)
        self.gamma_raw = torch.as_tensor(gamma_raw, dtype=DTYPE).detach().clone().reshape(1).requires_grad_(True)
        self.exposure = float(exposure)

    @classmethod
    def identity(cls, grid_shape=DEFAULT_GRID, gamma=1.0, exposure=DEFAULT_EXPOSURE):
        """L == 1 and the given effective exponent."""
        return cls(torch.zeros(grid_shape, dtype=DTYPE), softplus_inverse(gamma), exposure)

    @classmethod
    def constant(cls, illumination, grid_shape=DEFAULT_GRID, gamma=DEFAULT_GAMMA, exposure=DEFAULT_EXPOSURE):
        grid = torch.full(grid_shape, math.log(illumination), dtype=DTYPE)
        return cls(grid, softplus_inverse(gamma), exposure)

    @classmethod
    def from_image(cls, image, grid_shape=DEFAULT_GRID, gamma=DEFAULT_GAMMA, exposure=DEFAULT_EXPOSURE):
        """Initial illumination from the per-cell maximum of the brightest channel."""
        brightest = image.max(dim=-1).values
        pooled = F.adaptive_max_pool2d(brightest[None, None], grid_shape)[0, 0]
        grid = torch.log(pooled.clamp(min=ILLUMINATION_FLOOR))
        return cls(grid, softplus_inverse(gamma), exposure)

    @property
    def gamma(self):
        return F.softplus(self.gamma_raw)[0]

    def tensors(self):
        return [self.grid, self.gamma_raw]

    def named_tensors(self):
        return {"grid": self.grid, "gamma": self.gamma_raw}

    def check_finite(self):
        if not torch.isfinite(self.grid).all():
            raise ValidationError("Illumination grid holds non-finite values")


def upsample_illumination(params, height, width):
    """L = max(exp(bilinear(grid)), floor) at image resolution."""
    if not torch.isfinite(params.grid).all():
        raise ValidationError("Illumination grid holds non-finite values")
    log_l = F.interpolate(params.grid[None, None], size=(height, width), mode="bilinear", align_corners=True)[0, 0]
    return torch.exp(log_l).clamp(min=ILLUMINATION_FLOOR)


def correct_illumination(illumination, params):
    """L' = clamp(L^(1/gamma), floor, 1)."""
    return illumination.pow(1.0 / params.gamma).clamp(ILLUMINATION_FLOOR, 1.0)


def decompose(low, params):
    height, width = low.shape[:2]
    illumination = upsample_illumination(params, height, width)
    reflectance = (low / illumination.unsqueeze(-1)).clamp(0.0, 1.0)
    return Decomposition(reflectance, illumination, correct_illumination(illumination, params))


def enhance(low, params, decomposition=None):
    """I_enh = clamp(R * L', 0, 1)."""
    if decomposition is None:
        decomposition = decompose(low, params)
    return (decomposition.reflectance * decomposition.corrected.unsqueeze(-1)).clamp(0.0, 1.0)


def edge_weights(low):
    """Smoothness weights that relax across edges of the input, as in LIME's strategy 2."""
    luma = Utility.luminance(low)
    weight_x = EDGE_SOFTNESS / ((luma[:, 1:] - luma[:, :-1]).abs() + EDGE_SOFTNESS)
    weight_y = EDGE_SOFTNESS / ((luma[1:, :] - luma[:-1, :]).abs() + EDGE_SOFTNESS)
    return weight_x, weight_y


def illumination_smoothness(illumination, low):
    log_l = torch.log(illumination)
    weight_x, weight_y = edge_weights(low)
    tv_x = (weight_x * (log_l[:, 1:] - log_l[:, :-1]).abs()).mean()
    tv_y = (weight_y * (log_l[1:, :] - log_l[:-1, :]).abs()).mean()
    return tv_x + tv_y


def enhancement_terms(low, decomposition, enhanced, exposure, weights=LOSS_WEIGHTS):
    """The three weighted terms of L_enh as a dict of scalar tensors."""
    reconstruction = (decomposition.reflectance * decomposition.illumination.unsqueeze(-1) - low).abs().mean()
    smoothness = illumination_smoothness(decomposition.illumination, low)
    exposure_gap = (Utility.luminance(enhanced).mean() - exposure).abs()
    return {
        "reconstruction": weights[0] * reconstruction,
        "smoothness": weights[1] * smoothness,
        "exposure": weights[2] * exposure_gap,
    }


def enhancement_loss(low, decomposition, enhanced, exposure=DEFAULT_EXPOSURE, weights=LOSS_WEIGHTS):
    return sum(enhancement_terms(low, decomposition, enhanced, exposure, weights).values())


class RetinexEnhancer:
    """
    The per-view enhancers of a scene.

    forward(view, low) returns (I_enh, decomposition) attached to the view's parameters.
    """

    logger = Logger()

    def __init__(self, params, weights=LOSS_WEIGHTS):
        self.params = list(params)
        self.weights = tuple(weights)

    @classmethod
    def for_frames(cls, frames, grid_shape=DEFAULT_GRID, gamma=DEFAULT_GAMMA, exposure=DEFAULT_EXPOSURE, weights=LOSS_WEIGHTS):
        params = [EnhancerParams.from_image(frame.rgb_low, grid_shape, gamma, exposure) for frame in frames]
        cls.logger.log(f"Initialized {len(params)} enhancers, grid {grid_shape[0]}x{grid_shape[1]}, gamma {gamma}", "DEBUG")
        return cls(params, weights)

    def __len__(self):
        return len(self.params)

    def __getitem__(self, view):
        return self.params[view]

    def forward(self, view, low):
        params = self.params[view]
        decomposition = decompose(low, params)
        return enhance(low, params, decomposition), decomposition

    def loss(self, view, low, decomposition, enhanced):
        return enhancement_loss(low, decomposition, enhanced, self.params[view].exposure, self.weights)

    def loss_and_grad(self, view, low):
        """(L_enh, {'grid': dL/dgrid, 'gamma': dL/dgamma_raw}) for one view."""
        params = self.params[view]
        with torch.enable_grad():
            enhanced, decomposition = self.forward(view, low)
            loss = self.loss(view, low, decomposition, enhanced)
            grads = torch.autograd.grad(loss, params.tensors(), allow_unused=True)
        grads = [torch.zeros_like(t) if g is None else g for t, g in zip(params.tensors(), grads)]
        return loss.detach(), dict(zip(params.named_tensors().keys(), grads))

    @torch.no_grad()
    def enhance_all(self, frames):
        return [self.forward(view, frame.rgb_low)[0] for view, frame in enumerate(frames)]
