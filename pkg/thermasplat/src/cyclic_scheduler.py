"""
Evolving supervision and loss assembly.

GT starts as the low-light image and is blended towards the enhanced image with a factor that
ramps linearly over the transition period. Loss weights follow a pluggable schedule and are always
renormalized to sum to one with the GS weight kept at or above 0.1.
"""

import math
from dataclasses import dataclass

import torch

from ..thermasplat import NumericalFailure, Utility, ValidationError
from .custom_schedulers.custom_schedulers import CustomSchedulers
from .metrics import ssim
from .thermal_supervision import phi_rgb, phi_therm

DEFAULT_TRANSITION = 8000
MIN_GS_WEIGHT = 0.1
GS_LOSS_WEIGHTS = (0.7, 0.2, 0.1, 0.1)  # l1, ssim, edge, thermal consistency
WEIGHT_TOLERANCE = 1e-12


def alpha_blend(t, transition=DEFAULT_TRANSITION):
    if transition <= 0:
        raise ValidationError(f"Transition period must be positive, got {transition}")
    if t < 0:
        raise ValidationError(f"Iteration must be non-negative, got {t}")
    return min(1.0, t / transition)


def blend(previous, enhanced, alpha):
    """(1 - alpha) * previous + alpha * enhanced, with the exact endpoints."""
    if alpha == 0.0:
        return previous + 0.0 * enhanced
    if alpha == 1.0:
        return enhanced + 0.0 * previous
    return (1.0 - alpha) * previous + alpha * enhanced


@dataclass
class SupervisionState:
    gt_current: torch.Tensor  # (H, W, 3)
    iteration: int = 0
    transition: int = DEFAULT_TRANSITION

    @classmethod
    def initial(cls, low, transition=DEFAULT_TRANSITION):
        """GT^(0) is the low-light image itself."""
        return cls(low.detach().clone(), 0, transition)


def update_gt(state, enhanced, t, alpha=None):
    """GT^(t) = (1 - alpha^(t)) GT^(t-1) + alpha^(t) I_enh^(t). Returns the new state."""
    Utility.check_image_dimensions([state.gt_current, enhanced], ["gt_current", "enhanced"])
    if not torch.isfinite(enhanced).all():
        raise NumericalFailure(f"Non-finite enhanced image at iteration {t}")
    if alpha is None:
        alpha = alpha_blend(t, state.transition)
    gt = blend(state.gt_current, enhanced.detach(), alpha)
    return SupervisionState(gt, t, state.transition)


@dataclass(frozen=True)
class LossWeights:
    enh: float
    gs: float
    therm: float

    def as_tuple(self):
        return (self.enh, self.gs, self.therm)

    def validate(self):
        if min(self.as_tuple()) < 0:
            raise ValidationError(f"Loss weights must be non-negative, got {self.as_tuple()}")
        if abs(sum(self.as_tuple()) - 1.0) > WEIGHT_TOLERANCE:
            raise ValidationError(f"Loss weights must sum to 1, got {sum(self.as_tuple())}")
        if self.gs < MIN_GS_WEIGHT - WEIGHT_TOLERANCE:
            raise ValidationError(f"GS weight must be at least {MIN_GS_WEIGHT}, got {self.gs}")
        return self


def normalize_weights(raw):
    """Scale a raw triple to sum one, then lift the GS weight to 0.1 if needed."""
    raw = [float(x) for x in raw]
    if any(x < 0 or not math.isfinite(x) for x in raw) or sum(raw) <= 0:
        raise ValidationError(f"Raw loss weights must be finite, non-negative and not all zero, got {raw}")
    total = sum(raw)
    enh, gs, therm = (x / total for x in raw)
    if gs < MIN_GS_WEIGHT:
        rest = enh + therm
        scale = (1.0 - MIN_GS_WEIGHT) / rest
        enh, gs, therm = enh * scale, MIN_GS_WEIGHT, therm * scale
    # absorb rounding into the largest component
    drift = 1.0 - (enh + gs + therm)
    if gs >= enh and gs >= therm:
        gs += drift
    elif enh >= therm:
        enh += drift
    else:
        therm += drift
    return LossWeights(enh, gs, therm)


@dataclass
class ScheduleConfig:
    initial: tuple = (0.1, 0.9, 0.2)
    final: tuple = (0.1, 0.9, 0.2)
    total: int = 2000
    breakpoints: tuple = (0.2, 0.4, 0.7)
    mode: str = "four_stage"

    def __post_init__(self):
        self.initial = normalize_weights(self.initial).as_tuple()
        self.final = normalize_weights(self.final).as_tuple()
        self.validate()

    def validate(self):
        if self.total <= 0:
            raise ValidationError(f"Total iterations must be positive, got {self.total}")
        a, b, c = self.breakpoints
        if not 0 < a < b < c < 1:
            raise ValidationError(f"Breakpoints must be strictly increasing inside (0, 1), got {self.breakpoints}")
        if self.mode not in CustomSchedulers.shared().get_scheduler_names():
            raise ValidationError(f"Unknown schedule {self.mode!r}")


def lambda_schedule(t, cfg):
    if not 0 <= t <= cfg.total:
        raise ValidationError(f"Iteration {t} outside [0, {cfg.total}]")
    hold_until, ramp_until, finetune_from = cfg.breakpoints
    raw = CustomSchedulers.shared().get_weights(
        cfg.mode, t, cfg.total, cfg.initial, cfg.final, hold_until=hold_until, ramp_until=ramp_until, finetune_from=finetune_from
    )
    return normalize_weights(raw)


def image_gradients(image):
    return image[:, 1:] - image[:, :-1], image[1:, :] - image[:-1, :]


def edge_loss(rendered, gt):
    """l1 between finite-difference gradients, averaged over every horizontal and vertical difference."""
    rx, ry = image_gradients(rendered)
    gx, gy = image_gradients(gt)
    diffs = torch.cat([(rx - gx).abs().reshape(-1), (ry - gy).abs().reshape(-1)])
    return diffs.mean()


def gs_terms(rendered, gt, thermal, weights=GS_LOSS_WEIGHTS):
    """The four weighted terms of the reconstruction loss."""
    Utility.check_image_dimensions([rendered, gt, thermal], ["rendered", "gt", "thermal"])
    w_l1, w_ssim, w_edge, w_consistency = weights
    terms = {
        "l1": w_l1 * (rendered - gt).abs().mean(),
        "ssim": w_ssim * (1.0 - ssim(rendered, gt)),
        "edge": w_edge * edge_loss(rendered, gt),
    }
    if w_consistency:
        terms["consistency"] = w_consistency * (phi_rgb(rendered).image - phi_therm(thermal).image).abs().mean()
    else:
        terms["consistency"] = rendered.new_zeros(())
    return terms


def gs_loss(rendered, gt, thermal, weights=GS_LOSS_WEIGHTS):
    return sum(gs_terms(rendered, gt, thermal, weights).values())


def gs_loss_and_grad(rendered, gt, thermal, weights=GS_LOSS_WEIGHTS):
    """(loss, dL/d rendered)."""
    loss, (grad,) = Utility.loss_and_grad(lambda r: gs_loss(r, gt, thermal, weights), rendered)
    return loss, grad


def total_loss(parts, weights):
    """lambda_enh L_enh + lambda_gs L_gs + lambda_therm L_therm; parts is a dict keyed enh/gs/therm."""
    total = 0.0
    for name, weight in zip(("enh", "gs", "therm"), weights.as_tuple()):
        value = parts[name]
        if not math.isfinite(float(value)):
            raise NumericalFailure(f"Non-finite loss term '{name}'")
        total = total + weight * value
    return total
