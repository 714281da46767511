"""
Adam with per-parameter-class learning-rate multipliers, the warm-restart cosine schedule and
opacity pruning with optimizer-state remapping.
"""

import math
from collections.abc import Callable
from typing import Optional

import torch

from ..thermasplat import Logger, NumericalFailure, ValidationError
from .scene_core import PARAMETER_CLASSES

DEFAULT_LR = 1e-3
DEFAULT_PERIOD = 5000
PRUNE_THRESHOLD = 0.005
PRUNE_EVERY = 1000

LR_MULTIPLIERS = {
    "position": 1.0,
    "log_scale": 0.5,
    "rotation": 0.1,
    "opacity": 5.0,
    "color": 2.5,
    "grid": 1.0,
    "gamma": 1.0,
}


class SplatAdam(torch.optim.Optimizer):
    """
    Bias-corrected Adam. One param group per parameter class, each with its own lr multiplier.

    Parameters whose .grad is None are skipped entirely, so enhancers of views that were not
    trained this iteration keep their moments and step count.
    """

    def __init__(self, named_groups, lr=DEFAULT_LR, betas=(0.9, 0.999), eps=1e-8, multipliers=None):
        multipliers = dict(LR_MULTIPLIERS, **(multipliers or {}))
        groups = []
        for name, params in named_groups:
            groups.append({"params": list(params), "name": name, "lr_scale": multipliers.get(name.split("[")[0], 1.0)})
        defaults = {"lr": lr, "betas": betas, "eps": eps, "lr_scale": 1.0, "name": ""}
        super().__init__(groups, defaults)
        self.base_lr = lr

    @classmethod
    def for_scene(cls, gaussians, enhancers=None, lr=DEFAULT_LR, multipliers=None):
        named_groups = [(name, [tensor]) for name, tensor in gaussians.named_tensors().items()]
        if enhancers is not None:
            named_groups.append(("grid", [p.grid for p in enhancers.params]))
            named_groups.append(("gamma", [p.gamma_raw for p in enhancers.params]))
        return cls(named_groups, lr=lr, multipliers=multipliers)

    def set_lr(self, lr):
        if not lr > 0:
            raise ValidationError(f"Learning rate must be positive, got {lr}")
        for group in self.param_groups:
            group["lr"] = lr * group["lr_scale"]

    def group(self, name):
        for group in self.param_groups:
            if group["name"] == name:
                return group
        raise KeyError(name)

    @torch.no_grad()
    def step(self, closure: Optional[Callable] = None):
        loss = None if closure is None else closure()

        for group in self.param_groups:
            lr = group["lr"]
            beta1, beta2 = group["betas"]
            eps = group["eps"]
            for p in group["params"]:
                if p.grad is None:
                    continue
                grad = p.grad
                if not torch.isfinite(grad).all():
                    index = int((~torch.isfinite(grad)).reshape(-1).nonzero()[0])
                    raise NumericalFailure(f"Non-finite gradient in '{group['name']}' at parameter index {index}")

                state = self.state[p]
                if len(state) == 0:
                    state["step"] = 0
                    state["first_moment"] = torch.zeros_like(p)
                    state["second_moment"] = torch.zeros_like(p)

                first_moment, second_moment = state["first_moment"], state["second_moment"]
                state["step"] += 1
                step = state["step"]

                first_moment.mul_(beta1).add_(grad, alpha=1 - beta1)
                second_moment.mul_(beta2).addcmul_(grad, grad, value=1 - beta2)

                m_hat = first_moment / (1 - beta1**step)
                v_hat = second_moment / (1 - beta2**step)
                p.sub_(lr * m_hat / (v_hat.sqrt() + eps))

            if group["name"] == "rotation":
                for p in group["params"]:
                    p.div_(p.norm(dim=-1, keepdim=True))

        return loss

    def replace_params(self, name, old, new, keep):
        """Swap a tensor in group `name` for `new`, keeping the moments of the rows in `keep`."""
        group = self.group(name)
        position = next(i for i, p in enumerate(group["params"]) if p is old)
        group["params"][position] = new
        state = self.state.pop(old, None)
        if state:
            self.state[new] = {
                "step": state["step"],
                "first_moment": state["first_moment"][keep].clone(),
                "second_moment": state["second_moment"][keep].clone(),
            }


def adam_step(optimizer, lr):
    """One Adam update at learning rate lr (the multipliers apply on top)."""
    optimizer.set_lr(lr)
    optimizer.step()


def cosine_lr(t, base_lr=DEFAULT_LR, period=DEFAULT_PERIOD, mode="warm_restart", total=None):
    """
    Cosine from base_lr to base_lr / 100.

    warm_restart restarts every `period` iterations; single runs one cosine over `total`.
    """
    if period <= 0:
        raise ValidationError(f"Cosine period must be positive, got {period}")
    lr_min = base_lr / 100.0
    if mode == "warm_restart":
        phase = (t % period) / period
    elif mode == "single":
        span = total if total else period
        phase = min(t, span) / span
    else:
        raise ValidationError(f"Unknown learning-rate mode {mode!r}")
    return lr_min + (base_lr - lr_min) * (1 + math.cos(math.pi * phase)) / 2


def prune(gaussians, threshold=PRUNE_THRESHOLD, optimizer=None):
    """
    Drop Gaussians whose activated opacity is below threshold.

    Returns (new model, kept indices). With an optimizer, its state is remapped to the survivors.
    """
    with torch.no_grad():
        opacity = torch.sigmoid(gaussians.opacity_logit)
        keep = (opacity >= threshold).nonzero().squeeze(-1)
    pruned = gaussians.select(keep)

    if optimizer is not None:
        for name, old, new in zip(PARAMETER_CLASSES, gaussians.tensors(), pruned.tensors()):
            optimizer.replace_params(name, old, new, keep)

    removed = len(gaussians) - len(pruned)
    if removed:
        Logger().log(f"Pruned {removed} Gaussians below opacity {threshold}, {len(pruned)} remain", "INFORMATIONAL")
    return pruned, keep
