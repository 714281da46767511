"""
Central finite-difference checks of analytic gradients.

Every coordinate of a ParamBundle is nudged by +h and -h, the closure is re-evaluated and the
difference quotient is compared against the autograd/analytic gradient.
"""

import math
from dataclasses import dataclass, field

import torch

from ..thermasplat import Logger, ValidationError
from .cyclic_scheduler import gs_loss
from .retinex_enhancer import EnhancerParams, decompose, enhance, enhancement_loss
from .scene_core import DTYPE, ParamBundle
from .splat_renderer import SplatRenderer
from .thermal_supervision import thermal_loss

# Gradients smaller than this are compared in absolute terms.
ABSOLUTE_FLOOR = 1e-6


@dataclass
class GradcheckReport:
    tolerance: float
    max_error: dict = field(default_factory=dict)
    mean_error: dict = field(default_factory=dict)
    checked: int = 0

    @property
    def passed(self):
        if math.isinf(self.tolerance):
            return True
        return all(error <= self.tolerance for error in self.max_error.values())

    def rows(self):
        return [(name, self.max_error[name], self.mean_error[name]) for name in self.max_error]

    def __str__(self):
        lines = [f"{'class':<16} | {'max rel err':<12} | {'mean rel err':<12}", "-" * 46]
        for name, worst, mean in self.rows():
            lines.append(f"{name:<16} | {worst:<12.3e} | {mean:<12.3e}")
        lines.append(f"{'PASS' if self.passed else 'FAIL'} at tolerance {self.tolerance:g} over {self.checked} coordinates")
        return "\n".join(lines)


def parameter_class(name):
    """'grid[3]' -> 'grid'."""
    return name.split("[")[0]


def relative_error(analytic, numeric):
    scale = torch.maximum(torch.maximum(analytic.abs(), numeric.abs()), torch.tensor(ABSOLUTE_FLOOR, dtype=DTYPE))
    return (analytic - numeric).abs() / scale


def finite_difference(bundle, loss_fn, h):
    """Central differences of loss_fn() with respect to every coordinate of bundle."""
    x0 = bundle.gather()
    grad = torch.zeros_like(x0)
    with torch.no_grad():
        for j in range(x0.numel()):
            x = x0.clone()
            x[j] = x0[j] + h
            bundle.scatter(x)
            plus = float(loss_fn())
            x[j] = x0[j] - h
            bundle.scatter(x)
            minus = float(loss_fn())
            grad[j] = (plus - minus) / (2 * h)
        bundle.scatter(x0)
    return grad


def analytic_gradient(bundle, loss_fn):
    leaves = list(bundle.tensors.values())
    with torch.enable_grad():
        loss = loss_fn()
        grads = torch.autograd.grad(loss, leaves, allow_unused=True)
    return torch.cat([(torch.zeros_like(t) if g is None else g).reshape(-1) for t, g in zip(leaves, grads)])


def check_bundle(bundle, loss_fn, h=1e-5, tolerance=1e-4, corrupt_analytic=False):
    """
    Compare analytic and finite-difference gradients of a scalar closure over a ParamBundle.

    corrupt_analytic scales the analytic gradient by 1.01 so tests can see the check fail.
    """
    if not h > 0 or not math.isfinite(h):
        raise ValidationError(f"Finite-difference step must be a positive number, got {h}")

    analytic = analytic_gradient(bundle, loss_fn)
    if corrupt_analytic:
        analytic = analytic * 1.01
    numeric = finite_difference(bundle, loss_fn, h)
    errors = relative_error(analytic, numeric)

    report = GradcheckReport(tolerance=tolerance, checked=errors.numel())
    grouped = {}
    for name, start, stop, _ in bundle.index_map:
        grouped.setdefault(parameter_class(name), []).append(errors[start:stop])
    for name, chunks in grouped.items():
        chunk = torch.cat(chunks)
        report.max_error[name] = float(chunk.max()) if chunk.numel() else 0.0
        report.mean_error[name] = float(chunk.mean()) if chunk.numel() else 0.0
    return report


LOSS_SPECS = ("l1", "l2", "red_sum")


def image_loss(spec, image, target):
    if spec == "l1":
        return (image - target).abs().mean()
    if spec == "l2":
        return ((image - target) ** 2).mean()
    if spec == "red_sum":
        return image[..., 0].sum()
    raise ValidationError(f"Unknown loss spec {spec!r}, expected one of {LOSS_SPECS}")


def gradcheck(gaussians, camera, loss_spec="l1", h=1e-5, tolerance=1e-4, target=None, background=(0.0, 0.0, 0.0), corrupt_analytic=False):
    """Finite-difference check of the renderer's gradients for every Gaussian parameter class."""
    if len(gaussians) > 200:
        raise ValidationError(f"Scene has {len(gaussians)} Gaussians, finite differencing supports at most 200")
    if target is None:
        # brighter than any render of sigmoid colors, so the l1 loss has no kink
        generator = torch.Generator().manual_seed(0)
        target = 0.98 + 0.02 * torch.rand(camera.height, camera.width, 3, generator=generator, dtype=DTYPE)

    renderer = SplatRenderer(background)
    bundle = ParamBundle(gaussians.named_tensors())

    def loss_fn():
        return image_loss(loss_spec, renderer.render(gaussians, camera).color, target)

    report = check_bundle(bundle, loss_fn, h, tolerance, corrupt_analytic)
    Logger().log(f"Renderer gradcheck ({loss_spec}, {len(gaussians)} Gaussians):\n{report}", "INFORMATIONAL")
    return report


def _leaf(tensor):
    return tensor.detach().clone().requires_grad_(True)


def ramp(size, generator, start, step_x, step_y, noise, channels=3):
    """start + step_x * x + step_y * y plus uniform noise: distinct neighbors and a unique min and max."""
    y, x = torch.meshgrid(torch.arange(size, dtype=DTYPE), torch.arange(size, dtype=DTYPE), indexing="ij")
    base = start + step_x * x + step_y * y
    shape = (size, size, channels) if channels else (size, size)
    expanded = base.unsqueeze(-1) if channels else base
    return expanded + noise * torch.rand(shape, generator=generator, dtype=DTYPE)


def gradcheck_enhancer(seed=0, size=8, h=1e-5, tolerance=1e-4, corrupt_analytic=False):
    """Enhancement loss against its grid and exponent, on a dim random image away from every clamp."""
    generator = torch.Generator().manual_seed(seed)
    low = 0.05 + 0.25 * torch.rand(size, size, 3, generator=generator, dtype=DTYPE)
    grid = math.log(0.5) + 0.1 * torch.randn(3, 3, generator=generator, dtype=DTYPE)
    params = EnhancerParams(grid, 0.5 + torch.rand(1, generator=generator, dtype=DTYPE), exposure=0.9)

    def loss_fn():
        decomposition = decompose(low, params)
        return enhancement_loss(low, decomposition, enhance(low, params, decomposition), params.exposure)

    return check_bundle(ParamBundle(params.named_tensors()), loss_fn, h, tolerance, corrupt_analytic)


def gradcheck_thermal(seed=0, size=8, h=1e-5, tolerance=1e-4, gamma=0.1, corrupt_analytic=False):
    """Thermal consistency loss against the enhanced and rendered pixels, on opposing ramps that never cross."""
    generator = torch.Generator().manual_seed(seed)
    enhanced = _leaf(ramp(size, generator, 0.1, 0.08, 0.01, 0.001))
    rendered = _leaf(ramp(size, generator, 0.9, -0.08, -0.01, 0.001))
    thermal = ramp(size, generator, 0.8, -0.08, -0.01, 0.001, channels=0)
    bundle = ParamBundle({"enhanced": enhanced, "rendered": rendered})
    return check_bundle(bundle, lambda: thermal_loss(enhanced, rendered, thermal, gamma), h, tolerance, corrupt_analytic)


def gradcheck_gs_loss(seed=0, size=16, h=1e-5, tolerance=1e-4, corrupt_analytic=False):
    """Reconstruction loss (l1, SSIM, edge, consistency) against the rendered pixels."""
    generator = torch.Generator().manual_seed(seed)
    rendered = _leaf(ramp(size, generator, 0.3, 0.02, 0.01, 0.004))
    gt = ramp(size, generator, 0.2, 0.0, 0.0, 0.002)
    thermal = ramp(size, generator, 0.9, -0.02, -0.01, 0.002, channels=0)
    return check_bundle(ParamBundle({"rendered": rendered}), lambda: gs_loss(rendered, gt, thermal), h, tolerance, corrupt_analytic)
