"""
Differentiable Gaussian splatting: perspective projection of the 3D Gaussians followed by exact
front-to-back alpha compositing.

Projection and covariance math run under torch autograd. The compositing step is a
torch.autograd.Function whose backward walks the saved per-pixel contributor lists again instead of
storing every intermediate of the forward pass.
"""

from dataclasses import dataclass
from typing import Optional

import torch

from ..thermasplat import Logger, Utility, ValidationError
from .scene_core import DTYPE, GaussianModel, ParamBundle, covariance_of

NEAR_PLANE = 0.01
COV2D_REGULARIZATION = 0.3
ALPHA_MAX = 0.99
TRANSMITTANCE_MIN = 1e-4
SUPPORT_SIGMAS = 3.0


@dataclass
class Splat2D:
    """Screen-space splats, one row per visible Gaussian, sorted front to back."""

    mean2d: torch.Tensor  # (M, 2) pixels
    cov2d: torch.Tensor  # (M, 2, 2) pixels^2, regularized
    depth: torch.Tensor  # (M,)
    opacity: torch.Tensor  # (M,)
    color: torch.Tensor  # (M, 3)
    source_index: torch.Tensor  # (M,) int64

    def __len__(self):
        return self.depth.shape[0]

    def conic(self):
        """Inverse covariance packed as (a, b, c): q = a dx^2 + 2 b dx dy + c dy^2."""
        a = self.cov2d[:, 0, 0]
        b = self.cov2d[:, 0, 1]
        c = self.cov2d[:, 1, 1]
        det = a * c - b * b
        return torch.stack([c / det, -b / det, a / det], dim=-1)


@dataclass
class ContributorLists:
    """
    Every (splat, pixel) pair inside a splat's support, sorted by pixel and then front to back.

    slot is the position of the pair inside its pixel's list, so (pixel, slot) addresses a dense
    (pixels, max_contributors) layout.
    """

    pixel: torch.Tensor  # (Q,) flat pixel index
    slot: torch.Tensor  # (Q,)
    splat: torch.Tensor  # (Q,) index into Splat2D rows
    px: torch.Tensor  # (Q,) pixel x coordinate
    py: torch.Tensor  # (Q,) pixel y coordinate
    width: int
    height: int
    max_contributors: int

    @property
    def num_pixels(self):
        return self.width * self.height


@dataclass
class RenderOutput:
    color: torch.Tensor  # (H, W, 3)
    final_transmittance: torch.Tensor  # (H, W)
    splats: Splat2D
    contributors: ContributorLists
    gaussians: Optional[GaussianModel] = None


def camera_space(position, camera):
    return position @ camera.rotation.T + camera.translation


def project_splats(gaussians, camera):
    """
    EWA projection of every Gaussian in front of the near plane.

    cov2d = J W Sigma W^T J^T + 0.3 I, with W the camera rotation and J the pinhole Jacobian at the
    camera-space center. Rows are returned sorted by depth, ties broken by source index.
    """
    t = camera_space(gaussians.position, camera)
    visible = (t[:, 2] > NEAR_PLANE).nonzero().squeeze(-1)
    t = t[visible]
    covariance = covariance_of(gaussians.rotation[visible], gaussians.log_scale[visible])
    opacity, color = gaussians.activated()
    opacity = opacity[visible]
    color = color[visible]

    tx, ty, tz = t.unbind(-1)
    zeros = torch.zeros_like(tz)
    J = torch.stack(
        [
            torch.stack([camera.fx / tz, zeros, -camera.fx * tx / (tz * tz)], dim=-1),
            torch.stack([zeros, camera.fy / tz, -camera.fy * ty / (tz * tz)], dim=-1),
        ],
        dim=-2,
    )
    T = J @ camera.rotation
    cov2d = T @ covariance @ T.transpose(-1, -2) + COV2D_REGULARIZATION * torch.eye(2, dtype=DTYPE)
    mean2d = torch.stack([camera.fx * tx / tz + camera.cx, camera.fy * ty / tz + camera.cy], dim=-1)

    # visible is ascending, so a stable sort on depth breaks ties by source index
    order = torch.sort(tz.detach(), stable=True).indices
    return Splat2D(mean2d[order], cov2d[order], tz[order], opacity[order], color[order], visible[order])


def project(gaussian, camera):
    """Project a single Gaussian3D. Returns None when its center is behind the near plane."""
    model = GaussianModel.from_gaussians([gaussian])
    splats = project_splats(model, camera)
    if len(splats) == 0:
        return None
    return Splat2D(*(x.detach() for x in (splats.mean2d, splats.cov2d, splats.depth, splats.opacity, splats.color)), splats.source_index)


def build_contributors(mean2d, cov2d, width, height):
    """Enumerate pixel/splat pairs inside each splat's 3-sigma box, sorted by pixel then depth rank."""
    mean2d = mean2d.detach()
    count = mean2d.shape[0]
    radius_x = SUPPORT_SIGMAS * cov2d[:, 0, 0].detach().sqrt()
    radius_y = SUPPORT_SIGMAS * cov2d[:, 1, 1].detach().sqrt()

    x0 = torch.ceil(mean2d[:, 0] - radius_x).clamp(min=0).to(torch.int64)
    x1 = torch.floor(mean2d[:, 0] + radius_x).clamp(max=width - 1).to(torch.int64)
    y0 = torch.ceil(mean2d[:, 1] - radius_y).clamp(min=0).to(torch.int64)
    y1 = torch.floor(mean2d[:, 1] + radius_y).clamp(max=height - 1).to(torch.int64)
    nx = (x1 - x0 + 1).clamp(min=0)
    ny = (y1 - y0 + 1).clamp(min=0)
    per_splat = nx * ny

    splat = torch.repeat_interleave(torch.arange(count), per_splat)
    first = torch.cumsum(per_splat, 0) - per_splat
    local = torch.arange(splat.shape[0]) - first[splat]
    px = x0[splat] + local % nx[splat]
    py = y0[splat] + torch.div(local, nx[splat], rounding_mode="floor")
    pixel = py * width + px

    # splats are already depth sorted, so the rank is the splat index itself
    order = torch.sort(pixel * max(count, 1) + splat).indices
    pixel, splat, px, py = pixel[order], splat[order], px[order], py[order]

    per_pixel = torch.bincount(pixel, minlength=width * height)
    pixel_first = torch.cumsum(per_pixel, 0) - per_pixel
    slot = torch.arange(pixel.shape[0]) - pixel_first[pixel]
    max_contributors = int(per_pixel.max()) if pixel.numel() else 0
    return ContributorLists(pixel, slot, splat, px, py, width, height, max_contributors)


def _pair_alpha(contributors, mean2d, conic, opacity):
    s = contributors.splat
    dx = contributors.px.to(DTYPE) - mean2d[s, 0]
    dy = contributors.py.to(DTYPE) - mean2d[s, 1]
    q = conic[s, 0] * dx * dx + 2 * conic[s, 1] * dx * dy + conic[s, 2] * dy * dy
    falloff = torch.exp(-0.5 * q)
    raw = opacity[s] * falloff
    return dx, dy, falloff, raw


def _front_to_back(contributors, alpha):
    """Dense (pixels, K) alpha, transmittance in front of each slot and the early-stop mask."""
    dense = alpha.new_zeros(contributors.num_pixels, max(contributors.max_contributors, 1))
    dense[contributors.pixel, contributors.slot] = alpha
    through = torch.cumprod(1 - dense, dim=1)
    in_front = torch.cat([torch.ones_like(through[:, :1]), through[:, :-1]], dim=1)
    composited = dense * (in_front >= TRANSMITTANCE_MIN)
    return dense, in_front, composited


class Rasterize(torch.autograd.Function):
    """
    C = sum_i a_i T_i c_i + T_final * background, T_i = prod_{j<i} (1 - a_j).

    Inputs are differentiable; contributors and background ride along as constants.
    """

    @staticmethod
    def forward(ctx, mean2d, conic, opacity, color, background, contributors):
        _, _, _, raw = _pair_alpha(contributors, mean2d, conic, opacity)
        alpha = raw.clamp(max=ALPHA_MAX)
        _, in_front, composited = _front_to_back(contributors, alpha)

        weight = composited * in_front
        final_transmittance = torch.prod(1 - composited, dim=1)
        pair_weight = weight[contributors.pixel, contributors.slot]

        image = torch.zeros(contributors.num_pixels, 3, dtype=DTYPE)
        image.index_add_(0, contributors.pixel, pair_weight.unsqueeze(-1) * color[contributors.splat])
        image = image + final_transmittance.unsqueeze(-1) * background

        ctx.contributors = contributors
        ctx.save_for_backward(mean2d, conic, opacity, color, background)
        return image, final_transmittance

    @staticmethod
    def backward(ctx, grad_image, grad_transmittance):
        mean2d, conic, opacity, color, background = ctx.saved_tensors
        contributors = ctx.contributors
        pixel, slot, s = contributors.pixel, contributors.slot, contributors.splat

        if grad_image is None:
            grad_image = torch.zeros(contributors.num_pixels, 3, dtype=DTYPE)
        if grad_transmittance is None:
            grad_transmittance = torch.zeros(contributors.num_pixels, dtype=DTYPE)

        dx, dy, falloff, raw = _pair_alpha(contributors, mean2d, conic, opacity)
        alpha = raw.clamp(max=ALPHA_MAX)
        dense, in_front, composited = _front_to_back(contributors, alpha)
        weight = composited * in_front
        final_transmittance = torch.prod(1 - composited, dim=1)

        # color . upstream, per pair and in the dense layout
        shade = (color[s] * grad_image[pixel]).sum(-1)
        dense_shade = torch.zeros_like(dense)
        dense_shade[pixel, slot] = shade

        contribution = weight * dense_shade
        behind = torch.flip(torch.cumsum(torch.flip(contribution, [1]), 1), [1]) - contribution
        tail = final_transmittance * ((background * grad_image).sum(-1) + grad_transmittance)
        grad_alpha_dense = in_front * dense_shade - (behind + tail.unsqueeze(-1)) / (1 - dense)
        grad_alpha_dense = grad_alpha_dense * (in_front >= TRANSMITTANCE_MIN)

        grad_alpha = grad_alpha_dense[pixel, slot] * (raw < ALPHA_MAX)
        grad_q = -0.5 * raw * grad_alpha  # d raw / d q = -0.5 * opacity * falloff

        count = mean2d.shape[0]
        grad_opacity = torch.zeros(count, dtype=DTYPE).index_add_(0, s, grad_alpha * falloff)
        grad_color = torch.zeros(count, 3, dtype=DTYPE).index_add_(
            0, s, weight[pixel, slot].unsqueeze(-1) * grad_image[pixel]
        )
        a, b, c = conic[s, 0], conic[s, 1], conic[s, 2]
        grad_mean = torch.stack([-2 * grad_q * (a * dx + b * dy), -2 * grad_q * (b * dx + c * dy)], dim=-1)
        grad_mean2d = torch.zeros(count, 2, dtype=DTYPE).index_add_(0, s, grad_mean)
        grad_conic_pairs = torch.stack([grad_q * dx * dx, 2 * grad_q * dx * dy, grad_q * dy * dy], dim=-1)
        grad_conic = torch.zeros(count, 3, dtype=DTYPE).index_add_(0, s, grad_conic_pairs)

        return grad_mean2d, grad_conic, grad_opacity, grad_color, None, None


class SplatRenderer:
    """
    Renders a GaussianModel from a Camera.

    The output color stays attached to the autograd graph of the model's leaf tensors, which is what
    render_backward and the training loop differentiate through.
    """

    logger = Logger()

    def __init__(self, background=(0.0, 0.0, 0.0)):
        self.background = torch.as_tensor(background, dtype=DTYPE)

    def render(self, gaussians, camera, background=None):
        background = self.background if background is None else torch.as_tensor(background, dtype=DTYPE)
        gaussians.check_finite()

        splats = project_splats(gaussians, camera)
        contributors = build_contributors(splats.mean2d, splats.cov2d, camera.width, camera.height)
        image, transmittance = Rasterize.apply(splats.mean2d, splats.conic(), splats.opacity, splats.color, background, contributors)

        self.logger.log(f"Rendered {len(splats)}/{len(gaussians)} splats, {contributors.pixel.numel()} pairs", "DEBUG")
        return RenderOutput(
            image.reshape(camera.height, camera.width, 3),
            transmittance.reshape(camera.height, camera.width),
            splats,
            contributors,
            gaussians,
        )

    @staticmethod
    def render_backward(output, grad_color):
        """Gradients of sum(grad_color * output.color) for every Gaussian parameter, as a GradBundle."""
        if tuple(grad_color.shape) != tuple(output.color.shape):
            raise ValidationError(f"Upstream gradient is {tuple(grad_color.shape)}, render is {tuple(output.color.shape)}")

        leaves = output.gaussians.tensors()
        if not output.color.requires_grad:
            return ParamBundle({name: torch.zeros_like(t) for name, t in output.gaussians.named_tensors().items()})

        grads = torch.autograd.grad(output.color, leaves, grad_outputs=grad_color.to(DTYPE), retain_graph=True, allow_unused=True)
        names = output.gaussians.named_tensors().keys()
        bundle = ParamBundle({name: (torch.zeros_like(t) if g is None else g) for name, t, g in zip(names, leaves, grads)})
        bundle.check_finite()
        return bundle


def render(gaussians, camera, background=(0.0, 0.0, 0.0)):
    return SplatRenderer(background).render(gaussians, camera)


def render_backward(output, grad_color):
    return SplatRenderer.render_backward(output, grad_color)


def composite_naive(splats, width, height, background):
    """
    Direct per-pixel front-to-back compositing with Python loops. Slow; used as an oracle.

    Returns (image, transmittance, weight_sum).
    """
    background = torch.as_tensor(background, dtype=DTYPE)
    mean2d = splats.mean2d.detach()
    cov2d = splats.cov2d.detach()
    conic = splats.conic().detach()
    image = torch.zeros(height, width, 3, dtype=DTYPE)
    transmittance_image = torch.ones(height, width, dtype=DTYPE)
    weight_sum = torch.zeros(height, width, dtype=DTYPE)

    for y in range(height):
        for x in range(width):
            T = 1.0
            total = torch.zeros(3, dtype=DTYPE)
            weights = 0.0
            for i in range(len(splats)):
                dx = x - float(mean2d[i, 0])
                dy = y - float(mean2d[i, 1])
                if abs(dx) > SUPPORT_SIGMAS * float(cov2d[i, 0, 0]) ** 0.5 or abs(dy) > SUPPORT_SIGMAS * float(cov2d[i, 1, 1]) ** 0.5:
                    continue
                if T < TRANSMITTANCE_MIN:
                    break
                q = float(conic[i, 0]) * dx * dx + 2 * float(conic[i, 1]) * dx * dy + float(conic[i, 2]) * dy * dy
                a = min(float(splats.opacity[i]) * float(torch.exp(torch.tensor(-0.5 * q, dtype=DTYPE))), ALPHA_MAX)
                total = total + a * T * splats.color[i].detach()
                weights += a * T
                T = T * (1 - a)
            image[y, x] = total + T * background
            transmittance_image[y, x] = T
            weight_sum[y, x] = weights
    return image, transmittance_image, weight_sum
