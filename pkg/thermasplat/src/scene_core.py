"""
Domain types shared by every module: Gaussians, cameras, frames and flat parameter bundles.

Images are plain float64 tensors, (H, W, 3) for RGB and (H, W) for gray, values in [0, 1].
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import torch

from ..thermasplat import Utility, ValidationError, DegenerateRotationError, NumericalFailure

DTYPE = Utility.DTYPE

PARAMETER_CLASSES = ("position", "log_scale", "rotation", "opacity", "color")


def sigmoid(x):
    return torch.sigmoid(x)


def logit(p):
    p = torch.as_tensor(p, dtype=DTYPE)
    return torch.log(p) - torch.log1p(-p)


def quaternion_to_matrix(q):
    """Rotation matrices (..., 3, 3) from quaternions (..., 4) in (w, x, y, z) order. Normalizes q."""
    norm = q.norm(dim=-1, keepdim=True)
    if (norm == 0).any():
        raise DegenerateRotationError("Zero quaternion has no rotation")
    w, x, y, z = (q / norm).unbind(-1)
    rows = [
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ]
    return torch.stack(rows, dim=-1).reshape(q.shape[:-1] + (3, 3))


def covariance_of(rotation, log_scale):
    """Sigma = R S^2 R^T for quaternions (..., 4) and per-axis log standard deviations (..., 3)."""
    R = quaternion_to_matrix(rotation)
    M = R * torch.exp(log_scale).unsqueeze(-2)  # R @ diag(s)
    return M @ M.transpose(-1, -2)


def activate(opacity_logit, color_raw):
    """Opacity in (0, 1) and color in [0, 1]^3 from the unconstrained parameters."""
    return sigmoid(opacity_logit), sigmoid(color_raw)


@dataclass
class Gaussian3D:
    """A single scene primitive. GaussianModel stores many of these as stacked tensors."""

    position: torch.Tensor
    log_scale: torch.Tensor
    rotation: torch.Tensor
    opacity_logit: torch.Tensor
    color_raw: torch.Tensor

    def covariance(self):
        return covariance_of(self.rotation, self.log_scale)

    def activate(self):
        return activate(self.opacity_logit, self.color_raw)


class GaussianModel:
    """
    The scene: N Gaussians as leaf tensors of shape (N, 3), (N, 3), (N, 4), (N,), (N, 3).

    Tensors are created with requires_grad so the training loop and the optimizer can share them.
    """

    def __init__(self, position, log_scale, rotation, opacity_logit, color_raw):
        self.position = position.detach().to(DTYPE).clone().requires_grad_(True)
        self.log_scale = log_scale.detach().to(DTYPE).clone().requires_grad_(True)
        self.rotation = rotation.detach().to(DTYPE).clone().requires_grad_(True)
        self.opacity_logit = opacity_logit.detach().to(DTYPE).clone().requires_grad_(True)
        self.color_raw = color_raw.detach().to(DTYPE).clone().requires_grad_(True)

    @classmethod
    def from_gaussians(cls, gaussians):
        if not gaussians:
            return cls.empty()
        return cls(
            torch.stack([torch.as_tensor(g.position, dtype=DTYPE) for g in gaussians]),
            torch.stack([torch.as_tensor(g.log_scale, dtype=DTYPE) for g in gaussians]),
            torch.stack([torch.as_tensor(g.rotation, dtype=DTYPE) for g in gaussians]),
            torch.stack([torch.as_tensor(g.opacity_logit, dtype=DTYPE) for g in gaussians]),
            torch.stack([torch.as_tensor(g.color_raw, dtype=DTYPE) for g in gaussians]),
        )

    @classmethod
    def empty(cls):
        return cls(
            torch.zeros(0, 3, dtype=DTYPE),
            torch.zeros(0, 3, dtype=DTYPE),
            torch.zeros(0, 4, dtype=DTYPE),
            torch.zeros(0, dtype=DTYPE),
            torch.zeros(0, 3, dtype=DTYPE),
        )

    @classmethod
    def random(cls, count, generator, center=(0.0, 0.0, 0.0), spread=0.5):
        """Small random scenes for tests and gradient checks."""
        center = torch.tensor(center, dtype=DTYPE)
        position = center + spread * (2 * torch.rand(count, 3, generator=generator, dtype=DTYPE) - 1)
        log_scale = math.log(0.08) + 0.4 * torch.randn(count, 3, generator=generator, dtype=DTYPE)
        rotation = torch.randn(count, 4, generator=generator, dtype=DTYPE)
        rotation = rotation / rotation.norm(dim=-1, keepdim=True)
        opacity_logit = torch.randn(count, generator=generator, dtype=DTYPE)
        color_raw = torch.randn(count, 3, generator=generator, dtype=DTYPE)
        return cls(position, log_scale, rotation, opacity_logit, color_raw)

    def __len__(self):
        return self.position.shape[0]

    def __getitem__(self, index):
        return Gaussian3D(
            self.position[index].detach(),
            self.log_scale[index].detach(),
            self.rotation[index].detach(),
            self.opacity_logit[index].detach(),
            self.color_raw[index].detach(),
        )

    def tensors(self):
        """Leaf tensors in PARAMETER_CLASSES order."""
        return [self.position, self.log_scale, self.rotation, self.opacity_logit, self.color_raw]

    def named_tensors(self):
        return dict(zip(PARAMETER_CLASSES, self.tensors()))

    def covariances(self):
        return covariance_of(self.rotation, self.log_scale)

    def activated(self):
        return activate(self.opacity_logit, self.color_raw)

    def select(self, keep):
        """A new model holding only the Gaussians where the boolean mask keep is true."""
        return GaussianModel(*[t.detach()[keep] for t in self.tensors()])

    @torch.no_grad()
    def normalize_rotations(self):
        self.rotation.div_(self.rotation.norm(dim=-1, keepdim=True))

    def check_finite(self):
        for name, tensor in self.named_tensors().items():
            Utility.check_finite(tensor.detach(), f"Gaussian parameter '{name}'")


@dataclass
class Camera:
    """Pinhole camera, world_to_camera = [rotation | translation], +z forward, +y down."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: torch.Tensor = field(default_factory=lambda: torch.eye(3, dtype=DTYPE))
    translation: torch.Tensor = field(default_factory=lambda: torch.zeros(3, dtype=DTYPE))

    def __post_init__(self):
        self.rotation = torch.as_tensor(self.rotation, dtype=DTYPE)
        self.translation = torch.as_tensor(self.translation, dtype=DTYPE)
        self.validate()

    def validate(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError(f"Camera focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (self.width > 0 and self.height > 0):
            raise ValidationError(f"Camera size must be positive, got {self.width}x{self.height}")
        eye = torch.eye(3, dtype=DTYPE)
        if not torch.allclose(self.rotation @ self.rotation.T, eye, atol=1e-9):
            raise ValidationError("Camera rotation is not orthonormal")

    @classmethod
    def look_at(cls, eye, target, width, height, fov_x_degrees=60.0, up=(0.0, 0.0, 1.0)):
        eye = torch.as_tensor(eye, dtype=DTYPE)
        target = torch.as_tensor(target, dtype=DTYPE)
        up = torch.as_tensor(up, dtype=DTYPE)
        forward = target - eye
        forward = forward / forward.norm()
        right = torch.linalg.cross(forward, up)
        right = right / right.norm()
        down = torch.linalg.cross(forward, right)
        rotation = torch.stack([right, down, forward])
        focal = 0.5 * width / math.tan(math.radians(fov_x_degrees) / 2)
        return cls(focal, focal, width / 2.0, height / 2.0, width, height, rotation, -rotation @ eye)

    def world_to_camera(self):
        """4x4 world-to-camera matrix."""
        matrix = torch.eye(4, dtype=DTYPE)
        matrix[:3, :3] = self.rotation
        matrix[:3, 3] = self.translation
        return matrix

    @classmethod
    def from_matrix(cls, matrix, intrinsics, width, height):
        matrix = torch.as_tensor(matrix, dtype=DTYPE).reshape(4, 4)
        fx, fy, cx, cy = intrinsics
        return cls(fx, fy, cx, cy, int(width), int(height), matrix[:3, :3], matrix[:3, 3])

    def center(self):
        return -self.rotation.T @ self.translation


@dataclass
class MultiViewFrame:
    """One viewpoint: low-light RGB, thermal, camera and the optional bright reference."""

    view_id: int
    rgb_low: torch.Tensor
    thermal: torch.Tensor
    camera: Camera
    rgb_gt_bright: Optional[torch.Tensor] = None

    def __post_init__(self):
        size = (self.camera.height, self.camera.width)
        images = {"rgb_low": self.rgb_low, "thermal": self.thermal}
        if self.rgb_gt_bright is not None:
            images["rgb_gt_bright"] = self.rgb_gt_bright
        for name, image in images.items():
            if tuple(image.shape[:2]) != size:
                raise ValidationError(f"View {self.view_id}: {name} is {tuple(image.shape[:2])}, camera expects {size}")
            if not torch.isfinite(image).all():
                raise ValidationError(f"View {self.view_id}: {name} holds non-finite samples")


class ParamBundle:
    """
    A flat view over named parameter tensors with a stable index map.

    The index map lists (name, start, stop, shape) in insertion order; gather() concatenates,
    scatter() writes a flat vector back in place. A GradBundle is a ParamBundle over gradients.
    """

    def __init__(self, named_tensors):
        self.tensors = dict(named_tensors)
        self.index_map = []
        offset = 0
        for name, tensor in self.tensors.items():
            size = tensor.numel()
            self.index_map.append((name, offset, offset + size, tuple(tensor.shape)))
            offset += size
        self.size = offset

    @classmethod
    def from_scene(cls, gaussians, enhancers=()):
        named = dict(gaussians.named_tensors())
        for view_id, enhancer in enumerate(enhancers):
            for name, tensor in enhancer.named_tensors().items():
                named[f"{name}[{view_id}]"] = tensor
        return cls(named)

    def gather(self):
        if not self.tensors:
            return torch.zeros(0, dtype=DTYPE)
        return torch.cat([t.detach().reshape(-1) for t in self.tensors.values()])

    @torch.no_grad()
    def scatter(self, flat):
        if flat.numel() != self.size:
            raise ValidationError(f"Flat vector has {flat.numel()} entries, bundle expects {self.size}")
        for name, start, stop, shape in self.index_map:
            self.tensors[name].copy_(flat[start:stop].reshape(shape))

    def locate(self, index):
        """(name, local index) of a flat coordinate."""
        for name, start, stop, _ in self.index_map:
            if start <= index < stop:
                return name, index - start
        raise IndexError(index)

    def grad_bundle(self):
        """GradBundle over the .grad fields, zeros where no gradient flowed."""
        return ParamBundle({name: (t.grad if t.grad is not None else torch.zeros_like(t)) for name, t in self.tensors.items()})

    def check_finite(self, what="gradient"):
        flat = self.gather()
        finite = torch.isfinite(flat)
        if not finite.all():
            index = int((~finite).nonzero()[0])
            name, local = self.locate(index)
            raise NumericalFailure(f"Non-finite {what} at parameter index {index} ({name}[{local}])")
