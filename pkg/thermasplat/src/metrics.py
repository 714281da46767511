"""
Image quality metrics: PSNR, windowed SSIM, and the cross-view luminance spread.
"""

import csv
import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from ..thermasplat import Utility, ValidationError
from .scene_core import DTYPE

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(a, b):
    """10 log10(1 / MSE) in dB, capped at 99 dB for identical images."""
    if a.shape != b.shape:
        raise ValidationError(f"PSNR inputs differ in shape: {tuple(a.shape)} vs {tuple(b.shape)}")
    mse = float(((a.detach().to(DTYPE) - b.detach().to(DTYPE)) ** 2).mean())
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10 * math.log10(1.0 / mse))


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    coords = torch.arange(size, dtype=DTYPE) - (size - 1) / 2
    g = torch.exp(-(coords**2) / (2 * sigma**2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim_map(a, b, data_range=1.0):
    """Per-window SSIM for (H, W, C) images, valid windows only, shape (C, H-10, W-10)."""
    if a.shape != b.shape:
        raise ValidationError(f"SSIM inputs differ in shape: {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.dim() == 2:
        a, b = a.unsqueeze(-1), b.unsqueeze(-1)
    height, width, channels = a.shape
    if height < SSIM_WINDOW or width < SSIM_WINDOW:
        raise ValidationError(f"SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {height}x{width}")

    window = gaussian_window().to(a.dtype).expand(channels, 1, SSIM_WINDOW, SSIM_WINDOW)
    x = a.permute(2, 0, 1).unsqueeze(0)
    y = b.permute(2, 0, 1).unsqueeze(0)

    def blur(img):
        return F.conv2d(img, window, groups=channels)

    mu_x, mu_y = blur(x), blur(y)
    var_x = blur(x * x) - mu_x * mu_x
    var_y = blur(y * y) - mu_y * mu_y
    cov_xy = blur(x * y) - mu_x * mu_y

    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    numerator = (2 * mu_x * mu_y + c1) * (2 * cov_xy + c2)
    denominator = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return (numerator / denominator)[0]


def ssim(a, b):
    """Mean SSIM over 11x11 Gaussian windows (sigma 1.5), averaged over channels. Differentiable."""
    return ssim_map(a, b).mean()


def luminance_spread(images):
    """Standard deviation across views of each view's mean luminance."""
    means = torch.stack([Utility.luminance(image).mean() for image in images])
    return float(means.std(unbiased=False))


@dataclass
class MetricReport:
    scene: str
    view_ids: list = field(default_factory=list)
    psnr_db: list = field(default_factory=list)
    ssim: list = field(default_factory=list)

    def add(self, view_id, rendered, reference):
        self.view_ids.append(view_id)
        self.psnr_db.append(psnr(rendered, reference))
        self.ssim.append(float(ssim(rendered.detach(), reference)))

    @property
    def mean_psnr(self):
        return sum(self.psnr_db) / len(self.psnr_db) if self.psnr_db else float("nan")

    @property
    def mean_ssim(self):
        return sum(self.ssim) / len(self.ssim) if self.ssim else float("nan")

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as file:
            writer = csv.writer(file)
            writer.writerow(["scene", "view_id", "psnr_db", "ssim"])
            for view_id, p, s in zip(self.view_ids, self.psnr_db, self.ssim):
                writer.writerow([self.scene, view_id, f"{p:.6f}", f"{s:.6f}"])
            writer.writerow([self.scene, "mean", f"{self.mean_psnr:.6f}", f"{self.mean_ssim:.6f}"])
