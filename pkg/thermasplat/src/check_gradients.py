import math

import torch

from ..thermasplat import Logger, NumericalFailure
from .gradcheck import LOSS_SPECS, gradcheck, gradcheck_enhancer, gradcheck_gs_loss, gradcheck_thermal
from .scene_core import Camera, GaussianModel


def random_scene(seed, count, size):
    """A seeded scene of `count` Gaussians in front of a size x size camera at the origin."""
    generator = torch.Generator().manual_seed(seed)
    gaussians = GaussianModel.random(count, generator, center=(0.0, 0.0, 2.5), spread=0.4)
    camera = Camera.look_at((0.0, 0.0, 0.0), (0.0, 0.0, 1.0), size, size, fov_x_degrees=60.0, up=(0.0, -1.0, 0.0))
    return gaussians, camera


class GradcheckCommand:
    """Finite-difference checks of the renderer, enhancer, thermal and reconstruction gradients over seeded scenes."""

    logger = Logger()

    @classmethod
    def INPUT_TYPES(cls):
        return {
            "required": {},
            "optional": {
                "seed": ["INT", 0, 0, 2147483647, 1, False],
                "scenes": ["INT", 10, 1, 1000, 1, False],
                "gaussians": ["INT", 5, 1, 200, 1, False],
                "size": ["INT", 24, 11, 128, 1, False],
                "loss": ["STRING", "l1", list(LOSS_SPECS)],
                "h": ["FLOAT", 1e-5, 1e-12, 1.0, 1e-6, False],
                "tolerance": ["FLOAT", 1e-4, 0.0, math.inf, 1e-5, False],
                "corrupt": ["BOOLEAN", False],
            },
        }

    RETURN_TYPES = ("REPORT",)
    FUNCTION = "check"
    CATEGORY = "thermasplat/diagnostics"

    def check(self, seed=None, scenes=None, gaussians=None, size=None, loss=None, h=None, tolerance=None, corrupt=None, config_path=None):
        defaults = {name: entry[1] for name, entry in self.INPUT_TYPES()["optional"].items()}
        seed = defaults["seed"] if seed is None else seed
        scenes = scenes or defaults["scenes"]
        gaussians = gaussians or defaults["gaussians"]
        size = size or defaults["size"]
        loss = loss or defaults["loss"]
        h = defaults["h"] if h is None else h
        tolerance = defaults["tolerance"] if tolerance is None else tolerance
        corrupt = bool(corrupt)

        reports = []
        for scene_seed in range(seed, seed + scenes):
            model, camera = random_scene(scene_seed, gaussians, size)
            checks = {
                "renderer": gradcheck(model, camera, loss, h, tolerance, corrupt_analytic=corrupt),
                "enhancer": gradcheck_enhancer(scene_seed, h=h, tolerance=tolerance, corrupt_analytic=corrupt),
                "thermal": gradcheck_thermal(scene_seed, h=h, tolerance=tolerance, corrupt_analytic=corrupt),
                "gs_loss": gradcheck_gs_loss(scene_seed, h=h, tolerance=tolerance, corrupt_analytic=corrupt),
            }
            for name, report in checks.items():
                level = "INFORMATIONAL" if report.passed else "ERROR"
                self.logger.log(f"seed {scene_seed} {name}: {'PASS' if report.passed else 'FAIL'}", level)
                reports.append((scene_seed, name, report))

        failed = [(s, name) for s, name, report in reports if not report.passed]
        if failed:
            raise NumericalFailure(f"Gradient check failed for {failed}")
        self.logger.log(f"All {len(reports)} gradient checks passed at tolerance {tolerance:g}", "INFORMATIONAL")
        return (reports,)
